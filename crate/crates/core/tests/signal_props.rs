use num_complex::Complex;
use proptest::prelude::*;
use statrs::function::erf::erf;

use qcars_core::signal::{complex_spectrum, gaussian_envelope, quantize, IqStream, SampleRate, Waveform, Window};

proptest! {
    #[test]
    fn gaussian_area_matches_truncated_integral(sigma in 5.0f64..200.0, widths in 4.0f64..10.0) {
        let rate = SampleRate::fabric_default();
        let w = gaussian_envelope::<f64>(widths * sigma, sigma, rate).unwrap();
        let dt = rate.period_ns();
        let area: f64 = w.samples().iter().sum::<f64>() * dt;
        let half = w.len() as f64 * dt / 2.0;
        let expect = sigma * (2.0 * std::f64::consts::PI).sqrt() * erf(half / (sigma * 2f64.sqrt()));
        prop_assert!((area - expect).abs() / expect < 5e-3, "{area} vs {expect}");
    }

    #[test]
    fn quantize_round_trip_within_half_lsb(
        v in prop::collection::vec(-1.0f64..=1.0, 1..300),
        bits in 2u32..=16,
    ) {
        let w = Waveform::new(v.clone(), SampleRate::dac_default()).unwrap();
        let q = quantize(&w, bits).unwrap();
        let back = q.dequantize::<f64>().unwrap();
        let half_lsb = 0.5 / q.full_scale_code() as f64;
        for (a, b) in v.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= half_lsb * (1.0 + 1e-12));
        }
    }

    #[test]
    fn real_signal_spectrum_is_symmetric(v in prop::collection::vec(-1.0f64..=1.0, 8..200)) {
        let n = v.len().next_power_of_two();
        let s = IqStream::new(v.iter().map(|&x| Complex::new(x, 0.0)).collect(), SampleRate::adc_default()).unwrap();
        let spec = complex_spectrum(&s, n, Window::Hann).unwrap();
        let mid = n / 2;
        for k in 1..mid {
            let pos = spec.bins[mid + k].power_dbfs;
            let neg = spec.bins[mid - k].power_dbfs;
            prop_assert!((pos - neg).abs() < 1e-9 || (pos < -250.0 && neg < -250.0), "bin {k}: {pos} vs {neg}");
        }
    }
}
