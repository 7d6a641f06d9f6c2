use num_complex::Complex;
use proptest::prelude::*;

use qcars_core::dac::{
    image_in_zone, inverse_sinc, nco_upconvert, response_magnitude, synthesize_output_spectrum,
    zone_images, NcoConfig, ReconstructionMode,
};
use qcars_core::signal::{spectrum_with, IqStream, SampleRate, Window};

fn fs() -> SampleRate {
    SampleRate::dac_default()
}

#[test]
fn nulls_sit_where_expected() {
    let f = fs().hz();
    for k in 1..=4 {
        assert!(response_magnitude(k as f64 * f, fs(), ReconstructionMode::Nrz) < 1e-15);
    }
    assert_eq!(response_magnitude(0.0, fs(), ReconstructionMode::Rtc), 0.0);
    assert!(response_magnitude(2.0 * f, fs(), ReconstructionMode::Rtc) < 1e-15);
    assert!(response_magnitude(f, fs(), ReconstructionMode::Rtc) > 0.6);
}

#[test]
fn rtc_beats_nrz_inside_zone_two() {
    for k in 1..1000 {
        let f = fs().hz() * (0.5 + 0.5 * k as f64 / 1000.0);
        assert!(response_magnitude(f, fs(), ReconstructionMode::Rtc) > response_magnitude(f, fs(), ReconstructionMode::Nrz));
    }
}

fn coherent_tone(bin: usize, n: usize, amp: f64, rate: SampleRate) -> IqStream<f64> {
    let s = (0..n)
        .map(|k| Complex::from_polar(amp, std::f64::consts::TAU * (bin * k % n) as f64 / n as f64))
        .collect();
    IqStream::new(s, rate).unwrap()
}

proptest! {
    #[test]
    fn upconversion_keeps_tone_power(bb_bin in 1usize..200, nco_bin in 200usize..1800, amp in 0.05f64..0.9) {
        let n = 4096;
        let s = coherent_tone(bb_bin, n, amp, fs());
        let nco = NcoConfig::new(nco_bin as f64 * fs().hz() / n as f64, 0.0).unwrap();
        let out = nco_upconvert(&s, nco).unwrap();
        let spec = spectrum_with(&out, n, Window::Rectangular).unwrap();
        let got = spec.bins[bb_bin + nco_bin].power_dbfs;
        prop_assert!((got - 20.0 * amp.log10()).abs() < 0.05);
    }

    #[test]
    fn zone_images_are_ordered(frac in 0.0f64..0.5, n_zones in 1usize..8) {
        let imgs = zone_images(frac * fs().hz(), fs(), n_zones).unwrap();
        prop_assert_eq!(imgs.len(), n_zones);
        for (k, im) in imgs.iter().enumerate() {
            prop_assert!(im.freq_hz >= 0.0);
            prop_assert_eq!(im.zone, k + 1);
        }
        for w in imgs.windows(2) {
            prop_assert!(w[1].freq_hz >= w[0].freq_hz);
        }
    }
}

fn compensated_powers(mode: ReconstructionMode, zone: usize, out_fracs: &[f64]) -> Vec<f64> {
    let n = 4096;
    out_fracs
        .iter()
        .map(|&frac| {
            let f_out = frac * fs().hz();
            let f_dig = if zone == 1 { f_out } else { fs().hz() - f_out };
            let bin = (f_dig / fs().hz() * n as f64).round() as usize;
            let s = coherent_tone(bin, n, 0.4, fs());
            let eq = inverse_sinc(&s, fs(), mode, zone).unwrap();
            let spec = synthesize_output_spectrum(&eq.stream, NcoConfig::new(0.0, 0.0).unwrap(), mode, 2).unwrap();
            let img = image_in_zone(bin as f64 * fs().hz() / n as f64, fs(), zone);
            spec.power_at(img).unwrap()
        })
        .collect()
}

#[test]
fn inverse_sinc_flattens_nrz_zone_one() {
    let p = compensated_powers(ReconstructionMode::Nrz, 1, &[0.1, 0.25, 0.4]);
    let spread = p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.5, "{p:?}");
}

#[test]
fn inverse_sinc_flattens_rtc_zone_two() {
    let p = compensated_powers(ReconstructionMode::Rtc, 2, &[0.6, 0.75, 0.9]);
    let spread = p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.5, "{p:?}");
}
