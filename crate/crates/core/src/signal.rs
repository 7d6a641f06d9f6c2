//! Sample containers, pulse envelopes, quantization and spectrum estimation.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor reported for bins with no energy.
pub const FLOOR_DBFS: f64 = -300.0;
const FLOOR_AMPLITUDE: f64 = 1e-15;

/// Converter sample rate in Hz.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SampleRate(f64);

impl SampleRate {
    pub const DAC_DEFAULT_HZ: f64 = 6.144e9;
    pub const ADC_DEFAULT_HZ: f64 = 3.84e9;
    /// Fabric sample rate feeding the DAC: 192 MHz clock, 4 samples per cycle.
    pub const FABRIC_DEFAULT_HZ: f64 = 768e6;
    /// Upper bound accepted for DAC rates.
    pub const DAC_MAX_HZ: f64 = 6.554e9;

    pub fn new(hz: f64) -> Result<Self> {
        if hz.is_finite() && hz > 0.0 {
            Ok(SampleRate(hz))
        } else {
            Err(Error::invalid(format!("sample rate must be positive, got {hz}")))
        }
    }

    pub fn dac_default() -> Self {
        SampleRate(Self::DAC_DEFAULT_HZ)
    }

    pub fn fabric_default() -> Self {
        SampleRate(Self::FABRIC_DEFAULT_HZ)
    }

    pub fn adc_default() -> Self {
        SampleRate(Self::ADC_DEFAULT_HZ)
    }

    #[inline]
    pub fn hz(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn period_s(self) -> f64 {
        1.0 / self.0
    }

    #[inline]
    pub fn period_ns(self) -> f64 {
        1e9 / self.0
    }

    /// Rate multiplied by `factor` (interpolation) or divided (pass `1/factor`).
    pub fn scaled(self, factor: f64) -> Self {
        SampleRate(self.0 * factor)
    }

    /// Number of whole samples covering `ns`, rounded to nearest.
    pub fn samples_for_ns(self, ns: f64) -> usize {
        (ns * 1e-9 * self.0).round().max(0.0) as usize
    }
}

/// Real waveform normalized to full scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    rate: SampleRate,
    pub start_time_ns: f64,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, rate: SampleRate) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        for (index, s) in samples.iter().enumerate() {
            let v = s.f64();
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Range { index, value: v });
            }
        }
        Ok(Waveform {
            samples,
            rate,
            start_time_ns: 0.0,
        })
    }

    pub fn with_start(mut self, start_time_ns: f64) -> Self {
        self.start_time_ns = start_time_ns;
        self
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn rate(&self) -> SampleRate {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ns(&self) -> f64 {
        self.samples.len() as f64 * self.rate.period_ns()
    }

    /// Promote to an I-only complex stream.
    pub fn to_iq(&self) -> IqStream<T> {
        IqStream {
            samples: self
                .samples
                .iter()
                .map(|&s| Complex::new(s, T::zero()))
                .collect(),
            rate: self.rate,
        }
    }
}

/// Complex baseband stream; `re` carries I and `im` carries Q.
#[derive(Clone, Debug, PartialEq)]
pub struct IqStream<T> {
    samples: Vec<Complex<T>>,
    rate: SampleRate,
}

impl<T: Scalar> IqStream<T> {
    pub fn new(samples: Vec<Complex<T>>, rate: SampleRate) -> Result<Self> {
        if let Some(index) = samples
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::invalid(format!("non-finite IQ sample at {index}")));
        }
        Ok(IqStream { samples, rate })
    }

    pub fn from_parts(i: &[T], q: &[T], rate: SampleRate) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::invalid(format!(
                "I and Q lengths differ: {} vs {}",
                i.len(),
                q.len()
            )));
        }
        Self::new(
            i.iter().zip(q).map(|(&a, &b)| Complex::new(a, b)).collect(),
            rate,
        )
    }

    /// Constant (I, Q) held for `len` samples.
    pub fn constant(value: Complex<T>, len: usize, rate: SampleRate) -> Result<Self> {
        Self::new(vec![value; len], rate)
    }

    pub fn samples(&self) -> &[Complex<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex<T>> {
        self.samples
    }

    pub fn rate(&self) -> SampleRate {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ns(&self) -> f64 {
        self.samples.len() as f64 * self.rate.period_ns()
    }

    pub fn i(&self) -> Vec<T> {
        self.samples.iter().map(|c| c.re).collect()
    }

    pub fn q(&self) -> Vec<T> {
        self.samples.iter().map(|c| c.im).collect()
    }

    pub(crate) fn map_samples(&self, f: impl Fn(Complex<T>) -> Complex<T>) -> Self {
        IqStream {
            samples: self.samples.iter().map(|&c| f(c)).collect(),
            rate: self.rate,
        }
    }

    pub(crate) fn from_raw(samples: Vec<Complex<T>>, rate: SampleRate) -> Self {
        IqStream { samples, rate }
    }
}

/// Signed 16-bit codes as stored in sample memory.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedWaveform {
    pub codes: Vec<i16>,
    pub rate: SampleRate,
    pub full_scale_bits: u32,
}

impl QuantizedWaveform {
    pub const DEFAULT_BITS: u32 = 14;

    /// Largest positive code for the configured resolution.
    pub fn full_scale_code(&self) -> i32 {
        full_scale_code(self.full_scale_bits)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dequantize<T: Scalar>(&self) -> Result<Waveform<T>> {
        let fs = self.full_scale_code() as f64;
        Waveform::new(
            self.codes.iter().map(|&c| T::of(c as f64 / fs)).collect(),
            self.rate,
        )
    }
}

pub(crate) fn full_scale_code(bits: u32) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// One spectrum bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBin {
    pub freq_hz: f64,
    pub power_dbfs: f64,
}

/// Power spectrum in dB relative to full scale.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<SpectrumBin>,
}

impl Spectrum {
    pub fn new(bins: Vec<SpectrumBin>) -> Result<Self> {
        if bins.windows(2).any(|w| w[1].freq_hz <= w[0].freq_hz) {
            return Err(Error::invalid("spectrum frequencies must be strictly increasing"));
        }
        Ok(Spectrum { bins })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Index of the bin nearest `freq_hz`.
    pub fn nearest(&self, freq_hz: f64) -> Option<usize> {
        if self.bins.is_empty() {
            return None;
        }
        let idx = self.bins.partition_point(|b| b.freq_hz < freq_hz);
        let candidates = [idx.saturating_sub(1), idx.min(self.bins.len() - 1)];
        candidates.into_iter().min_by(|&a, &b| {
            let da = (self.bins[a].freq_hz - freq_hz).abs();
            let db = (self.bins[b].freq_hz - freq_hz).abs();
            da.total_cmp(&db)
        })
    }

    pub fn power_at(&self, freq_hz: f64) -> Option<f64> {
        self.nearest(freq_hz).map(|i| self.bins[i].power_dbfs)
    }

    pub fn peak(&self) -> Option<SpectrumBin> {
        self.bins
            .iter()
            .copied()
            .max_by(|a, b| a.power_dbfs.total_cmp(&b.power_dbfs))
    }
}

/// Analysis window applied before the DFT.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
    /// Five-term flat top; scalloping loss below 0.01 dB.
    FlatTop,
}

impl Window {
    /// Periodic (DFT-even) coefficients of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let l = len as f64;
        let tau = std::f64::consts::TAU;
        (0..len)
            .map(|n| {
                let x = tau * n as f64 / l;
                match self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::FlatTop => {
                        0.215_578_95 - 0.416_631_58 * x.cos() + 0.277_263_158 * (2.0 * x).cos()
                            - 0.083_578_947 * (3.0 * x).cos()
                            + 0.006_947_368 * (4.0 * x).cos()
                    }
                }
            })
            .collect()
    }
}

/// Gaussian pulse centered in a window of `duration_ns`, truncated at the edges.
pub fn gaussian_envelope<T: Scalar>(
    duration_ns: f64,
    sigma_ns: f64,
    rate: SampleRate,
) -> Result<Waveform<T>> {
    if !(duration_ns > 0.0) || !(sigma_ns > 0.0) {
        return Err(Error::invalid(format!(
            "gaussian duration and sigma must be positive (got {duration_ns} ns, {sigma_ns} ns)"
        )));
    }
    let n = rate.samples_for_ns(duration_ns);
    if n == 0 {
        return Err(Error::invalid(format!(
            "{duration_ns} ns is shorter than one sample at {} Hz",
            rate.hz()
        )));
    }
    let center = (n as f64 - 1.0) / 2.0;
    let dt = rate.period_ns();
    let two_var = 2.0 * sigma_ns * sigma_ns;
    let samples = (0..n)
        .map(|k| {
            let t = (k as f64 - center) * dt;
            T::of((-t * t / two_var).exp())
        })
        .collect();
    Waveform::new(samples, rate)
}

/// Round each sample to a signed code with `full_scale_bits` of resolution.
pub fn quantize<T: Scalar>(w: &Waveform<T>, full_scale_bits: u32) -> Result<QuantizedWaveform> {
    if !(2..=16).contains(&full_scale_bits) {
        return Err(Error::invalid(format!(
            "full_scale_bits must be in [2, 16], got {full_scale_bits}"
        )));
    }
    let fs = full_scale_code(full_scale_bits) as f64;
    let codes = w
        .samples()
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let v = s.f64();
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Range { index, value: v });
            }
            // f64::round is half-away-from-zero
            Ok((v * fs).round() as i16)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedWaveform {
        codes,
        rate: w.rate(),
        full_scale_bits,
    })
}

fn check_bins(len: usize, n_bins: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::invalid("cannot take the spectrum of an empty waveform"));
    }
    if n_bins < len || !n_bins.is_power_of_two() {
        return Err(Error::invalid(format!(
            "n_bins must be a power of two >= {len}, got {n_bins}"
        )));
    }
    Ok(())
}

fn windowed_fft(data: Vec<Complex<f64>>, n_bins: usize, window: Window) -> (Vec<Complex<f64>>, f64) {
    let coeffs = window.coefficients(data.len());
    let gain: f64 = coeffs.iter().sum();
    let mut buf: Vec<Complex<f64>> = data
        .into_iter()
        .zip(&coeffs)
        .map(|(x, &c)| x * c)
        .collect();
    buf.resize(n_bins, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_bins).process(&mut buf);
    (buf, gain)
}

fn to_dbfs(amplitude: f64) -> f64 {
    20.0 * amplitude.max(FLOOR_AMPLITUDE).log10()
}

/// One-sided power spectrum with the default Hann window.
pub fn spectrum<T: Scalar>(w: &Waveform<T>, n_bins: usize) -> Result<Spectrum> {
    spectrum_with(w, n_bins, Window::default())
}

/// One-sided power spectrum, bins 0..=N/2. A full-scale sinusoid reads 0 dBFS.
pub fn spectrum_with<T: Scalar>(w: &Waveform<T>, n_bins: usize, window: Window) -> Result<Spectrum> {
    check_bins(w.len(), n_bins)?;
    let data = w
        .samples()
        .iter()
        .map(|s| Complex::new(s.f64(), 0.0))
        .collect();
    let (x, gain) = windowed_fft(data, n_bins, window);
    let df = w.rate().hz() / n_bins as f64;
    let half = n_bins / 2;
    let bins = (0..=half)
        .map(|k| {
            let scale = if k == 0 || k == half { 1.0 } else { 2.0 };
            SpectrumBin {
                freq_hz: k as f64 * df,
                power_dbfs: to_dbfs(scale * x[k].norm() / gain),
            }
        })
        .collect();
    Ok(Spectrum { bins })
}

/// Two-sided spectrum of a complex stream, ordered from -F_S/2 to just below +F_S/2.
/// A unit complex exponential reads 0 dBFS.
pub fn complex_spectrum<T: Scalar>(
    s: &IqStream<T>,
    n_bins: usize,
    window: Window,
) -> Result<Spectrum> {
    check_bins(s.len(), n_bins)?;
    let data = s
        .samples()
        .iter()
        .map(|c| Complex::new(c.re.f64(), c.im.f64()))
        .collect();
    let (x, gain) = windowed_fft(data, n_bins, window);
    let df = s.rate().hz() / n_bins as f64;
    let half = n_bins as i64 / 2;
    let bins = (-half..half)
        .map(|k| {
            let idx = k.rem_euclid(n_bins as i64) as usize;
            SpectrumBin {
                freq_hz: k as f64 * df,
                power_dbfs: to_dbfs(x[idx].norm() / gain),
            }
        })
        .collect();
    Ok(Spectrum { bins })
}
