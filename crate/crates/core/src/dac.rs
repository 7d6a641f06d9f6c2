//! RF-DAC pipeline: interpolation, NCO up-conversion, NRZ/RTC reconstruction,
//! Nyquist-zone images, inverse-sinc equalization, band-pass conditioning and
//! SFDR measurement.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{self, SymmetricFir};
use crate::scalar::Scalar;
use crate::signal::{
    spectrum_with, IqStream, SampleRate, Spectrum, SpectrumBin, Waveform, Window, FLOOR_DBFS,
};

/// DAC reconstruction waveform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionMode {
    /// Non-return-to-zero: sample held for the full period.
    Nrz,
    /// Return-to-complement (mix mode): sample for half a period, then its negation.
    Rtc,
}

impl FromStr for ReconstructionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nrz" => Ok(ReconstructionMode::Nrz),
            "rtc" | "mix" => Ok(ReconstructionMode::Rtc),
            other => Err(Error::invalid(format!(
                "unknown reconstruction mode {other:?} (expected nrz or rtc)"
            ))),
        }
    }
}

impl fmt::Display for ReconstructionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReconstructionMode::Nrz => "nrz",
            ReconstructionMode::Rtc => "rtc",
        })
    }
}

/// Digital NCO setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcoConfig {
    pub freq_hz: f64,
    pub phase_deg: f64,
}

impl NcoConfig {
    pub fn new(freq_hz: f64, phase_deg: f64) -> Result<Self> {
        if !(0.0..360.0).contains(&phase_deg) {
            return Err(Error::invalid(format!(
                "NCO phase must be in [0, 360), got {phase_deg}"
            )));
        }
        if !freq_hz.is_finite() || freq_hz < 0.0 {
            return Err(Error::invalid(format!(
                "NCO frequency must be finite and non-negative, got {freq_hz}"
            )));
        }
        Ok(NcoConfig { freq_hz, phase_deg })
    }
}

/// Unnormalized sinc, sin(x)/x.
pub fn sinc<T: Scalar>(x: T) -> T {
    if x == T::zero() {
        T::one()
    } else {
        x.sin() / x
    }
}

/// Complex reconstruction gain R(2 pi f) in seconds.
pub fn reconstruction_response<T: Scalar>(
    f_hz: T,
    fs: SampleRate,
    mode: ReconstructionMode,
) -> Complex<T> {
    let period = T::of(fs.period_s());
    let wt = T::TAU() * f_hz * period;
    let two = T::of(2.0);
    let four = T::of(4.0);
    let delay = Complex::from_polar(T::one(), -wt / two);
    match mode {
        ReconstructionMode::Nrz => delay * (period * sinc(wt / two)),
        ReconstructionMode::Rtc => {
            delay * Complex::new(T::zero(), period * sinc(wt / four) * (wt / four).sin())
        }
    }
}

/// |R(f)| / T, in [0, 1].
pub fn response_magnitude(f_hz: f64, fs: SampleRate, mode: ReconstructionMode) -> f64 {
    reconstruction_response(f_hz, fs, mode).norm() / fs.period_s()
}

fn magnitude_db(m: f64) -> f64 {
    if m > 0.0 {
        (20.0 * m.log10()).max(FLOOR_DBFS)
    } else {
        FLOOR_DBFS
    }
}

/// One evaluated point of a reconstruction response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub freq_hz: f64,
    /// |R| / T.
    pub magnitude: f64,
    pub phase_rad: f64,
}

impl ResponsePoint {
    pub fn magnitude_db(&self) -> f64 {
        magnitude_db(self.magnitude)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub mode: ReconstructionMode,
    pub points: Vec<ResponsePoint>,
}

/// Evaluate |R| on `n_points` evenly spaced frequencies in [0, f_max].
pub fn response_curve(
    fs: SampleRate,
    mode: ReconstructionMode,
    f_max_hz: f64,
    n_points: usize,
) -> Result<ResponseCurve> {
    if n_points == 0 || !(f_max_hz >= 0.0) {
        return Err(Error::invalid("response curve needs at least one point and f_max >= 0"));
    }
    let step = if n_points > 1 {
        f_max_hz / (n_points - 1) as f64
    } else {
        0.0
    };
    let period = fs.period_s();
    let points = (0..n_points)
        .map(|j| {
            let f = j as f64 * step;
            let r = reconstruction_response(f, fs, mode);
            ResponsePoint {
                freq_hz: f,
                magnitude: r.norm() / period,
                phase_rad: r.arg(),
            }
        })
        .collect();
    Ok(ResponseCurve { mode, points })
}

/// Digital interpolation by 1, 2, 4 or 8 through a cascade of half-band stages.
pub fn interpolate<T: Scalar>(s: &IqStream<T>, factor: usize) -> Result<IqStream<T>> {
    let stages = rate_change_stages(factor)?;
    let mut data = s.samples().to_vec();
    for _ in 0..stages {
        data = filter::interpolate_x2(&data);
    }
    Ok(IqStream::from_raw(data, s.rate().scaled(factor as f64)))
}

pub(crate) fn rate_change_stages(factor: usize) -> Result<u32> {
    match factor {
        1 | 2 | 4 | 8 => Ok(factor.trailing_zeros()),
        other => Err(Error::invalid(format!(
            "rate change factor must be 1, 2, 4 or 8, got {other}"
        ))),
    }
}

/// Digital IQ mixer: y = I cos(2 pi f t + phi) - Q sin(2 pi f t + phi).
pub fn nco_upconvert<T: Scalar>(s: &IqStream<T>, nco: NcoConfig) -> Result<Waveform<T>> {
    let fs = s.rate().hz();
    if nco.freq_hz >= fs {
        return Err(Error::invalid(format!(
            "NCO frequency {} Hz must be below the stream rate {fs} Hz",
            nco.freq_hz
        )));
    }
    let cycles_per_sample = nco.freq_hz / fs;
    let phi = nco.phase_deg.to_radians();
    let samples = s
        .samples()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let theta = std::f64::consts::TAU * (k as f64 * cycles_per_sample).fract() + phi;
            c.re * T::of(theta.cos()) - c.im * T::of(theta.sin())
        })
        .collect();
    Waveform::new(samples, s.rate())
}

/// Nyquist zone (1-based) containing `f_hz`.
pub fn zone_of(f_hz: f64, fs: SampleRate) -> usize {
    (2.0 * f_hz / fs.hz()).floor() as usize + 1
}

/// Image frequency of a first-zone frequency inside `zone`.
pub fn image_in_zone(f_hz: f64, fs: SampleRate, zone: usize) -> f64 {
    let z = zone as f64;
    if zone % 2 == 1 {
        (z - 1.0) / 2.0 * fs.hz() + f_hz
    } else {
        z / 2.0 * fs.hz() - f_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneImage {
    pub freq_hz: f64,
    pub zone: usize,
}

/// Images of a first-zone frequency in zones 1..=n_zones.
pub fn zone_images(f_signal_hz: f64, fs: SampleRate, n_zones: usize) -> Result<Vec<ZoneImage>> {
    if !(0.0..fs.hz() / 2.0).contains(&f_signal_hz) {
        return Err(Error::invalid(format!(
            "{f_signal_hz} Hz is outside the first Nyquist zone [0, {}); fold it first",
            fs.hz() / 2.0
        )));
    }
    if n_zones == 0 {
        return Err(Error::invalid("n_zones must be at least 1"));
    }
    Ok((1..=n_zones)
        .map(|zone| ZoneImage {
            freq_hz: image_in_zone(f_signal_hz, fs, zone),
            zone,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneImage {
    pub freq_hz: f64,
    pub zone: usize,
    pub power_dbfs: f64,
}

/// Output power of every image of a digital tone, weighted by the reconstruction response.
///
/// Unlike [`zone_images`] this accepts the Nyquist frequency itself, where the
/// zone-1 and zone-2 images coincide.
pub fn tone_images(
    f_digital_hz: f64,
    power_dbfs: f64,
    fs: SampleRate,
    mode: ReconstructionMode,
    n_zones: usize,
) -> Result<Vec<ToneImage>> {
    if !(0.0..=fs.hz() / 2.0).contains(&f_digital_hz) {
        return Err(Error::invalid(format!(
            "digital tone {f_digital_hz} Hz must lie in [0, F_S/2]"
        )));
    }
    Ok((1..=n_zones.max(1))
        .map(|zone| {
            let f = image_in_zone(f_digital_hz, fs, zone);
            ToneImage {
                freq_hz: f,
                zone,
                power_dbfs: (power_dbfs + magnitude_db(response_magnitude(f, fs, mode)))
                    .max(FLOOR_DBFS),
            }
        })
        .collect())
}

/// Output spectrum across `n_zones` Nyquist zones of the up-converted stream.
pub fn synthesize_output_spectrum<T: Scalar>(
    s: &IqStream<T>,
    nco: NcoConfig,
    mode: ReconstructionMode,
    n_zones: usize,
) -> Result<Spectrum> {
    let w = nco_upconvert(s, nco)?;
    replicate_zones(&w, mode, n_zones, w.len().next_power_of_two(), Window::Hann)
}

/// Replicate the first-zone spectrum of `w` into `n_zones` zones, weighting each
/// image by |R| / T at its output frequency.
pub fn replicate_zones<T: Scalar>(
    w: &Waveform<T>,
    mode: ReconstructionMode,
    n_zones: usize,
    n_bins: usize,
    window: Window,
) -> Result<Spectrum> {
    if n_zones == 0 {
        return Err(Error::invalid("n_zones must be at least 1"));
    }
    let fs = w.rate();
    let base = spectrum_with(w, n_bins, window)?;
    let half = n_bins / 2;
    let mut bins = Vec::with_capacity(n_zones * (half + 1));
    let mut push = |zone: usize, k: usize| {
        let f = image_in_zone(base.bins[k].freq_hz, fs, zone);
        let weight = magnitude_db(response_magnitude(f, fs, mode));
        bins.push(SpectrumBin {
            freq_hz: f,
            power_dbfs: (base.bins[k].power_dbfs + weight).max(FLOOR_DBFS),
        });
    };
    for zone in 1..=n_zones {
        if zone % 2 == 1 {
            (0..=half).for_each(|k| push(zone, k));
        } else {
            // zone edges already belong to the neighbouring odd zones
            (1..half).rev().for_each(|k| push(zone, k));
        }
    }
    Spectrum::new(bins)
}

/// Time-domain DAC output: each sample expanded into `oversample` sub-samples
/// shaped by the reconstruction waveform.
pub fn reconstruct_oversampled<T: Scalar>(
    w: &Waveform<T>,
    mode: ReconstructionMode,
    oversample: usize,
) -> Result<Waveform<T>> {
    if oversample < 2 || !oversample.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "oversample must be an even factor >= 2, got {oversample}"
        )));
    }
    let half = oversample / 2;
    let mut out = Vec::with_capacity(w.len() * oversample);
    for &s in w.samples() {
        match mode {
            ReconstructionMode::Nrz => out.extend(std::iter::repeat_n(s, oversample)),
            ReconstructionMode::Rtc => {
                out.extend(std::iter::repeat_n(s, half));
                out.extend(std::iter::repeat_n(-s, half));
            }
        }
    }
    Ok(Waveform::new(out, w.rate().scaled(oversample as f64))?.with_start(w.start_time_ns))
}

/// |R| / T near `f_out_hz` estimated by reconstructing a coherent digital tone and
/// reading the image bin of the oversampled output spectrum. Returns the bin
/// frequency actually measured and the magnitude there.
pub fn measured_response(
    f_out_hz: f64,
    fs: SampleRate,
    mode: ReconstructionMode,
    n: usize,
) -> Result<(f64, f64)> {
    if !(f_out_hz >= 0.0) || !n.is_power_of_two() || n < 8 {
        return Err(Error::invalid(format!(
            "need f >= 0 and a power-of-two length >= 8, got {f_out_hz} Hz, n = {n}"
        )));
    }
    let zone = zone_of(f_out_hz, fs);
    let df = fs.hz() / n as f64;
    let (f_dig, _) = crate::readout::alias_fold(f_out_hz, fs)?;
    let bin = (f_dig / df).round() as usize;
    let f_out = image_in_zone(bin as f64 * df, fs, zone);
    let oversample = (16 * (zone + 1)).next_power_of_two();
    let tone = (0..n)
        .map(|k| (std::f64::consts::TAU * (bin * k % n) as f64 / n as f64).cos())
        .collect();
    let out = reconstruct_oversampled(&Waveform::new(tone, fs)?, mode, oversample)?;
    let spec = spectrum_with(&out, n * oversample, Window::Rectangular)?;
    let k = spec.nearest(f_out).ok_or_else(|| Error::invalid("empty spectrum"))?;
    let amp = 10f64.powf(spec.bins[k].power_dbfs / 20.0);
    // a tone at DC or F_S/2 has both sidebands on one bin
    let degenerate = (bin == 0 || 2 * bin == n) && k != 0;
    Ok((f_out, if degenerate { amp / 2.0 } else { amp }))
}

/// Frequency of maximum |R| inside a Nyquist zone, and that maximum (normalized).
pub fn zone_peak(fs: SampleRate, mode: ReconstructionMode, zone: usize) -> (f64, f64) {
    let lo = (zone - 1) as f64 * fs.hz() / 2.0;
    let width = fs.hz() / 2.0;
    let mag = |f: f64| response_magnitude(f, fs, mode);
    const GRID: usize = 2048;
    let best = (0..=GRID)
        .map(|j| lo + width * j as f64 / GRID as f64)
        .max_by(|a, b| mag(*a).total_cmp(&mag(*b)))
        .unwrap_or(lo);
    // golden-section refinement within one grid step
    let step = width / GRID as f64;
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(lo + width));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if mag(c) >= mag(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let f = 0.5 * (a + b);
    let f = if mag(best) >= mag(f) { best } else { f };
    (f, mag(f))
}

/// Largest gain the inverse-sinc equalizer will apply.
pub const INVERSE_SINC_MAX_GAIN_DB: f64 = 20.0;
const INVERSE_SINC_HALF_TAPS: usize = 64;
const INVERSE_SINC_BETA: f64 = 5.0;

/// Result of inverse-sinc pre-emphasis.
#[derive(Clone, Debug)]
pub struct InverseSinc<T> {
    pub stream: IqStream<T>,
    pub filter: SymmetricFir,
    /// Some requested gain exceeded the 20 dB limit and was clamped.
    pub clamped: bool,
    pub max_gain_db: f64,
}

/// Target equalizer gain at digital frequency `f_digital_hz` (folded into [0, F_S/2]).
///
/// Normalized so the gain is exactly 1 where |R| peaks in the target zone.
pub fn inverse_sinc_gain(
    f_digital_hz: f64,
    fs: SampleRate,
    mode: ReconstructionMode,
    target_zone: usize,
) -> f64 {
    let (_, peak) = zone_peak(fs, mode, target_zone);
    clamped_gain(f_digital_hz, fs, mode, target_zone, peak)
}

fn clamped_gain(
    f_digital_hz: f64,
    fs: SampleRate,
    mode: ReconstructionMode,
    target_zone: usize,
    peak: f64,
) -> f64 {
    let f_out = image_in_zone(f_digital_hz, fs, target_zone);
    let m = response_magnitude(f_out, fs, mode);
    let limit = 10f64.powf(INVERSE_SINC_MAX_GAIN_DB / 20.0);
    if m <= 0.0 {
        limit
    } else {
        (peak / m).min(limit)
    }
}

/// Pre-emphasize `s` so the reconstructed output is flat across `target_zone`.
pub fn inverse_sinc<T: Scalar>(
    s: &IqStream<T>,
    fs: SampleRate,
    mode: ReconstructionMode,
    target_zone: usize,
) -> Result<InverseSinc<T>> {
    if !(1..=2).contains(&target_zone) {
        return Err(Error::invalid(format!(
            "inverse sinc target zone must be 1 or 2, got {target_zone}"
        )));
    }
    if (s.rate().hz() - fs.hz()).abs() > 1e-6 * fs.hz() {
        return Err(Error::invalid(format!(
            "stream rate {} Hz does not match DAC rate {} Hz",
            s.rate().hz(),
            fs.hz()
        )));
    }
    let (_, peak) = zone_peak(fs, mode, target_zone);
    let limit_db = INVERSE_SINC_MAX_GAIN_DB;
    let mut max_requested_db: f64 = 0.0;
    let raw_gain = |fd: f64| {
        let m = response_magnitude(image_in_zone(fd * fs.hz(), fs, target_zone), fs, mode);
        if m <= 0.0 {
            f64::INFINITY
        } else {
            peak / m
        }
    };
    const PROBE: usize = 4096;
    for j in 0..=PROBE {
        let g = raw_gain(0.5 * j as f64 / PROBE as f64);
        max_requested_db = max_requested_db.max(20.0 * g.log10());
    }
    let clamped = max_requested_db > limit_db;
    let fir = filter::design_from_response(
        |fd| clamped_gain(fd * fs.hz(), fs, mode, target_zone, peak),
        INVERSE_SINC_HALF_TAPS,
        INVERSE_SINC_BETA,
    );
    let stream = IqStream::from_raw(fir.apply(s.samples()), s.rate());
    Ok(InverseSinc {
        stream,
        filter: fir,
        clamped,
        max_gain_db: max_requested_db.min(limit_db),
    })
}

/// Idealized coaxial band-pass: rippled passband, flat stopband.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandpassModel {
    pub pass_lo_hz: f64,
    pub pass_hi_hz: f64,
    pub stopband_atten_db: f64,
    pub passband_ripple_db: f64,
}

impl BandpassModel {
    pub const DEFAULT_STOPBAND_DB: f64 = 45.0;
    pub const DEFAULT_RIPPLE_DB: f64 = 1.0;

    pub fn new(pass_lo_hz: f64, pass_hi_hz: f64) -> Result<Self> {
        Self::with_attenuation(
            pass_lo_hz,
            pass_hi_hz,
            Self::DEFAULT_STOPBAND_DB,
            Self::DEFAULT_RIPPLE_DB,
        )
    }

    pub fn with_attenuation(
        pass_lo_hz: f64,
        pass_hi_hz: f64,
        stopband_atten_db: f64,
        passband_ripple_db: f64,
    ) -> Result<Self> {
        if !(pass_lo_hz < pass_hi_hz) {
            return Err(Error::invalid(format!(
                "passband [{pass_lo_hz}, {pass_hi_hz}] is empty"
            )));
        }
        if !(stopband_atten_db > 0.0) || !(passband_ripple_db >= 0.0) {
            return Err(Error::invalid(
                "stopband attenuation must be positive and ripple non-negative",
            ));
        }
        Ok(BandpassModel {
            pass_lo_hz,
            pass_hi_hz,
            stopband_atten_db,
            passband_ripple_db,
        })
    }

    /// Attenuation in dB at `f_hz` (positive numbers mean loss).
    pub fn attenuation_db(&self, f_hz: f64) -> f64 {
        if (self.pass_lo_hz..=self.pass_hi_hz).contains(&f_hz) {
            // two ripple periods across the band, zero loss at the edges and center
            let x = (f_hz - self.pass_lo_hz) / (self.pass_hi_hz - self.pass_lo_hz);
            0.5 * self.passband_ripple_db * (1.0 - (std::f64::consts::TAU * 2.0 * x).cos())
        } else {
            self.stopband_atten_db
        }
    }
}

pub fn apply_bandpass(spec: &Spectrum, bp: &BandpassModel) -> Spectrum {
    Spectrum {
        bins: spec
            .bins
            .iter()
            .map(|b| SpectrumBin {
                freq_hz: b.freq_hz,
                power_dbfs: (b.power_dbfs - bp.attenuation_db(b.freq_hz)).max(FLOOR_DBFS),
            })
            .collect(),
    }
}

/// Bins on either side of the carrier excluded from the spur search.
pub const SFDR_EXCLUSION_BINS: usize = 2;

/// Carrier power minus the largest spur outside the carrier exclusion window.
pub fn sfdr(spec: &Spectrum, carrier_hz: f64) -> Result<f64> {
    let idx = spec
        .nearest(carrier_hz)
        .ok_or_else(|| Error::invalid("empty spectrum"))?;
    let n = spec.bins.len();
    let spacing = if n > 1 {
        let j = if idx + 1 < n { idx + 1 } else { idx - 1 };
        (spec.bins[j].freq_hz - spec.bins[idx].freq_hz).abs()
    } else {
        0.0
    };
    if (spec.bins[idx].freq_hz - carrier_hz).abs() > spacing / 2.0 {
        return Err(Error::invalid(format!(
            "no bin within half a bin of carrier {carrier_hz} Hz"
        )));
    }
    let lo = idx.saturating_sub(SFDR_EXCLUSION_BINS);
    let hi = (idx + SFDR_EXCLUSION_BINS).min(n - 1);
    let carrier = spec.bins[lo..=hi]
        .iter()
        .map(|b| b.power_dbfs)
        .fold(f64::NEG_INFINITY, f64::max);
    let spur = spec
        .bins
        .iter()
        .enumerate()
        .filter(|(i, _)| *i < lo || *i > hi)
        .map(|(_, b)| b.power_dbfs)
        .fold(f64::NEG_INFINITY, f64::max);
    if spur == f64::NEG_INFINITY {
        return Err(Error::invalid("spectrum has no bins outside the carrier window"));
    }
    Ok(carrier - spur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn fs() -> SampleRate {
        SampleRate::dac_default()
    }

    fn tone_stream(freq: f64, amplitude: f64, rate: SampleRate, n: usize) -> IqStream<f64> {
        let samples = (0..n)
            .map(|k| Complex::new(amplitude * (TAU * freq * k as f64 / rate.hz()).cos(), 0.0))
            .collect();
        IqStream::new(samples, rate).unwrap()
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("NRZ".parse::<ReconstructionMode>().unwrap(), ReconstructionMode::Nrz);
        assert_eq!("rtc".parse::<ReconstructionMode>().unwrap(), ReconstructionMode::Rtc);
        assert!("foo".parse::<ReconstructionMode>().is_err());
    }

    #[test]
    fn nco_phase_bounds() {
        assert!(NcoConfig::new(1e9, 360.0).is_err());
        assert!(NcoConfig::new(1e9, -1.0).is_err());
        assert!(NcoConfig::new(1e9, 359.9).is_ok());
    }

    #[test]
    fn response_at_dc() {
        let t = fs().period_s();
        let nrz = reconstruction_response(0.0, fs(), ReconstructionMode::Nrz);
        assert!((nrz.norm() - t).abs() <= 1e-12 * t);
        let rtc = reconstruction_response(0.0, fs(), ReconstructionMode::Rtc);
        assert_eq!(rtc.norm(), 0.0);
    }

    #[test]
    fn response_at_nyquist_and_fs() {
        let f = fs().hz();
        for mode in [ReconstructionMode::Nrz, ReconstructionMode::Rtc] {
            let m = response_magnitude(f / 2.0, fs(), mode);
            assert!((m - 2.0 / PI).abs() < 1e-12, "{mode}");
        }
        assert!((response_magnitude(f, fs(), ReconstructionMode::Rtc) - 2.0 / PI).abs() < 1e-12);
        assert!(response_magnitude(f, fs(), ReconstructionMode::Nrz) < 1e-15);
    }

    #[test]
    fn response_matches_f32() {
        let f = 1.2345e9;
        for mode in [ReconstructionMode::Nrz, ReconstructionMode::Rtc] {
            let a = reconstruction_response(f, fs(), mode);
            let b = reconstruction_response(f as f32, fs(), mode);
            assert!(((b.norm() as f64) - a.norm()).abs() < 1e-5 * a.norm());
        }
    }

    #[test]
    fn curve_endpoints() {
        let c = response_curve(fs(), ReconstructionMode::Nrz, 3.0 * fs().hz(), 2).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points[0].freq_hz, 0.0);
        assert_eq!(c.points[1].freq_hz, 3.0 * fs().hz());
    }

    #[test]
    fn zone_image_examples() {
        let imgs = zone_images(1.644e9, fs(), 3).unwrap();
        let f: Vec<f64> = imgs.iter().map(|i| i.freq_hz).collect();
        assert!((f[0] - 1.644e9).abs() < 1.0);
        assert!((f[1] - 4.5e9).abs() < 1.0);
        assert!((f[2] - 7.788e9).abs() < 1.0);

        let dc = zone_images(0.0, fs(), 4).unwrap();
        let f: Vec<f64> = dc.iter().map(|i| i.freq_hz).collect();
        assert_eq!(f, vec![0.0, fs().hz(), fs().hz(), 2.0 * fs().hz()]);

        let q = zone_images(fs().hz() / 4.0, fs(), 3).unwrap();
        let f: Vec<f64> = q.iter().map(|i| i.freq_hz / fs().hz()).collect();
        assert_eq!(f, vec![0.25, 0.75, 1.25]);

        assert!(zone_images(fs().hz() / 2.0, fs(), 2).is_err());
        assert!(zone_images(1e9, fs(), 0).is_err());
    }

    #[test]
    fn zone_of_boundaries() {
        assert_eq!(zone_of(0.0, fs()), 1);
        assert_eq!(zone_of(fs().hz() / 2.0, fs()), 2);
        assert_eq!(zone_of(4.5e9, fs()), 2);
        assert_eq!(zone_of(7.788e9, fs()), 3);
    }

    #[test]
    fn interpolate_identity_and_errors() {
        let s = tone_stream(1e6, 0.5, SampleRate::new(768e6).unwrap(), 64);
        assert_eq!(interpolate(&s, 1).unwrap(), s);
        assert!(interpolate(&s, 3).is_err());
        assert!(interpolate(&s, 16).is_err());
        let up = interpolate(&s, 8).unwrap();
        assert_eq!(up.len(), 512);
        assert_eq!(up.rate().hz(), 6.144e9);
    }

    #[test]
    fn upconvert_quadrature() {
        let rate = SampleRate::new(1e9).unwrap();
        let nco = NcoConfig::new(100e6, 0.0).unwrap();
        let i_only = IqStream::constant(Complex::new(1.0, 0.0), 50, rate).unwrap();
        let q_only = IqStream::constant(Complex::new(0.0, 1.0), 50, rate).unwrap();
        let yi = nco_upconvert(&i_only, nco).unwrap();
        let yq = nco_upconvert(&q_only, nco).unwrap();
        for k in 0..50 {
            let th = TAU * 0.1 * k as f64;
            assert!((yi.samples()[k] - th.cos()).abs() < 1e-12);
            assert!((yq.samples()[k] + th.sin()).abs() < 1e-12);
        }
        let too_fast = NcoConfig::new(1e9, 0.0).unwrap();
        assert!(nco_upconvert(&i_only, too_fast).is_err());
    }

    #[test]
    fn measured_response_tracks_analytic() {
        for mode in [ReconstructionMode::Nrz, ReconstructionMode::Rtc] {
            for frac in [0.0, 0.13, 0.5, 0.77, 1.0, 1.31, 2.4] {
                let f = frac * fs().hz();
                let (at, got) = measured_response(f, fs(), mode, 256).unwrap();
                assert!((at - f).abs() <= fs().hz() / 512.0);
                let want = response_magnitude(at, fs(), mode);
                assert!((got - want).abs() < 2e-3, "{mode} {frac}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn oversampled_shapes() {
        let w = Waveform::new(vec![0.5, -0.25], SampleRate::new(1e9).unwrap()).unwrap();
        let nrz = reconstruct_oversampled(&w, ReconstructionMode::Nrz, 4).unwrap();
        assert_eq!(nrz.samples(), &[0.5, 0.5, 0.5, 0.5, -0.25, -0.25, -0.25, -0.25]);
        let rtc = reconstruct_oversampled(&w, ReconstructionMode::Rtc, 4).unwrap();
        assert_eq!(rtc.samples(), &[0.5, 0.5, -0.5, -0.5, -0.25, -0.25, 0.25, 0.25]);
        assert!(reconstruct_oversampled(&w, ReconstructionMode::Rtc, 3).is_err());
    }

    #[test]
    fn replicated_spectrum_is_ordered() {
        let s = tone_stream(fs().hz() / 8.0, 1.0, fs(), 256);
        let nco = NcoConfig::new(0.0, 0.0).unwrap();
        let spec = synthesize_output_spectrum(&s, nco, ReconstructionMode::Nrz, 4).unwrap();
        assert!(spec.bins.windows(2).all(|w| w[1].freq_hz > w[0].freq_hz));
        assert_eq!(spec.bins.first().unwrap().freq_hz, 0.0);
        assert_eq!(spec.bins.last().unwrap().freq_hz, 2.0 * fs().hz() - fs().hz() / 256.0);
    }

    #[test]
    fn rtc_peaks_in_zone_two() {
        let (f, m) = zone_peak(fs(), ReconstructionMode::Rtc, 2);
        // tan(x) = 2x with x = pi f / (2 F_S)
        let x = PI * f / (2.0 * fs().hz());
        assert!((x.tan() - 2.0 * x).abs() < 1e-6);
        assert!(m > 2.0 / PI);
        let (f1, m1) = zone_peak(fs(), ReconstructionMode::Nrz, 1);
        assert_eq!(f1, 0.0);
        assert!((m1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_sinc_unit_gain_at_peak() {
        let (f_peak, _) = zone_peak(fs(), ReconstructionMode::Rtc, 2);
        let f_digital = fs().hz() - f_peak;
        let g = inverse_sinc_gain(f_digital, fs(), ReconstructionMode::Rtc, 2);
        assert!((g - 1.0).abs() < 1e-12);
        let g0 = inverse_sinc_gain(0.0, fs(), ReconstructionMode::Nrz, 1);
        assert_eq!(g0, 1.0);
    }

    #[test]
    fn inverse_sinc_flags_nulls() {
        let s = tone_stream(fs().hz() / 8.0, 0.1, fs(), 128);
        let rtc1 = inverse_sinc(&s, fs(), ReconstructionMode::Rtc, 1).unwrap();
        assert!(rtc1.clamped);
        assert_eq!(rtc1.max_gain_db, INVERSE_SINC_MAX_GAIN_DB);
        let nrz1 = inverse_sinc(&s, fs(), ReconstructionMode::Nrz, 1).unwrap();
        assert!(!nrz1.clamped);
        assert!((nrz1.max_gain_db - 20.0 * (PI / 2.0).log10()).abs() < 1e-6);
        assert!(inverse_sinc(&s, fs(), ReconstructionMode::Nrz, 3).is_err());
        let wrong_rate = tone_stream(1e6, 0.1, SampleRate::new(1e9).unwrap(), 16);
        assert!(inverse_sinc(&wrong_rate, fs(), ReconstructionMode::Nrz, 1).is_err());
    }

    #[test]
    fn bandpass_mask() {
        let bp = BandpassModel::new(4e9, 5e9).unwrap();
        let spec = Spectrum::new(vec![
            SpectrumBin { freq_hz: 1e9, power_dbfs: -10.0 },
            SpectrumBin { freq_hz: 4.3e9, power_dbfs: -10.0 },
            SpectrumBin { freq_hz: 6e9, power_dbfs: -10.0 },
        ])
        .unwrap();
        let out = apply_bandpass(&spec, &bp);
        assert!(out.bins[0].power_dbfs <= -55.0);
        assert!((out.bins[1].power_dbfs + 10.0).abs() <= 1.0);
        assert!(out.bins[2].power_dbfs <= -55.0);
        assert!(apply_bandpass(&Spectrum::default(), &bp).is_empty());
        assert!(BandpassModel::new(5e9, 4e9).is_err());
    }

    #[test]
    fn sfdr_definition() {
        let mut bins: Vec<SpectrumBin> = (0..100)
            .map(|k| SpectrumBin { freq_hz: k as f64, power_dbfs: FLOOR_DBFS })
            .collect();
        bins[40].power_dbfs = 0.0;
        let spec = Spectrum::new(bins.clone()).unwrap();
        assert!(sfdr(&spec, 40.0).unwrap() >= 250.0);
        bins[70].power_dbfs = -45.0;
        let spec = Spectrum::new(bins).unwrap();
        assert!((sfdr(&spec, 40.0).unwrap() - 45.0).abs() < 1e-12);
        assert!(sfdr(&spec, 40.4).is_ok());
        assert!(sfdr(&spec, 200.0).is_err());
        assert!(sfdr(&Spectrum::default(), 1.0).is_err());
    }
}
