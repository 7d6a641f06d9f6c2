//! RF-ADC readout chain: zone folding, NCO down-mix, decimation, IIR
//! low-pass, moving average, rotation, trigger-framed capture and averaging.

use std::f64::consts::TAU;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::awg::TriggerEvent;
use crate::dac::rate_change_stages;
use crate::error::{Error, Result};
use crate::filter;
use crate::scalar::Scalar;
use crate::signal::{IqStream, SampleRate, Waveform};

/// Image of `f_in_hz` after sampling at `fs`, and the Nyquist zone it came from.
pub fn alias_fold(f_in_hz: f64, fs: SampleRate) -> Result<(f64, usize)> {
    if !(f_in_hz >= 0.0) || !f_in_hz.is_finite() {
        return Err(Error::invalid(format!("input frequency must be >= 0, got {f_in_hz}")));
    }
    let rate = fs.hz();
    let zone = (2.0 * f_in_hz / rate).floor() as usize + 1;
    let m = f_in_hz % rate;
    let image = if m < rate / 2.0 { m } else { rate - m };
    Ok((image, zone))
}

/// Complex down-mix by exp(-j (2 pi f t + phi)).
///
/// For a real input this gives I = s cos, Q = -s sin.
pub fn downmix<T: Scalar>(s: &IqStream<T>, nco_f_hz: f64, phase_deg: f64) -> Result<IqStream<T>> {
    let fs = s.rate().hz();
    if !(nco_f_hz >= 0.0) || nco_f_hz >= fs / 2.0 {
        return Err(Error::invalid(format!(
            "NCO frequency {nco_f_hz} Hz must be in [0, {}) after folding",
            fs / 2.0
        )));
    }
    let step = nco_f_hz / fs;
    let phi = phase_deg.to_radians();
    let samples = s
        .samples()
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let theta = TAU * (k as f64 * step).fract() + phi;
            x * Complex::new(T::of(theta.cos()), T::of(-theta.sin()))
        })
        .collect();
    Ok(IqStream::from_raw(samples, s.rate()))
}

pub fn downmix_real<T: Scalar>(s: &Waveform<T>, nco_f_hz: f64, phase_deg: f64) -> Result<IqStream<T>> {
    downmix(&s.to_iq(), nco_f_hz, phase_deg)
}

/// Half-band decimation by 1, 2, 4 or 8.
pub fn decimate<T: Scalar>(s: &IqStream<T>, factor: usize) -> Result<IqStream<T>> {
    let stages = rate_change_stages(factor)?;
    let mut data = s.samples().to_vec();
    for _ in 0..stages {
        data = filter::decimate_x2(&data);
    }
    Ok(IqStream::from_raw(data, s.rate().scaled(1.0 / factor as f64)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IirConfig {
    pub cutoff_mhz: f64,
    pub order: usize,
}

impl IirConfig {
    pub fn new(cutoff_mhz: f64, order: usize) -> Result<Self> {
        if !(cutoff_mhz > 0.0) || order < 1 {
            return Err(Error::invalid(format!(
                "IIR needs cutoff > 0 and order >= 1, got {cutoff_mhz} MHz, order {order}"
            )));
        }
        Ok(IirConfig { cutoff_mhz, order })
    }

    /// Coefficients (b0 = b1, a1) of one section at `rate`.
    fn section(&self, rate: SampleRate) -> Result<(f64, f64)> {
        let fc = self.cutoff_mhz * 1e6;
        if !(fc > 0.0) || fc >= rate.hz() / 2.0 || self.order < 1 {
            return Err(Error::invalid(format!(
                "IIR cutoff {} MHz must be in (0, {}) MHz",
                self.cutoff_mhz,
                rate.hz() / 2e6
            )));
        }
        let warped = (std::f64::consts::PI * fc / rate.hz()).tan();
        // each section is down 3/order dB at fc
        let wp = warped / (2f64.powf(1.0 / self.order as f64) - 1.0).sqrt();
        Ok((wp / (1.0 + wp), (wp - 1.0) / (wp + 1.0)))
    }

    /// Magnitude of the digital cascade at `f_hz`.
    pub fn gain_at(&self, f_hz: f64, rate: SampleRate) -> Result<f64> {
        let (b, a) = self.section(rate)?;
        let z1 = Complex::from_polar(1.0, -TAU * f_hz / rate.hz());
        let h = (Complex::new(1.0, 0.0) + z1) * b / (Complex::new(1.0, 0.0) + z1 * a);
        Ok(h.norm().powi(self.order as i32))
    }
}

/// Cascade of identical first-order bilinear sections, zero initial state.
pub fn iir_lowpass<T: Scalar>(s: &IqStream<T>, cfg: IirConfig) -> Result<IqStream<T>> {
    let (b, a) = cfg.section(s.rate())?;
    let (b, a) = (T::of(b), T::of(a));
    let mut data = s.samples().to_vec();
    let zero = Complex::new(T::zero(), T::zero());
    for _ in 0..cfg.order {
        let (mut x1, mut y1) = (zero, zero);
        for v in data.iter_mut() {
            let x = *v;
            let y = (x + x1) * b - y1 * a;
            x1 = x;
            y1 = y;
            *v = y;
        }
    }
    Ok(IqStream::from_raw(data, s.rate()))
}

pub const DEFAULT_MA_WINDOW: usize = 8;

/// Trailing mean over `window` samples, zero-padded before the start.
pub fn moving_average<T: Scalar>(s: &IqStream<T>, window: usize) -> Result<IqStream<T>> {
    if window < 1 {
        return Err(Error::invalid("moving-average window must be >= 1"));
    }
    let x = s.samples();
    let inv = T::one() / T::of(window as f64);
    let mut acc = Complex::new(T::zero(), T::zero());
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        acc += x[k];
        if k >= window {
            acc -= x[k - window];
        }
        out.push(acc * inv);
    }
    Ok(IqStream::from_raw(out, s.rate()))
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationConfig {
    pub theta_deg: f64,
}

/// i' = i cos + q sin, q' = -i sin + q cos.
pub fn rotate<T: Scalar>(iq: Complex<T>, cfg: RotationConfig) -> Complex<T> {
    let th = T::of(cfg.theta_deg).to_radians();
    let (s, c) = th.sin_cos();
    Complex::new(iq.re * c + iq.im * s, -iq.re * s + iq.im * c)
}

pub fn rotate_stream<T: Scalar>(s: &IqStream<T>, cfg: RotationConfig) -> IqStream<T> {
    s.map_samples(|v| rotate(v, cfg))
}

/// Rotation angle that puts the principal axis of a point cloud on I.
pub fn principal_angle_deg(points: &[Complex<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points to find a principal axis"));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex<f64>>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.re * d.re;
        syy += d.im * d.im;
        sxy += d.re * d.im;
    }
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Ok(phi.to_degrees().rem_euclid(360.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureRecord<T> {
    pub iq: IqStream<T>,
    pub trigger_time_ns: f64,
    pub channel: usize,
    pub record_index: usize,
}

/// Cut one fixed-length record per trigger. Stream sample 0 is at time 0.
pub fn capture<T: Scalar>(
    s: &IqStream<T>,
    triggers: &[TriggerEvent],
    window_ns: f64,
    channel: usize,
) -> Result<Vec<CaptureRecord<T>>> {
    if !(window_ns > 0.0) {
        return Err(Error::invalid(format!("capture window must be > 0, got {window_ns}")));
    }
    let rate = s.rate();
    let len = rate.samples_for_ns(window_ns).max(1);
    let starts: Vec<usize> = triggers
        .iter()
        .map(|t| rate.samples_for_ns(t.time_ns.max(0.0)))
        .collect();
    for (k, w) in starts.windows(2).enumerate() {
        if w[1] < w[0] + len {
            return Err(Error::Framing { first: k, second: k + 1 });
        }
    }
    starts
        .iter()
        .zip(triggers)
        .enumerate()
        .map(|(k, (&start, t))| {
            if start + len > s.len() {
                return Err(Error::Truncated { record: k });
            }
            Ok(CaptureRecord {
                iq: IqStream::from_raw(s.samples()[start..start + len].to_vec(), rate),
                trigger_time_ns: t.time_ns,
                channel,
                record_index: k,
            })
        })
        .collect()
}

/// Time-mean of each record, then the mean across records.
pub fn average_records<T: Scalar>(records: &[CaptureRecord<T>]) -> Result<Complex<T>> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("no records to average"))?;
    let len = first.iq.len();
    if len == 0 {
        return Err(Error::invalid("records are empty"));
    }
    if let Some(r) = records.iter().find(|r| r.iq.len() != len) {
        return Err(Error::invalid(format!(
            "record {} has {} samples, expected {len}",
            r.record_index,
            r.iq.len()
        )));
    }
    let n = T::of(len as f64);
    let total = records
        .iter()
        .map(|r| r.iq.samples().iter().fold(Complex::new(T::zero(), T::zero()), |a, &b| a + b) / n)
        .fold(Complex::new(T::zero(), T::zero()), |a, b| a + b);
    Ok(total / T::of(records.len() as f64))
}

/// Stage settings of one readout channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutChain {
    pub nco_hz: f64,
    pub nco_phase_deg: f64,
    pub decimation: usize,
    pub iir: IirConfig,
    pub ma_window: usize,
    pub rotation: RotationConfig,
    /// Bypass LPF, moving average and rotation.
    pub raw: bool,
}

impl ReadoutChain {
    /// Chain for a readout tone at `readout_hz` sampled at `adc_rate`.
    pub fn for_tone(readout_hz: f64, adc_rate: SampleRate) -> Result<Self> {
        let (image, _) = alias_fold(readout_hz, adc_rate)?;
        Ok(ReadoutChain {
            nco_hz: image,
            nco_phase_deg: 0.0,
            decimation: 4,
            iir: IirConfig::new(0.53, 1)?,
            ma_window: DEFAULT_MA_WINDOW,
            rotation: RotationConfig::default(),
            raw: false,
        })
    }

    /// Down-mix, decimate and (unless raw) filter and rotate ADC samples.
    pub fn process<T: Scalar>(&self, adc: &Waveform<T>) -> Result<IqStream<T>> {
        let mixed = downmix_real(adc, self.nco_hz, self.nco_phase_deg)?;
        let dec = decimate(&mixed, self.decimation)?;
        if self.raw {
            return Ok(dec);
        }
        let lp = iir_lowpass(&dec, self.iir)?;
        let ma = moving_average(&lp, self.ma_window)?;
        Ok(rotate_stream(&ma, self.rotation))
    }
}
