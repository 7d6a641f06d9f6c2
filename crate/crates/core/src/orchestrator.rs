//! Experiment engine: configuration parsing, sweep planning, pulse-sequence
//! construction and the point-by-point run loop over AWG, qubit and readout.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::awg::{self, BramBank, PlayMode, PulseSequence, Segment, TriggerEvent, TriggerSpec};
use crate::device::{self, free_evolve, measure, QubitParams, QubitState, ReadoutParams};
use crate::error::{Error, Result};
use crate::filter;
use crate::readout::{self, CaptureRecord, IirConfig, ReadoutChain, RotationConfig};
use crate::signal::{gaussian_envelope, quantize, IqStream, QuantizedWaveform, SampleRate, Waveform};
use crate::sync::{roundtrip_latency, LatencyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpType {
    T1,
    #[serde(rename = "Time_Rabi")]
    TimeRabi,
    #[serde(rename = "Power_Rabi")]
    PowerRabi,
    Ramsey,
}

impl FromStr for ExpType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T1" => Ok(ExpType::T1),
            "Time_Rabi" => Ok(ExpType::TimeRabi),
            "Power_Rabi" => Ok(ExpType::PowerRabi),
            "Ramsey" => Ok(ExpType::Ramsey),
            other => Err(Error::Config(format!(
                "unsupported experiment type \"{other}\" (expected T1, Time_Rabi, Power_Rabi or Ramsey)"
            ))),
        }
    }
}

impl fmt::Display for ExpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpType::T1 => "T1",
            ExpType::TimeRabi => "Time_Rabi",
            ExpType::PowerRabi => "Power_Rabi",
            ExpType::Ramsey => "Ramsey",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveType {
    Gaussian,
    Square,
}

/// Experiment configuration. Times in ns, frequencies in MHz, amplitudes in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpConfig {
    pub exp_type: String,
    pub continuous: u8,
    pub qubit_freq: f64,
    pub readout_freq: f64,
    pub mode: u8,
    /// Repetition period in ns.
    pub repetition_rate: f64,
    pub time_between_pulses: f64,
    pub initial_amp: f64,
    pub trigger_delay: f64,
    pub trigger_width: f64,
    pub amplitude_factor: f64,
    pub amplitude_steps: u64,
    pub gaussian_sigma: f64,
    pub gaussian_pulse_duration: f64,
    pub outer_loop_count: u64,
    pub inner_loop_count: u64,
    /// Parsed and recorded, no effect on the run.
    pub inner_loop_step: f64,
    /// Parsed and recorded, no effect on the run.
    pub data_fetch_time: f64,
    pub loopback: u8,
    pub wave_type: String,
}

impl ExpConfig {
    pub fn experiment(&self) -> Result<ExpType> {
        self.exp_type.parse()
    }

    pub fn wave(&self) -> Result<WaveType> {
        match self.wave_type.as_str() {
            "gaussian" => Ok(WaveType::Gaussian),
            "square" => Ok(WaveType::Square),
            other => Err(Error::Config(format!(
                "unsupported wave_type \"{other}\" (expected gaussian or square)"
            ))),
        }
    }

    pub fn play_mode(&self) -> PlayMode {
        if self.mode == 1 || self.continuous == 1 {
            PlayMode::Continuous
        } else {
            PlayMode::FixedCount(self.inner_loop_count as usize)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment()?;
        self.wave()?;
        for (name, v) in [("continuous", self.continuous), ("mode", self.mode), ("loopback", self.loopback)] {
            if v > 1 {
                return Err(Error::Config(format!("\"{name}\" must be 0 or 1, got {v}")));
            }
        }
        for (name, v) in [
            ("qubit_freq", self.qubit_freq),
            ("readout_freq", self.readout_freq),
            ("repetition_rate", self.repetition_rate),
            ("trigger_width", self.trigger_width),
            ("gaussian_sigma", self.gaussian_sigma),
            ("gaussian_pulse_duration", self.gaussian_pulse_duration),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("\"{name}\" must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("time_between_pulses", self.time_between_pulses),
            ("trigger_delay", self.trigger_delay),
            ("amplitude_factor", self.amplitude_factor),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("\"{name}\" must be >= 0, got {v}")));
            }
        }
        if !(0.0..=100.0).contains(&self.initial_amp) {
            return Err(Error::Config(format!(
                "\"initial_amp\" must be a percentage in [0, 100], got {}",
                self.initial_amp
            )));
        }
        for (name, v) in [("outer_loop_count", self.outer_loop_count), ("inner_loop_count", self.inner_loop_count)] {
            if v < 1 {
                return Err(Error::Config(format!("\"{name}\" must be >= 1")));
            }
        }
        if self.experiment()? == ExpType::PowerRabi && self.amplitude_steps < 1 {
            return Err(Error::Config("\"amplitude_steps\" must be >= 1 for Power_Rabi".into()));
        }
        Ok(())
    }
}

/// Drop `#` comment lines and an optional `name =` prefix, leaving the JSON object.
fn strip_document(text: &str) -> &str {
    let body = text.trim_start();
    let mut rest = body;
    loop {
        let t = rest.trim_start();
        if let Some(stripped) = t.strip_prefix('#') {
            rest = stripped.split_once('\n').map_or("", |(_, r)| r);
        } else {
            rest = t;
            break;
        }
    }
    match rest.find('{') {
        Some(brace) if rest[..brace].trim_end().ends_with('=') => &rest[brace..],
        _ => rest,
    }
}

/// Parse an experiment configuration document.
pub fn parse_config(text: &str) -> Result<ExpConfig> {
    let cfg: ExpConfig = serde_json::from_str(strip_document(text)).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Device description: qubit and readout sections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub qubit: QubitParams,
    #[serde(default)]
    pub readout: ReadoutParams,
}

pub fn parse_device(text: &str) -> Result<DeviceConfig> {
    let d: DeviceConfig = serde_json::from_str(strip_document(text)).map_err(|e| Error::Config(e.to_string()))?;
    d.qubit.validate()?;
    d.readout.validate()?;
    Ok(d)
}

/// Sweep increments and starting values of the A, T and t accumulators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub exp_type: ExpType,
    /// Amplitude step in percent.
    pub delta_a: f64,
    /// Readout-trigger wait step in ns.
    pub delta_trigger: f64,
    /// Inter-pulse time step in ns.
    pub delta_t: f64,
    pub n_points: usize,
    pub n_iter: usize,
    pub a0: f64,
    pub trigger0: f64,
    pub t0: f64,
}

impl SweepPlan {
    /// (A, T, t) after `k` outer steps.
    pub fn accumulators(&self, k: usize) -> (f64, f64, f64) {
        let k = k as f64;
        (
            self.a0 + k * self.delta_a,
            self.trigger0 + k * self.delta_trigger,
            self.t0 + k * self.delta_t,
        )
    }

    /// Value of the swept quantity at point `k`.
    pub fn axis_value(&self, k: usize) -> f64 {
        let (a, trig, t) = self.accumulators(k);
        match self.exp_type {
            ExpType::PowerRabi => a,
            ExpType::T1 => trig,
            ExpType::Ramsey | ExpType::TimeRabi => t,
        }
    }

    pub fn axis_unit(&self) -> &'static str {
        match self.exp_type {
            ExpType::PowerRabi => "percent",
            _ => "ns",
        }
    }

    pub fn total_shots(&self) -> usize {
        self.n_points * self.n_iter
    }
}

/// Sweep increments per experiment type.
pub fn plan(cfg: &ExpConfig) -> Result<SweepPlan> {
    cfg.validate()?;
    let exp = cfg.experiment()?;
    let eps_a = cfg.amplitude_factor / cfg.amplitude_steps.max(1) as f64;
    let eps_t = cfg.time_between_pulses;
    let (delta_a, delta_trigger, delta_t) = match exp {
        ExpType::PowerRabi => (eps_a, 0.0, 0.0),
        ExpType::T1 => (0.0, eps_t, 0.0),
        ExpType::Ramsey | ExpType::TimeRabi => (0.0, 0.0, eps_t),
    };
    let n_points = match exp {
        ExpType::PowerRabi => cfg.amplitude_steps,
        _ => cfg.outer_loop_count,
    } as usize;
    if n_points > 1 && delta_a == 0.0 && delta_trigger == 0.0 && delta_t == 0.0 {
        return Err(Error::invalid(format!(
            "{exp} sweep of {n_points} points has a zero step"
        )));
    }
    Ok(SweepPlan {
        exp_type: exp,
        delta_a,
        delta_trigger,
        delta_t,
        n_points,
        n_iter: cfg.inner_loop_count as usize,
        a0: cfg.initial_amp,
        trigger0: cfg.trigger_delay,
        t0: 0.0,
    })
}

/// Converter and signal-chain settings shared by every point of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    pub dac_rate: SampleRate,
    pub adc_rate: SampleRate,
    pub interp_factor: usize,
    pub decim_factor: usize,
    pub iir: IirConfig,
    pub ma_window: usize,
    pub rotation: RotationConfig,
    /// Bypass LPF, moving average and rotation on the readout path.
    pub raw: bool,
    pub fpga_clock_hz: f64,
    pub bram_capacity: usize,
}

impl Default for Instrument {
    fn default() -> Self {
        Instrument {
            dac_rate: SampleRate::dac_default(),
            adc_rate: SampleRate::adc_default(),
            interp_factor: 8,
            decim_factor: 4,
            iir: IirConfig { cutoff_mhz: 0.53, order: 1 },
            ma_window: readout::DEFAULT_MA_WINDOW,
            rotation: RotationConfig::default(),
            raw: false,
            fpga_clock_hz: 192e6,
            bram_capacity: BramBank::DEFAULT_CAPACITY,
        }
    }
}

impl Instrument {
    pub fn validate(&self) -> Result<()> {
        if self.dac_rate.hz() > SampleRate::DAC_MAX_HZ {
            return Err(Error::Config(format!(
                "DAC rate {} Hz exceeds the converter maximum {} Hz",
                self.dac_rate.hz(),
                SampleRate::DAC_MAX_HZ
            )));
        }
        roundtrip_latency(&self.latency())?;
        Ok(())
    }

    pub fn fabric_rate(&self) -> SampleRate {
        self.dac_rate.scaled(1.0 / self.interp_factor as f64)
    }

    pub fn latency(&self) -> LatencyConfig {
        LatencyConfig {
            interp_factor: self.interp_factor,
            decim_factor: self.decim_factor,
            fpga_clock_hz: self.fpga_clock_hz,
            mixers_enabled: true,
        }
    }

    fn chain(&self, rf_hz: f64, raw: bool) -> Result<ReadoutChain> {
        let (image, _) = readout::alias_fold(rf_hz, self.adc_rate)?;
        Ok(ReadoutChain {
            nco_hz: image,
            nco_phase_deg: 0.0,
            decimation: self.decim_factor,
            iir: self.iir,
            ma_window: self.ma_window,
            rotation: self.rotation,
            raw: raw || self.raw,
        })
    }
}

/// A pulse sequence with its memory bank and scaler setting.
#[derive(Clone, Debug)]
pub struct BuiltSequence {
    pub bank: BramBank,
    pub sequence: PulseSequence,
    pub scale_percent: f64,
    /// End of the drive pulses, in ns from sequence start.
    pub drive_end_ns: f64,
}

fn envelope(cfg: &ExpConfig, rate: SampleRate) -> Result<Waveform<f64>> {
    match cfg.wave()? {
        WaveType::Gaussian => gaussian_envelope(cfg.gaussian_pulse_duration, cfg.gaussian_sigma, rate),
        WaveType::Square => {
            let n = rate.samples_for_ns(cfg.gaussian_pulse_duration).max(1);
            Waveform::new(vec![1.0; n], rate)
        }
    }
}

fn scaled(w: &Waveform<f64>, factor: f64) -> Result<QuantizedWaveform> {
    let v: Vec<f64> = w.samples().iter().map(|s| s * factor).collect();
    quantize(&Waveform::new(v, w.rate())?, QuantizedWaveform::DEFAULT_BITS)
}

/// Pulse sequence of sweep point `k`.
pub fn build_sequence(cfg: &ExpConfig, plan: &SweepPlan, k: usize, inst: &Instrument) -> Result<BuiltSequence> {
    if k >= plan.n_points {
        return Err(Error::invalid(format!("point {k} outside sweep of {} points", plan.n_points)));
    }
    let rate = inst.fabric_rate();
    let (a, wait, t) = plan.accumulators(k);
    let pulse = envelope(cfg, rate)?;
    let mut bank = BramBank::with_capacity(inst.bram_capacity);
    let mut segments = Vec::new();
    let mut scale = cfg.initial_amp;
    match plan.exp_type {
        ExpType::T1 => {
            let h = bank.load_waveform(0, scaled(&pulse, 1.0)?)?;
            segments.push(Segment::Stored { i: h, q: None, repeat: 1 });
            segments.push(Segment::Flat { level: 0.0, duration_ns: wait });
        }
        ExpType::PowerRabi => {
            if !(0.0..=100.0).contains(&a) {
                return Err(Error::invalid(format!("Power_Rabi amplitude {a}% at point {k} exceeds 100%")));
            }
            scale = a;
            let h = bank.load_waveform(0, scaled(&pulse, 1.0)?)?;
            segments.push(Segment::Stored { i: h, q: None, repeat: 1 });
        }
        ExpType::Ramsey => {
            // both halves share one stored waveform and the same NCO, so their phase is fixed
            let h = bank.load_waveform(0, scaled(&pulse, 0.5)?)?;
            segments.push(Segment::Stored { i: h, q: None, repeat: 1 });
            segments.push(Segment::Flat { level: 0.0, duration_ns: t });
            segments.push(Segment::Stored { i: h, q: None, repeat: 1 });
        }
        ExpType::TimeRabi => {
            let s = pulse.samples();
            let mid = s.len() / 2;
            let peak = s.iter().copied().fold(0.0, f64::max);
            let first = Waveform::new(s[..mid.max(1)].to_vec(), rate)?;
            let second = Waveform::new(s[mid.max(1)..].to_vec(), rate);
            let h1 = bank.load_waveform(0, scaled(&first, 1.0)?)?;
            segments.push(Segment::Stored { i: h1, q: None, repeat: 1 });
            segments.push(Segment::Flat { level: peak, duration_ns: t });
            if let Ok(second) = second {
                let h2 = bank.load_waveform(0, scaled(&second, 1.0)?)?;
                segments.push(Segment::Stored { i: h2, q: None, repeat: 1 });
            }
        }
    }
    let drive_samples: usize = segments
        .iter()
        .map(|s| match *s {
            Segment::Stored { i, repeat, .. } => bank.get(i).map_or(0, |w| w.len()) * repeat,
            Segment::Flat { duration_ns, .. } => rate.samples_for_ns(duration_ns),
        })
        .sum();
    let drive_end_ns = drive_samples as f64 * rate.period_ns();
    // T1 already carries its wait as a flat segment
    let trigger_at = match plan.exp_type {
        ExpType::T1 => drive_end_ns,
        _ => drive_end_ns + cfg.trigger_delay,
    };
    let trigger_at = if cfg.loopback == 1 { cfg.trigger_delay } else { trigger_at };
    let busy = trigger_at.max(drive_end_ns) + cfg.trigger_width;
    if busy > cfg.repetition_rate {
        return Err(Error::invalid(format!(
            "point {k}: sequence and capture need {busy} ns, longer than the {} ns repetition period",
            cfg.repetition_rate
        )));
    }
    segments.push(Segment::Flat { level: 0.0, duration_ns: cfg.repetition_rate - drive_end_ns });
    Ok(BuiltSequence {
        bank,
        sequence: PulseSequence {
            segments,
            trigger: TriggerSpec::new(trigger_at, cfg.trigger_width)?,
            rate,
        },
        scale_percent: scale,
        drive_end_ns,
    })
}

/// Evolve `state` under the stream up to sample `end`, free-evolving over zero runs.
fn drive_qubit(
    mut state: QubitState,
    stream: &IqStream<f64>,
    end: usize,
    drive_f_hz: f64,
    p: &QubitParams,
) -> Result<QubitState> {
    let s = &stream.samples()[..end.min(stream.len())];
    let dt_ns = stream.rate().period_ns();
    let mut k = 0;
    while k < s.len() {
        let zero = s[k].norm() == 0.0;
        let mut j = k;
        while j < s.len() && (s[j].norm() == 0.0) == zero {
            j += 1;
        }
        state = if zero {
            free_evolve(state, (j - k) as f64 * dt_ns, p)
        } else {
            let seg = IqStream::new(s[k..j].to_vec(), stream.rate())?;
            device::apply_drive_iq(state, &seg, drive_f_hz, p)?
        };
        k = j;
    }
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub axis_value: f64,
    pub i_mean: f64,
    pub q_mean: f64,
    pub p_excited: f64,
    pub shots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub exp_type: ExpType,
    pub axis_unit: String,
    pub points: Vec<SweepPoint>,
    pub seed: u64,
    pub config_sha256: String,
    pub total_shots: usize,
    /// Loopback arrival delay of each point, ns after sequence start.
    pub loopback_delays_ns: Vec<f64>,
    #[serde(skip)]
    pub records: Vec<CaptureRecord<f64>>,
}

impl SweepResult {
    pub fn axis(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.axis_value).collect()
    }

    pub fn p_excited(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_excited).collect()
    }

    pub fn iq(&self) -> Vec<Complex<f64>> {
        self.points.iter().map(|p| Complex::new(p.i_mean, p.q_mean)).collect()
    }

    /// Point means rotated so the state contrast lies on I; returns the I values.
    pub fn aligned_signal(&self) -> Result<Vec<f64>> {
        let iq = self.iq();
        let th = readout::principal_angle_deg(&iq)?;
        Ok(iq.iter().map(|&v| readout::rotate(v, RotationConfig { theta_deg: th }).re).collect())
    }
}

pub fn config_hash(cfg: &ExpConfig) -> String {
    let canonical = serde_json::to_string(cfg).unwrap_or_default();
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// ADC samples of a readout tone carrying `iq` for `window_ns`.
fn readout_tone(iq: Complex<f64>, f_hz: f64, window_ns: f64, adc: SampleRate) -> Result<Waveform<f64>> {
    let n = adc.samples_for_ns(window_ns);
    let step = f_hz / adc.hz();
    let samples = (0..n)
        .map(|k| {
            let th = std::f64::consts::TAU * (k as f64 * step).fract();
            iq.re * th.cos() - iq.im * th.sin()
        })
        .collect();
    Waveform::new(samples, adc)
}

/// ADC samples of the DAC output fed straight back, delayed by the loopback latency.
fn loopback_samples(
    drive: &IqStream<f64>,
    carrier_hz: f64,
    latency_ns: f64,
    start_ns: f64,
    window_ns: f64,
    inst: &Instrument,
) -> Result<Waveform<f64>> {
    // only the part that reaches the capture window, plus filter settling
    let needed = drive.rate().samples_for_ns((start_ns + window_ns - latency_ns).max(0.0)) + 64;
    let mut up = drive.samples()[..needed.min(drive.len())].to_vec();
    for _ in 0..inst.interp_factor.trailing_zeros() {
        up = filter::interpolate_x2(&up);
    }
    let dac = inst.dac_rate;
    let adc = inst.adc_rate;
    let n = adc.samples_for_ns(window_ns);
    let samples = (0..n)
        .map(|k| {
            let t_ns = start_ns + k as f64 * adc.period_ns();
            let src = t_ns - latency_ns;
            if src < 0.0 {
                return 0.0;
            }
            let idx = (src * 1e-9 * dac.hz()).floor() as usize;
            let env = up.get(idx).copied().unwrap_or_default();
            let th = std::f64::consts::TAU * (carrier_hz * t_ns * 1e-9).fract();
            (env.re * th.cos() - env.im * th.sin()).clamp(-1.0, 1.0)
        })
        .collect();
    Waveform::new(samples, adc)
}

/// Delay of `record` (starting at `record_start_ns`) against the drive envelope
/// `drive`, from the peak of their magnitude cross-correlation with parabolic refinement.
pub fn arrival_delay_ns(record: &IqStream<f64>, record_start_ns: f64, drive: &IqStream<f64>) -> Option<f64> {
    let dt = record.rate().period_ns();
    let src_dt = drive.rate().period_ns();
    let reference: Vec<f64> = (0..)
        .map(|k| k as f64 * dt)
        .take_while(|t| *t < drive.duration_ns())
        .map(|t| drive.samples()[((t / src_dt) as usize).min(drive.len() - 1)].norm())
        .collect();
    let mag: Vec<f64> = record.samples().iter().map(|c| c.norm()).collect();
    let first = (record_start_ns / dt).round() as isize;
    // scores[d] = sum_k mag[k + d] * reference[k], via FFT
    let n = (mag.len() + reference.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let spectrum_of = |v: &[f64]| {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let a = spectrum_of(&mag);
    let b = spectrum_of(&reference);
    let mut prod: Vec<Complex<f64>> = a.iter().zip(&b).map(|(x, y)| x * y.conj()).collect();
    planner.plan_fft_inverse(n).process(&mut prod);
    let scores: Vec<f64> = prod[..mag.len()].iter().map(|c| c.re / n as f64).collect();
    let lags: Vec<isize> = (first..first + mag.len() as isize).collect();
    let (best, &peak) = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if peak <= 0.0 {
        return None;
    }
    let offset = if best > 0 && best + 1 < scores.len() {
        let (a, b, c) = (scores[best - 1], peak, scores[best + 1]);
        let den = a - 2.0 * b + c;
        if den < 0.0 { 0.5 * (a - c) / den } else { 0.0 }
    } else {
        0.0
    };
    Some((lags[best] as f64 + offset) * dt)
}

/// Run every sweep point: play, evolve the qubit, measure, capture and process.
pub fn run(
    cfg: &ExpConfig,
    plan: &SweepPlan,
    dev: &DeviceConfig,
    inst: &Instrument,
    seed: u64,
) -> Result<SweepResult> {
    cfg.validate()?;
    dev.qubit.validate()?;
    dev.readout.validate()?;
    inst.validate()?;
    let drive_f = cfg.qubit_freq * 1e6;
    let readout_f = cfg.readout_freq * 1e6;
    let loopback = cfg.loopback == 1;
    let latency = roundtrip_latency(&inst.latency())?;
    let chain = inst.chain(if loopback { drive_f } else { readout_f }, loopback)?;
    let mut points = Vec::with_capacity(plan.n_points);
    let mut records = Vec::with_capacity(plan.n_points);
    let mut delays = Vec::new();
    for k in 0..plan.n_points {
        let at = |e: Error| Error::AtPoint { point: k, source: Box::new(e) };
        let built = build_sequence(cfg, plan, k, inst).map_err(at)?;
        let played = awg::render::<f64>(&built.bank, &built.sequence, PlayMode::FixedCount(1), built.scale_percent)
            .map_err(at)?;
        let trig: TriggerEvent = played.triggers[0];
        let (adc, m) = if loopback {
            let w = loopback_samples(&played.stream, drive_f, latency.ns, trig.time_ns, trig.width_ns, inst)
                .map_err(at)?;
            (w, None)
        } else {
            let end = built.sequence.rate.samples_for_ns(trig.time_ns);
            let state = drive_qubit(QubitState::ground(drive_f), &played.stream, end, drive_f, &dev.qubit)
                .map_err(at)?;
            let m = measure(&state, &dev.readout, plan.n_iter, device::point_seed(seed, k)).map_err(at)?;
            // averaging commutes with the linear chain, so process the shot mean once
            let w = readout_tone(m.mean_iq, readout_f, trig.width_ns, inst.adc_rate).map_err(at)?;
            (w, Some(m))
        };
        let processed = chain.process(&adc).map_err(at)?;
        let local = TriggerEvent { time_ns: 0.0, ..trig };
        let mut rec = readout::capture(&processed, &[local], trig.width_ns, 0).map_err(at)?;
        let mut rec = rec.remove(0);
        rec.record_index = k;
        rec.trigger_time_ns = trig.time_ns;
        let mean = readout::average_records(std::slice::from_ref(&rec)).map_err(at)?;
        if loopback {
            let drive = &played.stream;
            delays.push(arrival_delay_ns(&rec.iq, trig.time_ns, drive).unwrap_or(f64::NAN));
        }
        points.push(SweepPoint {
            index: k,
            axis_value: plan.axis_value(k),
            i_mean: mean.re,
            q_mean: mean.im,
            p_excited: m.map_or(f64::NAN, |m| m.p_excited),
            shots: plan.n_iter,
        });
        records.push(rec);
    }
    Ok(SweepResult {
        exp_type: plan.exp_type,
        axis_unit: plan.axis_unit().to_string(),
        total_shots: points.iter().map(|p| p.shots).sum(),
        points,
        seed,
        config_sha256: config_hash(cfg),
        loopback_delays_ns: delays,
        records,
    })
}

/// Run manifest written next to the sweep output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub exp_type: String,
    pub axis_unit: String,
    pub n_points: usize,
    pub total_shots: usize,
    pub play_mode: PlayMode,
    pub versions: std::collections::BTreeMap<String, String>,
    /// Fields parsed but without effect on the run.
    pub inert: std::collections::BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(cfg: &ExpConfig, result: &SweepResult) -> Self {
        let mut versions = std::collections::BTreeMap::new();
        versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
        let mut inert = std::collections::BTreeMap::new();
        inert.insert("inner_loop_step".to_string(), cfg.inner_loop_step);
        inert.insert("data_fetch_time".to_string(), cfg.data_fetch_time);
        Manifest {
            seed: result.seed,
            config_sha256: result.config_sha256.clone(),
            exp_type: result.exp_type.to_string(),
            axis_unit: result.axis_unit.clone(),
            n_points: result.points.len(),
            total_shots: result.total_shots,
            play_mode: cfg.play_mode(),
            versions,
            inert,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const LISTING: &str = r#"#all timing parameters are in nano sec
exp_config = {
  "exp_type": "T1",
  "continuous": 1,
  "qubit_freq": 4690.2968955,
  "readout_freq": 5962.36,
  "mode": 0,
  "repetition_rate": 300000,
  "time_between_pulses": 1000,
  "initial_amp": 10,
  "trigger_delay": 0,
  "trigger_width": 4000,
  "amplitude_factor": 30,
  "amplitude_steps": 70,
  "gaussian_sigma": 400,
  "gaussian_pulse_duration": 900,
  "outer_loop_count": 1,
  "inner_loop_count": 10000,
  "inner_loop_step": 0,
  "data_fetch_time": 500000,
  "loopback": 0,
  "wave_type": "gaussian"
}
"#;

    fn listing() -> ExpConfig {
        parse_config(LISTING).unwrap()
    }

    #[test]
    fn listing_parses_exactly() {
        let c = listing();
        assert_eq!(c.exp_type, "T1");
        assert_eq!(c.qubit_freq, 4690.2968955);
        assert_eq!(c.readout_freq, 5962.36);
        assert_eq!(c.inner_loop_count, 10000);
        assert_eq!(c.repetition_rate, 300000.0);
        assert_eq!(c.data_fetch_time, 500000.0);
        assert_eq!(c.play_mode(), PlayMode::Continuous);
    }

    #[test]
    fn strictness() {
        let unknown = LISTING.replace("\"loopback\": 0,", "\"loopback\": 0,\n  \"foo\": 1,");
        let e = parse_config(&unknown).unwrap_err().to_string();
        assert!(e.contains("foo"), "{e}");
        let bad = LISTING.replace("\"T1\"", "\"T2echo\"");
        let e = parse_config(&bad).unwrap_err().to_string();
        assert!(e.contains("T2echo"), "{e}");
        let missing = LISTING.replace("  \"mode\": 0,\n", "");
        let e = parse_config(&missing).unwrap_err().to_string();
        assert!(e.contains("mode"), "{e}");
        let text = LISTING.replace("\"initial_amp\": 10", "\"initial_amp\": \"ten\"");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn plan_branches() {
        let mut c = listing();
        let p = plan(&c).unwrap();
        assert_eq!((p.delta_a, p.delta_trigger, p.delta_t), (0.0, 1000.0, 0.0));
        c.exp_type = "Power_Rabi".into();
        let p = plan(&c).unwrap();
        assert_eq!((p.delta_trigger, p.delta_t), (0.0, 0.0));
        assert!((p.delta_a - 30.0 / 70.0).abs() < 1e-15);
        assert_eq!(p.n_points, 70);
        c.exp_type = "Ramsey".into();
        let p = plan(&c).unwrap();
        assert_eq!((p.delta_a, p.delta_trigger, p.delta_t), (0.0, 0.0, 1000.0));
        c.exp_type = "Time_Rabi".into();
        c.time_between_pulses = 0.0;
        c.outer_loop_count = 5;
        assert!(plan(&c).is_err());
    }

    #[test]
    fn accumulators_are_exact() {
        let mut c = listing();
        c.outer_loop_count = 1000;
        let p = plan(&c).unwrap();
        for k in [0, 1, 17, 999] {
            assert_eq!(p.accumulators(k).1, 1000.0 * k as f64);
        }
    }

    #[test]
    fn t1_sequence_shape() {
        let c = listing();
        let p = plan(&c).unwrap();
        let b = build_sequence(&c, &p, 0, &Instrument::default()).unwrap();
        assert!(matches!(b.sequence.segments[0], Segment::Stored { .. }));
        assert!(matches!(b.sequence.segments[1], Segment::Flat { level, duration_ns } if level == 0.0 && duration_ns == 0.0));
        assert!((b.sequence.trigger.delay_ns - b.drive_end_ns).abs() < 1e-9);
        assert!(build_sequence(&c, &p, 1, &Instrument::default()).is_err());
    }

    #[test]
    fn ramsey_reuses_one_waveform() {
        let mut c = listing();
        c.exp_type = "Ramsey".into();
        c.outer_loop_count = 3;
        let p = plan(&c).unwrap();
        let b = build_sequence(&c, &p, 2, &Instrument::default()).unwrap();
        let handles: Vec<_> = b
            .sequence
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Stored { i, .. } => Some(*i),
                _ => None,
            })
            .collect();
        assert_eq!(handles.len(), 2);
        assert_eq!(handles[0], handles[1]);
        assert!(matches!(b.sequence.segments[1], Segment::Flat { duration_ns, .. } if duration_ns == 2000.0));
    }

    #[test]
    fn time_rabi_inserts_rectangle() {
        let mut c = listing();
        c.exp_type = "Time_Rabi".into();
        c.outer_loop_count = 4;
        c.time_between_pulses = 100.0;
        let p = plan(&c).unwrap();
        let b = build_sequence(&c, &p, 3, &Instrument::default()).unwrap();
        assert!(matches!(b.sequence.segments[1], Segment::Flat { duration_ns, .. } if duration_ns == 300.0));
        assert_eq!(b.sequence.segments.len(), 4);
    }

    #[test]
    fn sequence_must_fit_period() {
        let mut c = listing();
        c.outer_loop_count = 400;
        let p = plan(&c).unwrap();
        assert!(build_sequence(&c, &p, 399, &Instrument::default()).is_err());
    }

    #[test]
    fn instrument_bounds() {
        assert!(Instrument::default().validate().is_ok());
        let fast = Instrument { dac_rate: SampleRate::new(7e9).unwrap(), ..Instrument::default() };
        assert!(fast.validate().is_err());
        let odd = Instrument { interp_factor: 3, ..Instrument::default() };
        assert!(odd.validate().is_err());
    }

    #[test]
    fn small_run_is_reproducible() {
        let mut c = listing();
        c.gaussian_pulse_duration = 260.0;
        c.gaussian_sigma = 65.0;
        c.initial_amp = 100.0;
        c.outer_loop_count = 3;
        c.inner_loop_count = 200;
        c.repetition_rate = 20_000.0;
        c.time_between_pulses = 5000.0;
        let p = plan(&c).unwrap();
        let dev = DeviceConfig { qubit: QubitParams { f_q_hz: c.qubit_freq * 1e6, ..QubitParams::d1() }, readout: Default::default() };
        let a = run(&c, &p, &dev, &Instrument::default(), 5).unwrap();
        let b = run(&c, &p, &dev, &Instrument::default(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_shots, 600);
        assert_eq!(a.points.len(), 3);
        assert!(a.points[0].p_excited > a.points[2].p_excited);
        assert_eq!(a.records[0].iq.len(), 3840);
    }

    #[test]
    fn loopback_delay_matches_latency() {
        let dev = DeviceConfig { qubit: QubitParams::d1(), readout: Default::default() };
        let dt = Instrument::default().adc_rate.period_ns() * 4.0;
        for (duration, sigma, wave) in [(900.0, 400.0, "gaussian"), (260.0, 65.0, "gaussian"), (300.0, 1.0, "square")] {
            let mut c = listing();
            c.loopback = 1;
            c.inner_loop_count = 1;
            c.gaussian_pulse_duration = duration;
            c.gaussian_sigma = sigma;
            c.wave_type = wave.into();
            let p = plan(&c).unwrap();
            let r = run(&c, &p, &dev, &Instrument::default(), 1).unwrap();
            let delay = r.loopback_delays_ns[0];
            assert!((delay - 250.0).abs() <= dt, "{wave} {duration}: {delay}");
        }
    }
}
