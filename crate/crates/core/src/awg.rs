//! Arbitrary waveform generator: per-channel sample memory, counter-driven
//! flat segments, amplitude scaling and trigger generation.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dac::rate_change_stages;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{full_scale_code, IqStream, QuantizedWaveform, SampleRate};

/// Reference to a waveform stored in a [`BramBank`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WaveformHandle {
    pub channel: usize,
    pub index: usize,
}

/// Block-RAM sample store, one region per DAC channel.
#[derive(Clone, Debug)]
pub struct BramBank {
    capacity_samples: usize,
    channels: Vec<Vec<QuantizedWaveform>>,
}

impl Default for BramBank {
    fn default() -> Self {
        Self::new()
    }
}

impl BramBank {
    pub const DEFAULT_CAPACITY: usize = 65536;
    pub const CHANNELS: usize = 8;

    pub fn new() -> Self {
        Self::with_capacity(Self::DEFAULT_CAPACITY)
    }

    pub fn with_capacity(capacity_samples: usize) -> Self {
        BramBank {
            capacity_samples,
            channels: vec![Vec::new(); Self::CHANNELS],
        }
    }

    pub fn capacity_samples(&self) -> usize {
        self.capacity_samples
    }

    /// Store `w` on `channel`. The channel total may not exceed the capacity.
    pub fn load_waveform(&mut self, channel: usize, w: QuantizedWaveform) -> Result<WaveformHandle> {
        if channel >= Self::CHANNELS {
            return Err(Error::invalid(format!(
                "channel {channel} out of range [0, {}]",
                Self::CHANNELS - 1
            )));
        }
        if w.is_empty() {
            return Err(Error::invalid("cannot load an empty waveform"));
        }
        let requested = self.used(channel) + w.len();
        if requested > self.capacity_samples {
            return Err(Error::CapacityExceeded {
                channel,
                requested,
                capacity: self.capacity_samples,
            });
        }
        let slot = &mut self.channels[channel];
        slot.push(w);
        Ok(WaveformHandle {
            channel,
            index: slot.len() - 1,
        })
    }

    pub fn get(&self, h: WaveformHandle) -> Option<&QuantizedWaveform> {
        self.channels.get(h.channel)?.get(h.index)
    }

    /// Samples in use on `channel`.
    pub fn used(&self, channel: usize) -> usize {
        self.channels
            .get(channel)
            .map_or(0, |c| c.iter().map(QuantizedWaveform::len).sum())
    }

    pub fn clear(&mut self, channel: usize) {
        if let Some(c) = self.channels.get_mut(channel) {
            c.clear();
        }
    }
}

/// Playback time of `n_samples` read at the fabric rate `dac_rate / interp_factor`.
pub fn playtime_ns(n_samples: usize, dac_rate: SampleRate, interp_factor: usize) -> Result<f64> {
    rate_change_stages(interp_factor)?;
    Ok(n_samples as f64 / (dac_rate.hz() / interp_factor as f64) * 1e9)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub delay_ns: f64,
    pub width_ns: f64,
}

impl TriggerSpec {
    pub fn new(delay_ns: f64, width_ns: f64) -> Result<Self> {
        if !(delay_ns >= 0.0) || !(width_ns > 0.0) {
            return Err(Error::invalid(format!(
                "trigger needs delay >= 0 and width > 0, got delay {delay_ns} width {width_ns}"
            )));
        }
        Ok(TriggerSpec { delay_ns, width_ns })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    /// Samples read from memory. `q` absent means a zero quadrature.
    Stored {
        i: WaveformHandle,
        q: Option<WaveformHandle>,
        repeat: usize,
    },
    /// Constant level produced by a counter, no memory reads.
    Flat { level: f64, duration_ns: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseSequence {
    pub segments: Vec<Segment>,
    pub trigger: TriggerSpec,
    /// Fabric sample rate the sequence is played at.
    pub rate: SampleRate,
}

impl PulseSequence {
    /// Memory used by the sequence: each distinct stored waveform counted once.
    pub fn bram_usage(&self, bank: &BramBank) -> usize {
        let handles: BTreeSet<WaveformHandle> = self
            .segments
            .iter()
            .flat_map(|s| match s {
                Segment::Stored { i, q, .. } => vec![Some(*i), *q],
                Segment::Flat { .. } => vec![],
            })
            .flatten()
            .collect();
        handles
            .into_iter()
            .filter_map(|h| bank.get(h))
            .map(QuantizedWaveform::len)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayMode {
    Continuous,
    FixedCount(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub time_ns: f64,
    pub width_ns: f64,
    pub pulse_index: usize,
}

/// Output of [`render`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered<T> {
    /// Fixed count: every pulse. Continuous: one period, repeating.
    pub stream: IqStream<T>,
    pub triggers: Vec<TriggerEvent>,
    pub period_ns: f64,
    pub mode: PlayMode,
}

impl<T> Rendered<T> {
    /// Trigger train of continuous playback, unbounded.
    pub fn continuous_triggers(&self) -> impl Iterator<Item = TriggerEvent> + '_ {
        let first = self.triggers.first().copied();
        (0..).map_while(move |k| {
            first.map(|t| TriggerEvent {
                time_ns: t.time_ns + k as f64 * self.period_ns,
                width_ns: t.width_ns,
                pulse_index: k,
            })
        })
    }
}

fn scale_code(code: i32, full_scale: i32, scale: f64) -> i32 {
    let v = code as f64 / full_scale as f64 * scale;
    (v * full_scale as f64).round() as i32
}

/// Play `seq` out of `bank`, scaling every sample by `scale_percent / 100`.
pub fn render<T: Scalar>(
    bank: &BramBank,
    seq: &PulseSequence,
    mode: PlayMode,
    scale_percent: f64,
) -> Result<Rendered<T>> {
    if seq.segments.is_empty() {
        return Err(Error::invalid("pulse sequence has no segments"));
    }
    if !(0.0..=100.0).contains(&scale_percent) {
        return Err(Error::invalid(format!(
            "scale_percent must be in [0, 100], got {scale_percent}"
        )));
    }
    if mode == PlayMode::FixedCount(0) {
        return Err(Error::invalid("fixed-count playback needs at least one pulse"));
    }
    let scale = scale_percent / 100.0;
    let mut bits = None;
    let mut codes: Vec<(i32, i32)> = Vec::new();
    for seg in &seq.segments {
        match *seg {
            Segment::Stored { i, q, repeat } => {
                let wi = lookup(bank, i, seq.rate)?;
                let wq = q.map(|h| lookup(bank, h, seq.rate)).transpose()?;
                if let Some(wq) = wq {
                    if wq.len() != wi.len() || wq.full_scale_bits != wi.full_scale_bits {
                        return Err(Error::invalid(
                            "I and Q waveforms of a segment differ in length or resolution",
                        ));
                    }
                }
                match bits {
                    None => bits = Some(wi.full_scale_bits),
                    Some(b) if b != wi.full_scale_bits => {
                        return Err(Error::invalid("stored waveforms mix resolutions"))
                    }
                    _ => {}
                }
                let fsc = wi.full_scale_code();
                let one: Vec<(i32, i32)> = (0..wi.len())
                    .map(|k| {
                        let ci = scale_code(wi.codes[k] as i32, fsc, scale);
                        let cq = wq.map_or(0, |w| scale_code(w.codes[k] as i32, fsc, scale));
                        (ci, cq)
                    })
                    .collect();
                for _ in 0..repeat {
                    codes.extend_from_slice(&one);
                }
            }
            Segment::Flat { level, duration_ns } => {
                if !(-1.0..=1.0).contains(&level) || !(duration_ns >= 0.0) {
                    return Err(Error::invalid(format!(
                        "flat segment needs level in [-1, 1] and duration >= 0, got {level}, {duration_ns}"
                    )));
                }
                let fsc = full_scale_code(bits.unwrap_or(QuantizedWaveform::DEFAULT_BITS));
                let c = (level * scale * fsc as f64).round() as i32;
                let n = seq.rate.samples_for_ns(duration_ns);
                codes.extend(std::iter::repeat_n((c, 0), n));
            }
        }
    }
    if codes.is_empty() {
        return Err(Error::invalid("pulse sequence renders to zero samples"));
    }
    let fsc = T::of(full_scale_code(bits.unwrap_or(QuantizedWaveform::DEFAULT_BITS)) as f64);
    let period: Vec<Complex<T>> = codes
        .iter()
        .map(|&(i, q)| Complex::new(T::of(i as f64) / fsc, T::of(q as f64) / fsc))
        .collect();
    let period_ns = period.len() as f64 * seq.rate.period_ns();
    let pulses = match mode {
        PlayMode::FixedCount(n) => n,
        PlayMode::Continuous => 1,
    };
    let mut samples = Vec::with_capacity(period.len() * pulses);
    for _ in 0..pulses {
        samples.extend_from_slice(&period);
    }
    let triggers = (0..pulses)
        .map(|k| TriggerEvent {
            time_ns: k as f64 * period_ns + seq.trigger.delay_ns,
            width_ns: seq.trigger.width_ns,
            pulse_index: k,
        })
        .collect();
    Ok(Rendered {
        stream: IqStream::new(samples, seq.rate)?,
        triggers,
        period_ns,
        mode,
    })
}

fn lookup(bank: &BramBank, h: WaveformHandle, rate: SampleRate) -> Result<&QuantizedWaveform> {
    let w = bank
        .get(h)
        .ok_or_else(|| Error::invalid(format!("no waveform at {h:?}")))?;
    if (w.rate.hz() - rate.hz()).abs() > 1e-9 * rate.hz() {
        return Err(Error::invalid(format!(
            "waveform {h:?} is at {} Hz but the sequence plays at {} Hz",
            w.rate.hz(),
            rate.hz()
        )));
    }
    Ok(w)
}

/// Write codes as header-less little-endian i16.
pub fn write_raw_i16(path: &Path, w: &QuantizedWaveform) -> Result<()> {
    let mut bytes = Vec::with_capacity(2 * w.len());
    for c in &w.codes {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Read a header-less little-endian i16 file.
pub fn read_raw_i16(path: &Path, rate: SampleRate, full_scale_bits: u32) -> Result<QuantizedWaveform> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "{}: odd byte count {} for 16-bit samples",
            path.display(),
            bytes.len()
        )));
    }
    let limit = full_scale_code(full_scale_bits);
    let codes: Vec<i16> = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    if let Some((index, c)) = codes
        .iter()
        .enumerate()
        .find(|(_, c)| (**c as i32).abs() > limit)
    {
        return Err(Error::Range {
            index,
            value: *c as f64 / limit as f64,
        });
    }
    Ok(QuantizedWaveform {
        codes,
        rate,
        full_scale_bits,
    })
}
