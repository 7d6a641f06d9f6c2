//! Multi-tile synchronization, channel-to-channel jitter and round-trip
//! latency accounting.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::awg::TriggerEvent;
use crate::dac::rate_change_stages;
use crate::error::{Error, Result};

/// Largest FIFO offset a tile can power up with, in fabric cycles.
pub const MAX_TILE_OFFSET: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Dac(usize),
    Adc(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileTopology {
    pub dac_tiles: usize,
    pub dac_per_tile: usize,
    pub adc_tiles: usize,
    pub adc_per_tile: usize,
}

impl Default for TileTopology {
    fn default() -> Self {
        TileTopology { dac_tiles: 2, dac_per_tile: 4, adc_tiles: 4, adc_per_tile: 2 }
    }
}

impl TileTopology {
    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        (0..self.dac_tiles * self.dac_per_tile)
            .map(Channel::Dac)
            .chain((0..self.adc_tiles * self.adc_per_tile).map(Channel::Adc))
    }

    /// Global tile index: DAC tiles first, then ADC tiles.
    pub fn tile_of(&self, ch: Channel) -> Result<usize> {
        match ch {
            Channel::Dac(c) if c < self.dac_tiles * self.dac_per_tile => Ok(c / self.dac_per_tile),
            Channel::Adc(c) if c < self.adc_tiles * self.adc_per_tile => {
                Ok(self.dac_tiles + c / self.adc_per_tile)
            }
            other => Err(Error::invalid(format!("{other:?} is not in the topology"))),
        }
    }

    pub fn n_tiles(&self) -> usize {
        self.dac_tiles + self.adc_tiles
    }
}

/// FIFO latency offsets in fabric cycles, one per tile.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileOffsets {
    pub topology: TileTopology,
    pub per_tile: Vec<u32>,
}

impl TileOffsets {
    pub fn channel_offset(&self, ch: Channel) -> Result<u32> {
        Ok(self.per_tile[self.topology.tile_of(ch)?])
    }

    /// Largest offset difference between any two channels.
    pub fn skew(&self) -> u32 {
        let max = self.per_tile.iter().copied().max().unwrap_or(0);
        let min = self.per_tile.iter().copied().min().unwrap_or(0);
        max - min
    }
}

/// Power-up offsets: equal within a tile, uniform in [0, 3] across tiles.
pub fn assign_tile_offsets(topology: TileTopology, seed: u64) -> TileOffsets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_tile = (0..topology.n_tiles())
        .map(|_| rng.random_range(0..=MAX_TILE_OFFSET))
        .collect();
    TileOffsets { topology, per_tile }
}

/// Align every tile to the slowest one.
pub fn run_mts(offsets: &TileOffsets) -> TileOffsets {
    let max = offsets.per_tile.iter().copied().max().unwrap_or(0);
    TileOffsets {
        topology: offsets.topology,
        per_tile: vec![max; offsets.per_tile.len()],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterModel {
    pub sigma_ps: f64,
    pub sample_interval_us: f64,
    pub n_samples: usize,
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel { sigma_ps: 0.6, sample_interval_us: 100.0, n_samples: 4000 }
    }
}

fn normal(sigma_ps: f64) -> Result<Normal<f64>> {
    if !(sigma_ps >= 0.0) {
        return Err(Error::invalid(format!("jitter sigma must be >= 0, got {sigma_ps}")));
    }
    Normal::new(0.0, sigma_ps).map_err(|e| Error::invalid(e.to_string()))
}

/// Perturb each event time by an independent Gaussian draw.
pub fn inject_jitter(events: &[TriggerEvent], jm: &JitterModel, seed: u64) -> Result<Vec<TriggerEvent>> {
    let dist = normal(jm.sigma_ps)?;
    if jm.sigma_ps == 0.0 {
        return Ok(events.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(events
        .iter()
        .map(|e| TriggerEvent {
            time_ns: e.time_ns + dist.sample(&mut rng) * 1e-3,
            ..*e
        })
        .collect())
}

/// Channel-to-channel skew measurement: `n_samples` edge-time differences in ps.
pub fn measure_jitter(jm: &JitterModel, seed: u64) -> Result<Vec<f64>> {
    let period_ns = jm.sample_interval_us * 1e3;
    let edges: Vec<TriggerEvent> = (0..jm.n_samples)
        .map(|k| TriggerEvent { time_ns: k as f64 * period_ns, width_ns: 1.0, pulse_index: k })
        .collect();
    let jittered = inject_jitter(&edges, jm, seed)?;
    Ok(edges
        .iter()
        .zip(&jittered)
        .map(|(a, b)| (b.time_ns - a.time_ns) * 1e3)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub interp_factor: usize,
    pub decim_factor: usize,
    pub fpga_clock_hz: f64,
    pub mixers_enabled: bool,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig { interp_factor: 8, decim_factor: 4, fpga_clock_hz: 192e6, mixers_enabled: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub dac_cycles: u32,
    pub adc_cycles: u32,
    pub cycles: u32,
    pub ns: f64,
    /// True only for the measured configuration; everything else is extrapolated.
    pub anchored: bool,
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cycles={}", self.cycles)?;
        writeln!(f, "ns={}", self.ns)?;
        writeln!(f, "dac_cycles={}", self.dac_cycles)?;
        writeln!(f, "adc_cycles={}", self.adc_cycles)?;
        writeln!(f, "model={}", if self.anchored { "measured" } else { "extrapolated" })
    }
}

const DAC_BASE_CYCLES: u32 = 12;
const DAC_PER_STAGE: u32 = 3;
const DAC_MIXER: u32 = 3;
const ADC_BASE_CYCLES: u32 = 14;
const ADC_PER_STAGE: u32 = 4;
const ADC_MIXER: u32 = 2;

/// DAC-to-ADC loopback latency in fabric cycles and ns.
///
/// Each half is base + per-stage * log2(factor) + mixer; the constants
/// reproduce 24 + 24 cycles at 8x / 4x with mixers on.
pub fn roundtrip_latency(cfg: &LatencyConfig) -> Result<LatencyReport> {
    let i = rate_change_stages(cfg.interp_factor)?;
    let d = rate_change_stages(cfg.decim_factor)?;
    if !(cfg.fpga_clock_hz > 0.0) {
        return Err(Error::invalid(format!("FPGA clock must be > 0, got {}", cfg.fpga_clock_hz)));
    }
    let mix = |c: u32| if cfg.mixers_enabled { c } else { 0 };
    let dac_cycles = DAC_BASE_CYCLES + DAC_PER_STAGE * i + mix(DAC_MIXER);
    let adc_cycles = ADC_BASE_CYCLES + ADC_PER_STAGE * d + mix(ADC_MIXER);
    let cycles = dac_cycles + adc_cycles;
    Ok(LatencyReport {
        dac_cycles,
        adc_cycles,
        cycles,
        ns: cycles as f64 / cfg.fpga_clock_hz * 1e9,
        anchored: cfg.interp_factor == 8 && cfg.decim_factor == 4 && cfg.mixers_enabled,
    })
}

/// Equal-width histogram with summary statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    /// Unbiased sample standard deviation.
    pub std: f64,
}

impl Histogram {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn histogram(samples: &[f64], n_bins: usize) -> Result<Histogram> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("histogram needs >= 2 samples, got {}", samples.len())));
    }
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("histogram samples must be finite"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let k = (((x - lo) / width).floor() as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { bin_edges, counts, mean, std: var.sqrt() })
}

pub fn jitter_histogram(samples_ps: &[f64], n_bins: usize) -> Result<Histogram> {
    histogram(samples_ps, n_bins)
}
