#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod awg;
pub mod dac;
pub mod device;
pub mod error;
pub mod filter;
pub mod orchestrator;
pub mod readout;
pub mod scalar;
pub mod signal;
pub mod sync;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Waveform64 = signal::Waveform<f64>;
pub type Waveform32 = signal::Waveform<f32>;
pub type IqStream64 = signal::IqStream<f64>;
pub type IqStream32 = signal::IqStream<f32>;
pub type FitResult64 = analysis::FitResult<f64>;
pub type FitResult32 = analysis::FitResult<f32>;
pub type CaptureRecord64 = readout::CaptureRecord<f64>;
