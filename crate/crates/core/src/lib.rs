//! Replay-attack simulation and spoofing-countermeasure evaluation.

pub mod classifier;
pub mod device;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod features;
pub mod scalar;
pub mod replay;
pub mod room;
pub mod signal;

pub use error::{Error, Result};
pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Waveform = signal::Waveform<f64>;
pub type ImpulseResponse = signal::ImpulseResponse<f64>;
