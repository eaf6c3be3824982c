//! Model-based ultrasound signal processing.
//!
//! The crate covers the full reconstruction chain: a linear point-scatterer
//! simulator, time-of-flight focusing, the DAS / MV / Wiener / CF / iMAP
//! beamformers, proximal-gradient sparse recovery, low-rank plus sparse
//! clutter filtering, and sparse-coding localization microscopy.

pub mod beamform;
pub mod clutter;
pub mod error;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod simulator;
pub mod sparse;
pub mod tof;
pub mod types;
pub mod ulm;

pub use error::{Error, Result};
pub use types::*;
