//! Monte Carlo simulation and analysis of a pulsed single-photon source
//! followed by quantum frequency conversion.
//!
//! The pipeline is `emitter` (time tags of a blinking pulsed emitter)
//! → `qfc` (loss, jitter, pump-induced noise) → `analysis` (histograms,
//! lifetime and g² fits, noise densities, efficiency curves). `scenario`
//! wires the stages together from JSON configs.

pub mod analysis;
pub mod emitter;
pub mod error;
pub mod qfc;
pub mod scenario;
pub mod seed;
pub mod timetag;
pub mod units;

pub use error::{Error, Result};
