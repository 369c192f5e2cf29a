//! Monte Carlo simulation and coincidence analysis for pulsed correlated
//! photon-pair sources.
//!
//! * [`model`]: closed-form coincidence, accidental and CAR rates.
//! * [`simulator`]: seeded, block-parallel generation of detector time tags.
//! * [`tia`]: start/stop interval analyzer emulation and CAR estimation.
//! * [`sweep`]: pump-power sweeps, analytic or Monte Carlo.
//! * [`io`]: the PTAG time-tag file format and JSON run configuration.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod sweep;
pub mod tia;

pub use error::{Error, Result};
pub use model::{CoincidenceWindow, DetectorParams, RatePrediction, SourceParams};
pub use simulator::{Channel, Engine, PulseTrainConfig, RunConfig, TimeTag};
pub use tia::{CarConfig, CarEstimate, Histogram, TiaConfig};
