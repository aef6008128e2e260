//! Training, tuning, file formats and the command-line front end for GEEN.
//!
//! The numerical core (densities, loss, network, simulation, scoring) lives
//! in `geen-core`; this crate adds everything that touches the filesystem or
//! threads.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod io;
pub mod trainer;

pub use config::{GridSpec, PenaltyScope, TrainConfig};
pub use error::{GeenError, Result};
pub use trainer::{multi_run, train, tune, EarlyStopping, StopReason, TrainHistory};
