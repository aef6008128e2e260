//! Allocation-only core of GEEN (generative element extraction networks).
//!
//! Given `k` noisy measurements of one latent scalar per row, a small
//! generator network maps each measurement vector to a latent estimate. It is
//! trained so that the measurements look conditionally independent given the
//! generated latent: the loss is a kernel-density plug-in estimate of the
//! Kullback–Leibler divergence between the full joint density of
//! `(X¹..Xᵏ, X̂*)` and its factorization `Π f(Xʲ | X̂*) · f(X̂*)`, plus a
//! squared-means penalty anchoring the latent's location to `X¹`.
//!
//! This crate is `no_std` and carries no IO. File formats, the training loop
//! and the CLI live in the companion `geen` crate.
//!
//! All transcendental functions go through `libm`, so every number produced
//! here is bit-identical across platforms for a fixed seed.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod density;
pub mod error;
pub mod eval;
pub mod loss;
pub mod network;
pub mod rng;
pub mod simgen;
pub mod stats;

pub use data::{bootstrap_observations, Dataset, ObservationBatch, ObservationSet, RngSeed};
pub use density::{BandwidthSpec, KdeContext};
pub use error::{Error, Result};

pub use loss::{LatentGradient, LossBreakdown};
pub use network::{Activation, AdamConfig, MlpParams, OptState, ParamGrads};
pub use eval::{EvalReport, RunSummary};
pub use simgen::{Experiment, ExperimentSpec, SplitSizes};

