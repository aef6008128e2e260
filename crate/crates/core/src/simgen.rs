//! The four simulated measurement designs.
//!
//! Every design has `k = 4` measurements `Xʲ = mʲ(X*) + εʲ` with
//! `X* ~ N(0, variance 4)`. Parameter conventions: `N(μ, v)` is mean and
//! variance, `Laplace(μ, b)` is location and scale, `Uniform(a, b)` is the
//! pair of endpoints.
//!
//! | design            | m¹        | ε¹             | ε²              | ε³                  | ε⁴                      |
//! |-------------------|-----------|----------------|-----------------|---------------------|-------------------------|
//! | baseline          | x         | N(0, 1)        | Beta(2,2) − 1/2 | Laplace(0, 1)       | U(0, 1) − 1/2           |
//! | linear_error      | x         | N(0, x²/4)     | Beta(2,2) − 1/2 | Laplace(0, \|x\|/2) | U(0, \|x\|/2) − \|x\|/4 |
//! | double_error      | x         | N(0, 4)        | Beta(2,4) − 1/3 | Laplace(0, 2)       | U(0, 2) − 1             |
//! | no_normalization  | x² + x    | as baseline    |                 |                     |                         |
//!
//! with `m² = 1/(1+eˣ)`, `m³ = x²`, `m⁴ = ln(1+eˣ)` throughout.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, RngSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Baseline,
    LinearError,
    DoubleError,
    NoNormalization,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::Baseline, Experiment::LinearError, Experiment::DoubleError, Experiment::NoNormalization];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Baseline => "baseline",
            Experiment::LinearError => "linear_error",
            Experiment::DoubleError => "double_error",
            Experiment::NoNormalization => "no_normalization",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| invalid(alloc::format!("unknown experiment `{s}`")))
    }
}

/// A fully specified design. The two scale fields default to the published
/// values and exist only as an override hook.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub latent_variance: f64,
    /// Multiplies every error draw.
    pub error_scale: f64,
}

pub const MEASUREMENTS: usize = 4;

impl ExperimentSpec {
    pub fn new(experiment: Experiment) -> Self {
        Self { experiment, latent_variance: 4.0, error_scale: 1.0 }
    }

    pub fn k(&self) -> usize {
        MEASUREMENTS
    }

    /// Noiseless part of measurement `j` (zero-based: `j = 0` is `X¹`).
    pub fn measurement(&self, j: usize, x: f64) -> f64 {
        match j {
            0 => match self.experiment {
                Experiment::NoNormalization => x * x + x,
                _ => x,
            },
            1 => 1.0 / (1.0 + libm::exp(x)),
            2 => x * x,
            3 => softplus(x),
            _ => panic!("measurement index {j} out of range"),
        }
    }

    /// One draw of the centered error `εʲ` given the latent value.
    pub fn error_draw<R: RngCore + ?Sized>(&self, j: usize, x: f64, rng: &mut R) -> f64 {
        let e = match (self.experiment, j) {
            (Experiment::LinearError, 0) => rng::normal(rng, 0.0, 0.5 * libm::fabs(x)),
            (Experiment::LinearError, 2) => rng::laplace(rng, 0.0, 0.5 * libm::fabs(x)),
            (Experiment::LinearError, 3) => {
                let a = libm::fabs(x);
                rng::uniform(rng, 0.0, 0.5 * a) - 0.25 * a
            }
            (Experiment::DoubleError, 0) => rng::normal(rng, 0.0, 2.0),
            (Experiment::DoubleError, 1) => rng::beta(rng, 2.0, 4.0) - 1.0 / 3.0,
            (Experiment::DoubleError, 2) => rng::laplace(rng, 0.0, 2.0),
            (Experiment::DoubleError, 3) => rng::uniform(rng, 0.0, 2.0) - 1.0,
            (_, 0) => rng::normal(rng, 0.0, 1.0),
            (_, 1) => rng::beta(rng, 2.0, 2.0) - 0.5,
            (_, 2) => rng::laplace(rng, 0.0, 1.0),
            (_, 3) => rng::uniform(rng, 0.0, 1.0) - 0.5,
            _ => panic!("measurement index {j} out of range"),
        };
        e * self.error_scale
    }

    pub fn latent_std(&self) -> f64 {
        libm::sqrt(self.latent_variance)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl SplitSizes {
    pub fn new(n_train: usize, n_val: usize, n_test: usize) -> Result<Self> {
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(invalid("every split needs at least one row"));
        }
        Ok(Self { n_train, n_val, n_test })
    }

    /// 8000 / 1000 / 1000.
    pub fn full_scale() -> Self {
        Self { n_train: 8000, n_val: 1000, n_test: 1000 }
    }
}

/// Sub-streams reserved per split: one for the latent plus one per error.
const STREAMS_PER_SPLIT: u64 = 8;

/// `n` i.i.d. latent draws from stream 0 of `seed`.
pub fn latent_draw(spec: &ExperimentSpec, n: usize, seed: RngSeed) -> Vec<f64> {
    latent_from_stream(spec, n, seed, 0)
}

fn latent_from_stream(spec: &ExperimentSpec, n: usize, seed: RngSeed, stream: u64) -> Vec<f64> {
    let mut r = seed.stream(stream);
    let std = spec.latent_std();
    (0..n).map(|_| rng::normal(&mut r, 0.0, std)).collect()
}

fn generate_split(spec: &ExperimentSpec, n: usize, seed: RngSeed, split: u64) -> Result<Dataset> {
    let base = split * STREAMS_PER_SPLIT;
    let truth = latent_from_stream(spec, n, seed, base);
    let k = spec.k();
    let mut features = alloc::vec![0.0; n * k];
    for j in 0..k {
        let mut r = seed.stream(base + 1 + j as u64);
        for (i, &x) in truth.iter().enumerate() {
            features[i * k + j] = spec.measurement(j, x) + spec.error_draw(j, x, &mut r);
        }
    }
    Dataset::new(features, k, Some(truth))
}

/// Train, validation and test datasets with the truth column populated.
/// Each split and each variable within a split draws from its own
/// sub-stream of `seed`.
pub fn generate(spec: &ExperimentSpec, sizes: SplitSizes, seed: RngSeed) -> Result<(Dataset, Dataset, Dataset)> {
    Ok((
        generate_split(spec, sizes.n_train, seed, 0)?,
        generate_split(spec, sizes.n_val, seed, 1)?,
        generate_split(spec, sizes.n_test, seed, 2)?,
    ))
}
