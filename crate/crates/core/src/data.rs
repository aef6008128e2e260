//! Measurement datasets and bootstrapped observations.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::rng::{self};
pub use crate::rng::RngSeed;

/// Fewest measurements for which the latent is identified.
pub const MIN_MEASUREMENTS: usize = 3;

/// An `n_pts × k` matrix of measurements, stored row-major, with an optional
/// ground-truth latent per row (simulated data only).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    truth: Option<Vec<f64>>,
    k: usize,
}

impl Dataset {
    /// Builds a dataset with at least [`MIN_MEASUREMENTS`] columns.
    pub fn new(features: Vec<f64>, k: usize, truth: Option<Vec<f64>>) -> Result<Self> {
        if k < MIN_MEASUREMENTS {
            return Err(invalid(alloc::format!(
                "need at least {MIN_MEASUREMENTS} measurements, found {k}"
            )));
        }
        Self::with_any_k(features, k, truth)
    }

    /// Like [`Dataset::new`] but accepts any `k >= 1`. Meant for diagnostics
    /// and degenerate-case experiments where identification is not the point.
    pub fn with_any_k(features: Vec<f64>, k: usize, truth: Option<Vec<f64>>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
        if !features.len().is_multiple_of(k) {
            return Err(Error::ShapeMismatch {
                expected: k,
                found: features.len() % k,
                what: "dataset row width",
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(invalid(alloc::format!(
                "non-finite measurement at row {}, column {}",
                pos / k,
                pos % k
            )));
        }
        let n_pts = features.len() / k;
        if let Some(t) = &truth {
            if t.len() != n_pts {
                return Err(Error::ShapeMismatch { expected: n_pts, found: t.len(), what: "truth column" });
            }
            if let Some(pos) = t.iter().position(|v| !v.is_finite()) {
                return Err(invalid(alloc::format!("non-finite truth value at row {pos}")));
            }
        }
        Ok(Self { features, truth, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_pts(&self) -> usize {
        self.features.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Row-major measurement matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.k..(i + 1) * self.k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.features.iter().skip(j).step_by(self.k).copied().collect()
    }

    pub fn truth(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }

    /// The same measurements with the truth column removed.
    pub fn without_truth(&self) -> Dataset {
        Dataset { features: self.features.clone(), truth: None, k: self.k }
    }

    /// Copies the rows named by `batch` into a contiguous `m × k` buffer.
    pub fn gather(&self, batch: &ObservationBatch, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(batch.m() * self.k);
        for &i in batch.indices() {
            out.extend_from_slice(self.row(i));
        }
    }
}

/// `m` row indices (with repeats) that together form one KDE sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationBatch {
    indices: Vec<usize>,
}

impl ObservationBatch {
    pub fn new(indices: Vec<usize>, n_pts: usize) -> Result<Self> {
        if indices.len() < 2 {
            return Err(invalid("an observation needs at least two points"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_pts) {
            return Err(invalid(alloc::format!("row index {bad} out of range for {n_pts} rows")));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }
}

/// A list of observations sharing the same `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSet {
    batches: Vec<ObservationBatch>,
    m: usize,
}

impl ObservationSet {
    pub fn new(batches: Vec<ObservationBatch>) -> Result<Self> {
        let m = batches.first().map(ObservationBatch::m).unwrap_or(0);
        if batches.iter().any(|b| b.m() != m) {
            return Err(invalid("all observations must have the same number of points"));
        }
        Ok(Self { batches, m })
    }

    pub fn batches(&self) -> &[ObservationBatch] {
        &self.batches
    }

    pub fn count(&self) -> usize {
        self.batches.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// Draws `count` observations of `m` row indices each, uniformly with
/// replacement. Batch `b` uses sub-stream `b` of `seed`, so any batch can be
/// regenerated on its own.
pub fn bootstrap_observations(n_pts: usize, m: usize, count: usize, seed: RngSeed) -> Result<ObservationSet> {
    if n_pts == 0 {
        return Err(Error::EmptyDataset);
    }
    if m < 2 {
        return Err(invalid("m must be at least 2"));
    }
    if count == 0 {
        return Err(invalid("observation count must be at least 1"));
    }
    let batches = (0..count)
        .map(|b| {
            let mut r = seed.stream(b as u64);
            let indices = (0..m).map(|_| rng::index(&mut r, n_pts)).collect();
            ObservationBatch { indices }
        })
        .collect();
    Ok(ObservationSet { batches, m })
}
