//! Scoring against ground truth and loss-based diagnostics.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{bootstrap_observations, Dataset, ObservationSet};
use crate::density::{context_bandwidths_with_n, KdeContext};
use crate::error::{invalid, Error, Result};
use crate::loss;
use crate::network::MlpParams;
use crate::rng::{self, RngSeed};
use crate::stats;

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), found: b.len(), what: "correlation inputs" });
    }
    if a.len() < 2 {
        return Err(invalid("correlation needs at least two values"));
    }
    let ma = stats::mean(a);
    let mb = stats::mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Fraction of rows with `|estimate − truth| > eps`.
pub fn large_deviation_proportion(estimate: &[f64], truth: &[f64], eps: f64) -> f64 {
    if estimate.is_empty() {
        return 0.0;
    }
    let hits = estimate.iter().zip(truth).filter(|(e, t)| libm::fabs(*e - *t) > eps).count();
    hits as f64 / estimate.len() as f64
}

/// Default thresholds: a quarter, a half and one standard deviation of the
/// truth.
pub fn default_eps(truth: &[f64]) -> Vec<f64> {
    let s = stats::sample_std(truth);
    alloc::vec![0.25 * s, 0.5 * s, s]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeDeviation {
    pub eps: f64,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `corr(X̂*, X*)` on the test rows.
    pub corr_latent: f64,
    /// `corr(X¹, X*)` on the same test rows.
    pub corr_x1: f64,
    pub large_dev: Vec<LargeDeviation>,
    pub n_test: usize,
}

/// Scores `estimate` against `test`'s truth column.
pub fn evaluate_latents(estimate: &[f64], test: &Dataset, eps_list: &[f64]) -> Result<EvalReport> {
    let truth = test.truth().ok_or(Error::MissingTruth)?;
    if estimate.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: truth.len(), found: estimate.len(), what: "latent estimates" });
    }
    let corr_x1 = pearson(&test.column(0), truth)?;
    let corr_latent = pearson(estimate, truth)?;
    let large_dev = eps_list
        .iter()
        .map(|&eps| LargeDeviation { eps, proportion: large_deviation_proportion(estimate, truth, eps) })
        .collect();
    Ok(EvalReport { corr_latent, corr_x1, large_dev, n_test: truth.len() })
}

/// Runs the generator over every test row and scores the result. A model
/// with constant output yields [`Error::UndefinedCorrelation`].
pub fn evaluate(model: &MlpParams, test: &Dataset, eps_list: &[f64]) -> Result<EvalReport> {
    if test.truth().is_none() {
        return Err(Error::MissingTruth);
    }
    let estimate = model.forward(test.features())?;
    evaluate_latents(&estimate, test, eps_list)
}

/// Order statistics of `corr_latent` over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub reports: Vec<EvalReport>,
    pub min: f64,
    /// Lower-middle element for an even count.
    pub median: f64,
    pub max: f64,
    pub corr_x1: f64,
    /// Runs that failed and are excluded from the order statistics.
    pub n_failed: usize,
}

pub fn summarize(reports: &[EvalReport], n_failed: usize) -> Result<RunSummary> {
    if reports.is_empty() {
        return Err(invalid("cannot summarize zero successful runs"));
    }
    let mut c: Vec<f64> = reports.iter().map(|r| r.corr_latent).collect();
    c.sort_by(f64::total_cmp);
    Ok(RunSummary {
        reports: reports.to_vec(),
        min: c[0],
        median: c[(c.len() - 1) / 2],
        max: c[c.len() - 1],
        corr_x1: reports[0].corr_x1,
        n_failed,
    })
}

/// Mean total loss over `observations` drawn from `data`, with one latent
/// per data row.
pub fn mean_observation_loss(
    data: &Dataset,
    latents: &[f64],
    observations: &ObservationSet,
    w: f64,
    lambda: f64,
    bandwidth_n: Option<f64>,
) -> Result<f64> {
    if latents.len() != data.n_pts() {
        return Err(Error::ShapeMismatch { expected: data.n_pts(), found: latents.len(), what: "latents per row" });
    }
    let k = data.k();
    let mut pts = Vec::new();
    let mut lat = Vec::new();
    let mut total = 0.0;
    for batch in observations.batches() {
        data.gather(batch, &mut pts);
        lat.clear();
        lat.extend(batch.indices().iter().map(|&i| latents[i]));
        let n = bandwidth_n.unwrap_or(batch.m() as f64);
        let bw = context_bandwidths_with_n(&pts, k, &lat, w, n)?;
        let ctx = KdeContext::new(&pts, k, &lat, bw)?;
        total += loss::total_loss(&ctx, lambda).total;
    }
    Ok(total / observations.count() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticConfig {
    pub m: usize,
    pub n_obs: usize,
    pub w: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticPoint {
    pub noise_std: f64,
    pub mean_loss: f64,
}

/// Loss as a function of the spread of an independent perturbation
/// `latents + δ`, `δ ~ N(0, σ²)`.
///
/// All noise levels share one set of bootstrapped observations and one
/// standard-normal draw per row (scaled by each σ), so differences along the
/// curve come from σ alone. At the true latents this curve should rise: no
/// uncorrelated deviation of the latent leaves the measurements equally
/// conditionally independent.
pub fn deviation_diagnostic(
    test: &Dataset,
    latents: &[f64],
    noise_stds: &[f64],
    cfg: &DiagnosticConfig,
    seed: RngSeed,
) -> Result<Vec<DiagnosticPoint>> {
    if !noise_stds.contains(&0.0) {
        return Err(invalid("noise levels must include 0"));
    }
    if noise_stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(invalid("noise levels must be non-negative"));
    }
    let obs = bootstrap_observations(test.n_pts(), cfg.m, cfg.n_obs, seed.derive(1))?;
    let mut r = seed.derive(2).stream(0);
    let z: Vec<f64> = (0..latents.len()).map(|_| rng::standard_normal(&mut r)).collect();
    let mut perturbed = Vec::with_capacity(latents.len());
    noise_stds
        .iter()
        .map(|&sigma| {
            perturbed.clear();
            if sigma == 0.0 {
                perturbed.extend_from_slice(latents);
            } else {
                perturbed.extend(latents.iter().zip(&z).map(|(l, e)| l + sigma * e));
            }
            let mean_loss = mean_observation_loss(test, &perturbed, &obs, cfg.w, cfg.lambda, None)?;
            Ok(DiagnosticPoint { noise_std: sigma, mean_loss })
        })
        .collect()
}
