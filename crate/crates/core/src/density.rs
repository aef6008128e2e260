//! Gaussian product-kernel density estimates over one observation, evaluated
//! in log space.
//!
//! An observation is `m` measurement rows together with the `m` generated
//! latents for those rows. Every estimator here places one kernel on each of
//! the `m` points; bandwidths follow Silverman's rule with a tunable window.

use alloc::string::ToString;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{HALF_LN_2PI, INV_SQRT_2PI};
use crate::stats;

/// Standard normal density.
#[inline]
pub fn gaussian_kernel(u: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * u * u)
}

#[inline]
pub fn log_gaussian_kernel(u: f64) -> f64 {
    -HALF_LN_2PI - 0.5 * u * u
}

/// `w · sigma · n^(-1/5)`.
pub fn silverman_bandwidth(sigma: f64, w: f64, n: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::DegenerateScale { what: "bandwidth sample".to_string() });
    }
    if !(w.is_finite() && w > 0.0) {
        return Err(invalid("window must be positive"));
    }
    if n.is_nan() || n < 1.0 {
        return Err(invalid("bandwidth sample size must be at least 1"));
    }
    Ok(w * sigma * libm::pow(n, -0.2))
}

/// `ln Σ exp(v)`, shifted by the maximum. Returns `-inf` for an empty input
/// or when every term is `-inf`; never NaN for non-NaN input.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = it.map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

/// Log of `(1/m) Σ K((c_i - x)/h) / h`.
pub fn log_kde_marginal(centers: &[f64], h: f64, x: f64) -> f64 {
    let m = centers.len() as f64;
    let terms = centers.iter().map(move |&c| log_gaussian_kernel((c - x) / h));
    log_sum_exp(terms) - libm::log(m) - libm::log(h)
}

/// Log of the bivariate product-kernel estimate at `(x, s)`.
pub fn log_kde_pair(centers_x: &[f64], centers_s: &[f64], h_x: f64, h_s: f64, x: f64, s: f64) -> f64 {
    debug_assert_eq!(centers_x.len(), centers_s.len());
    let m = centers_x.len() as f64;
    let terms = centers_x
        .iter()
        .zip(centers_s)
        .map(move |(&cx, &cs)| log_gaussian_kernel((cx - x) / h_x) + log_gaussian_kernel((cs - s) / h_s));
    log_sum_exp(terms) - libm::log(m) - libm::log(h_x) - libm::log(h_s)
}

/// Which sample size enters the `n^(-1/5)` factor of Silverman's rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSampleSize {
    /// Points in the observation (`m`).
    #[default]
    PointsPerObservation,
    /// Number of observations in the training set; resolved by the trainer.
    Observations,
    Custom(f64),
}

/// Per-measurement bandwidths `h_j`, latent bandwidth `h_star`, and the
/// window they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSpec {
    pub h: Vec<f64>,
    pub h_star: f64,
    pub w: f64,
}

impl BandwidthSpec {
    pub fn new(h: Vec<f64>, h_star: f64, w: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !h.iter().all(|&v| ok(v)) || !ok(h_star) || !ok(w) {
            return Err(invalid("bandwidths must be positive and finite"));
        }
        Ok(Self { h, h_star, w })
    }

    pub fn k(&self) -> usize {
        self.h.len()
    }
}

/// Silverman bandwidths for one observation with `n = m`.
pub fn context_bandwidths(points: &[f64], k: usize, latents: &[f64], w: f64) -> Result<BandwidthSpec> {
    context_bandwidths_with_n(points, k, latents, w, latents.len() as f64)
}

/// Silverman bandwidths for one observation with an explicit sample size in
/// the rate factor.
pub fn context_bandwidths_with_n(
    points: &[f64],
    k: usize,
    latents: &[f64],
    w: f64,
    n: f64,
) -> Result<BandwidthSpec> {
    let m = latents.len();
    if m < 2 {
        return Err(invalid("bandwidths need at least two points"));
    }
    if points.len() != m * k {
        return Err(Error::ShapeMismatch { expected: m * k, found: points.len(), what: "observation points" });
    }
    let mut h = Vec::with_capacity(k);
    for j in 0..k {
        let sigma = stats::column_std(points, k, j);
        let hj = silverman_bandwidth(sigma, w, n)
            .map_err(|e| rename_degenerate(e, alloc::format!("measurement column {}", j + 1)))?;
        h.push(hj);
    }
    let h_star = silverman_bandwidth(stats::sample_std(latents), w, n)
        .map_err(|e| rename_degenerate(e, "generated latents".to_string()))?;
    Ok(BandwidthSpec { h, h_star, w })
}

fn rename_degenerate(e: Error, what: alloc::string::String) -> Error {
    match e {
        Error::DegenerateScale { .. } => Error::DegenerateScale { what },
        other => other,
    }
}

/// One observation: `m × k` row-major measurements, the `m` generated
/// latents, and bandwidths for every axis.
#[derive(Debug, Clone)]
pub struct KdeContext<'a> {
    points: &'a [f64],
    latents: &'a [f64],
    k: usize,
    bandwidths: BandwidthSpec,
}

impl<'a> KdeContext<'a> {
    pub fn new(points: &'a [f64], k: usize, latents: &'a [f64], bandwidths: BandwidthSpec) -> Result<Self> {
        let m = latents.len();
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
        if points.len() != m * k {
            return Err(Error::ShapeMismatch { expected: m * k, found: points.len(), what: "observation points" });
        }
        if bandwidths.k() != k {
            return Err(Error::ShapeMismatch { expected: k, found: bandwidths.k(), what: "bandwidth count" });
        }
        if m == 0 {
            return Err(invalid("observation has no points"));
        }
        Ok(Self { points, latents, k, bandwidths })
    }

    /// Builds the context with Silverman bandwidths computed from the
    /// observation itself (`n = m`).
    pub fn with_silverman(points: &'a [f64], k: usize, latents: &'a [f64], w: f64) -> Result<Self> {
        let bw = context_bandwidths(points, k, latents, w)?;
        Self::new(points, k, latents, bw)
    }

    pub fn m(&self) -> usize {
        self.latents.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &'a [f64] {
        self.points
    }

    pub fn latents(&self) -> &'a [f64] {
        self.latents
    }

    pub fn bandwidths(&self) -> &BandwidthSpec {
        &self.bandwidths
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.points[i * self.k..(i + 1) * self.k]
    }

    /// Column `j` of the measurements.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points.iter().skip(j).step_by(self.k).copied().collect()
    }

    pub fn log_marginal(&self, s: f64) -> f64 {
        log_kde_marginal(self.latents, self.bandwidths.h_star, s)
    }

    pub fn log_pair(&self, j: usize, x: f64, s: f64) -> f64 {
        let h_x = self.bandwidths.h[j];
        let h_s = self.bandwidths.h_star;
        let m = self.m() as f64;
        let terms = (0..self.m()).map(|i| {
            log_gaussian_kernel((self.points[i * self.k + j] - x) / h_x)
                + log_gaussian_kernel((self.latents[i] - s) / h_s)
        });
        log_sum_exp(terms) - libm::log(m) - libm::log(h_x) - libm::log(h_s)
    }

    /// Log of the `(k+1)`-dimensional product-kernel estimate.
    pub fn log_full_joint(&self, point: &[f64], s: f64) -> f64 {
        debug_assert_eq!(point.len(), self.k);
        let bw = &self.bandwidths;
        let m = self.m() as f64;
        let terms = (0..self.m()).map(|i| {
            let row = self.row(i);
            let mut t = log_gaussian_kernel((self.latents[i] - s) / bw.h_star);
            for j in 0..self.k {
                t += log_gaussian_kernel((row[j] - point[j]) / bw.h[j]);
            }
            t
        });
        let log_norm: f64 = bw.h.iter().map(|&h| libm::log(h)).sum::<f64>() + libm::log(bw.h_star);
        log_sum_exp(terms) - libm::log(m) - log_norm
    }

    /// Log of the conditionally independent factorization
    /// `Π_j f(xʲ, s) / f(s)^(k-1)`.
    pub fn log_factorized(&self, point: &[f64], s: f64) -> f64 {
        let pairs: f64 = (0..self.k).map(|j| self.log_pair(j, point[j], s)).sum();
        pairs - (self.k as f64 - 1.0) * self.log_marginal(s)
    }
}

/// Free-function form of [`KdeContext::log_full_joint`].
pub fn log_kde_full_joint(ctx: &KdeContext<'_>, point: &[f64], s: f64) -> f64 {
    ctx.log_full_joint(point, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, RngSeed};
    use alloc::vec;
    use core::f64::consts::PI;

    // exp(-1/2)/sqrt(2π) evaluated independently.
    const K1: f64 = 0.241_970_724_519_143_37;

    #[test]
    fn kernel_values() {
        assert!((gaussian_kernel(0.0) - 0.398_942_280_4).abs() < 1e-10);
        assert!((gaussian_kernel(1.0) - 0.241_970_724_5).abs() < 1e-10);
        assert!((libm::exp(-0.5) / libm::sqrt(2.0 * PI) - K1).abs() < 1e-16);
        for u in [0.3, 1.7, 4.0] {
            assert_eq!(gaussian_kernel(u), gaussian_kernel(-u));
            assert!(gaussian_kernel(u) < gaussian_kernel(0.0));
            assert!((log_gaussian_kernel(u) - libm::log(gaussian_kernel(u))).abs() < 1e-14);
        }
    }

    #[test]
    fn silverman_values() {
        assert_eq!(silverman_bandwidth(1.0, 1.0, 1.0).unwrap(), 1.0);
        // 500^(-0.2) = exp(-0.2 ln 500)
        let expected = libm::exp(-0.2 * libm::log(500.0));
        assert!((expected - 0.288_539_981_2).abs() < 1e-10);
        assert!((silverman_bandwidth(1.0, 1.0, 500.0).unwrap() - 0.288_539_981_2).abs() < 1e-10);
        assert!((silverman_bandwidth(2.0, 0.5, 500.0).unwrap() - 0.288_539_981_2).abs() < 1e-10);
        assert!(matches!(silverman_bandwidth(0.0, 1.0, 10.0), Err(Error::DegenerateScale { .. })));
    }

    #[test]
    fn marginal_examples() {
        assert!((log_kde_marginal(&[0.0], 1.0, 0.0) - libm::log(0.398_942_280_401_432_7)).abs() < 1e-14);
        assert!((log_kde_marginal(&[-1.0, 1.0], 1.0, 0.0) - libm::log(K1)).abs() < 1e-14);
    }

    #[test]
    fn marginal_integrates_to_one() {
        let mut r = RngSeed(3).stream(0);
        let centers: Vec<f64> = (0..50).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
        let h = 0.3;
        let step = 0.01;
        let n = 2000;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = -10.0 + step * i as f64;
            let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += wgt * libm::exp(log_kde_marginal(&centers, h, x));
        }
        integral *= step;
        assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
    }

    #[test]
    fn pair_examples() {
        let v = log_kde_pair(&[0.0], &[0.0], 1.0, 1.0, 0.0, 0.0);
        assert!((v - 2.0 * libm::log(0.398_942_280_401_432_7)).abs() < 1e-14);

        // Equal s-centers factor out of the sum.
        let cx = [0.3, -1.2, 2.0, 0.7];
        let cs = [0.5; 4];
        let (hx, hs, x, s) = (0.8, 0.4, 0.1, -0.2);
        let lhs = log_kde_pair(&cx, &cs, hx, hs, x, s);
        let rhs = log_kde_marginal(&cx, hx, x) + log_gaussian_kernel((0.5 - s) / hs) - libm::log(hs);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pair_matches_double_loop() {
        let cx: [f64; 4] = [0.1, -0.4, 1.3, 0.9];
        let cs: [f64; 4] = [1.0, 0.2, -0.7, 0.0];
        let (hx, hs, x, s): (f64, f64, f64, f64) = (0.6, 0.9, 0.25, 0.3);
        let mut direct = 0.0;
        for i in 0..4 {
            let kx = libm::exp(-0.5 * ((cx[i] - x) / hx).powi(2)) / libm::sqrt(2.0 * PI) / hx;
            let ks = libm::exp(-0.5 * ((cs[i] - s) / hs).powi(2)) / libm::sqrt(2.0 * PI) / hs;
            direct += kx * ks;
        }
        direct /= 4.0;
        assert!((log_kde_pair(&cx, &cs, hx, hs, x, s) - libm::log(direct)).abs() < 1e-12);
    }

    #[test]
    fn full_joint_examples() {
        let pts = [0.5, -0.5, 1.0];
        let lat = [0.2];
        let bw = BandwidthSpec::new(vec![1.0; 3], 1.0, 1.0).unwrap();
        let ctx = KdeContext::new(&pts, 3, &lat, bw).unwrap();
        let v = ctx.log_full_joint(&pts, 0.2);
        assert!((v - 4.0 * libm::log(0.398_942_280_401_432_7)).abs() < 1e-14);

        // k = 1 collapses to the pair estimator.
        let cx = [0.1, -0.4, 1.3];
        let cs = [1.0, 0.2, -0.7];
        let bw = BandwidthSpec::new(vec![0.7], 0.5, 1.0).unwrap();
        let ctx = KdeContext::new(&cx, 1, &cs, bw).unwrap();
        assert_eq!(ctx.log_full_joint(&[0.3], 0.1), log_kde_pair(&cx, &cs, 0.7, 0.5, 0.3, 0.1));
    }

    #[test]
    fn full_joint_matches_nested_loops() {
        let (m, k) = (5, 4);
        let mut r = RngSeed(17).stream(0);
        let pts: Vec<f64> = (0..m * k).map(|_| rng::normal(&mut r, 0.0, 1.0)).collect();
        let lat: Vec<f64> = (0..m).map(|_| rng::normal(&mut r, 0.0, 2.0)).collect();
        let h = vec![0.5, 0.8, 1.1, 0.3];
        let hs = 0.6;
        let ctx = KdeContext::new(&pts, k, &lat, BandwidthSpec::new(h.clone(), hs, 1.0).unwrap()).unwrap();
        let q = [0.2, -0.1, 0.4, 0.0];
        let s = 0.5;
        let mut direct = 0.0;
        for i in 0..m {
            let mut prod = gaussian_kernel((lat[i] - s) / hs) / hs;
            for j in 0..k {
                prod *= gaussian_kernel((pts[i * k + j] - q[j]) / h[j]) / h[j];
            }
            direct += prod;
        }
        direct /= m as f64;
        assert!((ctx.log_full_joint(&q, s) - libm::log(direct)).abs() < 1e-12);
    }

    #[test]
    fn bandwidths_from_context() {
        // Columns with unit sample std: {-1, 0, 1} has std 1.
        let pts = [-1.0, -2.0, 0.0, 0.0, 1.0, 2.0];
        let lat = [-1.0, 0.0, 1.0];
        let bw = context_bandwidths_with_n(&pts, 2, &lat, 1.0, 500.0).unwrap();
        assert!((bw.h[0] - 0.288_539_981_2).abs() < 1e-10);
        assert!((bw.h[1] - 2.0 * 0.288_539_981_2).abs() < 1e-10);
        assert!((bw.h_star - 0.288_539_981_2).abs() < 1e-10);
        let bw2 = context_bandwidths_with_n(&pts, 2, &lat, 2.0, 500.0).unwrap();
        for j in 0..2 {
            assert!((bw2.h[j] - 2.0 * bw.h[j]).abs() < 1e-15);
        }
        assert!((bw2.h_star - 2.0 * bw.h_star).abs() < 1e-15);

        let flat = [0.3, 0.3, 0.3];
        assert!(matches!(context_bandwidths(&pts, 2, &flat, 1.0), Err(Error::DegenerateScale { .. })));
    }

    #[test]
    fn far_queries_do_not_produce_nan() {
        let centers = [1e6, 1e6 + 1.0, 1e6 - 2.0];
        let v = log_kde_marginal(&centers, 0.5, 0.0);
        assert!(!v.is_nan());
        assert!(v.is_finite());
        let near = log_kde_marginal(&centers, 0.5, 1e6);
        assert!(near.is_finite());
    }
}
