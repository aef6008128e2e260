//! The GEEN objective for one observation: plug-in KL divergence between the
//! full joint KDE and its conditionally independent factorization, plus the
//! squared-means anchor on `X¹`, and the exact gradient of both with respect
//! to the generated latents.
//!
//! Both densities are evaluated at the observation's own `(row, latent)`
//! tuples. Because every estimator shares the `1/m` weight and the
//! bandwidth normalizers cancel between the joint and the factorization, the
//! divergence reduces to
//!
//! ```text
//! KL = (1/m) Σ_i [ ln S_joint(i) − Σ_j ln S_pair_j(i) + (k−1) ln S_lat(i) ]
//! ```
//!
//! where each `S(i) = Σ_l exp(−½ · squared standardized distance)` over the
//! relevant axes. The self term `l = i` contributes exactly 1, so every sum
//! is at least one and the logs never underflow.
//!
//! Bandwidths are constants here. Gradients treat them as fixed even though
//! the trainer recomputes them from the latents on every forward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::density::KdeContext;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub kl: f64,
    pub penalty: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(kl: f64, penalty: f64, lambda: f64) -> Self {
        Self { kl, penalty, total: kl + lambda * penalty, lambda }
    }
}

/// `∂ total / ∂ latent_i` for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGradient {
    pub grad: Vec<f64>,
}

/// Kernel sums for each evaluation point, plus (optionally) every pairwise
/// kernel product so the gradient pass can reuse them.
struct PairwiseSums {
    joint: Vec<f64>,
    /// `k × m`, row `j` holds `S_pair_j`.
    pair: Vec<f64>,
    latent: Vec<f64>,
    /// Per unordered pair `(i < l)`: `[e_lat, pair_1..pair_k, joint]`.
    terms: Vec<f64>,
}

fn pairwise_sums(ctx: &KdeContext<'_>, keep_terms: bool) -> PairwiseSums {
    let m = ctx.m();
    let k = ctx.k();
    let pts = ctx.points();
    let lat = ctx.latents();
    let bw = ctx.bandwidths();
    let inv_hs = 1.0 / bw.h_star;
    let inv_h: Vec<f64> = bw.h.iter().map(|h| 1.0 / h).collect();

    let mut joint = vec![1.0; m];
    let mut pair = vec![1.0; k * m];
    let mut latent = vec![1.0; m];
    let stride = k + 2;
    let mut terms = if keep_terms { Vec::with_capacity(m * (m - 1) / 2 * stride) } else { Vec::new() };
    let mut pair_buf = vec![0.0; k];

    for i in 0..m {
        let xi = &pts[i * k..(i + 1) * k];
        for l in (i + 1)..m {
            let xl = &pts[l * k..(l + 1) * k];
            let ds = (lat[i] - lat[l]) * inv_hs;
            let e_lat = libm::exp(-0.5 * ds * ds);
            let mut prod = e_lat;
            for j in 0..k {
                let dj = (xi[j] - xl[j]) * inv_h[j];
                let e_j = libm::exp(-0.5 * dj * dj);
                pair_buf[j] = e_lat * e_j;
                prod *= e_j;
            }
            latent[i] += e_lat;
            latent[l] += e_lat;
            joint[i] += prod;
            joint[l] += prod;
            for j in 0..k {
                pair[j * m + i] += pair_buf[j];
                pair[j * m + l] += pair_buf[j];
            }
            if keep_terms {
                terms.push(e_lat);
                terms.extend_from_slice(&pair_buf);
                terms.push(prod);
            }
        }
    }
    PairwiseSums { joint, pair, latent, terms }
}

fn kl_from_sums(sums: &PairwiseSums, m: usize, k: usize) -> f64 {
    let km1 = k as f64 - 1.0;
    let mut acc = 0.0;
    for i in 0..m {
        let mut v = libm::log(sums.joint[i]);
        for j in 0..k {
            v -= libm::log(sums.pair[j * m + i]);
        }
        v += km1 * libm::log(sums.latent[i]);
        acc += v;
    }
    acc / m as f64
}

/// Plug-in KL divergence between the joint KDE and its conditionally
/// independent factorization, averaged over the observation's own points.
/// Can be negative for finite `m`.
pub fn kl_hat(ctx: &KdeContext<'_>) -> f64 {
    let sums = pairwise_sums(ctx, false);
    kl_from_sums(&sums, ctx.m(), ctx.k())
}

/// `(mean(x1) − mean(latents))²`.
pub fn normalization_penalty(points_x1: &[f64], latents: &[f64]) -> f64 {
    let d = stats::mean(points_x1) - stats::mean(latents);
    d * d
}

fn x1_mean(ctx: &KdeContext<'_>) -> f64 {
    stats::column_mean(ctx.points(), ctx.k(), 0)
}

pub fn total_loss(ctx: &KdeContext<'_>, lambda: f64) -> LossBreakdown {
    let d = x1_mean(ctx) - stats::mean(ctx.latents());
    LossBreakdown::new(kl_hat(ctx), d * d, lambda)
}

/// KL divergence and its gradient with respect to each latent.
pub fn kl_and_grad(ctx: &KdeContext<'_>) -> (f64, Vec<f64>) {
    let m = ctx.m();
    let k = ctx.k();
    let sums = pairwise_sums(ctx, true);
    let kl = kl_from_sums(&sums, m, k);

    let lat = ctx.latents();
    let h = ctx.bandwidths().h_star;
    let inv_h2 = 1.0 / (h * h);
    let km1 = k as f64 - 1.0;
    let stride = k + 2;
    let mut grad = vec![0.0; m];
    let mut t = 0;
    for i in 0..m {
        for l in (i + 1)..m {
            let row = &sums.terms[t * stride..(t + 1) * stride];
            t += 1;
            let e_lat = row[0];
            let joint = row[k + 1];
            // Softmax-weight combination seen from evaluation point i and from l.
            let mut c_i = joint / sums.joint[i] + km1 * e_lat / sums.latent[i];
            let mut c_l = joint / sums.joint[l] + km1 * e_lat / sums.latent[l];
            for j in 0..k {
                c_i -= row[1 + j] / sums.pair[j * m + i];
                c_l -= row[1 + j] / sums.pair[j * m + l];
            }
            let diff = (lat[i] - lat[l]) * inv_h2;
            let r_il = c_i * diff;
            let r_li = -c_l * diff;
            grad[i] += r_li - r_il;
            grad[l] += r_il - r_li;
        }
    }
    let inv_m = 1.0 / m as f64;
    for g in &mut grad {
        *g *= inv_m;
    }
    (kl, grad)
}

/// Loss and latent gradient in one pass.
pub fn loss_and_grad(ctx: &KdeContext<'_>, lambda: f64) -> (LossBreakdown, LatentGradient) {
    let m = ctx.m() as f64;
    let (kl, mut grad) = kl_and_grad(ctx);
    let d = stats::mean(ctx.latents()) - x1_mean(ctx);
    let g_pen = 2.0 * lambda * d / m;
    for g in &mut grad {
        *g += g_pen;
    }
    (LossBreakdown::new(kl, d * d, lambda), LatentGradient { grad })
}

pub fn loss_grad_latents(ctx: &KdeContext<'_>, lambda: f64) -> LatentGradient {
    loss_and_grad(ctx, lambda).1
}
