//! Pinned random number generation.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), seeded
//! through `SeedableRng::seed_from_u64` and split into independent sub-streams
//! with `set_stream`. The variate transforms below are written out here rather
//! than borrowed from a distribution crate so that a seed keeps producing the
//! same numbers across dependency upgrades.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Name of the generator, echoed into dataset headers and run metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Generator for sub-stream `stream` of this seed. Distinct streams of the
    /// same seed are statistically independent.
    pub fn stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// A new seed derived from this one and a tag (splitmix64 finalizer).
    pub fn derive(self, tag: u64) -> RngSeed {
        let mut z = self.0 ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }

    pub fn offset(self, by: u64) -> RngSeed {
        RngSeed(self.0.wrapping_add(by))
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

/// Uniform on `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn uniform_open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Unbiased index in `0..n` (Lemire's widening multiply with rejection).
pub fn index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "index range must be nonempty");
    let n = n as u64;
    let threshold = n.wrapping_neg() % n;
    loop {
        let x = rng.next_u64();
        let wide = (x as u128) * (n as u128);
        if (wide as u64) >= threshold {
            return (wide >> 64) as usize;
        }
    }
}

/// Standard normal via the Marsaglia polar method. The second variate of
/// each accepted pair is discarded so a call never carries hidden state.
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * uniform01(rng) - 1.0;
        let v = 2.0 * uniform01(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * libm::sqrt(-2.0 * libm::log(s) / s);
        }
    }
}

/// Normal with mean `mean` and standard deviation `std`.
pub fn normal<R: RngCore + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    mean + std * standard_normal(rng)
}

/// Gamma(shape, 1) by Marsaglia–Tsang. Shapes below one use the
/// `U^(1/shape)` boost.
pub fn gamma<R: RngCore + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let g = gamma(rng, shape + 1.0);
        return g * libm::pow(uniform_open01(rng), 1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = standard_normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = uniform_open01(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v)) {
            return d * v;
        }
    }
}

/// Beta(a, b) as `G_a / (G_a + G_b)`.
pub fn beta<R: RngCore + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let x = gamma(rng, a);
    let y = gamma(rng, b);
    x / (x + y)
}

/// Laplace(location, scale) by inverse CDF. A zero scale is a point mass.
pub fn laplace<R: RngCore + ?Sized>(rng: &mut R, location: f64, scale: f64) -> f64 {
    let u = uniform_open01(rng) - 0.5;
    let sign = if u < 0.0 { -1.0 } else { 1.0 };
    location - scale * sign * libm::log(1.0 - 2.0 * libm::fabs(u))
}

/// Uniform on `[low, high)`.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, low: f64, high: f64) -> f64 {
    low + (high - low) * uniform01(rng)
}

/// `1 / sqrt(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// `0.5 · ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
