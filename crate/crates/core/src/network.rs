//! The generator: a fully connected network applied row by row, mapping a
//! `k`-vector of measurements to one latent scalar, with hand-written
//! reverse-mode gradients and an Adam optimizer.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, RngSeed};

/// Hidden-layer nonlinearity. The output layer is always the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Weights and biases of the generator.
///
/// `weights[l]` is row-major `layer_dims[l+1] × layer_dims[l]`. Inputs pass
/// through the fixed affine map `(x - input_shift) * input_scale` before the
/// first layer; it is not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradients shaped like [`MlpParams`]' weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Builds a network with `depth` weight layers: `k → hidden → … → hidden → 1`.
///
/// Weights are uniform on `±sqrt(3 / fan_in)` (unit-variance signal for unit
/// inputs), biases start at zero.
pub fn init_mlp(k: usize, hidden: usize, depth: usize, seed: RngSeed) -> Result<MlpParams> {
    if k == 0 || hidden == 0 {
        return Err(invalid("input and hidden widths must be positive"));
    }
    if depth < 2 {
        return Err(invalid("depth counts weight layers and must be at least 2"));
    }
    let mut dims = vec![k];
    dims.extend(core::iter::repeat_n(hidden, depth - 1));
    dims.push(1);
    MlpParams::random(&dims, Activation::Tanh, seed)
}

impl MlpParams {
    pub fn random(layer_dims: &[usize], activation: Activation, seed: RngSeed) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(invalid("layer dims need at least input and output, all positive"));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(invalid("generator output dimension must be 1"));
        }
        let mut r = seed.stream(0);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = libm::sqrt(3.0 / fan_in as f64);
            weights.push((0..fan_in * fan_out).map(|_| rng::uniform(&mut r, -limit, limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        let k = layer_dims[0];
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            input_shift: vec![0.0; k],
            input_scale: vec![1.0; k],
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Fixes the input standardization from per-column means and standard
    /// deviations. Columns with zero spread are only centered.
    pub fn set_input_scaling(&mut self, means: &[f64], stds: &[f64]) -> Result<()> {
        let k = self.input_dim();
        if means.len() != k || stds.len() != k {
            return Err(Error::ShapeMismatch { expected: k, found: means.len(), what: "input scaling" });
        }
        self.input_shift = means.to_vec();
        self.input_scale = stds.iter().map(|&s| if s > 0.0 && s.is_finite() { 1.0 / s } else { 1.0 }).collect();
        Ok(())
    }

    /// Mirrors the output about `center`, so `s` becomes `2 * center - s`.
    pub fn reflect_output(&mut self, center: f64) {
        let last = self.weights.len() - 1;
        self.weights[last].iter_mut().for_each(|w| *w = -*w);
        self.biases[last].iter_mut().for_each(|b| *b = 2.0 * center - *b);
    }

    /// Checks internal shape consistency and finiteness, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.len() < 2 || *dims.last().unwrap() != 1 {
            return Err(invalid("layer dims must end in 1"));
        }
        if self.weights.len() != dims.len() - 1 || self.biases.len() != dims.len() - 1 {
            return Err(invalid("layer count does not match layer dims"));
        }
        for (l, w) in dims.windows(2).enumerate() {
            if self.weights[l].len() != w[0] * w[1] || self.biases[l].len() != w[1] {
                return Err(invalid(alloc::format!("layer {l} has the wrong shape")));
            }
        }
        if self.input_shift.len() != dims[0] || self.input_scale.len() != dims[0] {
            return Err(invalid("input scaling has the wrong width"));
        }
        let finite = self
            .weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .chain(&self.input_shift)
            .chain(&self.input_scale)
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("non-finite parameter"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameter `idx` in the order: layer 0 weights, layer 0 biases, layer 1
    /// weights, …
    pub fn get_flat(&self, idx: usize) -> f64 {
        *flat_slot(&self.weights, &self.biases, idx)
    }

    pub fn set_flat(&mut self, idx: usize, value: f64) {
        *flat_slot_mut(&mut self.weights, &mut self.biases, idx) = value;
    }

    fn check_points(&self, points: &[f64]) -> Result<usize> {
        let k = self.input_dim();
        if !points.len().is_multiple_of(k) {
            return Err(Error::ShapeMismatch { expected: k, found: points.len() % k, what: "generator input width" });
        }
        Ok(points.len() / k)
    }

    /// Latent estimate for every row of the row-major `points` matrix.
    pub fn forward(&self, points: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(points)?.output().to_vec())
    }

    /// Forward pass that keeps every layer's activations for
    /// [`MlpParams::backward_cached`].
    pub fn forward_cached(&self, points: &[f64]) -> Result<ForwardCache> {
        let n = self.check_points(points)?;
        let k = self.input_dim();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.n_layers() + 1);
        let mut input = Vec::with_capacity(points.len());
        for row in points.chunks_exact(k) {
            for ((x, shift), scale) in row.iter().zip(&self.input_shift).zip(&self.input_scale) {
                input.push((x - shift) * scale);
            }
        }
        acts.push(input);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let prev = &acts[l];
            let mut out = Vec::with_capacity(n * fan_out);
            for r in 0..n {
                let x = &prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    let z = b[o] + wr.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                    out.push(if l == last { z } else { self.activation.apply(z) });
                }
            }
            acts.push(out);
        }
        Ok(ForwardCache { acts, n })
    }

    /// Gradient of `Σ_i upstream_i · forward(points)_i` with respect to every
    /// weight and bias.
    pub fn backward(&self, points: &[f64], upstream: &[f64]) -> Result<ParamGrads> {
        let cache = self.forward_cached(points)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<ParamGrads> {
        let n = cache.n;
        if upstream.len() != n {
            return Err(Error::ShapeMismatch { expected: n, found: upstream.len(), what: "upstream gradient" });
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &cache.acts[l];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for r in 0..n {
                let x = &prev[r * fan_in..(r + 1) * fan_in];
                let d = &delta[r * fan_out..(r + 1) * fan_out];
                for o in 0..fan_out {
                    gb[o] += d[o];
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d[o] * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut next = vec![0.0; n * fan_in];
            for r in 0..n {
                let d = &delta[r * fan_out..(r + 1) * fan_out];
                let a = &prev[r * fan_in..(r + 1) * fan_in];
                let nd = &mut next[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    for (acc, wi) in nd.iter_mut().zip(wr) {
                        *acc += d[o] * wi;
                    }
                }
                for (acc, &ai) in nd.iter_mut().zip(a) {
                    *acc *= self.activation.derivative_from_output(ai);
                }
            }
            delta = next;
        }
        Ok(grads)
    }
}

/// Per-layer activations from one forward pass; `acts[0]` is the scaled
/// input and the last entry is the output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
    n: usize,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn flat_slot<'a>(w: &'a [Vec<f64>], b: &'a [Vec<f64>], mut idx: usize) -> &'a f64 {
    for (wl, bl) in w.iter().zip(b) {
        if idx < wl.len() {
            return &wl[idx];
        }
        idx -= wl.len();
        if idx < bl.len() {
            return &bl[idx];
        }
        idx -= bl.len();
    }
    panic!("flat parameter index out of range");
}

fn flat_slot_mut<'a>(w: &'a mut [Vec<f64>], b: &'a mut [Vec<f64>], mut idx: usize) -> &'a mut f64 {
    for (wl, bl) in w.iter_mut().zip(b.iter_mut()) {
        if idx < wl.len() {
            return &mut wl[idx];
        }
        idx -= wl.len();
        if idx < bl.len() {
            return &mut bl[idx];
        }
        idx -= bl.len();
    }
    panic!("flat parameter index out of range");
}

impl ParamGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn get_flat(&self, idx: usize) -> f64 {
        *flat_slot(&self.weights, &self.biases, idx)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter()).flatten()
    }

    pub fn scale(&mut self, by: f64) {
        self.values_mut().for_each(|v| *v *= by);
    }

    /// `self += other`, shapes assumed equal.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step_size: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub config: AdamConfig,
    first_moment: ParamGrads,
    second_moment: ParamGrads,
}

impl OptState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            step: 0,
            config,
            first_moment: ParamGrads::zeros_like(params),
            second_moment: ParamGrads::zeros_like(params),
        }
    }

    /// Keeps the moments consistent with [`MlpParams::reflect_output`].
    pub fn reflect_output(&mut self) {
        let last = self.first_moment.weights.len() - 1;
        self.first_moment.weights[last].iter_mut().for_each(|m| *m = -*m);
        self.first_moment.biases[last].iter_mut().for_each(|m| *m = -*m);
    }

    /// One bias-corrected Adam update in place.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &ParamGrads) {
        self.step += 1;
        let AdamConfig { step_size, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        let p_iter = params.weights.iter_mut().chain(params.biases.iter_mut()).flatten();
        let m_iter = self.first_moment.values_mut();
        let v_iter = self.second_moment.values_mut();
        for (((p, g), m), v) in p_iter.zip(grads.values()).zip(m_iter).zip(v_iter) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= step_size * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
}

/// Pure form of [`OptState::apply`].
pub fn opt_step(params: &MlpParams, grads: &ParamGrads, state: &OptState) -> (MlpParams, OptState) {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p, grads);
    (p, s)
}
