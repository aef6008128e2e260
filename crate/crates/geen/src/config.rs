//! Run configuration. Read from a flat TOML file; every field has a default
//! and the fully resolved config is echoed into each run's artifacts.

use std::fs;
use std::path::Path;

use geen_core::density::BandwidthSampleSize;
use geen_core::{Activation, AdamConfig, RngSeed};
use serde::{Deserialize, Serialize};

use crate::error::{GeenError, Result};

/// How the location penalty is aggregated over the observations of one
/// gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScope {
    /// Mean over observations of each observation's squared mean gap.
    #[default]
    PerObservation,
    /// Squared gap between the pooled means of all observations in the step.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Points per observation.
    pub m: usize,
    /// Observations bootstrapped per training epoch.
    pub n_obs_train: usize,
    /// Size of the fixed validation observation set.
    pub n_obs_val: usize,
    /// Observations averaged per gradient step.
    pub batch_obs: usize,
    /// Bandwidth window multiplier.
    pub w: f64,
    pub lambda: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: RngSeed,
    pub hidden: usize,
    /// Weight layers, so `depth - 1` hidden layers.
    pub depth: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub penalty_scope: PenaltyScope,
    pub bandwidth_n: BandwidthSampleSize,
    /// Standardize inputs with the training columns' mean and std.
    pub standardize_inputs: bool,
    /// After each epoch, mirror the generator output when that lowers the
    /// validation penalty. The KL term cannot tell a latent from its mirror.
    pub reflection_check: bool,
    /// Grid axes used by `tune`.
    pub grid_w: Vec<f64>,
    pub grid_lambda: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            m: 500,
            n_obs_train: 8000,
            n_obs_val: 1000,
            batch_obs: 32,
            w: 1.0,
            lambda: 0.3,
            max_epochs: 200,
            patience: 10,
            seed: RngSeed(0),
            hidden: 10,
            depth: 6,
            activation: Activation::Tanh,
            learning_rate: adam.step_size,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            penalty_scope: PenaltyScope::PerObservation,
            bandwidth_n: BandwidthSampleSize::PointsPerObservation,
            standardize_inputs: true,
            reflection_check: true,
            grid_w: vec![0.5, 1.0, 1.5, 2.0],
            grid_lambda: vec![0.1, 0.3, 0.5],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GeenError::Config(m.to_string()));
        if self.m < 2 {
            return bad("m must be at least 2");
        }
        if self.n_obs_train == 0 || self.n_obs_val == 0 || self.batch_obs == 0 {
            return bad("observation counts and batch_obs must be positive");
        }
        if !(self.w.is_finite() && self.w > 0.0) {
            return bad("w must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be at least 1");
        }
        if self.hidden == 0 || self.depth < 2 {
            return bad("hidden must be positive and depth at least 2");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer constants out of range");
        }
        if let BandwidthSampleSize::Custom(n) = self.bandwidth_n {
            if n.is_nan() || n < 1.0 {
                return bad("custom bandwidth_n must be at least 1");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { step_size: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    /// Sample size for the Silverman rate factor, or `None` for "use `m`".
    pub fn bandwidth_n_value(&self) -> Option<f64> {
        match self.bandwidth_n {
            BandwidthSampleSize::PointsPerObservation => None,
            BandwidthSampleSize::Observations => Some(self.n_obs_train as f64),
            BandwidthSampleSize::Custom(n) => Some(n),
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec { w_values: self.grid_w.clone(), lambda_values: self.grid_lambda.clone() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| GeenError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GeenError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            GeenError::Config(msg) => GeenError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Hyperparameter grid over the window and the penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub w_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
}

impl GridSpec {
    pub const W_RANGE: (f64, f64) = (0.5, 2.0);
    pub const LAMBDA_RANGE: (f64, f64) = (0.1, 0.5);

    /// Checks the grid is nonempty and, unless `allow_out_of_range`, that it
    /// stays inside the recommended ranges.
    pub fn validate(&self, allow_out_of_range: bool) -> Result<()> {
        if self.w_values.is_empty() || self.lambda_values.is_empty() {
            return Err(GeenError::Config("grid axes must be nonempty".into()));
        }
        if !allow_out_of_range {
            let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
            if !self.w_values.iter().all(|&w| inside(w, Self::W_RANGE))
                || !self.lambda_values.iter().all(|&l| inside(l, Self::LAMBDA_RANGE))
            {
                return Err(GeenError::Config(
                    "grid outside w ∈ [0.5, 2] or lambda ∈ [0.1, 0.5]; pass the override to allow".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.w_values
            .iter()
            .flat_map(|&w| self.lambda_values.iter().map(move |&l| (w, l)))
            .collect()
    }
}
