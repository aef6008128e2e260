//! Training loop, early stopping, grid tuning and multi-seed restarts.
//!
//! Because the generator acts on each row independently, a step runs one
//! forward pass over every training row, computes the loss and latent
//! gradient of each observation in parallel, scatters the latent gradients
//! back onto rows in a fixed order, and runs one backward pass. Results are
//! bit-identical regardless of thread count.

use geen_core::data::{bootstrap_observations, Dataset, ObservationBatch, ObservationSet};
use geen_core::density::{context_bandwidths_with_n, KdeContext};
use geen_core::eval::{self, EvalReport, RunSummary};
use geen_core::loss;
use geen_core::network::ForwardCache;
use geen_core::simgen::{self, ExperimentSpec, SplitSizes};
use geen_core::stats;
use geen_core::{MlpParams, OptState, ParamGrads};
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, PenaltyScope, TrainConfig};
use crate::error::{GeenError, Result};

const TAG_INIT: u64 = 1;
const TAG_VAL: u64 = 2;
const TAG_EPOCH: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss and counts epochs without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        match self.best {
            Some((_, best)) if val_loss.is_nan() || val_loss >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.stale = 0;
                Verdict::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Per-observation pieces needed to assemble a batch loss.
struct ObsTerm {
    kl: f64,
    /// `mean(X¹) − mean(X̂*)` over the observation.
    gap: f64,
    grad: Vec<f64>,
}

fn observation_term(
    data: &Dataset,
    latents: &[f64],
    batch: &ObservationBatch,
    cfg: &TrainConfig,
    with_grad: bool,
) -> geen_core::Result<ObsTerm> {
    let mut pts = Vec::with_capacity(batch.m() * data.k());
    data.gather(batch, &mut pts);
    let lat: Vec<f64> = batch.indices().iter().map(|&i| latents[i]).collect();
    let n = cfg.bandwidth_n_value().unwrap_or(batch.m() as f64);
    let bw = context_bandwidths_with_n(&pts, data.k(), &lat, cfg.w, n)?;
    let ctx = KdeContext::new(&pts, data.k(), &lat, bw)?;
    let gap = stats::column_mean(&pts, data.k(), 0) - stats::mean(&lat);
    let (kl, grad) = if with_grad { loss::kl_and_grad(&ctx) } else { (loss::kl_hat(&ctx), Vec::new()) };
    Ok(ObsTerm { kl, gap, grad })
}

fn observation_terms(
    data: &Dataset,
    latents: &[f64],
    batches: &[ObservationBatch],
    cfg: &TrainConfig,
    with_grad: bool,
) -> geen_core::Result<Vec<ObsTerm>> {
    batches.par_iter().map(|b| observation_term(data, latents, b, cfg, with_grad)).collect()
}

fn aggregate_loss(terms: &[ObsTerm], cfg: &TrainConfig) -> f64 {
    let b = terms.len() as f64;
    let kl = terms.iter().map(|t| t.kl).sum::<f64>() / b;
    let penalty = match cfg.penalty_scope {
        PenaltyScope::PerObservation => terms.iter().map(|t| t.gap * t.gap).sum::<f64>() / b,
        PenaltyScope::Pooled => {
            let g = terms.iter().map(|t| t.gap).sum::<f64>() / b;
            g * g
        }
    };
    kl + cfg.lambda * penalty
}

/// Loss of one gradient step over `batches` and its gradient with respect
/// to every network parameter. Bandwidths are treated as constants.
pub fn batch_loss_and_grad(
    params: &MlpParams,
    data: &Dataset,
    batches: &[ObservationBatch],
    cfg: &TrainConfig,
) -> geen_core::Result<(f64, ParamGrads)> {
    let cache: ForwardCache = params.forward_cached(data.features())?;
    let latents = cache.output();
    let terms = observation_terms(data, latents, batches, cfg, true)?;
    let loss = aggregate_loss(&terms, cfg);

    let b = batches.len() as f64;
    let pooled_gap = terms.iter().map(|t| t.gap).sum::<f64>() / b;
    let mut upstream = vec![0.0; data.n_pts()];
    for (batch, term) in batches.iter().zip(&terms) {
        let m = batch.m() as f64;
        // d penalty / d latent_i; the gap falls by 1/m per unit latent.
        let pen = match cfg.penalty_scope {
            PenaltyScope::PerObservation => -2.0 * cfg.lambda * term.gap / m,
            PenaltyScope::Pooled => -2.0 * cfg.lambda * pooled_gap / m,
        };
        for (&row, g) in batch.indices().iter().zip(&term.grad) {
            upstream[row] += (g + pen) / b;
        }
    }
    let grads = params.backward_cached(&cache, &upstream)?;
    Ok((loss, grads))
}

/// Location penalty alone. Unlike the KL term it is not invariant under
/// mirroring the latents.
fn penalty_value(data: &Dataset, latents: &[f64], obs: &ObservationSet, scope: PenaltyScope) -> f64 {
    let k = data.k();
    let gaps: Vec<f64> = obs
        .batches()
        .iter()
        .map(|b| {
            let m = b.m() as f64;
            let x1 = b.indices().iter().map(|&i| data.features()[i * k]).sum::<f64>() / m;
            let s = b.indices().iter().map(|&i| latents[i]).sum::<f64>() / m;
            x1 - s
        })
        .collect();
    let n = gaps.len() as f64;
    match scope {
        PenaltyScope::PerObservation => gaps.iter().map(|g| g * g).sum::<f64>() / n,
        PenaltyScope::Pooled => {
            let g = gaps.iter().sum::<f64>() / n;
            g * g
        }
    }
}

/// Mirrors the generator about its mean training output when the mirror
/// has a lower validation penalty. Returns whether it flipped.
fn reflect_if_better(
    params: &mut MlpParams,
    opt: &mut OptState,
    train_x: &Dataset,
    val_x: &Dataset,
    val_obs: &ObservationSet,
    cfg: &TrainConfig,
) -> geen_core::Result<bool> {
    let center = stats::mean(&params.forward(train_x.features())?);
    let current = params.forward(val_x.features())?;
    let mirrored: Vec<f64> = current.iter().map(|s| 2.0 * center - s).collect();
    let keep = penalty_value(val_x, &current, val_obs, cfg.penalty_scope);
    let flip = penalty_value(val_x, &mirrored, val_obs, cfg.penalty_scope);
    if flip < keep {
        params.reflect_output(center);
        opt.reflect_output();
        return Ok(true);
    }
    Ok(false)
}

/// Mean loss over a fixed observation set.
pub fn observation_set_loss(
    params: &MlpParams,
    data: &Dataset,
    obs: &ObservationSet,
    cfg: &TrainConfig,
) -> geen_core::Result<f64> {
    let latents = params.forward(data.features())?;
    let terms = observation_terms(data, &latents, obs.batches(), cfg, false)?;
    Ok(aggregate_loss(&terms, cfg))
}

/// Untrained generator for `cfg`, with input scaling fitted to `train_data`.
pub fn initial_params(train_data: &Dataset, cfg: &TrainConfig) -> Result<MlpParams> {
    let mut dims = vec![train_data.k()];
    dims.extend(std::iter::repeat_n(cfg.hidden, cfg.depth - 1));
    dims.push(1);
    let mut params = MlpParams::random(&dims, cfg.activation, cfg.seed.derive(TAG_INIT))?;
    if cfg.standardize_inputs && train_data.n_pts() >= 2 {
        let f = train_data.features();
        let k = train_data.k();
        let means: Vec<f64> = (0..k).map(|j| stats::column_mean(f, k, j)).collect();
        let stds: Vec<f64> = (0..k).map(|j| stats::column_std(f, k, j)).collect();
        params.set_input_scaling(&means, &stds)?;
    }
    Ok(params)
}

/// Trains a generator and returns the parameters from the epoch with the
/// lowest validation loss.
///
/// Truth columns are dropped on entry; nothing downstream can read them.
pub fn train(train_data: &Dataset, val_data: &Dataset, cfg: &TrainConfig) -> Result<(MlpParams, TrainHistory)> {
    cfg.validate()?;
    if train_data.k() != val_data.k() {
        return Err(GeenError::Config(format!(
            "train has {} measurements but validation has {}",
            train_data.k(),
            val_data.k()
        )));
    }
    let train_x = train_data.without_truth();
    let val_x = val_data.without_truth();
    train_features(&train_x, &val_x, cfg)
}

fn train_features(train_x: &Dataset, val_x: &Dataset, cfg: &TrainConfig) -> Result<(MlpParams, TrainHistory)> {
    let mut params = initial_params(train_x, cfg)?;
    let mut opt = OptState::new(&params, cfg.adam());
    let val_obs = bootstrap_observations(val_x.n_pts(), cfg.m, cfg.n_obs_val, cfg.seed.derive(TAG_VAL))?;

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let obs = bootstrap_observations(
            train_x.n_pts(),
            cfg.m,
            cfg.n_obs_train,
            cfg.seed.derive(TAG_EPOCH + epoch as u64),
        )?;
        let mut loss_sum = 0.0;
        let mut n_steps = 0;
        for (step, chunk) in obs.batches().chunks(cfg.batch_obs).enumerate() {
            let (loss, grads) = batch_loss_and_grad(&params, train_x, chunk, cfg)
                .map_err(|source| GeenError::Training { epoch, step, source })?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(GeenError::Training {
                    epoch,
                    step,
                    source: geen_core::Error::InvalidArgument("non-finite loss or gradient".into()),
                });
            }
            opt.apply(&mut params, &grads);
            loss_sum += loss;
            n_steps += 1;
        }
        let train_loss = loss_sum / n_steps as f64;
        if cfg.reflection_check
            && reflect_if_better(&mut params, &mut opt, train_x, val_x, &val_obs, cfg)
                .map_err(|source| GeenError::Training { epoch, step: n_steps, source })?
        {
            debug!("epoch {epoch}: mirrored generator output");
        }
        let val_loss = observation_set_loss(&params, val_x, &val_obs, cfg)
            .map_err(|source| GeenError::Training { epoch, step: n_steps, source })?;
        epochs.push(EpochRecord { epoch, train_loss, val_loss });
        let verdict = stopper.observe(epoch, val_loss);
        debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} ({verdict:?})");
        match verdict {
            Verdict::Improved => best_params = params.clone(),
            Verdict::Continue => {}
            Verdict::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let (best_epoch, best_val_loss) = stopper.best().expect("at least one epoch ran");
    info!("stopped after {} epochs ({stop_reason:?}); best epoch {best_epoch} val {best_val_loss:.6}", epochs.len());
    Ok((best_params, TrainHistory { epochs, best_epoch, best_val_loss, stop_reason }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneEntry {
    pub w: f64,
    pub lambda: f64,
    /// Best validation loss; `None` when the run failed.
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub failure: Option<String>,
}

/// Trains one model per `(w, λ)` cell and ranks cells by best validation
/// loss, failures last. Ground truth is never consulted.
pub fn tune(
    train_data: &Dataset,
    val_data: &Dataset,
    grid: &GridSpec,
    base_cfg: &TrainConfig,
) -> Result<(TrainConfig, Vec<TuneEntry>)> {
    if grid.cells().is_empty() {
        return Err(GeenError::Config("empty grid".into()));
    }
    let mut board = Vec::new();
    for (w, lambda) in grid.cells() {
        let cfg = TrainConfig { w, lambda, ..base_cfg.clone() };
        let entry = match train(train_data, val_data, &cfg) {
            Ok((_, hist)) => TuneEntry {
                w,
                lambda,
                best_val_loss: Some(hist.best_val_loss),
                best_epoch: Some(hist.best_epoch),
                failure: None,
            },
            Err(e) if e.is_numerical() => {
                warn!("cell w={w} lambda={lambda} failed: {e}");
                TuneEntry { w, lambda, best_val_loss: None, best_epoch: None, failure: Some(e.to_string()) }
            }
            Err(e) => return Err(e),
        };
        info!("cell w={w} lambda={lambda}: {:?}", entry.best_val_loss);
        board.push(entry);
    }
    board.sort_by(|a, b| match (a.best_val_loss, b.best_val_loss) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let best = board
        .first()
        .filter(|e| e.best_val_loss.is_some())
        .ok_or_else(|| GeenError::Config("every grid cell failed".into()))?;
    let best_cfg = TrainConfig { w: best.w, lambda: best.lambda, ..base_cfg.clone() };
    Ok((best_cfg, board))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub best_val_loss: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRunResult {
    pub runs: Vec<RunRecord>,
    pub summary: RunSummary,
}

impl MultiRunResult {
    /// The successful run with the lowest validation loss.
    pub fn best_by_validation(&self) -> Option<&RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.report.is_some())
            .min_by(|a, b| a.best_val_loss.unwrap_or(f64::INFINITY).total_cmp(&b.best_val_loss.unwrap_or(f64::INFINITY)))
    }
}

/// Simulates one dataset from `cfg.seed` and trains `n_runs` generators on it
/// with seeds `cfg.seed + r`. Failed runs are recorded and counted, not
/// dropped silently.
pub fn multi_run(
    spec: &ExperimentSpec,
    sizes: SplitSizes,
    cfg: &TrainConfig,
    n_runs: usize,
) -> Result<MultiRunResult> {
    if n_runs == 0 {
        return Err(GeenError::Config("n_runs must be at least 1".into()));
    }
    let (train_d, val_d, test_d) = simgen::generate(spec, sizes, cfg.seed)?;
    let truth = test_d.truth().expect("simulated data has truth");
    let eps = eval::default_eps(truth);
    let mut runs = Vec::with_capacity(n_runs);
    for r in 0..n_runs {
        let run_cfg = TrainConfig { seed: cfg.seed.offset(r as u64), ..cfg.clone() };
        let outcome = train(&train_d, &val_d, &run_cfg)
            .and_then(|(model, hist)| Ok((eval::evaluate(&model, &test_d, &eps)?, hist.best_val_loss)));
        let record = match outcome {
            Ok((report, val)) => {
                info!("run {r} (seed {}): corr {:.4}", run_cfg.seed.0, report.corr_latent);
                RunRecord { seed: run_cfg.seed.0, report: Some(report), best_val_loss: Some(val), failure: None }
            }
            Err(e) if e.is_numerical() => {
                warn!("run {r} (seed {}) failed: {e}", run_cfg.seed.0);
                RunRecord { seed: run_cfg.seed.0, report: None, best_val_loss: None, failure: Some(e.to_string()) }
            }
            Err(e) => return Err(e),
        };
        runs.push(record);
    }
    let ok: Vec<EvalReport> = runs.iter().filter_map(|r| r.report.clone()).collect();
    let n_failed = runs.len() - ok.len();
    let summary = eval::summarize(&ok, n_failed)?;
    Ok(MultiRunResult { runs, summary })
}
