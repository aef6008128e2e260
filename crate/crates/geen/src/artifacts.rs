//! Run artifacts: model files, training history, metadata and result tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use geen_core::eval::{DiagnosticPoint, EvalReport, RunSummary};
use geen_core::rng::RNG_ALGORITHM;
use geen_core::{Experiment, MlpParams, RngSeed};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{GeenError, Result};
use crate::trainer::TrainHistory;

pub const MODEL_FORMAT: &str = "geen-model";
pub const MODEL_VERSION: u32 = 1;

pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.json";

/// Trained generator with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub seed: RngSeed,
    pub params: MlpParams,
    pub config: TrainConfig,
}

impl ModelFile {
    pub fn new(params: MlpParams, config: TrainConfig) -> Self {
        Self { format: MODEL_FORMAT.into(), version: MODEL_VERSION, seed: config.seed, params, config }
    }
}

/// Provenance for one command invocation. Wall time makes this file differ
/// between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub tool_version: String,
    pub rng: String,
    pub seed: RngSeed,
    pub experiment: Option<Experiment>,
    pub config: TrainConfig,
    pub wall_time_secs: f64,
}

impl RunMetadata {
    pub fn new(command: &str, config: &TrainConfig, experiment: Option<Experiment>, wall_time_secs: f64) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            rng: RNG_ALGORITHM.into(),
            seed: config.seed,
            experiment,
            config: config.clone(),
            wall_time_secs,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GeenError::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path.as_ref(), &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GeenError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| GeenError::Format { path: path.to_path_buf(), message: e.to_string() })
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    write_json(path, model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let model: ModelFile = read_json(path)?;
    let format_err = |message: String| GeenError::Format { path: path.to_path_buf(), message };
    if model.format != MODEL_FORMAT {
        return Err(format_err(format!("not a model file (format `{}`)", model.format)));
    }
    if model.version != MODEL_VERSION {
        return Err(format_err(format!("unsupported model version {}", model.version)));
    }
    model.params.validate().map_err(|e| format_err(e.to_string()))?;
    Ok(model)
}

pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in &history.epochs {
        let _ = writeln!(out, "{},{:?},{:?}", e.epoch, e.train_loss, e.val_loss);
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &TrainHistory) -> Result<()> {
    write_text(path.as_ref(), &history_csv(history))
}

/// One-row CSV of an evaluation; large-deviation columns are named by eps.
pub fn eval_csv(report: &EvalReport) -> String {
    let mut header = String::from("corr_latent,corr_x1,n_test");
    let mut row = format!("{:?},{:?},{}", report.corr_latent, report.corr_x1, report.n_test);
    for ld in &report.large_dev {
        let _ = write!(header, ",large_dev_{:?}", ld.eps);
        let _ = write!(row, ",{:?}", ld.proportion);
    }
    format!("{header}\n{row}\n")
}

pub fn scatter_csv(estimate: &[f64], truth: &[f64]) -> String {
    let mut out = String::from("xhat,xstar\n");
    for (a, b) in estimate.iter().zip(truth) {
        let _ = writeln!(out, "{a:?},{b:?}");
    }
    out
}

pub fn estimates_csv(estimate: &[f64]) -> String {
    let mut out = String::from("xhat\n");
    for a in estimate {
        let _ = writeln!(out, "{a:?}");
    }
    out
}

pub fn diagnostic_csv(points: &[DiagnosticPoint]) -> String {
    let mut out = String::from("noise_std,mean_loss\n");
    for p in points {
        let _ = writeln!(out, "{:?},{:?}", p.noise_std, p.mean_loss);
    }
    out
}

/// One results-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub experiment: String,
    pub summary: RunSummary,
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("experiment,min,median,max,corr_x1,n_runs,n_failed\n");
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.experiment,
            s.min,
            s.median,
            s.max,
            s.corr_x1,
            s.reports.len(),
            s.n_failed
        );
    }
    out
}

pub fn write_string(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_text(path.as_ref(), text)
}
