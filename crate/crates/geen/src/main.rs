use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use geen::artifacts::{self, ModelFile, RunMetadata, TableRow};
use geen::io::{self, DatasetMeta};
use geen::trainer::MultiRunResult;
use geen::{GeenError, GridSpec, TrainConfig};
use geen_core::eval::{self, DiagnosticConfig, EvalReport};
use geen_core::simgen::{self, ExperimentSpec, SplitSizes};
use geen_core::{Experiment, RngSeed};
use log::info;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Extract a latent variable from noisy measurements with a generative
/// element extraction network.
#[derive(Parser)]
#[command(name = "geen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate train/val/test splits for one experiment.
    Simulate(SimulateArgs),
    /// Train one generator.
    Train(TrainArgs),
    /// Grid-search the window and penalty weight by validation loss.
    Tune(TuneArgs),
    /// Score a trained generator against the xstar column.
    Evaluate(EvaluateArgs),
    /// Write a trained generator's estimates for every row.
    Predict(EvaluateArgs),
    /// Loss as a function of independent latent noise.
    Diagnose(DiagnoseArgs),
    /// Simulate one experiment and train several seeds on it.
    MultiRun(MultiRunArgs),
    /// Aggregate run directories into a results table.
    Report(ReportArgs),
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
        format!("unknown experiment `{s}`; expected one of: {}", names.join(", "))
    })
}

#[derive(Args)]
struct SizesArg {
    /// Train, validation and test sizes.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "8000,1000,1000")]
    sizes: Vec<usize>,
}

impl SizesArg {
    fn resolve(&self) -> Result<SplitSizes, GeenError> {
        match self.sizes[..] {
            [a, b, c] => Ok(SplitSizes::new(a, b, c)?),
            _ => Err(GeenError::Config("--sizes takes three comma-separated counts".into())),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_experiment)]
    experiment: Experiment,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sizes: SizesArg,
    /// Output directory; receives train.csv, val.csv and test.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, GeenError> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = RngSeed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.csv and val.csv.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory for the model, history, config and metadata.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    /// Directory holding train.csv and val.csv.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Permit grid values outside the recommended ranges.
    #[arg(long)]
    allow_out_of_range: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    /// Generator whose outputs are perturbed; defaults to the data's xstar column.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated noise standard deviations; must include 0.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1.0")]
    noise: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 20)]
    n_obs: usize,
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MultiRunArgs {
    #[arg(long, value_parser = parse_experiment)]
    experiment: Experiment,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[command(flatten)]
    sizes: SizesArg,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories: multi-run outputs, or train directories that an
    /// evaluation was written into.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// CSV output; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<(), GeenError> {
    fs::create_dir_all(dir).map_err(|e| GeenError::io(dir, e))
}

fn simulate(a: &SimulateArgs) -> Result<(), GeenError> {
    let sizes = a.sizes.resolve()?;
    let seed = RngSeed(a.seed);
    let (tr, va, te) = simgen::generate(&ExperimentSpec::new(a.experiment), sizes, seed)?;
    create_dir(&a.out)?;
    let meta = DatasetMeta { seed: Some(seed), experiment: Some(a.experiment) };
    for (name, d) in [("train.csv", &tr), ("val.csv", &va), ("test.csv", &te)] {
        io::save_dataset_with_meta(d, &meta, a.out.join(name))?;
    }
    info!("wrote {} rows to {}", sizes.n_train + sizes.n_val + sizes.n_test, a.out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<(), GeenError> {
    let cfg = a.config.resolve()?;
    let (tr, tr_meta) = io::load_dataset_with_meta(a.data.join("train.csv"))?;
    let va = io::load_dataset(a.data.join("val.csv"))?;
    let start = Instant::now();
    let (params, history) = geen::train(&tr, &va, &cfg)?;
    create_dir(&a.out)?;
    artifacts::save_model(a.out.join(artifacts::MODEL_FILE), &ModelFile::new(params, cfg.clone()))?;
    artifacts::write_history(a.out.join(artifacts::HISTORY_FILE), &history)?;
    artifacts::write_string(a.out.join(artifacts::CONFIG_FILE), &cfg.to_toml_string())?;
    let meta = RunMetadata::new("train", &cfg, tr_meta.experiment, start.elapsed().as_secs_f64());
    artifacts::write_json(a.out.join(artifacts::METADATA_FILE), &meta)?;
    println!("best epoch {} val loss {:.6}", history.best_epoch, history.best_val_loss);
    Ok(())
}

fn tune(a: &TuneArgs) -> Result<(), GeenError> {
    let cfg = a.config.resolve()?;
    let grid: GridSpec = cfg.grid();
    grid.validate(a.allow_out_of_range)?;
    let tr = io::load_dataset(a.data.join("train.csv"))?;
    let va = io::load_dataset(a.data.join("val.csv"))?;
    let start = Instant::now();
    let (best, board) = geen::tune(&tr, &va, &grid, &cfg)?;
    create_dir(&a.out)?;
    let mut csv = String::from("w,lambda,best_val_loss,best_epoch,failure\n");
    for e in &board {
        csv.push_str(&format!(
            "{:?},{:?},{},{},{}\n",
            e.w,
            e.lambda,
            e.best_val_loss.map(|v| format!("{v:?}")).unwrap_or_default(),
            e.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
            e.failure.as_deref().unwrap_or("").replace(',', ";"),
        ));
    }
    artifacts::write_string(a.out.join("leaderboard.csv"), &csv)?;
    artifacts::write_string(a.out.join("best_config.toml"), &best.to_toml_string())?;
    artifacts::write_json(
        a.out.join(artifacts::METADATA_FILE),
        &RunMetadata::new("tune", &cfg, None, start.elapsed().as_secs_f64()),
    )?;
    println!("best w={} lambda={}", best.w, best.lambda);
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<(), GeenError> {
    let model = artifacts::load_model(&a.model)?;
    let data = io::load_dataset(&a.data)?;
    let truth = data.truth().ok_or_else(|| {
        GeenError::Config(format!("{}: no ground truth (xstar) column to evaluate against", a.data.display()))
    })?;
    let estimate = model.params.forward(data.features())?;
    let report = eval::evaluate_latents(&estimate, &data, &eval::default_eps(truth))?;
    create_dir(&a.out)?;
    artifacts::write_json(a.out.join(artifacts::EVAL_FILE), &report)?;
    artifacts::write_string(a.out.join("eval.csv"), &artifacts::eval_csv(&report))?;
    artifacts::write_string(a.out.join("scatter.csv"), &artifacts::scatter_csv(&estimate, truth))?;
    println!("corr_latent {:.4} corr_x1 {:.4}", report.corr_latent, report.corr_x1);
    Ok(())
}

fn predict(a: &EvaluateArgs) -> Result<(), GeenError> {
    let model = artifacts::load_model(&a.model)?;
    let data = io::load_dataset(&a.data)?;
    let estimate = model.params.forward(data.features())?;
    create_dir(&a.out)?;
    artifacts::write_string(a.out.join("estimates.csv"), &artifacts::estimates_csv(&estimate))
}

fn diagnose(a: &DiagnoseArgs) -> Result<(), GeenError> {
    let data = io::load_dataset(&a.data)?;
    let latents = match &a.model {
        Some(p) => artifacts::load_model(p)?.params.forward(data.features())?,
        None => data
            .truth()
            .ok_or_else(|| GeenError::Config("diagnose needs --model or an xstar column".into()))?
            .to_vec(),
    };
    let cfg = DiagnosticConfig { m: a.m, n_obs: a.n_obs, w: a.w, lambda: a.lambda };
    let points = eval::deviation_diagnostic(&data, &latents, &a.noise, &cfg, RngSeed(a.seed))?;
    artifacts::write_string(&a.out, &artifacts::diagnostic_csv(&points))?;
    Ok(())
}

fn multi_run(a: &MultiRunArgs) -> Result<(), GeenError> {
    let cfg = a.config.resolve()?;
    let sizes = a.sizes.resolve()?;
    let start = Instant::now();
    let result = geen::multi_run(&ExperimentSpec::new(a.experiment), sizes, &cfg, a.runs)?;
    create_dir(&a.out)?;
    artifacts::write_json(a.out.join("runs.json"), &result)?;
    artifacts::write_json(
        a.out.join(artifacts::METADATA_FILE),
        &RunMetadata::new("multi-run", &cfg, Some(a.experiment), start.elapsed().as_secs_f64()),
    )?;
    let s = &result.summary;
    println!(
        "{}: min {:.4} median {:.4} max {:.4} corr_x1 {:.4} ({} failed)",
        a.experiment, s.min, s.median, s.max, s.corr_x1, s.n_failed
    );
    Ok(())
}

/// Successful evaluations and failure count found in one directory: either a
/// multi-run output or a single run evaluated into its own directory.
fn collect_runs(dir: &Path) -> Result<(Option<Experiment>, Vec<EvalReport>, usize), GeenError> {
    let meta: RunMetadata = artifacts::read_json(dir.join(artifacts::METADATA_FILE))?;
    let runs_file = dir.join("runs.json");
    if runs_file.exists() {
        let result: MultiRunResult = artifacts::read_json(runs_file)?;
        return Ok((meta.experiment, result.summary.reports, result.summary.n_failed));
    }
    let report: EvalReport = artifacts::read_json(dir.join(artifacts::EVAL_FILE))?;
    Ok((meta.experiment, vec![report], 0))
}

fn report(a: &ReportArgs) -> Result<(), GeenError> {
    // Rows keep the order in which experiments first appear.
    let mut groups: Vec<(String, Vec<EvalReport>, usize)> = Vec::new();
    for dir in &a.runs {
        let (experiment, reports, failed) = collect_runs(dir)?;
        let name = experiment.map(|e| e.to_string()).unwrap_or_else(|| "unknown".into());
        match groups.iter_mut().find(|g| g.0 == name) {
            Some(g) => {
                g.1.extend(reports);
                g.2 += failed;
            }
            None => groups.push((name, reports, failed)),
        }
    }
    let rows = groups
        .into_iter()
        .map(|(experiment, reports, failed)| Ok(TableRow { experiment, summary: eval::summarize(&reports, failed)? }))
        .collect::<Result<Vec<_>, GeenError>>()?;
    let table = artifacts::table_csv(&rows);
    match &a.out {
        Some(p) => artifacts::write_string(p, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), GeenError> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Tune(a) => tune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Diagnose(a) => diagnose(a),
        Command::MultiRun(a) => multi_run(a),
        Command::Report(a) => report(a),
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GEEN_THREADS") {
        let n: usize = v.parse().with_context(|| format!("GEEN_THREADS=`{v}` is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| anyhow!(e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
