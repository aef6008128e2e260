//! Acceptance suite. Every check prints one `PASS`/`FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` doubles as a
//! report. Training checks run at desk scale and take several minutes.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use geen::trainer::{batch_loss_and_grad, MultiRunResult};
use geen::{multi_run, tune, GridSpec, TrainConfig};
use geen_core::data::bootstrap_observations;
use geen_core::density::{context_bandwidths, log_kde_marginal, log_kde_pair, KdeContext};
use geen_core::eval::{deviation_diagnostic, pearson, DiagnosticConfig};
use geen_core::rng::{self, RngSeed};
use geen_core::simgen::{generate, ExperimentSpec, SplitSizes};
use geen_core::stats::{mean, sample_std};
use geen_core::{loss, Activation, Dataset, Experiment, MlpParams};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {id}. {name}: {detail}");
}

// 1. End-to-end gradient against central differences.

fn frozen_total_loss(params: &MlpParams, data: &Dataset, idx: &[usize], bw: &geen_core::BandwidthSpec, lambda: f64) -> f64 {
    let lat_all = params.forward(data.features()).unwrap();
    let pts: Vec<f64> = idx.iter().flat_map(|&i| data.row(i).to_vec()).collect();
    let lat: Vec<f64> = idx.iter().map(|&i| lat_all[i]).collect();
    let ctx = KdeContext::new(&pts, data.k(), &lat, bw.clone()).unwrap();
    loss::total_loss(&ctx, lambda).total
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let seed = RngSeed(1000 + inst);
        let (data, _, _) = generate(
            &ExperimentSpec::new(Experiment::ALL[inst as usize % 4]),
            SplitSizes::new(40, 1, 1).unwrap(),
            seed,
        )
        .unwrap();
        let mut r = seed.stream(99);
        let w = rng::uniform(&mut r, 0.5, 2.0);
        let lambda = rng::uniform(&mut r, 0.1, 0.5);
        let mut params = MlpParams::random(&[4, 6, 1], Activation::Tanh, seed.derive(3)).unwrap();
        let k = data.k();
        let means: Vec<f64> = (0..k).map(|j| mean(&data.column(j))).collect();
        let stds: Vec<f64> = (0..k).map(|j| sample_std(&data.column(j))).collect();
        params.set_input_scaling(&means, &stds).unwrap();
        let obs = bootstrap_observations(data.n_pts(), 16, 1, seed.derive(4)).unwrap();
        let batch = &obs.batches()[0];
        let cfg = TrainConfig { m: 16, w, lambda, hidden: 6, depth: 2, ..TrainConfig::default() };

        let (_, grads) = batch_loss_and_grad(&params, &data, obs.batches(), &cfg).unwrap();

        let lat_all = params.forward(data.features()).unwrap();
        let pts: Vec<f64> = batch.indices().iter().flat_map(|&i| data.row(i).to_vec()).collect();
        let lat: Vec<f64> = batch.indices().iter().map(|&i| lat_all[i]).collect();
        let bw = context_bandwidths(&pts, k, &lat, w).unwrap();

        let step = 1e-6;
        for p in 0..params.param_count() {
            let mut q = params.clone();
            let v = q.get_flat(p);
            q.set_flat(p, v + step);
            let up = frozen_total_loss(&q, &data, batch.indices(), &bw, lambda);
            q.set_flat(p, v - step);
            let down = frozen_total_loss(&q, &data, batch.indices(), &bw, lambda);
            let fd = (up - down) / (2.0 * step);
            let an = grads.get_flat(p);
            let denom = an.abs().max(fd.abs());
            let rel = if denom < 1e-7 { (an - fd).abs() / 1e-7 } else { (an - fd).abs() / denom };
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 60.0;
    verdict(1, "gradient check", pass, &format!("max relative error {worst:.2e} over 50 instances in {secs:.1}s"));
    assert!(pass);
}

// 2. KL and density identities.

#[test]
fn kl_and_density_identities() {
    let mut max_k1: f64 = 0.0;
    for c in 0..100u64 {
        let mut r = RngSeed(c).stream(0);
        let m = 5 + (c as usize % 30);
        let pts: Vec<f64> = (0..m).map(|_| rng::normal(&mut r, 0.0, 2.0)).collect();
        let lat: Vec<f64> = (0..m).map(|_| rng::normal(&mut r, 1.0, 1.0)).collect();
        let ctx = KdeContext::with_silverman(&pts, 1, &lat, 1.0).unwrap();
        max_k1 = max_k1.max(loss::kl_hat(&ctx).abs());
    }

    let mut max_fact: f64 = 0.0;
    for c in 0..20u64 {
        let (d, _, _) = generate(&ExperimentSpec::new(Experiment::Baseline), SplitSizes::new(30, 1, 1).unwrap(), RngSeed(c))
            .unwrap();
        let lat = d.truth().unwrap();
        let ctx = KdeContext::with_silverman(d.features(), 4, lat, 1.3).unwrap();
        let bw = ctx.bandwidths().clone();
        for i in 0..d.n_pts() {
            let s = lat[i] + 0.1;
            let mut independent = -3.0 * log_kde_marginal(lat, bw.h_star, s);
            for j in 0..4 {
                independent += log_kde_pair(&d.column(j), lat, bw.h[j], bw.h_star, d.row(i)[j], s);
            }
            max_fact = max_fact.max((ctx.log_factorized(d.row(i), s) - independent).abs());
        }
    }

    let centers = [-1.0, 0.0, 0.3, 2.5];
    let mut worst_int: f64 = 0.0;
    for h in [0.2, 0.5, 1.0] {
        let (lo, hi, n) = (-15.0, 15.0, 60_000);
        let dx = (hi - lo) / n as f64;
        let f = |x: f64| log_kde_marginal(&centers, h, x).exp();
        let mut total = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            total += f(lo + i as f64 * dx);
        }
        worst_int = worst_int.max((total * dx - 1.0).abs());
    }

    let pass = max_k1 <= 1e-12 && max_fact <= 1e-10 && worst_int <= 1e-3;
    verdict(
        2,
        "KL identities",
        pass,
        &format!("|kl| at k=1 {max_k1:.1e}, factorization gap {max_fact:.1e}, integral error {worst_int:.1e}"),
    );
    assert!(pass);
}

// 3. Loss rises under independent latent noise.

#[test]
fn loss_increases_with_uncorrelated_deviation() {
    let start = Instant::now();
    let (_, _, test) =
        generate(&ExperimentSpec::new(Experiment::Baseline), SplitSizes::new(1, 1, 2000).unwrap(), RngSeed(31)).unwrap();
    let truth = test.truth().unwrap().to_vec();
    let cfg = DiagnosticConfig { m: 200, n_obs: 1, w: 1.0, lambda: 0.3 };
    let mut increasing = 0;
    for o in 0..20u64 {
        let pts = deviation_diagnostic(&test, &truth, &[0.0, 0.5, 1.0], &cfg, RngSeed(500 + o)).unwrap();
        if pts[0].mean_loss < pts[1].mean_loss && pts[1].mean_loss < pts[2].mean_loss {
            increasing += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = increasing >= 18 && secs < 120.0;
    verdict(3, "deviation diagnostic", pass, &format!("{increasing}/20 observations strictly increasing in {secs:.1}s"));
    assert!(pass);
}

// 4 to 6. Desk-scale training: tune one cell by validation loss, then
// train three seeds with it.

fn desk_config() -> TrainConfig {
    TrainConfig {
        m: 200,
        n_obs_train: 2000,
        n_obs_val: 200,
        batch_obs: 32,
        max_epochs: 8,
        patience: 3,
        seed: RngSeed(11),
        ..TrainConfig::default()
    }
}

fn desk_run(experiment: Experiment) -> (MultiRunResult, TrainConfig, f64) {
    let start = Instant::now();
    let spec = ExperimentSpec::new(experiment);
    let sizes = SplitSizes::new(2000, 500, 500).unwrap();
    let base = desk_config();
    let (train_d, val_d, _) = generate(&spec, sizes, base.seed).unwrap();
    // Screening budget for the grid; the chosen cell is then trained fully.
    let screen = TrainConfig { n_obs_train: 1000, max_epochs: 4, ..base.clone() };
    let grid = GridSpec { w_values: base.grid_w.clone(), lambda_values: base.grid_lambda.clone() };
    let (tuned, _) = tune(&train_d, &val_d, &grid, &screen).unwrap();
    let cfg = TrainConfig { w: tuned.w, lambda: tuned.lambda, ..base };
    let result = multi_run(&spec, sizes, &cfg, 3).unwrap();
    (result, cfg, start.elapsed().as_secs_f64())
}

fn describe(result: &MultiRunResult, cfg: &TrainConfig, secs: f64) -> String {
    let corrs: Vec<String> = result.runs.iter().map(|r| format!("{:.4}", r.report.as_ref().unwrap().corr_latent)).collect();
    format!(
        "corr per seed [{}], corr_x1 {:.4}, cell w={} lambda={}, {:.0}s",
        corrs.join(", "),
        result.summary.corr_x1,
        cfg.w,
        cfg.lambda,
        secs
    )
}

#[test]
fn baseline_desk_scale() {
    let (result, cfg, secs) = desk_run(Experiment::Baseline);
    let best = result.summary.max;
    let pass = best >= 0.93 && best > result.summary.corr_x1 && result.summary.n_failed == 0;
    verdict(4, "baseline desk scale", pass, &describe(&result, &cfg, secs));
    assert!(pass);
}

#[test]
fn double_error_desk_scale() {
    let (result, cfg, secs) = desk_run(Experiment::DoubleError);
    let best = result.summary.max;
    let pass = best >= 0.80 && best > result.summary.corr_x1 && result.summary.n_failed == 0;
    verdict(5, "double_error desk scale", pass, &describe(&result, &cfg, secs));
    assert!(pass);
}

#[test]
fn no_normalization_desk_scale() {
    let (result, cfg, secs) = desk_run(Experiment::NoNormalization);
    let best = result.runs.iter().map(|r| r.report.as_ref().unwrap().corr_latent.abs()).fold(0.0, f64::max);
    let pass = best >= 0.80;
    verdict(6, "no_normalization desk scale (|corr|)", pass, &describe(&result, &cfg, secs));
    assert!(pass);
}

// 7. Simulation fidelity.

#[test]
fn simulation_fidelity() {
    let sizes = SplitSizes::new(8000, 1, 1).unwrap();
    let corr_x1 = |e: Experiment| {
        let (d, _, _) = generate(&ExperimentSpec::new(e), sizes, RngSeed(2024)).unwrap();
        pearson(&d.column(0), d.truth().unwrap()).unwrap()
    };
    let base = corr_x1(Experiment::Baseline);
    let double = corr_x1(Experiment::DoubleError);

    let draws = |e: Experiment, j: usize, x: f64, n: usize| -> Vec<f64> {
        let spec = ExperimentSpec::new(e);
        let mut r = RngSeed(77).stream(j as u64);
        (0..n).map(|_| spec.error_draw(j, x, &mut r)).collect()
    };
    let beta22 = mean(&draws(Experiment::Baseline, 1, 0.7, 1_000_000));
    let beta24 = mean(&draws(Experiment::DoubleError, 1, 0.7, 1_000_000));
    let hetero = sample_std(&draws(Experiment::LinearError, 0, 2.0, 1_000_000));
    let ratios: Vec<f64> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&x| sample_std(&draws(Experiment::LinearError, 0, x, 200_000)) / (0.5 * x))
        .collect();
    let spec = ExperimentSpec::new(Experiment::Baseline);
    let mut r1 = RngSeed(5).stream(1);
    let mut r2 = RngSeed(5).stream(2);
    let a: Vec<f64> = (0..100_000).map(|_| spec.error_draw(0, 1.0, &mut r1)).collect();
    let b: Vec<f64> = (0..100_000).map(|_| spec.error_draw(2, 1.0, &mut r2)).collect();
    let cross = pearson(&a, &b).unwrap();

    let pass = (base - 0.89).abs() <= 0.02
        && (double - 0.70).abs() <= 0.03
        && beta22.abs() <= 0.002
        && beta24.abs() <= 0.002
        && (hetero - 1.0).abs() <= 0.01
        && ratios.iter().all(|r| (r - 1.0).abs() <= 0.02)
        && cross.abs() < 0.01;
    verdict(
        7,
        "simulation fidelity",
        pass,
        &format!(
            "corr_x1 baseline {base:.4}, double_error {double:.4}; error means {beta22:.4}/{beta24:.4}; \
             heteroskedastic std {hetero:.4}; cross corr {cross:.4}"
        ),
    );
    assert!(pass);
}

// 8. CLI determinism.

fn geen(args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_geen"))
        .args(args)
        .env("GEEN_THREADS", threads)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "geen {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn run_pipeline(dir: &Path, threads: &str) {
    let d = |p: &str| dir.join(p).to_str().unwrap().to_string();
    std::fs::write(
        dir.join("cfg.toml"),
        "m = 40\nn_obs_train = 32\nn_obs_val = 8\nbatch_obs = 8\nmax_epochs = 2\nhidden = 5\ndepth = 3\n",
    )
    .unwrap();
    geen(&["simulate", "--experiment", "double_error", "--seed", "4", "--sizes", "200,80,80", "--out", &d("data")], threads);
    geen(&["train", "--data", &d("data"), "--config", &d("cfg.toml"), "--seed", "6", "--out", &d("run")], threads);
    geen(&["evaluate", "--model", &d("run/model.json"), "--data", &d("data/test.csv"), "--out", &d("eval")], threads);
    geen(&["diagnose", "--data", &d("data/test.csv"), "--m", "40", "--n-obs", "4", "--out", &d("diag.csv")], threads);
    geen(&["multi-run", "--experiment", "baseline", "--runs", "2", "--sizes", "150,60,60", "--config", &d("cfg.toml"), "--out", &d("multi")], threads);
    geen(&["report", &d("multi"), "--out", &d("table.csv")], threads);
}

const DETERMINISTIC_OUTPUTS: [&str; 13] = [
    "data/train.csv",
    "data/val.csv",
    "data/test.csv",
    "run/model.json",
    "run/history.csv",
    "run/config.toml",
    "eval/eval.json",
    "eval/eval.csv",
    "eval/scatter.csv",
    "diag.csv",
    "multi/runs.json",
    "table.csv",
    "cfg.toml",
];

#[test]
fn cli_outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path(), "1");
    run_pipeline(b.path(), "2");
    let differing: Vec<&str> = DETERMINISTIC_OUTPUTS
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .collect();
    let pass = differing.is_empty();
    verdict(
        8,
        "CLI determinism",
        pass,
        &format!("{} artifacts compared across 1 and 2 threads, differing: {differing:?}", DETERMINISTIC_OUTPUTS.len()),
    );
    assert!(pass);
}

// Full-scale results table. Hours of CPU time; run with `--ignored`.

#[test]
#[ignore]
fn full_scale_table() {
    let sizes = SplitSizes::full_scale();
    let base = TrainConfig { seed: RngSeed(2024), ..TrainConfig::default() };
    let spec = ExperimentSpec::new(Experiment::Baseline);
    let (train_d, val_d, _) = generate(&spec, sizes, base.seed).unwrap();
    let (tuned, _) = tune(&train_d, &val_d, &base.grid(), &TrainConfig { max_epochs: 5, ..base.clone() }).unwrap();
    let result = multi_run(&spec, sizes, &tuned, 25).unwrap();
    let s = &result.summary;
    let pass = (s.min - 0.97).abs() <= 0.02 && (s.median - 0.98).abs() <= 0.02 && (s.max - 0.98).abs() <= 0.02;
    verdict(
        0,
        "full-scale baseline",
        pass,
        &format!("min {:.4} median {:.4} max {:.4} corr_x1 {:.4}", s.min, s.median, s.max, s.corr_x1),
    );
    assert!(pass);
}
