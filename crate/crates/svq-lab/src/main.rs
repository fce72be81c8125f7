//! Experiment harness: deterministic CSV-emitting drivers for the covering
//! study, the quantizer bake-off, noise and codebook-size sweeps, ablation
//! grids, and single-model train / eval / codebook export.
//!
//! Every run is a pure function of the (fully defaulted) config file and the
//! seed: outputs land under the configured directory, each CSV stamped with
//! the FNV-1a hash of the canonical config text. Exit codes: 0 on success,
//! 2 for usage or configuration mistakes, 1 for runtime failures; errors
//! print one machine-readable line `error\tkind=...\tmsg=...` on stderr.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use svq_lab::data::noise::inject_noise;
use svq_lab::error::{Error, Result};
use svq_lab::experiments::ablate::{ablate_rows_to_csv, run_ablations, ABLATE_COLUMNS};
use svq_lab::experiments::bench::{run_quantizer_benchmark, BENCH_COLUMNS, TIMING_COLUMNS};
use svq_lab::experiments::config::{canonical_text, config_hash, load_config, ExperimentConfig};
use svq_lab::experiments::covering::{codes_needed, CoveringMethod, CoveringSpec};
use svq_lab::experiments::csvout::{float_cell, write_csv};
use svq_lab::experiments::noise::{noise_rows_to_csv, run_noise_sweep, NOISE_COLUMNS};
use svq_lab::experiments::runner::{build_data, build_slot, fit_and_score, SplitData};
use svq_lab::experiments::sweep::{run_codebook_sweep, sweep_rows_to_csv, SWEEP_COLUMNS};
use svq_lab::forecaster::{
    evaluate, load_checkpoint, save_checkpoint, ForecastModel, QuantizerSlot,
};
use svq_lab::rng::Rng;
use svq_lab::svq::export_codebook;

/// Full key-by-key reference appended to `--help`: the default config
/// re-serialized, so the listing can never drift from the code.
fn config_keys_help() -> String {
    format!(
        "Config keys (TOML). Every key is optional and defaults to the value shown:\n\n{}",
        canonical_text(&ExperimentConfig::default())
    )
}

#[derive(Parser)]
#[command(
    name = "svq-lab",
    version,
    about = "Vector-quantization laboratory: covering studies, quantizer bake-offs, sweeps and ablations on synthetic spatio-temporal forecasting",
    after_long_help = config_keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; every key is optional (see the key listing at
    /// the end of --help)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory (overrides `experiment.out`)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `experiment.seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sweep cells (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Codes needed to cover the unit ball: clustering vs sparse regression
    Covering(CoveringArgs),
    /// Train the toy forecaster once per quantizer and compare test metrics
    Bench(BenchArgs),
    /// Input-noise robustness sweep, with and without the sparse quantizer
    Noise(NoiseArgs),
    /// Codebook-size sweep for the sparse and grouped-residual quantizers
    Sweep(SweepArgs),
    /// Ablation grids: loss, structure, init, frozen modules, L1 penalty
    Ablate(AblateArgs),
    /// Train one forecaster and save a checkpoint plus its epoch log
    Train(TrainArgs),
    /// Write the sparse quantizer's codebook as CSV
    ExportCodebook(ExportCodebookArgs),
    /// Evaluate a saved checkpoint on the held-out test split
    Eval(EvalArgs),
}

#[derive(Args)]
struct CoveringArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Bench only this quantizer plus the baseline (overrides
    /// `model.quantizer`; `none` benches the full zoo)
    #[arg(long)]
    quantizer: Option<String>,
    /// Activation thresholds for reported perplexities (overrides
    /// `sweep.thetas`)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    thetas: Option<Vec<f64>>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: Common,
    /// Noise-level grid; must include 0 (overrides `sweep.etas`)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    etas: Option<Vec<f64>>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Ascending codebook-size grid (overrides `sweep.sizes`)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sizes: Option<Vec<usize>>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Quantizer slot to train with (overrides `model.quantizer`)
    #[arg(long)]
    quantizer: Option<String>,
}

#[derive(Args)]
struct ExportCodebookArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error\tkind={}\tmsg={}", e.kind(), single_line(&e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Collapses an error message onto one line so the stderr record stays
/// machine-readable (tab-separated, one record per failure).
fn single_line(msg: &str) -> String {
    msg.replace(['\n', '\t'], " ")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Covering(a) => {
            let (cfg, out) = setup(&a.common)?;
            cmd_covering(&cfg, &out)
        }
        Command::Bench(a) => {
            let (mut cfg, out) = setup(&a.common)?;
            if let Some(q) = a.quantizer {
                cfg.model.quantizer = q;
            }
            if let Some(t) = a.thetas {
                cfg.sweep.thetas = t;
            }
            cmd_bench(&cfg, &out)
        }
        Command::Noise(a) => {
            let (mut cfg, out) = setup(&a.common)?;
            if let Some(e) = a.etas {
                cfg.sweep.etas = e;
            }
            cmd_noise(&cfg, &out)
        }
        Command::Sweep(a) => {
            let (mut cfg, out) = setup(&a.common)?;
            if let Some(s) = a.sizes {
                cfg.sweep.sizes = s;
            }
            cmd_sweep(&cfg, &out)
        }
        Command::Ablate(a) => {
            let (cfg, out) = setup(&a.common)?;
            cmd_ablate(&cfg, &out)
        }
        Command::Train(a) => {
            let (mut cfg, out) = setup(&a.common)?;
            if let Some(q) = a.quantizer {
                cfg.model.quantizer = q;
            }
            cmd_train(&cfg, &out)
        }
        Command::ExportCodebook(a) => {
            let (cfg, out) = setup(&a.common)?;
            cmd_export_codebook(&cfg, &out)
        }
        Command::Eval(a) => {
            let (cfg, out) = setup(&a.common)?;
            cmd_eval(&cfg, &out)
        }
    }
}

/// Loads the config, folds the shared flag overrides into it (so the config
/// hash reflects what actually ran), builds the thread pool, and creates the
/// output directory.
fn setup(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.experiment.out = out.to_string_lossy().into_owned();
    }
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(Error::usage("--threads must be >= 1"));
        }
        // Only the first pool build in a process can win; a failure here
        // means a pool already exists, which is fine for reruns in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let out = PathBuf::from(&cfg.experiment.out);
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

const COVERING_COLUMNS: [&str; 5] = ["d", "delta", "method", "m", "error"];
const COVERING_SUMMARY_COLUMNS: [&str; 4] = ["d", "delta", "method", "m_star"];
const TRAIN_COLUMNS: [&str; 6] = [
    "epoch",
    "train_loss",
    "val_loss",
    "perplexity_theta2",
    "perplexity_theta3",
    "kurtosis",
];
const EVAL_COLUMNS: [&str; 2] = ["metric", "value"];

/// Runs both covering methods on every (dimension, target) cell and writes
/// the full error table plus an m-star summary. Both methods of a cell share
/// one derived rng stream, hence identical test points and budgets.
fn cmd_covering(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    use rayon::prelude::*;

    let c = &cfg.covering;
    if c.dims.is_empty() || c.deltas.is_empty() {
        return Err(Error::config("covering.dims and covering.deltas must be non-empty"));
    }
    let mut cells = Vec::new();
    for (i, &d) in c.dims.iter().enumerate() {
        for (j, &delta) in c.deltas.iter().enumerate() {
            let pair = (i * c.deltas.len() + j) as u64;
            for method in [CoveringMethod::Clustering, CoveringMethod::SparseRegression] {
                cells.push((d, delta, pair, method));
            }
        }
    }
    // validate before spawning work so config errors surface immediately
    for &(d, delta, _, method) in &cells {
        covering_spec(cfg, d, delta, method).validate()?;
    }
    let seed = cfg.experiment.seed;
    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|&(d, delta, pair, method)| {
            let spec = covering_spec(cfg, d, delta, method);
            let mut rng = Rng::derive(seed, 0x3000 + pair);
            codes_needed(&spec, &mut rng).map(|o| (d, delta, method, o))
        })
        .collect::<Result<_>>()?;

    let hash = config_hash(cfg);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (d, delta, method, outcome) in &outcomes {
        for &(m, err) in &outcome.table {
            rows.push(vec![
                d.to_string(),
                float_cell(*delta),
                method.name().to_string(),
                m.to_string(),
                float_cell(err),
            ]);
        }
        summary.push(vec![
            d.to_string(),
            float_cell(*delta),
            method.name().to_string(),
            match outcome.m_star {
                Some(m) => m.to_string(),
                None => "not-reached".to_string(),
            },
        ]);
    }
    write_csv(&out.join("covering.csv"), hash, &COVERING_COLUMNS, &rows)?;
    write_csv(
        &out.join("covering_summary.csv"),
        hash,
        &COVERING_SUMMARY_COLUMNS,
        &summary,
    )?;
    println!("wrote {} and covering_summary.csv", out.join("covering.csv").display());
    Ok(())
}

fn covering_spec(
    cfg: &ExperimentConfig,
    dim: usize,
    delta: f64,
    method: CoveringMethod,
) -> CoveringSpec {
    let c = &cfg.covering;
    CoveringSpec {
        dim,
        delta,
        test_points: c.test_points,
        grid: c.grid.clone(),
        lambda: c.lambda,
        eta: c.eta,
        max_iters: c.max_iters,
        method,
    }
}

/// Benches every quantizer slot (or just `model.quantizer` when it is not
/// `none`) against the no-quantizer baseline. Deterministic columns go to
/// bench.csv; wall-clock seconds go to a sidecar so bench.csv is
/// byte-identical across reruns.
fn cmd_bench(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let only = match cfg.model.quantizer.as_str() {
        "none" => None,
        q => Some(q),
    };
    let report = run_quantizer_benchmark(cfg, only)?;
    let hash = config_hash(cfg);
    write_csv(&out.join("bench.csv"), hash, &BENCH_COLUMNS, &report.to_rows())?;
    write_csv(
        &out.join("bench_timing.csv"),
        hash,
        &TIMING_COLUMNS,
        &report.timing_rows(),
    )?;
    println!("wrote {} and bench_timing.csv", out.join("bench.csv").display());
    Ok(())
}

fn cmd_noise(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let rows = run_noise_sweep(cfg, &cfg.sweep.etas)?;
    write_csv(
        &out.join("noise.csv"),
        config_hash(cfg),
        &NOISE_COLUMNS,
        &noise_rows_to_csv(&rows),
    )?;
    println!("wrote {}", out.join("noise.csv").display());
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let rows = run_codebook_sweep(cfg, &cfg.sweep.sizes)?;
    write_csv(
        &out.join("sweep.csv"),
        config_hash(cfg),
        &SWEEP_COLUMNS,
        &sweep_rows_to_csv(&rows),
    )?;
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}

fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let rows = run_ablations(cfg)?;
    write_csv(
        &out.join("ablate.csv"),
        config_hash(cfg),
        &ABLATE_COLUMNS,
        &ablate_rows_to_csv(&rows),
    )?;
    println!("wrote {}", out.join("ablate.csv").display());
    Ok(())
}

/// Seed discipline shared by `train`, `eval` and `export-codebook` so a
/// single trained model reproduces the corresponding bench row: quantizer
/// built from stream 13, model weights from stream 11, training from the
/// master seed itself.
fn build_model(cfg: &ExperimentConfig) -> Result<ForecastModel> {
    let model_cfg = cfg.model_config()?;
    let slot = build_slot(
        cfg,
        &cfg.model.quantizer,
        cfg.model.enc_channels,
        &mut Rng::derive(cfg.experiment.seed, 13),
    )?;
    let model_seed = Rng::derive(cfg.experiment.seed, 11).next_u64();
    ForecastModel::new(model_cfg, slot, &mut Rng::derive(model_seed, 0))
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = build_data(cfg)?;
    let data = if cfg.noise.eta > 0.0 {
        let spec = cfg.noise_spec(cfg.noise.eta, cfg.noise.seed)?;
        SplitData {
            train: inject_noise(&data.train, &spec)?,
            test: data.test,
        }
    } else {
        data
    };
    let model_cfg = cfg.model_config()?;
    let slot = build_slot(
        cfg,
        &cfg.model.quantizer,
        cfg.model.enc_channels,
        &mut Rng::derive(cfg.experiment.seed, 13),
    )?;
    let train_cfg = cfg.train_config(cfg.experiment.seed)?;
    let model_seed = Rng::derive(cfg.experiment.seed, 11).next_u64();
    let fit = fit_and_score(&model_cfg, slot, &train_cfg, model_seed, &data)?;
    if fit.diverged {
        return Err(Error::divergence(
            "training diverged; lower train.lr or shrink the model",
        ));
    }
    let (model, report, metrics) = (
        fit.model.expect("non-diverged fit carries a model"),
        fit.report.expect("non-diverged fit carries a report"),
        fit.metrics.expect("non-diverged fit carries metrics"),
    );
    let hash = config_hash(cfg);
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                float_cell(r.train_loss),
                float_cell(r.val_loss),
                float_cell(r.perplexity_theta2),
                float_cell(r.perplexity_theta3),
                float_cell(r.kurtosis),
            ]
        })
        .collect();
    write_csv(&out.join("train_report.csv"), hash, &TRAIN_COLUMNS, &rows)?;
    let ckpt = out.join("model.svqt");
    save_checkpoint(&model, &ckpt)?;
    println!(
        "trained {} epochs (best epoch {}, val {}), test mse {}; wrote {} and train_report.csv",
        report.rows.len(),
        report.best_epoch,
        float_cell(report.best_val),
        float_cell(metrics.mse),
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ckpt = out.join("model.svqt");
    if !ckpt.exists() {
        return Err(Error::usage(format!(
            "no checkpoint at {}; run `train` first",
            ckpt.display()
        )));
    }
    let mut model = build_model(cfg)?;
    load_checkpoint(&mut model, &ckpt)?;
    let data = build_data(cfg)?;
    let m = evaluate(&mut model, &data.test, cfg.train.batch_size)?;
    let rows = vec![
        vec!["mse".to_string(), float_cell(m.mse)],
        vec!["mae".to_string(), float_cell(m.mae)],
        vec!["ssim".to_string(), float_cell(m.ssim)],
        vec!["psnr".to_string(), float_cell(m.psnr)],
    ];
    write_csv(&out.join("eval.csv"), config_hash(cfg), &EVAL_COLUMNS, &rows)?;
    println!("wrote {}", out.join("eval.csv").display());
    Ok(())
}

/// Writes the sparse quantizer's codebook as CSV — from the checkpoint when
/// one exists in the output directory, otherwise freshly initialized from
/// the config seed.
fn cmd_export_codebook(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if cfg.model.quantizer != "svq" {
        return Err(Error::config(format!(
            "export-codebook needs model.quantizer = \"svq\", got \"{}\"",
            cfg.model.quantizer
        )));
    }
    let mut model = build_model(cfg)?;
    let ckpt = out.join("model.svqt");
    if ckpt.exists() {
        load_checkpoint(&mut model, &ckpt)?;
    }
    let path = out.join("codebook.csv");
    match model.quantizer() {
        QuantizerSlot::Svq(module) => export_codebook(module, &path)?,
        _ => unreachable!("slot was built as svq"),
    }
    println!("wrote {}", path.display());
    Ok(())
}
