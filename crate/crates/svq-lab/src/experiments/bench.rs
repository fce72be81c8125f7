//! Quantizer bake-off: the toy forecaster is trained once per slot kind
//! with identical seeds and data, then scored on the held-out split.
//!
//! The deterministic columns (error, perplexity, per-token cost) and the
//! wall-clock training times are kept in separate tables so the main CSV is
//! byte-identical across runs of the same config.

use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::csvout::float_cell;
use crate::experiments::runner::{
    build_data, build_slot, fit_and_score, lookup_flops, slot_stats, svq_flops, SLOT_NAMES,
};
use crate::quantizers::QuantizerKind;
use crate::rng::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub quantizer: String,
    pub status: &'static str,
    pub mse: f64,
    pub mae: f64,
    pub perplexity: f64,
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `(quantizer, train seconds)`; wall-clock, so not deterministic.
    pub timing: Vec<(String, f64)>,
}

pub const BENCH_COLUMNS: [&str; 6] = ["quantizer", "status", "mse", "mae", "perplexity", "flops"];
pub const TIMING_COLUMNS: [&str; 2] = ["quantizer", "train_seconds"];

impl BenchReport {
    pub fn to_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.quantizer.clone(),
                    r.status.to_string(),
                    float_cell(r.mse),
                    float_cell(r.mae),
                    float_cell(r.perplexity),
                    r.flops.to_string(),
                ]
            })
            .collect()
    }

    pub fn timing_rows(&self) -> Vec<Vec<String>> {
        self.timing
            .iter()
            .map(|(q, s)| vec![q.clone(), float_cell(*s)])
            .collect()
    }
}

fn flops_for(cfg: &ExperimentConfig, name: &str, dim: usize) -> Result<u64> {
    Ok(match name {
        "none" => 0,
        "svq" => svq_flops(&cfg.svq_config(dim)?),
        other => lookup_flops(&cfg.lookup_config(QuantizerKind::parse(other)?), dim as u64),
    })
}

/// Trains every slot kind (or `none` plus the one in `only`) and returns one
/// row per quantizer, baseline first.
pub fn run_quantizer_benchmark(
    cfg: &ExperimentConfig,
    only: Option<&str>,
) -> Result<BenchReport> {
    let names: Vec<&str> = match only {
        None => SLOT_NAMES.to_vec(),
        Some("none") => vec!["none"],
        Some(o) => {
            if !SLOT_NAMES.contains(&o) {
                return Err(Error::config(format!(
                    "unknown quantizer '{o}' (expected one of {})",
                    SLOT_NAMES.join(", ")
                )));
            }
            vec!["none", o]
        }
    };
    let data = build_data(cfg)?;
    let model_cfg = cfg.model_config()?;
    let theta = *cfg
        .sweep
        .thetas
        .first()
        .ok_or_else(|| Error::config("thetas grid is empty"))?;
    let seed = cfg.experiment.seed;
    let train_cfg = cfg.train_config(seed)?;
    let dim = model_cfg.enc_channels;

    let cells: Vec<(BenchRow, (String, f64))> = names
        .par_iter()
        .map(|&name| -> Result<(BenchRow, (String, f64))> {
            // identical seeds per row: structural init and shuffles match
            let slot = build_slot(cfg, name, dim, &mut Rng::derive(seed, 13))?;
            let fit = fit_and_score(&model_cfg, slot, &train_cfg, Rng::derive(seed, 11).next_u64(), &data)?;
            let flops = flops_for(cfg, name, dim)?;
            let row = if fit.diverged {
                BenchRow {
                    quantizer: name.to_string(),
                    status: "diverged",
                    mse: f64::NAN,
                    mae: f64::NAN,
                    perplexity: f64::NAN,
                    flops,
                }
            } else {
                let metrics = fit.metrics.expect("metrics exist when not diverged");
                let mut model = fit.model.expect("model exists when not diverged");
                let (perplexity, _) = slot_stats(&mut model, &data.test, train_cfg.batch_size, theta)?;
                BenchRow {
                    quantizer: name.to_string(),
                    status: "ok",
                    mse: metrics.mse,
                    mae: metrics.mae,
                    perplexity,
                    flops,
                }
            };
            Ok((row, (name.to_string(), fit.train_seconds)))
        })
        .collect::<Result<Vec<_>>>()?;

    let (rows, timing) = cells.into_iter().unzip();
    Ok(BenchReport { rows, timing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::parse_config;
    use crate::solver::{flops_estimate, CostModel};

    fn tiny() -> ExperimentConfig {
        parse_config(
            "[dataset]\nheight = 8\nwidth = 8\nt_in = 2\ntrain_samples = 12\ntest_samples = 4\n\
             \n[model]\nenc_channels = 8\ntranslator_blocks = 1\ntoken_hidden = 16\nchannel_hidden = 16\n\
             \n[train]\nepochs = 2\nbatch_size = 4\n\
             \n[quantizer]\ncodebook_size = 8\n\
             \n[svq]\ncodebook_size = 8\nhidden_dim = 8\n",
        )
        .unwrap()
    }

    #[test]
    fn baseline_row_is_always_present_and_first() {
        let report = run_quantizer_benchmark(&tiny(), Some("svq")).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].quantizer, "none");
        assert_eq!(report.rows[0].flops, 0);
        assert_eq!(report.rows[1].quantizer, "svq");
        assert!(report.rows[1].mse.is_finite());
        assert_eq!(report.timing.len(), 2);
    }

    #[test]
    fn same_config_same_rows() {
        let a = run_quantizer_benchmark(&tiny(), Some("vq")).unwrap();
        let b = run_quantizer_benchmark(&tiny(), Some("vq")).unwrap();
        assert_eq!(a.to_rows(), b.to_rows());
    }

    #[test]
    fn svq_flops_column_matches_the_cost_model() {
        let cfg = tiny();
        let report = run_quantizer_benchmark(&cfg, Some("svq")).unwrap();
        let expected = flops_estimate(CostModel::SvqMlp, 8, 8, 8).unwrap();
        assert_eq!(report.rows[1].flops, expected);
    }

    #[test]
    fn unknown_quantizer_is_rejected() {
        assert!(run_quantizer_benchmark(&tiny(), Some("pq")).is_err());
    }
}
