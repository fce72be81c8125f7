//! Ablation grid over the regression quantizer, written as one long-form
//! CSV with a `study` column:
//!
//! * `loss` — output loss crossed with {quantizer, none} (four rows);
//! * `structure` — codebook size x projection variant x codebook
//!   learnability;
//! * `init` — codebook initializer x learnability, with the weight kurtosis
//!   of the final validation batch;
//! * `frozen` — which half of the module is frozen, with code-matrix
//!   checksums before and after training;
//! * `l1` — explicit sparsity penalty levels.

use crate::error::Result;
use crate::experiments::config::{parse_init, ExperimentConfig};
use crate::experiments::csvout::float_cell;
use crate::experiments::runner::{build_data, codebook_checksum, fit_and_score};
use crate::forecaster::QuantizerSlot;
use crate::rng::Rng;
use crate::svq::{LossKind, SvqConfig, SvqModule, SvqVariant};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct AblateRow {
    pub study: &'static str,
    pub label: String,
    pub loss: &'static str,
    /// Codebook size; 0 for rows without a quantizer.
    pub size: usize,
    pub variant: String,
    pub init: String,
    pub mlp_learnable: Option<bool>,
    pub codebook_learnable: Option<bool>,
    pub status: &'static str,
    pub mse: f64,
    pub mae: f64,
    pub perplexity_theta2: f64,
    pub kurtosis: f64,
    pub checksum_init: Option<u64>,
    pub checksum_final: Option<u64>,
}

pub const ABLATE_COLUMNS: [&str; 15] = [
    "study",
    "label",
    "loss",
    "size",
    "variant",
    "init",
    "mlp_learnable",
    "codebook_learnable",
    "status",
    "mse",
    "mae",
    "perplexity_theta2",
    "kurtosis",
    "m_checksum_init",
    "m_checksum",
];

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

fn opt_hash(v: Option<u64>) -> String {
    v.map(|h| format!("{h:016x}")).unwrap_or_default()
}

pub fn ablate_rows_to_csv(rows: &[AblateRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.study.to_string(),
                r.label.clone(),
                r.loss.to_string(),
                if r.size == 0 { String::new() } else { r.size.to_string() },
                r.variant.clone(),
                r.init.clone(),
                opt_bool(r.mlp_learnable),
                opt_bool(r.codebook_learnable),
                r.status.to_string(),
                float_cell(r.mse),
                float_cell(r.mae),
                float_cell(r.perplexity_theta2),
                float_cell(r.kurtosis),
                opt_hash(r.checksum_init),
                opt_hash(r.checksum_final),
            ]
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Cell {
    study: &'static str,
    label: String,
    loss: LossKind,
    svq: Option<SvqConfig>,
    init_name: String,
}

fn learn_tag(learnable: bool) -> &'static str {
    if learnable {
        "learnable"
    } else {
        "frozen"
    }
}

fn cells(cfg: &ExperimentConfig, dim: usize) -> Result<Vec<Cell>> {
    let base = cfg.svq_config(dim)?;
    let base_init = cfg.svq.init.clone();
    let mut out = Vec::new();

    for loss in [LossKind::Mse, LossKind::Mae] {
        for with_svq in [true, false] {
            out.push(Cell {
                study: "loss",
                label: format!("{}+{}", loss.name(), if with_svq { "svq" } else { "none" }),
                loss,
                svq: with_svq.then(|| base.clone()),
                init_name: base_init.clone(),
            });
        }
    }

    for &size in &cfg.sweep.sizes {
        for variant in [
            SvqVariant::TwoLayer,
            SvqVariant::OneLayer,
            SvqVariant::BucketShape,
            SvqVariant::PostRelu,
        ] {
            for learnable in [false, true] {
                let mut svq = base.clone();
                svq.codebook_size = size;
                svq.variant = variant;
                svq.codebook_learnable = learnable;
                out.push(Cell {
                    study: "structure",
                    label: format!("{}/{}/{}", variant.name(), size, learn_tag(learnable)),
                    loss: LossKind::Mse,
                    svq: Some(svq),
                    init_name: base_init.clone(),
                });
            }
        }
    }

    for init_name in ["kaiming-uniform", "trunc-normal", "orthogonal", "sparse"] {
        for learnable in [false, true] {
            let mut svq = base.clone();
            svq.codebook_init = parse_init(init_name, cfg.svq.init_sparsity)?;
            svq.codebook_learnable = learnable;
            out.push(Cell {
                study: "init",
                label: format!("{}/{}", init_name, learn_tag(learnable)),
                loss: LossKind::Mse,
                svq: Some(svq),
                init_name: init_name.to_string(),
            });
        }
    }

    for (label, mlp, codebook) in [
        ("all-learnable", true, true),
        ("frozen-mlp", false, true),
        ("frozen-codebook", true, false),
    ] {
        let mut svq = base.clone();
        svq.mlp_learnable = mlp;
        svq.codebook_learnable = codebook;
        out.push(Cell {
            study: "frozen",
            label: label.to_string(),
            loss: LossKind::Mse,
            svq: Some(svq),
            init_name: base_init.clone(),
        });
    }

    for &lambda in &cfg.sweep.lambdas {
        let mut svq = base.clone();
        svq.explicit_l1 = (lambda > 0.0).then_some(lambda);
        out.push(Cell {
            study: "l1",
            label: format!("lambda={lambda}"),
            loss: LossKind::Mse,
            svq: Some(svq),
            init_name: base_init.clone(),
        });
    }

    Ok(out)
}

/// Runs every ablation cell and returns the long-form rows in grid order.
pub fn run_ablations(cfg: &ExperimentConfig) -> Result<Vec<AblateRow>> {
    let data = build_data(cfg)?;
    let model_cfg = cfg.model_config()?;
    let seed = cfg.experiment.seed;
    let dim = model_cfg.enc_channels;
    let cells = cells(cfg, dim)?;

    cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| -> Result<AblateRow> {
            let mut train_cfg = cfg.train_config(seed)?;
            train_cfg.loss = cell.loss;
            let (slot, checksum_init) = match &cell.svq {
                None => (QuantizerSlot::None, None),
                Some(svq_cfg) => {
                    let module =
                        SvqModule::new(svq_cfg.clone(), &mut Rng::derive(seed, 0x100 + i as u64))?;
                    let checksum = codebook_checksum(module.codebook());
                    (QuantizerSlot::Svq(module), Some(checksum))
                }
            };
            let fit = fit_and_score(
                &model_cfg,
                slot,
                &train_cfg,
                Rng::derive(seed, 11).next_u64(),
                &data,
            )?;
            let (mse, mae) = fit
                .metrics
                .map(|m| (m.mse, m.mae))
                .unwrap_or((f64::NAN, f64::NAN));
            let (perplexity, kurtosis) = fit
                .report
                .as_ref()
                .and_then(|r| r.rows.last())
                .map(|row| (row.perplexity_theta2, row.kurtosis))
                .unwrap_or((f64::NAN, f64::NAN));
            let checksum_final = fit.model.as_ref().and_then(|m| match m.quantizer() {
                QuantizerSlot::Svq(module) => Some(codebook_checksum(module.codebook())),
                _ => None,
            });
            Ok(AblateRow {
                study: cell.study,
                label: cell.label.clone(),
                loss: if cell.loss == LossKind::Mse { "mse" } else { "mae" },
                size: cell.svq.as_ref().map(|s| s.codebook_size).unwrap_or(0),
                variant: cell
                    .svq
                    .as_ref()
                    .map(|s| s.variant.name().to_string())
                    .unwrap_or_default(),
                init: cell
                    .svq
                    .as_ref()
                    .map(|_| cell.init_name.clone())
                    .unwrap_or_default(),
                mlp_learnable: cell.svq.as_ref().map(|s| s.mlp_learnable),
                codebook_learnable: cell.svq.as_ref().map(|s| s.codebook_learnable),
                status: if fit.diverged { "diverged" } else { "ok" },
                mse,
                mae,
                perplexity_theta2: perplexity,
                kurtosis,
                checksum_init,
                checksum_final,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::parse_config;

    fn tiny() -> ExperimentConfig {
        parse_config(
            "[dataset]\nheight = 8\nwidth = 8\nt_in = 2\ntrain_samples = 12\ntest_samples = 4\n\
             \n[model]\nenc_channels = 8\ntranslator_blocks = 1\ntoken_hidden = 16\nchannel_hidden = 16\n\
             \n[train]\nepochs = 2\nbatch_size = 4\n\
             \n[svq]\ncodebook_size = 8\nhidden_dim = 8\n\
             \n[sweep]\nsizes = [8]\nlambdas = [0.05]\n",
        )
        .unwrap()
    }

    #[test]
    fn loss_study_has_exactly_four_rows() {
        let rows = run_ablations(&tiny()).unwrap();
        let loss_rows: Vec<_> = rows.iter().filter(|r| r.study == "loss").collect();
        assert_eq!(loss_rows.len(), 4);
        let labels: Vec<&str> = loss_rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["mse+svq", "mse+none", "mae+svq", "mae+none"]);
    }

    #[test]
    fn frozen_codebooks_keep_their_checksum_and_learnable_ones_move() {
        let rows = run_ablations(&tiny()).unwrap();
        for r in rows.iter().filter(|r| r.codebook_learnable == Some(false)) {
            assert_eq!(
                r.checksum_init, r.checksum_final,
                "frozen codebook moved in {}/{}",
                r.study, r.label
            );
        }
        let moved = rows
            .iter()
            .filter(|r| r.codebook_learnable == Some(true) && r.status == "ok")
            .filter(|r| r.checksum_init != r.checksum_final)
            .count();
        assert!(moved > 0, "no learnable codebook actually changed");
    }

    #[test]
    fn all_studies_present_and_deterministic() {
        let rows = run_ablations(&tiny()).unwrap();
        for study in ["loss", "structure", "init", "frozen", "l1"] {
            assert!(rows.iter().any(|r| r.study == study), "missing {study}");
        }
        let again = run_ablations(&tiny()).unwrap();
        assert_eq!(ablate_rows_to_csv(&rows), ablate_rows_to_csv(&again));
    }

    #[test]
    fn kurtosis_is_reported_for_quantizer_rows() {
        let rows = run_ablations(&tiny()).unwrap();
        let with_q = rows
            .iter()
            .find(|r| r.study == "init" && r.status == "ok")
            .unwrap();
        assert!(with_q.kurtosis.is_finite(), "kurtosis {}", with_q.kurtosis);
        let without = rows.iter().find(|r| r.label == "mse+none").unwrap();
        assert!(without.kurtosis.is_nan());
    }
}
