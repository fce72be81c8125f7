//! Shared plumbing for the training-based experiments: dataset splits, slot
//! construction by name, one train-and-score cell, and per-token cost
//! figures for the CSV outputs.

use crate::data::metrics::index_perplexity;
use crate::data::synth::{generate, Dataset};
use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::forecaster::{
    batch_from, evaluate, forward_with_stats, train, ForecastModel, MetricsRecord, ModelConfig,
    QuantizerSlot, TrainConfig, TrainReport,
};
use crate::quantizers::{LookupQuantizer, QuantizerConfig, QuantizerKind};
use crate::rng::Rng;
use crate::solver::{flops_estimate, CostModel};
use crate::svq::{svq_perplexity, weight_kurtosis, SvqConfig, SvqModule, SvqVariant};
use std::time::Instant;

/// Train split plus held-out test split of one synthetic dataset.
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn build_data(cfg: &ExperimentConfig) -> Result<SplitData> {
    let spec = cfg.synthetic_spec()?;
    let full = generate(&spec)?;
    let n_train = cfg.dataset.train_samples;
    Ok(SplitData {
        train: full.slice(0, n_train)?,
        test: full.slice(n_train, full.len())?,
    })
}

/// Every slot name the harness understands, baseline first.
pub const SLOT_NAMES: [&str; 11] = [
    "none", "svq", "vq", "rvq", "grvq", "mhvq", "srvq", "fsq", "rfsq", "lfq", "rlfq",
];

pub fn build_slot(
    cfg: &ExperimentConfig,
    name: &str,
    dim: usize,
    rng: &mut Rng,
) -> Result<QuantizerSlot> {
    match name {
        "none" => Ok(QuantizerSlot::None),
        "svq" => Ok(QuantizerSlot::Svq(SvqModule::new(cfg.svq_config(dim)?, rng)?)),
        other => {
            let kind = QuantizerKind::parse(other)?;
            Ok(QuantizerSlot::Lookup(LookupQuantizer::new(
                cfg.lookup_config(kind),
                dim,
                rng,
            )?))
        }
    }
}

/// One trained cell. Divergence is carried in the row, not raised.
pub struct FitOutcome {
    pub diverged: bool,
    pub metrics: Option<MetricsRecord>,
    pub report: Option<TrainReport>,
    pub model: Option<ForecastModel>,
    pub train_seconds: f64,
}

pub fn fit_and_score(
    model_cfg: &ModelConfig,
    slot: QuantizerSlot,
    train_cfg: &TrainConfig,
    model_seed: u64,
    data: &SplitData,
) -> Result<FitOutcome> {
    let mut model = ForecastModel::new(model_cfg.clone(), slot, &mut Rng::derive(model_seed, 0))?;
    let started = Instant::now();
    match train(&mut model, &data.train, train_cfg) {
        Ok(report) => {
            let train_seconds = started.elapsed().as_secs_f64();
            let metrics = evaluate(&mut model, &data.test, train_cfg.batch_size)?;
            Ok(FitOutcome {
                diverged: false,
                metrics: Some(metrics),
                report: Some(report),
                model: Some(model),
                train_seconds,
            })
        }
        Err(Error::Divergence(_)) => Ok(FitOutcome {
            diverged: true,
            metrics: None,
            report: None,
            model: None,
            train_seconds: started.elapsed().as_secs_f64(),
        }),
        Err(e) => Err(e),
    }
}

/// Quantizer observables on the first test batch: activation or index
/// perplexity, and weight kurtosis (NaN where not applicable).
pub fn slot_stats(
    model: &mut ForecastModel,
    test: &Dataset,
    batch: usize,
    theta: f64,
) -> Result<(f64, f64)> {
    let n = test.len().min(batch.max(1));
    let idx: Vec<usize> = (0..n).collect();
    let (x, _) = batch_from(test, &idx)?;
    let stats = forward_with_stats(model, &x)?;
    if let Some(w) = &stats.svq_weights {
        let p = svq_perplexity(w, theta).map(|p| p.value).unwrap_or(f64::NAN);
        let k = weight_kurtosis(w).unwrap_or(f64::NAN);
        Ok((p, k))
    } else if let Some((indices, range)) = &stats.indices {
        Ok((index_perplexity(indices, *range).unwrap_or(f64::NAN), f64::NAN))
    } else {
        Ok((f64::NAN, f64::NAN))
    }
}

/// Order-sensitive FNV-1a over the code matrix bytes; equal checksums mean
/// bit-identical codebooks.
pub fn codebook_checksum(codes: &crate::tensor::Tensor<f64>) -> u64 {
    let mut bytes = Vec::with_capacity(codes.data().len() * 8);
    for v in codes.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::util::fnv1a64(&bytes)
}

/// Per-token cost of the regression quantizer; the standard two-layer shape
/// uses the analytic MLP estimate.
pub fn svq_flops(cfg: &SvqConfig) -> u64 {
    let d = cfg.token_dim as u64;
    let m = cfg.codebook_size as u64;
    let hidden = match cfg.variant {
        // single affine map straight to weights, then the code combination
        SvqVariant::OneLayer => return 2 * (d * m + m * d),
        SvqVariant::BucketShape => m,
        SvqVariant::TwoLayer | SvqVariant::PostRelu => cfg.hidden_dim as u64,
    };
    flops_estimate(CostModel::SvqMlp, d, m, hidden).unwrap_or(0)
}

/// Per-token cost of a lookup quantizer: 3 ops per code dimension scanned
/// (subtract, square, accumulate), summed over all tables a token visits;
/// FSQ/LFQ pay their projections plus a few ops per bounded channel.
pub fn lookup_flops(cfg: &QuantizerConfig, dim: u64) -> u64 {
    let n = cfg.codebook_size as u64;
    let q = cfg.num_quantizers as u64;
    match cfg.kind {
        QuantizerKind::Vq => 3 * dim * n,
        QuantizerKind::ResidualVq | QuantizerKind::StochasticResidualVq => q * 3 * dim * n,
        // g groups of dim/g channels, each with its own residual stack
        QuantizerKind::GroupedResidualVq => q * 3 * dim * n,
        // h heads of dim/h channels against a shared table
        QuantizerKind::MultiHeadVq => 3 * dim * n,
        QuantizerKind::Fsq | QuantizerKind::ResidualFsq => {
            let k = cfg.levels.len() as u64;
            let stages = if cfg.kind == QuantizerKind::ResidualFsq { q } else { 1 };
            4 * dim * k + stages * 5 * k
        }
        QuantizerKind::Lfq | QuantizerKind::ResidualLfq => {
            let k = (n.max(2) as f64).log2().round() as u64;
            let stages = if cfg.kind == QuantizerKind::ResidualLfq { q } else { 1 };
            4 * dim * k + stages * 5 * k
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::parse_config;

    fn tiny_config() -> ExperimentConfig {
        parse_config(
            "[dataset]\nheight = 8\nwidth = 8\nt_in = 2\ntrain_samples = 12\ntest_samples = 4\n\
             \n[model]\nenc_channels = 8\ntranslator_blocks = 1\ntoken_hidden = 16\nchannel_hidden = 16\n\
             \n[train]\nepochs = 2\nbatch_size = 4\n\
             \n[quantizer]\ncodebook_size = 16\n\
             \n[svq]\ncodebook_size = 16\nhidden_dim = 8\n",
        )
        .unwrap()
    }

    #[test]
    fn data_split_sizes_follow_the_config() {
        let cfg = tiny_config();
        let data = build_data(&cfg).unwrap();
        assert_eq!(data.train.len(), 12);
        assert_eq!(data.test.len(), 4);
    }

    #[test]
    fn every_slot_name_builds() {
        let cfg = tiny_config();
        for name in SLOT_NAMES {
            let slot = build_slot(&cfg, name, 8, &mut Rng::new(1)).unwrap();
            match name {
                "none" => assert!(slot.is_none()),
                _ => assert!(!slot.is_none()),
            }
        }
        assert!(build_slot(&cfg, "kmeans", 8, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn fit_and_score_produces_metrics_and_stats() {
        let cfg = tiny_config();
        let data = build_data(&cfg).unwrap();
        let model_cfg = cfg.model_config().unwrap();
        let train_cfg = cfg.train_config(3).unwrap();
        let slot = build_slot(&cfg, "svq", 8, &mut Rng::new(2)).unwrap();
        let fit = fit_and_score(&model_cfg, slot, &train_cfg, 4, &data).unwrap();
        assert!(!fit.diverged);
        let m = fit.metrics.unwrap();
        assert!(m.mse.is_finite());
        let mut model = fit.model.unwrap();
        let (p, k) = slot_stats(&mut model, &data.test, 4, 2.0).unwrap();
        assert!(p >= 1.0, "perplexity {p}");
        assert!(k.is_finite());
    }

    #[test]
    fn lookup_slot_reports_index_perplexity_without_kurtosis() {
        let cfg = tiny_config();
        let data = build_data(&cfg).unwrap();
        let model_cfg = cfg.model_config().unwrap();
        let slot = build_slot(&cfg, "vq", 8, &mut Rng::new(5)).unwrap();
        let mut model = ForecastModel::new(model_cfg, slot, &mut Rng::new(6)).unwrap();
        let (p, k) = slot_stats(&mut model, &data.test, 4, 2.0).unwrap();
        assert!(p >= 1.0);
        assert!(k.is_nan());
    }

    #[test]
    fn flops_figures_match_the_analytic_model() {
        let mut svq = SvqConfig::new(1024, 32);
        svq.hidden_dim = 128;
        assert_eq!(
            svq_flops(&svq),
            flops_estimate(CostModel::SvqMlp, 32, 1024, 128).unwrap()
        );
        svq.variant = SvqVariant::BucketShape;
        assert_eq!(
            svq_flops(&svq),
            flops_estimate(CostModel::SvqMlp, 32, 1024, 1024).unwrap()
        );
        svq.variant = SvqVariant::OneLayer;
        assert_eq!(svq_flops(&svq), 2 * (32 * 1024 + 1024 * 32));

        let vq = QuantizerConfig::with_kind(QuantizerKind::Vq);
        assert_eq!(lookup_flops(&vq, 32), 3 * 32 * 512);
        let mut rvq = QuantizerConfig::with_kind(QuantizerKind::ResidualVq);
        rvq.num_quantizers = 4;
        assert_eq!(lookup_flops(&rvq, 32), 4 * 3 * 32 * 512);
    }
}
