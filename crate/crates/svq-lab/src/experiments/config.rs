//! Experiment configuration: one TOML file where every key has a default.
//!
//! The parsed config re-serializes to a canonical text (fixed key order,
//! defaults filled in) whose FNV-1a hash stamps every CSV the harness
//! writes, so an output file can always be traced back to the exact
//! settings that produced it.

use crate::data::synth::{SyntheticKind, SyntheticSpec};
use crate::data::noise::{NoiseMode, NoiseSpec};
use crate::error::{Error, Result};
use crate::forecaster::{ModelConfig, Placement, TrainConfig};
use crate::init::InitSpec;
use crate::quantizers::{QuantizerConfig, QuantizerKind};
use crate::svq::{LossKind, SvqConfig, SvqVariant};
use crate::util::fnv1a64;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSection,
    pub noise: NoiseSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub quantizer: QuantizerSection,
    pub svq: SvqSection,
    pub sweep: SweepSection,
    pub covering: CoveringSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Output directory; `--out` overrides.
    pub out: String,
    /// Master seed; every cell derives its own stream from it.
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            out: "runs".into(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// `advection-diffusion` or `moving-blobs`.
    pub kind: String,
    pub height: usize,
    pub width: usize,
    pub t_in: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub velocity_scale: f64,
    pub diffusion: f64,
    pub blob_count: usize,
    pub blob_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: "advection-diffusion".into(),
            height: 16,
            width: 16,
            t_in: 4,
            train_samples: 64,
            test_samples: 16,
            velocity_scale: 1.5,
            diffusion: 0.05,
            blob_count: 3,
            blob_sigma: 2.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Corruption level for `train`/`eval` runs; the noise sweep uses the
    /// `sweep.etas` grid instead.
    pub eta: f64,
    /// `additive-gaussian` or `pixel-replace`.
    pub mode: String,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            eta: 0.0,
            mode: "additive-gaussian".into(),
            seed: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub enc_channels: usize,
    pub translator_blocks: usize,
    pub token_hidden: usize,
    pub channel_hidden: usize,
    /// `pre` or `post` (relative to the translator).
    pub placement: String,
    /// Slot for `train`/`eval`/`export-codebook`: `none`, `svq`, or a lookup
    /// kind (vq, rvq, grvq, mhvq, srvq, fsq, rfsq, lfq, rlfq).
    pub quantizer: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            enc_channels: 32,
            translator_blocks: 2,
            token_hidden: 64,
            channel_hidden: 64,
            placement: "pre".into(),
            quantizer: "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// `mse` or `mae`.
    pub loss: String,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            loss: "mse".into(),
            epochs: 30,
            lr: 5e-3,
            batch_size: 8,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerSection {
    pub codebook_size: usize,
    pub num_quantizers: usize,
    pub groups: usize,
    pub heads: usize,
    pub shared_codebook: bool,
    pub levels: Vec<u32>,
    pub entropy_weight: f64,
    pub commitment: f64,
    pub temperature: f64,
    pub decay: f64,
    pub laplace_eps: f64,
    pub reseed_dead_codes: bool,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        let q = QuantizerConfig::default();
        Self {
            codebook_size: 1024,
            num_quantizers: 2,
            groups: 2,
            heads: 2,
            shared_codebook: q.shared_codebook,
            levels: q.levels,
            entropy_weight: q.entropy_weight,
            commitment: q.commitment,
            temperature: q.temperature,
            decay: q.decay,
            laplace_eps: q.laplace_eps,
            reseed_dead_codes: q.reseed_dead_codes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvqSection {
    pub codebook_size: usize,
    pub hidden_dim: usize,
    /// `two-layer`, `one-layer`, `bucket-shape` or `post-relu`.
    pub variant: String,
    /// Codebook draw: `kaiming-uniform`, `trunc-normal`, `orthogonal` or
    /// `sparse`.
    pub init: String,
    /// Zero fraction per column when `init = "sparse"`.
    pub init_sparsity: f64,
    pub codebook_learnable: bool,
    pub mlp_learnable: bool,
    /// Explicit L1 weight penalty; 0 disables it.
    pub explicit_l1: f64,
}

impl Default for SvqSection {
    fn default() -> Self {
        Self {
            codebook_size: 1024,
            hidden_dim: 128,
            variant: "two-layer".into(),
            init: "kaiming-uniform".into(),
            init_sparsity: 0.5,
            codebook_learnable: false,
            mlp_learnable: true,
            explicit_l1: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Codebook sizes for `sweep` and the structure ablation.
    pub sizes: Vec<usize>,
    /// Noise grid for `noise`; must contain 0.
    pub etas: Vec<f64>,
    /// Sparsity penalties tried by the L1 ablation rows.
    pub lambdas: Vec<f64>,
    /// Activation thresholds for reported perplexities.
    pub thetas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sizes: vec![64, 256, 1024],
            etas: vec![0.0, 0.05, 0.1],
            lambdas: vec![0.05],
            thetas: vec![2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoveringSection {
    pub dims: Vec<usize>,
    pub deltas: Vec<f64>,
    pub test_points: usize,
    /// Ascending codebook-size grid.
    pub grid: Vec<usize>,
    pub lambda: f64,
    /// Solver step; 0 selects the stable default per problem.
    pub eta: f64,
    pub max_iters: usize,
}

impl Default for CoveringSection {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            deltas: vec![0.5, 0.3],
            test_points: 256,
            grid: vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512],
            lambda: 0.05,
            eta: 0.0,
            max_iters: 500,
        }
    }
}

/// Reads and parses the TOML config; unknown keys are rejected with a
/// message listing the valid ones.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::usage(format!("cannot read config '{}': {e}", path.display()))
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))
}

/// Canonical text: the config re-serialized with every default filled in
/// and keys in declaration order.
pub fn canonical_text(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

/// 64-bit FNV-1a of the canonical text; stamped into every output CSV.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    fnv1a64(canonical_text(cfg).as_bytes())
}

impl ExperimentConfig {
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let d = &self.dataset;
        if d.train_samples == 0 || d.test_samples == 0 {
            return Err(Error::config("train_samples and test_samples must be >= 1"));
        }
        let mut spec = SyntheticSpec::new(SyntheticKind::parse(&d.kind)?);
        spec.height = d.height;
        spec.width = d.width;
        spec.t_in = d.t_in;
        spec.samples = d.train_samples + d.test_samples;
        spec.velocity_scale = d.velocity_scale;
        spec.diffusion = d.diffusion;
        spec.blob_count = d.blob_count;
        spec.blob_sigma = d.blob_sigma;
        spec.seed = d.seed;
        spec.validate()?;
        Ok(spec)
    }

    pub fn noise_spec(&self, eta: f64, seed: u64) -> Result<NoiseSpec> {
        Ok(NoiseSpec {
            eta,
            mode: NoiseMode::parse(&self.noise.mode)?,
            seed,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            height: self.dataset.height,
            width: self.dataset.width,
            t_in: self.dataset.t_in,
            channels: 1,
            enc_channels: self.model.enc_channels,
            translator_blocks: self.model.translator_blocks,
            token_hidden: self.model.token_hidden,
            channel_hidden: self.model.channel_hidden,
            placement: Placement::parse(&self.model.placement)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            loss: LossKind::parse(&self.train.loss)?,
            epochs: self.train.epochs,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            patience: self.train.patience,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Lookup-quantizer recipe with the given kind and the configured knobs.
    pub fn lookup_config(&self, kind: QuantizerKind) -> QuantizerConfig {
        let q = &self.quantizer;
        QuantizerConfig {
            kind,
            codebook_size: q.codebook_size,
            num_quantizers: q.num_quantizers,
            groups: q.groups,
            heads: q.heads,
            shared_codebook: q.shared_codebook,
            levels: q.levels.clone(),
            entropy_weight: q.entropy_weight,
            commitment: q.commitment,
            temperature: q.temperature,
            decay: q.decay,
            laplace_eps: q.laplace_eps,
            reseed_dead_codes: q.reseed_dead_codes,
        }
    }

    /// Regression-quantizer recipe at the configured codebook size.
    pub fn svq_config(&self, token_dim: usize) -> Result<SvqConfig> {
        let s = &self.svq;
        let mut cfg = SvqConfig::new(s.codebook_size, token_dim);
        cfg.hidden_dim = s.hidden_dim;
        cfg.variant = SvqVariant::parse(&s.variant)?;
        cfg.codebook_init = parse_init(&s.init, s.init_sparsity)?;
        cfg.codebook_learnable = s.codebook_learnable;
        cfg.mlp_learnable = s.mlp_learnable;
        cfg.explicit_l1 = if s.explicit_l1 > 0.0 {
            Some(s.explicit_l1)
        } else {
            None
        };
        Ok(cfg)
    }
}

pub fn parse_init(name: &str, sparsity: f64) -> Result<InitSpec> {
    Ok(match name {
        "kaiming-uniform" => InitSpec::kaiming_uniform(),
        "trunc-normal" => InitSpec::trunc_normal(),
        "orthogonal" => InitSpec::orthogonal(),
        "sparse" => InitSpec::sparse(sparsity),
        other => {
            return Err(Error::config(format!(
                "unknown init '{other}' (expected kaiming-uniform, trunc-normal, orthogonal or sparse)"
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.dataset.height, 16);
        assert_eq!(cfg.sweep.thetas, vec![2.0, 3.0]);
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = parse_config("[train]\nepochs = 3\n\n[dataset]\nkind = \"moving-blobs\"\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.dataset.kind, "moving-blobs");
    }

    #[test]
    fn unknown_keys_are_rejected_and_valid_keys_listed() {
        let err = parse_config("[train]\nepochz = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochz"), "{msg}");
        assert!(msg.contains("epochs"), "listing valid keys: {msg}");
        let err = parse_config("[nonsense]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = parse_config("").unwrap();
        let b = parse_config("[experiment]\nseed = 1\n").unwrap(); // the default
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = parse_config("[experiment]\nseed = 2\n").unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn canonical_round_trip_is_fixed_point() {
        let cfg = parse_config("[train]\nlr = 0.001\n").unwrap();
        let text = canonical_text(&cfg);
        let again = parse_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(canonical_text(&again), text);
    }

    #[test]
    fn domain_conversions_validate() {
        let cfg = parse_config("").unwrap();
        assert!(cfg.synthetic_spec().is_ok());
        assert!(cfg.model_config().is_ok());
        assert!(cfg.train_config(1).is_ok());
        assert!(cfg.svq_config(32).is_ok());

        let bad = parse_config("[dataset]\nkind = \"weather\"\n").unwrap();
        assert!(bad.synthetic_spec().is_err());
        let bad = parse_config("[model]\nplacement = \"middle\"\n").unwrap();
        assert!(bad.model_config().is_err());
        let bad = parse_config("[dataset]\ndiffusion = 0.4\n").unwrap();
        assert!(bad.synthetic_spec().is_err());
    }

    #[test]
    fn explicit_l1_zero_disables_the_penalty() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.svq_config(8).unwrap().explicit_l1, None);
        let cfg = parse_config("[svq]\nexplicit_l1 = 0.2\n").unwrap();
        assert_eq!(cfg.svq_config(8).unwrap().explicit_l1, Some(0.2));
    }
}
