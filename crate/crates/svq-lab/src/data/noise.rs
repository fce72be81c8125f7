//! Artificial corruption of training inputs.
//!
//! Noise is only ever applied to the input half of a dataset — evaluation
//! targets stay clean so that metric changes reflect robustness, not a moved
//! goalpost. The strength `eta` scales with the data's own standard
//! deviation (additive mode) or acts as a per-pixel replacement probability.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::synth::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// `x <- x + N(0, (eta * data_std)^2)` per pixel.
    AdditiveGaussian,
    /// Each pixel independently replaced by uniform [0,1) noise with
    /// probability `eta`.
    PixelReplace,
}

impl NoiseMode {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "additive-gaussian" => Self::AdditiveGaussian,
            "pixel-replace" => Self::PixelReplace,
            other => {
                return Err(Error::config(format!(
                    "unknown noise mode '{other}' (expected additive-gaussian or pixel-replace)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AdditiveGaussian => "additive-gaussian",
            Self::PixelReplace => "pixel-replace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub eta: f64,
    pub mode: NoiseMode,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(eta: f64, mode: NoiseMode, seed: u64) -> Self {
        Self { eta, mode, seed }
    }
}

/// Returns a copy of the dataset with corrupted inputs and untouched
/// targets. `eta = 0` returns a bit-identical copy.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if !spec.eta.is_finite() || spec.eta < 0.0 {
        return Err(Error::param("noise fraction must be finite and non-negative"));
    }
    if spec.eta == 0.0 {
        return Ok(dataset.clone());
    }
    let mut rng = Rng::new(spec.seed);
    let mut inputs = dataset.inputs.clone();
    match spec.mode {
        NoiseMode::AdditiveGaussian => {
            let data = inputs.data();
            let n = data.len() as f64;
            let mean = data.iter().sum::<f64>() / n;
            let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = spec.eta * var.sqrt();
            for v in inputs.data_mut() {
                *v += rng.gaussian(0.0, std);
            }
        }
        NoiseMode::PixelReplace => {
            for v in inputs.data_mut() {
                if rng.next_f64() < spec.eta {
                    *v = rng.next_f64();
                }
            }
        }
    }
    Dataset::new(inputs, dataset.targets.clone())
}
