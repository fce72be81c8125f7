//! Training-noise robustness sweep: corrupt the training inputs at each
//! level of the grid, train one model with the regression quantizer and one
//! without, and score both on the clean held-out split. Percentage columns
//! are relative to each model's own clean-training row.

use crate::data::noise::inject_noise;
use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::csvout::float_cell;
use crate::experiments::runner::{build_data, build_slot, fit_and_score, SplitData};
use crate::rng::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct NoiseRow {
    pub eta: f64,
    pub mse_svq: f64,
    pub mae_svq: f64,
    /// Percent MSE increase over this model's own η=0 row.
    pub pct_svq: f64,
    pub mse_base: f64,
    pub mae_base: f64,
    pub pct_base: f64,
}

pub const NOISE_COLUMNS: [&str; 7] = [
    "eta", "mse_svq", "mae_svq", "pct_increase_svq", "mse_base", "mae_base", "pct_increase_base",
];

pub fn noise_rows_to_csv(rows: &[NoiseRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                float_cell(r.eta),
                float_cell(r.mse_svq),
                float_cell(r.mae_svq),
                float_cell(r.pct_svq),
                float_cell(r.mse_base),
                float_cell(r.mae_base),
                float_cell(r.pct_base),
            ]
        })
        .collect()
}

fn cell_mse_mae(
    cfg: &ExperimentConfig,
    slot_name: &str,
    noisy: &SplitData,
) -> Result<(f64, f64)> {
    let model_cfg = cfg.model_config()?;
    let seed = cfg.experiment.seed;
    let train_cfg = cfg.train_config(seed)?;
    let slot = build_slot(cfg, slot_name, model_cfg.enc_channels, &mut Rng::derive(seed, 13))?;
    let fit = fit_and_score(&model_cfg, slot, &train_cfg, Rng::derive(seed, 11).next_u64(), noisy)?;
    match fit.metrics {
        Some(m) => Ok((m.mse, m.mae)),
        None => Ok((f64::NAN, f64::NAN)),
    }
}

/// Runs the grid; `etas` must contain 0 (the reference row for the
/// percentage columns) and be free of duplicates.
pub fn run_noise_sweep(cfg: &ExperimentConfig, etas: &[f64]) -> Result<Vec<NoiseRow>> {
    if etas.is_empty() {
        return Err(Error::config("eta grid is empty"));
    }
    if etas.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::config("eta grid entries must be finite and >= 0"));
    }
    if !etas.contains(&0.0) {
        return Err(Error::config("eta grid must include 0 (the clean reference)"));
    }
    for (i, a) in etas.iter().enumerate() {
        if etas[i + 1..].contains(a) {
            return Err(Error::config(format!("duplicate eta {a} in the grid")));
        }
    }
    let data = build_data(cfg)?;

    let cells: Vec<(f64, f64, f64, f64, f64)> = etas
        .par_iter()
        .enumerate()
        .map(|(i, &eta)| -> Result<(f64, f64, f64, f64, f64)> {
            let noisy_train = if eta == 0.0 {
                data.train.clone()
            } else {
                let spec = cfg.noise_spec(eta, Rng::derive(cfg.noise.seed, i as u64).next_u64())?;
                inject_noise(&data.train, &spec)?
            };
            let noisy = SplitData {
                train: noisy_train,
                test: data.test.clone(),
            };
            let (mse_svq, mae_svq) = cell_mse_mae(cfg, "svq", &noisy)?;
            let (mse_base, mae_base) = cell_mse_mae(cfg, "none", &noisy)?;
            Ok((eta, mse_svq, mae_svq, mse_base, mae_base))
        })
        .collect::<Result<Vec<_>>>()?;

    let zero = cells
        .iter()
        .find(|c| c.0 == 0.0)
        .expect("grid contains 0");
    let (mse0_svq, mse0_base) = (zero.1, zero.3);
    Ok(cells
        .into_iter()
        .map(|(eta, mse_svq, mae_svq, mse_base, mae_base)| NoiseRow {
            eta,
            mse_svq,
            mae_svq,
            pct_svq: 100.0 * (mse_svq - mse0_svq) / mse0_svq,
            mse_base,
            mae_base,
            pct_base: 100.0 * (mse_base - mse0_base) / mse0_base,
        })
        .collect())
}
