//! Codebook-size sweep: the regression quantizer against grouped residual
//! VQ at each size of the grid, long-form CSV (one row per model per size).

use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::csvout::float_cell;
use crate::experiments::runner::{build_data, build_slot, fit_and_score};
use crate::rng::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub quantizer: &'static str,
    pub size: usize,
    pub status: &'static str,
    pub mse: f64,
}

pub const SWEEP_COLUMNS: [&str; 4] = ["quantizer", "size", "status", "mse"];

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.quantizer.to_string(),
                r.size.to_string(),
                r.status.to_string(),
                float_cell(r.mse),
            ]
        })
        .collect()
}

/// Trains both quantizers at every size; `sizes` must be ascending.
pub fn run_codebook_sweep(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(Error::config("size grid is empty"));
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("size grid must be ascending and positive"));
    }
    let data = build_data(cfg)?;
    let model_cfg = cfg.model_config()?;
    let seed = cfg.experiment.seed;
    let train_cfg = cfg.train_config(seed)?;
    let dim = model_cfg.enc_channels;

    let cells: Vec<[SweepRow; 2]> = sizes
        .par_iter()
        .enumerate()
        .map(|(i, &size)| -> Result<[SweepRow; 2]> {
            let mut sized = cfg.clone();
            sized.svq.codebook_size = size;
            sized.quantizer.codebook_size = size;
            let cell = i as u64;
            let mut out = Vec::with_capacity(2);
            for name in ["svq", "grvq"] {
                let slot = build_slot(&sized, name, dim, &mut Rng::derive(seed, 0x20 + cell))?;
                let fit = fit_and_score(
                    &model_cfg,
                    slot,
                    &train_cfg,
                    Rng::derive(seed, 11).next_u64(),
                    &data,
                )?;
                out.push(SweepRow {
                    quantizer: if name == "svq" { "svq" } else { "grvq" },
                    size,
                    status: if fit.diverged { "diverged" } else { "ok" },
                    mse: fit.metrics.map(|m| m.mse).unwrap_or(f64::NAN),
                });
            }
            Ok([out.remove(0), out.remove(0)])
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(cells.into_iter().flatten().collect())
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
             \n[svq]\nhidden_dim = 8\n",
        )
        .unwrap()
    }

    #[test]
    fn single_size_gives_two_rows() {
        let rows = run_codebook_sweep(&tiny(), &[8]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].quantizer, "svq");
        assert_eq!(rows[1].quantizer, "grvq");
        assert_eq!(rows[0].size, 8);
        assert!(rows[0].mse.is_finite());
        assert!(rows[1].mse.is_finite());
    }

    #[test]
    fn grid_must_ascend() {
        assert!(run_codebook_sweep(&tiny(), &[8, 8]).is_err());
        assert!(run_codebook_sweep(&tiny(), &[16, 8]).is_err());
        assert!(run_codebook_sweep(&tiny(), &[]).is_err());
        assert!(run_codebook_sweep(&tiny(), &[0, 8]).is_err());
    }

    #[test]
    fn deterministic_per_config() {
        let a = run_codebook_sweep(&tiny(), &[4, 8]).unwrap();
        let b = run_codebook_sweep(&tiny(), &[4, 8]).unwrap();
        assert_eq!(sweep_rows_to_csv(&a), sweep_rows_to_csv(&b));
    }
}
