//! Learnable code table with exponential-moving-average updates.

use crate::error::{Error, Result};
use crate::init::{init_matrix, InitSpec};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

/// Number of consecutive updates a code may go unassigned before it is
/// reseeded from a batch vector (when reseeding is enabled).
pub const DEAD_CODE_PATIENCE: u32 = 200;

/// `N x d` code table plus the running statistics that train it.
///
/// After every EMA update the codes are recomputed as
/// `ema_embed_sum / laplace_smoothed(ema_cluster_size)`, so the table always
/// equals the ratio of its own statistics.
#[derive(Debug, Clone)]
pub struct Codebook {
    codes: Tensor,
    code_sq_norms: Vec<f64>,
    ema_cluster_size: Vec<f64>,
    ema_embed_sum: Tensor,
    decay: f64,
    laplace_eps: f64,
    usage_counts: Vec<u64>,
    idle_updates: Vec<u32>,
    reseed_dead: bool,
}

impl Codebook {
    /// Freshly initialized table of `n` codes of dimension `d`.
    pub fn new(
        n: usize,
        d: usize,
        decay: f64,
        laplace_eps: f64,
        init: &InitSpec,
        rng: &mut Rng,
    ) -> Result<Self> {
        let codes = init_matrix(n, d, init, rng)?;
        Self::from_codes(codes, decay, laplace_eps)
    }

    /// Wraps an existing `[N, d]` table; statistics start as if every code
    /// had been seen exactly once (so codes = embed_sum / cluster_size holds
    /// at construction).
    pub fn from_codes(codes: Tensor, decay: f64, laplace_eps: f64) -> Result<Self> {
        let (n, _) = codes.dims2()?;
        if n == 0 {
            return Err(Error::usage("codebook must contain at least one code"));
        }
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::param(format!("decay must be in [0,1), got {decay}")));
        }
        if laplace_eps <= 0.0 {
            return Err(Error::param("laplace smoothing must be positive"));
        }
        if !codes.all_finite() {
            return Err(Error::numeric("codebook entries must be finite"));
        }
        let mut cb = Self {
            code_sq_norms: vec![0.0; n],
            ema_cluster_size: vec![1.0; n],
            ema_embed_sum: codes.clone(),
            codes,
            decay,
            laplace_eps,
            usage_counts: vec![0; n],
            idle_updates: vec![0; n],
            reseed_dead: true,
        };
        cb.refresh_sq_norms();
        Ok(cb)
    }

    /// Enables or disables dead-code reseeding.
    pub fn set_reseed_dead(&mut self, on: bool) {
        self.reseed_dead = on;
    }

    pub fn len(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn usage_counts(&self) -> &[u64] {
        &self.usage_counts
    }

    pub fn reset_usage(&mut self) {
        self.usage_counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn ema_cluster_size(&self) -> &[f64] {
        &self.ema_cluster_size
    }

    fn refresh_sq_norms(&mut self) {
        for i in 0..self.len() {
            let r = self.codes.row(i);
            self.code_sq_norms[i] = r.iter().map(|v| v * v).sum();
        }
    }

    /// Nearest code (squared Euclidean) for every row of `x`, ties broken by
    /// the lowest index. Also returns the squared distances.
    ///
    /// Uses the expansion `|x-c|^2 = |x|^2 - 2 x.c + |c|^2` so the dominant
    /// cost is one matrix product; every quantizer in this module assigns
    /// through this one routine, which keeps reductions between variants
    /// bit-identical.
    pub fn assign_batch(&self, x: &Tensor) -> Result<(Vec<u32>, Vec<f64>)> {
        let (b, d) = x.dims2()?;
        if d != self.dim() {
            return Err(Error::shape(format!(
                "input dim {d} does not match codebook dim {}",
                self.dim()
            )));
        }
        if !x.all_finite() {
            return Err(Error::numeric("quantizer input must be finite"));
        }
        let dots = matmul(x, &self.codes.transpose2()?)?; // [B, N]
        let n = self.len();
        let mut indices = Vec::with_capacity(b);
        let mut dists = Vec::with_capacity(b);
        for bi in 0..b {
            let xr = x.row(bi);
            let x_sq: f64 = xr.iter().map(|v| v * v).sum();
            let dr = dots.row(bi);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for ci in 0..n {
                let dist = x_sq - 2.0 * dr[ci] + self.code_sq_norms[ci];
                if dist < best_d {
                    best_d = dist;
                    best = ci;
                }
            }
            indices.push(best as u32);
            dists.push(best_d.max(0.0));
        }
        Ok((indices, dists))
    }

    /// Squared distances from one vector to every code.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape("vector dim does not match codebook"));
        }
        let x_sq: f64 = x.iter().map(|v| v * v).sum();
        Ok((0..self.len())
            .map(|ci| {
                let dot: f64 = self
                    .codes
                    .row(ci)
                    .iter()
                    .zip(x)
                    .map(|(c, v)| c * v)
                    .sum();
                (x_sq - 2.0 * dot + self.code_sq_norms[ci]).max(0.0)
            })
            .collect())
    }

    /// Rows of the table selected by `indices`, stacked as `[B, d]`.
    pub fn lookup(&self, indices: &[u32]) -> Result<Tensor> {
        let idx: Vec<usize> = indices.iter().map(|&i| i as usize).collect();
        for &i in &idx {
            if i >= self.len() {
                return Err(Error::usage(format!("code index {i} out of range")));
            }
        }
        self.codes.gather0(&idx)
    }

    /// Records one use of each listed code (perplexity bookkeeping).
    pub fn record_usage(&mut self, indices: &[u32]) {
        for &i in indices {
            self.usage_counts[i as usize] += 1;
        }
    }

    /// One EMA step from a batch of vectors and their assignments:
    /// cluster sizes and embedding sums decay toward the batch statistics and
    /// the codes are recomputed with Laplace smoothing. Codes idle for
    /// [`DEAD_CODE_PATIENCE`] consecutive updates are reseeded from random
    /// batch rows when a generator is supplied and reseeding is enabled.
    pub fn ema_update(
        &mut self,
        batch: &Tensor,
        assignments: &[u32],
        rng: Option<&mut Rng>,
    ) -> Result<()> {
        let (b, d) = batch.dims2()?;
        if d != self.dim() {
            return Err(Error::shape("batch dim does not match codebook"));
        }
        if assignments.len() != b {
            return Err(Error::shape("one assignment required per batch row"));
        }
        let n = self.len();
        let mut counts = vec![0.0f64; n];
        let mut sums = Tensor::zeros(&[n, d]);
        for (bi, &ai) in assignments.iter().enumerate() {
            let ai = ai as usize;
            if ai >= n {
                return Err(Error::usage(format!("assignment {ai} out of range")));
            }
            counts[ai] += 1.0;
            let src = batch.row(bi);
            let dst = &mut sums.data_mut()[ai * d..(ai + 1) * d];
            for (s, v) in dst.iter_mut().zip(src) {
                *s += v;
            }
        }

        let g = self.decay;
        for i in 0..n {
            self.ema_cluster_size[i] = g * self.ema_cluster_size[i] + (1.0 - g) * counts[i];
        }
        {
            let es = self.ema_embed_sum.data_mut();
            let sd = sums.data();
            for (e, s) in es.iter_mut().zip(sd) {
                *e = g * *e + (1.0 - g) * s;
            }
        }

        let total: f64 = self.ema_cluster_size.iter().sum();
        let eps = self.laplace_eps;
        for i in 0..n {
            let smoothed = (self.ema_cluster_size[i] + eps) / (total + n as f64 * eps) * total;
            let es = &self.ema_embed_sum.data()[i * d..(i + 1) * d];
            let row: Vec<f64> = es.iter().map(|v| v / smoothed).collect();
            self.codes.data_mut()[i * d..(i + 1) * d].copy_from_slice(&row);
        }
        if !self.codes.all_finite() {
            return Err(Error::numeric("codebook became non-finite during EMA update"));
        }

        for i in 0..n {
            if counts[i] == 0.0 {
                self.idle_updates[i] += 1;
            } else {
                self.idle_updates[i] = 0;
            }
        }
        if self.reseed_dead {
            if let Some(rng) = rng {
                for i in 0..n {
                    if self.idle_updates[i] >= DEAD_CODE_PATIENCE {
                        let src = batch.row(rng.next_below(b as u64) as usize).to_vec();
                        self.codes.data_mut()[i * d..(i + 1) * d].copy_from_slice(&src);
                        self.ema_embed_sum.data_mut()[i * d..(i + 1) * d]
                            .copy_from_slice(&src);
                        self.ema_cluster_size[i] = 1.0;
                        self.idle_updates[i] = 0;
                    }
                }
            }
        }
        self.refresh_sq_norms();
        Ok(())
    }
}

/// Index of, and a copy of, the nearest code to `x` (lowest index on ties).
pub fn nearest_code(x: &[f64], codebook: &Codebook) -> Result<(usize, Vec<f64>)> {
    if codebook.is_empty() {
        return Err(Error::usage("nearest_code on an empty codebook"));
    }
    let probe = Tensor::new(&[1, x.len()], x.to_vec())?;
    let (idx, _) = codebook.assign_batch(&probe)?;
    let i = idx[0] as usize;
    Ok((i, codebook.codes().row(i).to_vec()))
}
