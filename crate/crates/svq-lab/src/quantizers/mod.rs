//! Lookup and scalar quantizer zoo with straight-through training.
//!
//! One configurable front door ([`LookupQuantizer`]) wraps plain EMA-VQ,
//! residual / grouped-residual / multi-head / stochastic-residual VQ, finite
//! scalar quantization, binary sign quantization, and residual stacks of the
//! scalar quantizers. Code tables train by exponential moving average; the
//! scalar quantizers carry small learnable projections trained by the task
//! gradient through the straight-through estimator.

mod codebook;
mod lookup;
mod scalar_q;

pub use codebook::{nearest_code, Codebook, DEAD_CODE_PATIENCE};
pub use lookup::{
    grouped_residual_vq_forward, multihead_vq_forward, residual_stack, residual_vq_forward,
    stochastic_residual_vq_forward, vq_forward,
};
pub use scalar_q::{
    bernoulli_entropy, channel_bounds, fsq_codebook_size, fsq_forward, index_distribution_entropy,
    lfq_forward, ChannelBound, MAX_LFQ_CHANNELS,
};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::init::InitSpec;
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

/// Which quantizer the front door should build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerKind {
    Vq,
    ResidualVq,
    GroupedResidualVq,
    MultiHeadVq,
    StochasticResidualVq,
    Fsq,
    ResidualFsq,
    Lfq,
    ResidualLfq,
}

impl QuantizerKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "vq" => Self::Vq,
            "rvq" | "residual-vq" => Self::ResidualVq,
            "grvq" | "grouped-residual-vq" => Self::GroupedResidualVq,
            "mhvq" | "multi-head-vq" => Self::MultiHeadVq,
            "srvq" | "stochastic-residual-vq" => Self::StochasticResidualVq,
            "fsq" => Self::Fsq,
            "rfsq" | "residual-fsq" => Self::ResidualFsq,
            "lfq" => Self::Lfq,
            "rlfq" | "residual-lfq" => Self::ResidualLfq,
            other => {
                return Err(Error::config(format!(
                    "unknown quantizer '{other}' (expected one of vq, rvq, grvq, mhvq, srvq, fsq, rfsq, lfq, rlfq)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Vq => "vq",
            Self::ResidualVq => "rvq",
            Self::GroupedResidualVq => "grvq",
            Self::MultiHeadVq => "mhvq",
            Self::StochasticResidualVq => "srvq",
            Self::Fsq => "fsq",
            Self::ResidualFsq => "rfsq",
            Self::Lfq => "lfq",
            Self::ResidualLfq => "rlfq",
        }
    }
}

/// Full build recipe for one quantizer.
#[derive(Debug, Clone)]
pub struct QuantizerConfig {
    pub kind: QuantizerKind,
    /// Codes per table (lookup kinds) or total implied codes (LFQ: must be a
    /// power of two; FSQ derives it from `levels` instead).
    pub codebook_size: usize,
    /// Residual levels Q.
    pub num_quantizers: usize,
    pub groups: usize,
    pub heads: usize,
    pub shared_codebook: bool,
    /// Per-channel level counts for FSQ.
    pub levels: Vec<u32>,
    pub entropy_weight: f64,
    /// Commitment strength applied to the encoder.
    pub commitment: f64,
    /// Softmax temperature for stochastic sampling.
    pub temperature: f64,
    pub decay: f64,
    pub laplace_eps: f64,
    pub reseed_dead_codes: bool,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            kind: QuantizerKind::Vq,
            codebook_size: 512,
            num_quantizers: 1,
            groups: 1,
            heads: 1,
            shared_codebook: true,
            levels: vec![8, 5, 5, 3],
            entropy_weight: 0.1,
            commitment: 0.25,
            temperature: 1.0,
            decay: 0.99,
            laplace_eps: 1e-5,
            reseed_dead_codes: true,
        }
    }
}

impl QuantizerConfig {
    pub fn with_kind(kind: QuantizerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Everything a quantization pass reports: the quantized batch (same shape as
/// the input), the selected indices laid out sample-major with
/// `codes_per_sample` entries per row, the commitment loss, and any
/// quantizer-specific auxiliary loss (entropy for sign quantization, else 0).
#[derive(Debug, Clone)]
pub struct QuantizeResult {
    pub quantized: Tensor,
    pub indices: Vec<u32>,
    pub codes_per_sample: usize,
    pub commit_loss: f64,
    pub aux_loss: f64,
}

impl QuantizeResult {
    /// Indices chosen by sample `b`.
    pub fn sample_indices(&self, b: usize) -> &[u32] {
        &self.indices[b * self.codes_per_sample..(b + 1) * self.codes_per_sample]
    }
}

/// Tape-level output of a quantizer slot: the straight-through output
/// variable, an optional differentiable commitment term (already scaled by
/// the commitment strength), and the value-level details.
pub struct SlotOutput<'t> {
    pub out: Var<'t>,
    pub commit: Option<Var<'t>>,
    pub result: QuantizeResult,
}

/// A configured quantizer with its state: code tables for the lookup family,
/// or in/out projections for the scalar family.
#[derive(Debug, Clone)]
pub struct LookupQuantizer {
    config: QuantizerConfig,
    dim: usize,
    books: Vec<Codebook>,
    project_in: Option<Tensor>,
    project_out: Option<Tensor>,
}

impl LookupQuantizer {
    /// Builds and initializes a quantizer for `dim`-dimensional inputs.
    pub fn new(config: QuantizerConfig, dim: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("quantizer input dim must be >= 1"));
        }
        let c = &config;
        if c.codebook_size == 0 && !matches!(c.kind, QuantizerKind::Fsq | QuantizerKind::ResidualFsq)
        {
            return Err(Error::config("codebook size must be >= 1"));
        }
        if c.num_quantizers == 0 {
            return Err(Error::config("num_quantizers must be >= 1"));
        }
        let init = InitSpec::kaiming_uniform();
        let mut books = Vec::new();
        let mut project_in = None;
        let mut project_out = None;
        let new_book = |d: usize, count: usize, rng: &mut Rng| -> Result<Vec<Codebook>> {
            (0..count)
                .map(|_| {
                    let mut b = Codebook::new(c.codebook_size, d, c.decay, c.laplace_eps, &init, rng)?;
                    b.set_reseed_dead(c.reseed_dead_codes);
                    Ok(b)
                })
                .collect()
        };
        match c.kind {
            QuantizerKind::Vq => books = new_book(dim, 1, rng)?,
            QuantizerKind::ResidualVq | QuantizerKind::StochasticResidualVq => {
                let count = if c.shared_codebook { 1 } else { c.num_quantizers };
                books = new_book(dim, count, rng)?;
                if c.kind == QuantizerKind::StochasticResidualVq
                    && (c.temperature <= 0.0 || !c.temperature.is_finite())
                {
                    return Err(Error::param("sampling temperature must be positive"));
                }
            }
            QuantizerKind::GroupedResidualVq => {
                if c.groups == 0 || dim % c.groups != 0 {
                    return Err(Error::config(format!(
                        "dim {dim} not divisible by groups {}",
                        c.groups
                    )));
                }
                let per_group = if c.shared_codebook { 1 } else { c.num_quantizers };
                books = new_book(dim / c.groups, c.groups * per_group, rng)?;
            }
            QuantizerKind::MultiHeadVq => {
                if c.heads == 0 || dim % c.heads != 0 {
                    return Err(Error::config(format!(
                        "dim {dim} not divisible by heads {}",
                        c.heads
                    )));
                }
                books = new_book(dim / c.heads, 1, rng)?;
            }
            QuantizerKind::Fsq | QuantizerKind::ResidualFsq => {
                channel_bounds(&c.levels)?;
                let k = c.levels.len();
                project_in = Some(crate::init::init_matrix(dim, k, &init, rng)?);
                project_out = Some(crate::init::init_matrix(k, dim, &init, rng)?);
            }
            QuantizerKind::Lfq | QuantizerKind::ResidualLfq => {
                let k = lfq_channels(c.codebook_size)?;
                project_in = Some(crate::init::init_matrix(dim, k, &init, rng)?);
                project_out = Some(crate::init::init_matrix(k, dim, &init, rng)?);
            }
        }
        Ok(Self {
            config,
            dim,
            books,
            project_in,
            project_out,
        })
    }

    pub fn config(&self) -> &QuantizerConfig {
        &self.config
    }

    pub fn kind(&self) -> QuantizerKind {
        self.config.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn books(&self) -> &[Codebook] {
        &self.books
    }

    /// Codes addressable by one emitted index.
    pub fn index_range(&self) -> usize {
        match self.config.kind {
            QuantizerKind::Fsq | QuantizerKind::ResidualFsq => fsq_codebook_size(&self.config.levels),
            QuantizerKind::Lfq | QuantizerKind::ResidualLfq => self.config.codebook_size,
            _ => self.config.codebook_size,
        }
    }

    /// Parameters trained by the task gradient (the scalar quantizers'
    /// projections; code tables train by EMA instead and are not included).
    pub fn task_params(&mut self) -> Vec<&mut Tensor> {
        match (&mut self.project_in, &mut self.project_out) {
            (Some(a), Some(b)) => vec![a, b],
            _ => Vec::new(),
        }
    }

    pub fn has_task_params(&self) -> bool {
        self.project_in.is_some()
    }

    /// Replaces one level's code table (used when restoring a checkpoint).
    /// Usage statistics restart as if the codes were fresh.
    pub fn set_book_codes(&mut self, level: usize, codes: Tensor) -> Result<()> {
        let book = self
            .books
            .get_mut(level)
            .ok_or_else(|| Error::usage(format!("no codebook level {level}")))?;
        let (n, d) = codes.dims2()?;
        if n != book.len() || d != book.dim() {
            return Err(Error::shape(format!(
                "replacement codes [{n}, {d}] do not match codebook [{}, {}]",
                book.len(),
                book.dim()
            )));
        }
        let mut fresh = Codebook::from_codes(codes, self.config.decay, self.config.laplace_eps)?;
        fresh.set_reseed_dead(self.config.reseed_dead_codes);
        *book = fresh;
        Ok(())
    }

    /// Residual-level scales for the scalar stacks: level q contributes at
    /// scale 2^-q so each level refines the previous one's spacing.
    fn stack_scales(&self) -> Vec<f64> {
        (0..self.config.num_quantizers)
            .map(|q| 0.5f64.powi(q as i32))
            .collect()
    }

    /// Value-level forward pass. Training mode updates EMA statistics (and
    /// may reseed dead codes); eval mode mutates nothing but usage counters.
    pub fn forward(&mut self, x: &Tensor, training: bool, rng: &mut Rng) -> Result<QuantizeResult> {
        let c = self.config.clone();
        match c.kind {
            QuantizerKind::Vq => {
                vq_forward(x, &mut self.books[0], c.commitment, training, Some(rng))
            }
            QuantizerKind::ResidualVq => residual_vq_forward(
                x,
                c.num_quantizers,
                &mut self.books,
                c.shared_codebook,
                c.commitment,
                training,
                Some(rng),
            ),
            QuantizerKind::StochasticResidualVq => stochastic_residual_vq_forward(
                x,
                c.num_quantizers,
                &mut self.books,
                c.shared_codebook,
                c.commitment,
                c.temperature,
                training,
                rng,
            ),
            QuantizerKind::GroupedResidualVq => grouped_residual_vq_forward(
                x,
                c.groups,
                c.num_quantizers,
                &mut self.books,
                c.shared_codebook,
                c.commitment,
                training,
                Some(rng),
            ),
            QuantizerKind::MultiHeadVq => multihead_vq_forward(
                x,
                c.heads,
                &mut self.books[0],
                c.commitment,
                training,
                Some(rng),
            ),
            QuantizerKind::Fsq
            | QuantizerKind::ResidualFsq
            | QuantizerKind::Lfq
            | QuantizerKind::ResidualLfq => {
                let h = matmul(x, self.project_in.as_ref().unwrap())?;
                let (inner_q, indices, codes_per_sample, aux) = self.scalar_inner(&h)?;
                let quantized = matmul(&inner_q, self.project_out.as_ref().unwrap())?;
                Ok(QuantizeResult {
                    quantized,
                    indices,
                    codes_per_sample,
                    commit_loss: 0.0,
                    aux_loss: aux,
                })
            }
        }
    }

    /// Quantizes already-projected channels for the scalar kinds, returning
    /// (channel-space quantized, indices, codes per sample, aux loss).
    fn scalar_inner(&self, h: &Tensor) -> Result<(Tensor, Vec<u32>, usize, f64)> {
        let c = &self.config;
        let q_levels = c.num_quantizers;
        match c.kind {
            QuantizerKind::Fsq => {
                let r = fsq_forward(h, &c.levels)?;
                Ok((r.quantized, r.indices, 1, r.aux_loss))
            }
            QuantizerKind::Lfq => {
                let r = lfq_forward(h, c.entropy_weight)?;
                Ok((r.quantized, r.indices, 1, r.aux_loss))
            }
            QuantizerKind::ResidualFsq => {
                let scales = self.stack_scales();
                let (total, idx, aux) = residual_stack(h, q_levels, Some(&scales), |r, _| {
                    let lr = fsq_forward(r, &c.levels)?;
                    Ok((lr.quantized, lr.indices, lr.aux_loss))
                })?;
                Ok((total, idx, q_levels, aux))
            }
            QuantizerKind::ResidualLfq => {
                let scales = self.stack_scales();
                let (total, idx, aux) = residual_stack(h, q_levels, Some(&scales), |r, _| {
                    let lr = lfq_forward(r, c.entropy_weight)?;
                    Ok((lr.quantized, lr.indices, lr.aux_loss))
                })?;
                Ok((total, idx, q_levels, aux))
            }
            _ => unreachable!("scalar_inner is only called for scalar kinds"),
        }
    }

    /// Tape-level forward with straight-through gradients.
    ///
    /// `proj` supplies the projection variables when they should train with
    /// the task (their values must be this quantizer's current projections);
    /// `None` pushes them as constants. The lookup family ignores `proj` and
    /// additionally returns a differentiable commitment term in training
    /// mode.
    pub fn apply<'t>(
        &mut self,
        x: &Var<'t>,
        proj: Option<(Var<'t>, Var<'t>)>,
        training: bool,
        rng: &mut Rng,
    ) -> Result<SlotOutput<'t>> {
        let tape = x.tape();
        match self.config.kind {
            QuantizerKind::Fsq => {
                let (p_in, p_out) = self.proj_vars(x, proj)?;
                let h = x.matmul(&p_in)?;
                let result_inner = self.forward_scalar_result(&h.value_clone())?;
                // differentiable bounding, straight-through only over round()
                let k = self.config.levels.len();
                let bounds = channel_bounds(&self.config.levels)?;
                let shift = Tensor::from_vec(bounds.iter().map(|b| b.shift).collect());
                let neg_offset = Tensor::from_vec(bounds.iter().map(|b| -b.offset).collect());
                let mut half_diag = Tensor::zeros(&[k, k]);
                for (i, b) in bounds.iter().enumerate() {
                    half_diag.data_mut()[i * k + i] = b.half;
                }
                let shift_v = tape.constant(shift);
                let diag_v = tape.constant(half_diag);
                let off_v = tape.constant(neg_offset);
                let bounded = h
                    .add_bias(&shift_v)?
                    .tanh()?
                    .matmul(&diag_v)?
                    .add_bias(&off_v)?;
                let rounded = bounded.value_clone().map(f64::round);
                let st = bounded.straight_through(&rounded)?;
                let out = st.matmul(&p_out)?;
                Ok(SlotOutput {
                    out,
                    commit: None,
                    result: result_inner,
                })
            }
            QuantizerKind::Lfq | QuantizerKind::ResidualFsq | QuantizerKind::ResidualLfq => {
                let (p_in, p_out) = self.proj_vars(x, proj)?;
                let h = x.matmul(&p_in)?;
                let h_val = h.value_clone();
                let (inner_q, indices, codes_per_sample, aux) = self.scalar_inner(&h_val)?;
                let st = h.straight_through(&inner_q)?;
                let out = st.matmul(&p_out)?;
                let quantized = matmul(&inner_q, self.project_out.as_ref().unwrap())?;
                Ok(SlotOutput {
                    out,
                    commit: None,
                    result: QuantizeResult {
                        quantized,
                        indices,
                        codes_per_sample,
                        commit_loss: 0.0,
                        aux_loss: aux,
                    },
                })
            }
            _ => {
                let result = self.forward(&x.value_clone(), training, rng)?;
                let out = x.straight_through(&result.quantized)?;
                let commit = if training && self.config.commitment > 0.0 {
                    let b = x.shape()[0].max(1);
                    let q_const = tape.constant(result.quantized.clone());
                    let term = x
                        .sub(&q_const)?
                        .square()?
                        .sum()?
                        .scale(self.config.commitment / b as f64);
                    Some(term)
                } else {
                    None
                };
                Ok(SlotOutput {
                    out,
                    commit,
                    result,
                })
            }
        }
    }

    /// QuantizeResult for the single-FSQ tape path (projected output side).
    fn forward_scalar_result(&self, h: &Tensor) -> Result<QuantizeResult> {
        let (inner_q, indices, codes_per_sample, aux) = self.scalar_inner(h)?;
        let quantized = matmul(&inner_q, self.project_out.as_ref().unwrap())?;
        Ok(QuantizeResult {
            quantized,
            indices,
            codes_per_sample,
            commit_loss: 0.0,
            aux_loss: aux,
        })
    }

    fn proj_vars<'t>(
        &self,
        x: &Var<'t>,
        proj: Option<(Var<'t>, Var<'t>)>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        match proj {
            Some(pair) => Ok(pair),
            None => {
                let tape = x.tape();
                let a = tape.constant(self.project_in.clone().ok_or_else(|| {
                    Error::usage("this quantizer kind has no projections")
                })?);
                let b = tape.constant(self.project_out.clone().unwrap());
                Ok((a, b))
            }
        }
    }
}

fn lfq_channels(codebook_size: usize) -> Result<usize> {
    if codebook_size < 2 || !codebook_size.is_power_of_two() {
        return Err(Error::config(format!(
            "sign-quantizer codebook size must be a power of two >= 2, got {codebook_size}"
        )));
    }
    let k = codebook_size.trailing_zeros() as usize;
    if k > MAX_LFQ_CHANNELS {
        return Err(Error::config(format!(
            "codebook size {codebook_size} needs {k} channels, above the {MAX_LFQ_CHANNELS}-bit limit"
        )));
    }
    Ok(k)
}
