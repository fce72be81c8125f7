//! Sparse vector quantization by regression instead of lookup.
//!
//! A small MLP maps each token to a dense weight vector over a large
//! codebook; the quantization is the weighted combination of codes. The
//! whole path is differentiable end to end — no straight-through estimator —
//! and one construction of the projections reproduces a single
//! proximal-gradient step of the sparse regression solver exactly.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::init::{init_matrix, InitSpec};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

/// Projection shape used to produce the regression weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvqVariant {
    /// Two-layer MLP with relu between the layers (the default).
    TwoLayer,
    /// Single affine map, no hidden layer.
    OneLayer,
    /// Two layers with the hidden width forced to the codebook size.
    BucketShape,
    /// Two layers with an extra relu on the output weights (non-negative).
    PostRelu,
}

impl SvqVariant {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "two-layer" => Self::TwoLayer,
            "one-layer" => Self::OneLayer,
            "bucket-shape" => Self::BucketShape,
            "post-relu" => Self::PostRelu,
            other => {
                return Err(Error::config(format!(
                    "unknown projection variant '{other}' (expected two-layer, one-layer, bucket-shape or post-relu)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TwoLayer => "two-layer",
            Self::OneLayer => "one-layer",
            Self::BucketShape => "bucket-shape",
            Self::PostRelu => "post-relu",
        }
    }
}

/// Training-loss shape for the forecaster output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Mae,
}

impl LossKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "mse" => Self::Mse,
            "mae" => Self::Mae,
            other => return Err(Error::config(format!("unknown loss '{other}' (expected mse or mae)"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::Mae => "mae",
        }
    }
}

/// Build recipe for an [`SvqModule`].
#[derive(Debug, Clone)]
pub struct SvqConfig {
    pub codebook_size: usize,
    pub token_dim: usize,
    /// Hidden width of the projection (ignored by OneLayer, forced to the
    /// codebook size by BucketShape).
    pub hidden_dim: usize,
    pub variant: SvqVariant,
    pub codebook_init: InitSpec,
    pub codebook_learnable: bool,
    pub mlp_learnable: bool,
    /// Optional explicit L1 penalty on the weights, kept behind a flag for
    /// ablations; the usual surrogate is an MAE output loss instead.
    pub explicit_l1: Option<f64>,
}

impl SvqConfig {
    pub fn new(codebook_size: usize, token_dim: usize) -> Self {
        Self {
            codebook_size,
            token_dim,
            hidden_dim: 128,
            variant: SvqVariant::TwoLayer,
            codebook_init: InitSpec::kaiming_uniform(),
            codebook_learnable: false,
            mlp_learnable: true,
            explicit_l1: None,
        }
    }
}

/// Regression-weight quantizer: projections producing weights over a code
/// matrix, applied as `quantized = weights x codebook`.
#[derive(Debug, Clone)]
pub struct SvqModule {
    config: SvqConfig,
    proj1: Tensor,
    bias1: Tensor,
    proj2: Option<Tensor>,
    bias2: Option<Tensor>,
    codebook: Tensor,
}

impl SvqModule {
    /// Fresh module with MLP weights from the fan-in-scaled uniform
    /// initializer, zero biases, and the configured codebook initializer.
    pub fn new(mut config: SvqConfig, rng: &mut Rng) -> Result<Self> {
        if config.codebook_size == 0 {
            return Err(Error::config("codebook size must be >= 1"));
        }
        if config.token_dim == 0 {
            return Err(Error::config("token dim must be >= 1"));
        }
        if config.variant == SvqVariant::BucketShape {
            config.hidden_dim = config.codebook_size;
        }
        let n = config.codebook_size;
        let d = config.token_dim;
        let init = InitSpec::kaiming_uniform();
        let (proj1, bias1, proj2, bias2) = match config.variant {
            SvqVariant::OneLayer => (
                init_matrix(d, n, &init, rng)?,
                Tensor::zeros(&[n]),
                None,
                None,
            ),
            _ => {
                let h = config.hidden_dim;
                if h == 0 {
                    return Err(Error::config("hidden dim must be >= 1"));
                }
                (
                    init_matrix(d, h, &init, rng)?,
                    Tensor::zeros(&[h]),
                    Some(init_matrix(h, n, &init, rng)?),
                    Some(Tensor::zeros(&[n])),
                )
            }
        };
        let codebook = init_matrix(n, d, &config.codebook_init, rng)?;
        Ok(Self {
            config,
            proj1,
            bias1,
            proj2,
            bias2,
            codebook,
        })
    }

    /// Assembles a module from explicit parts (shape-checked).
    pub fn from_parts(
        config: SvqConfig,
        proj1: Tensor,
        bias1: Tensor,
        proj2: Option<(Tensor, Tensor)>,
        codebook: Tensor,
    ) -> Result<Self> {
        let n = config.codebook_size;
        let d = config.token_dim;
        let (cn, cd) = codebook.dims2()?;
        if cn != n || cd != d {
            return Err(Error::shape(format!(
                "codebook shape [{cn}, {cd}] does not match config [{n}, {d}]"
            )));
        }
        let (p1r, p1c) = proj1.dims2()?;
        let out_width = if config.variant == SvqVariant::OneLayer {
            n
        } else {
            config.hidden_dim
        };
        if p1r != d || p1c != out_width {
            return Err(Error::shape(format!(
                "first projection shape [{p1r}, {p1c}] does not match [{d}, {out_width}]"
            )));
        }
        if bias1.dims1()? != out_width {
            return Err(Error::shape("first bias width mismatch"));
        }
        let (proj2, bias2) = match (config.variant, proj2) {
            (SvqVariant::OneLayer, None) => (None, None),
            (SvqVariant::OneLayer, Some(_)) => {
                return Err(Error::shape("one-layer variant takes no second projection"))
            }
            (_, Some((p2, b2))) => {
                let (p2r, p2c) = p2.dims2()?;
                if p2r != config.hidden_dim || p2c != n {
                    return Err(Error::shape(format!(
                        "second projection shape [{p2r}, {p2c}] does not match [{}, {n}]",
                        config.hidden_dim
                    )));
                }
                if b2.dims1()? != n {
                    return Err(Error::shape("second bias width mismatch"));
                }
                (Some(p2), Some(b2))
            }
            (_, None) => return Err(Error::shape("this variant needs a second projection")),
        };
        Ok(Self {
            config,
            proj1,
            bias1,
            proj2,
            bias2,
            codebook,
        })
    }

    pub fn config(&self) -> &SvqConfig {
        &self.config
    }

    pub fn codebook(&self) -> &Tensor {
        &self.codebook
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    pub fn token_dim(&self) -> usize {
        self.config.token_dim
    }

    /// Parameters trained by the task gradient, honoring the learnability
    /// flags. Order: proj1, bias1, [proj2, bias2,] [codebook].
    pub fn task_params(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if self.config.mlp_learnable {
            out.push(&mut self.proj1);
            out.push(&mut self.bias1);
            if let Some(p2) = self.proj2.as_mut() {
                out.push(p2);
            }
            if let Some(b2) = self.bias2.as_mut() {
                out.push(b2);
            }
        }
        if self.config.codebook_learnable {
            out.push(&mut self.codebook);
        }
        out
    }

    /// Every parameter with a stable name, learnable or not (used for
    /// checkpointing).
    pub fn named_parts(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![("proj1", &self.proj1), ("bias1", &self.bias1)];
        if let Some(p2) = &self.proj2 {
            out.push(("proj2", p2));
        }
        if let Some(b2) = &self.bias2 {
            out.push(("bias2", b2));
        }
        out.push(("codebook", &self.codebook));
        out
    }

    /// Overwrites one named part with a shape-checked replacement.
    pub fn set_part(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = match name {
            "proj1" => &mut self.proj1,
            "bias1" => &mut self.bias1,
            "proj2" => self
                .proj2
                .as_mut()
                .ok_or_else(|| Error::usage("this variant has no second projection"))?,
            "bias2" => self
                .bias2
                .as_mut()
                .ok_or_else(|| Error::usage("this variant has no second bias"))?,
            "codebook" => &mut self.codebook,
            other => return Err(Error::usage(format!("unknown parameter '{other}'"))),
        };
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter '{name}' expects shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Number of entries [`task_params`] returns.
    pub fn task_param_count(&self) -> usize {
        let mut n = 0;
        if self.config.mlp_learnable {
            n += 2 + if self.proj2.is_some() { 2 } else { 0 };
        }
        if self.config.codebook_learnable {
            n += 1;
        }
        n
    }

    /// Tape forward. `params`, when given, must follow the [`task_params`]
    /// order; frozen parameters enter the graph as constants either way.
    pub fn apply<'t>(&self, x: &Var<'t>, params: Option<&[Var<'t>]>) -> Result<SvqApplied<'t>> {
        let tape = x.tape();
        if let Some(p) = params {
            if p.len() != self.task_param_count() {
                return Err(Error::usage(format!(
                    "expected {} parameter variables, got {}",
                    self.task_param_count(),
                    p.len()
                )));
            }
        }
        let mut cursor = 0usize;
        let mut next = |t: &Tensor, learnable: bool| -> Var<'t> {
            match (params, learnable) {
                (Some(p), true) => {
                    let v = p[cursor];
                    cursor += 1;
                    v
                }
                _ => tape.constant(t.clone()),
            }
        };
        let mlp = self.config.mlp_learnable;
        let p1 = next(&self.proj1, mlp);
        let b1 = next(&self.bias1, mlp);
        let (p2, b2) = match (&self.proj2, &self.bias2) {
            (Some(p), Some(b)) => (Some(next(p, mlp)), Some(next(b, mlp))),
            _ => (None, None),
        };
        let m = next(&self.codebook, self.config.codebook_learnable);

        let weights = match self.config.variant {
            SvqVariant::OneLayer => x.matmul(&p1)?.add_bias(&b1)?,
            SvqVariant::TwoLayer | SvqVariant::BucketShape => {
                let h = x.matmul(&p1)?.add_bias(&b1)?.relu()?;
                h.matmul(p2.as_ref().unwrap())?.add_bias(b2.as_ref().unwrap())?
            }
            SvqVariant::PostRelu => {
                let h = x.matmul(&p1)?.add_bias(&b1)?.relu()?;
                h.matmul(p2.as_ref().unwrap())?
                    .add_bias(b2.as_ref().unwrap())?
                    .relu()?
            }
        };
        let quantized = weights.matmul(&m)?;
        Ok(SvqApplied { quantized, weights })
    }
}

/// Tape-level outputs of the quantizer: both live on the caller's tape.
pub struct SvqApplied<'t> {
    pub quantized: Var<'t>,
    pub weights: Var<'t>,
}

/// Value-level forward: (quantized tokens, regression weights).
pub fn svq_forward(tokens: &Tensor, module: &SvqModule) -> Result<(Tensor, Tensor)> {
    let (_, d) = tokens.dims2()?;
    if d != module.token_dim() {
        return Err(Error::shape(format!(
            "token dim {d} does not match module dim {}",
            module.token_dim()
        )));
    }
    let affine = |x: &Tensor, w: &Tensor, b: &Tensor| -> Result<Tensor> {
        let mut y = matmul(x, w)?;
        let n = b.len();
        for chunk in y.data_mut().chunks_mut(n) {
            for (v, bv) in chunk.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Ok(y)
    };
    let relu = |t: Tensor| t.map(|v| v.max(0.0));
    let weights = match module.config.variant {
        SvqVariant::OneLayer => affine(tokens, &module.proj1, &module.bias1)?,
        SvqVariant::TwoLayer | SvqVariant::BucketShape => {
            let h = relu(affine(tokens, &module.proj1, &module.bias1)?);
            affine(&h, module.proj2.as_ref().unwrap(), module.bias2.as_ref().unwrap())?
        }
        SvqVariant::PostRelu => {
            let h = relu(affine(tokens, &module.proj1, &module.bias1)?);
            relu(affine(&h, module.proj2.as_ref().unwrap(), module.bias2.as_ref().unwrap())?)
        }
    };
    let quantized = matmul(&weights, &module.codebook)?;
    Ok((quantized, weights))
}

/// Builds the module that reproduces one proximal-gradient step of
/// `argmin 0.5|x - Zw|^2 + lambda |w|_1` exactly: the first layer computes
/// both signs of the gradient step shifted by the threshold, relu clips
/// them, and the difference layer reassembles the soft threshold.
pub fn ista_embedding(z: &Tensor, lambda: f64, eta: f64) -> Result<SvqModule> {
    let (d, m) = z.dims2()?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::param("lambda must be non-negative and finite"));
    }
    if eta <= 0.0 || !eta.is_finite() {
        return Err(Error::param("step size must be positive and finite"));
    }
    // proj1 = [eta Z, -eta Z]  (d x 2m)
    let mut proj1 = Tensor::zeros(&[d, 2 * m]);
    for i in 0..d {
        for j in 0..m {
            let v = eta * z.get2(i, j);
            proj1.data_mut()[i * 2 * m + j] = v;
            proj1.data_mut()[i * 2 * m + m + j] = -v;
        }
    }
    let bias1 = Tensor::full(&[2 * m], -lambda * eta);
    // proj2 = [I; -I]  (2m x m)
    let mut proj2 = Tensor::zeros(&[2 * m, m]);
    for j in 0..m {
        proj2.data_mut()[j * m + j] = 1.0;
        proj2.data_mut()[(m + j) * m + j] = -1.0;
    }
    let bias2 = Tensor::zeros(&[m]);
    let codebook = z.transpose2()?; // m x d
    let mut config = SvqConfig::new(m, d);
    config.hidden_dim = 2 * m;
    config.codebook_learnable = false;
    config.mlp_learnable = false;
    SvqModule::from_parts(config, proj1, bias1, Some((proj2, bias2)), codebook)
}

/// Mean elementwise loss between prediction and target.
pub fn svq_regularized_loss(prediction: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction shape {:?} does not match target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let n = prediction.len() as f64;
    let total: f64 = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| match kind {
            LossKind::Mse => (p - t) * (p - t),
            LossKind::Mae => (p - t).abs(),
        })
        .sum();
    Ok(total / n)
}

/// Tape form of [`svq_regularized_loss`].
pub fn regression_loss<'t>(
    prediction: &Var<'t>,
    target: &Var<'t>,
    kind: LossKind,
) -> Result<Var<'t>> {
    let diff = prediction.sub(target)?;
    match kind {
        LossKind::Mse => diff.square()?.mean(),
        LossKind::Mae => diff.abs()?.mean(),
    }
}

/// Optional explicit sparsity penalty: `lambda` times the mean over samples
/// of the L1 norm of each weight row.
pub fn l1_penalty<'t>(weights: &Var<'t>, lambda: f64) -> Result<Var<'t>> {
    let b = weights.shape()[0].max(1);
    Ok(weights.abs()?.sum()?.scale(lambda / b as f64))
}

/// Fourth standardized moment of all entries (3 for normal data, 1.8 for
/// uniform). Errors when the entries have zero variance.
pub fn weight_kurtosis(weights: &Tensor) -> Result<f64> {
    let n = weights.len();
    if n < 2 {
        return Err(Error::param("kurtosis needs at least two entries"));
    }
    let first = weights.data()[0];
    if weights.data().iter().all(|&v| v == first) {
        return Err(Error::numeric(
            "kurtosis is undefined for constant weights (zero variance)",
        ));
    }
    let mean = weights.mean();
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &v in weights.data() {
        let c = v - mean;
        let c2 = c * c;
        m2 += c2;
        m4 += c2 * c2;
    }
    m2 /= n as f64;
    m4 /= n as f64;
    if m2 == 0.0 {
        return Err(Error::numeric(
            "kurtosis is undefined for constant weights (zero variance)",
        ));
    }
    Ok(m4 / (m2 * m2))
}

/// Perplexity of code activation after thresholded binarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvqPerplexity {
    pub value: f64,
    /// True when no entry cleared the threshold (value falls back to 1).
    pub no_activations: bool,
}

/// Normalizes the weight matrix globally to zero mean and unit variance,
/// marks entries with absolute normalized value above `theta` as active, and
/// returns the perplexity (exp entropy) of per-code activation frequencies.
///
/// When every active code fires equally often the result is returned as the
/// exact integer count of active codes.
pub fn svq_perplexity(weights: &Tensor, theta: f64) -> Result<SvqPerplexity> {
    if theta <= 0.0 || !theta.is_finite() {
        return Err(Error::param("threshold must be positive and finite"));
    }
    let (b, n) = weights.dims2()?;
    if b == 0 {
        return Err(Error::param("at least one sample required"));
    }
    let total = weights.len() as f64;
    let mean = weights.mean();
    let var = weights.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / total;
    let std = var.sqrt();
    let mut counts = vec![0u64; n];
    if std > 0.0 {
        let cut = theta * std;
        for bi in 0..b {
            for (ci, &v) in weights.row(bi).iter().enumerate() {
                if (v - mean).abs() > cut {
                    counts[ci] += 1;
                }
            }
        }
    }
    let t: u64 = counts.iter().sum();
    if t == 0 {
        return Ok(SvqPerplexity {
            value: 1.0,
            no_activations: true,
        });
    }
    Ok(SvqPerplexity {
        value: crate::util::perplexity_of_counts(&counts),
        no_activations: false,
    })
}

/// Writes the codebook as CSV: header `c0,...`, one row per code, values at
/// f32 precision (shortest representation that round-trips).
pub fn export_codebook(module: &SvqModule, path: &std::path::Path) -> Result<()> {
    let (n, d) = module.codebook.dims2()?;
    let mut out = String::new();
    for j in 0..d {
        if j > 0 {
            out.push(',');
        }
        out.push('c');
        out.push_str(&j.to_string());
    }
    out.push('\n');
    for i in 0..n {
        for (j, &v) in module.codebook.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", v as f32));
        }
        out.push('\n');
    }
    crate::util::atomic_write(path, out.as_bytes())
}

/// Reads a codebook CSV written by [`export_codebook`] back into a tensor
/// (entries carry f32 precision).
pub fn import_codebook(path: &std::path::Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty codebook file"))?;
    let d = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (li, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(Error::data(format!(
                "row {} has {} fields, expected {d}",
                li + 1,
                fields.len()
            )));
        }
        for f in fields {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::data(format!("bad number '{f}' in row {}", li + 1)))?;
            data.push(v as f64);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::data("codebook file has no rows"));
    }
    Tensor::new(&[rows, d], data)
}
