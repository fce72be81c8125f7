//! Exact solvers for the L1-penalized reconstruction problem
//!
//! ```text
//!   min_w  1/2 ||x - Z w||^2 + lambda ||w||_1        (optionally w >= 0)
//! ```
//!
//! where the columns of `Z` are codebook vectors. The workhorse is proximal
//! gradient descent (ISTA): a gradient step on the smooth part followed by a
//! shrinkage step, `w_{t+1} = prox(w_t - eta Z^T (Z w_t - x), lambda*eta)`.
//! A Nesterov-accelerated variant (FISTA) and the one-step closed form from
//! `w_0 = 0` — the map a two-layer MLP can emulate — are built on the same
//! iteration.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{matvec, Tensor};

/// One L1-penalized reconstruction instance.
#[derive(Debug, Clone)]
pub struct SparseRegressionProblem<T: Scalar = f64> {
    /// `d x m` matrix whose columns are the codebook vectors.
    pub z: Tensor<T>,
    /// Target vector of length `d`.
    pub x: Tensor<T>,
    /// L1 penalty, `>= 0`.
    pub lambda: T,
    /// Gradient step size, `> 0`.
    pub eta: T,
    /// Restrict weights to the nonnegative orthant.
    pub nonneg: bool,
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct SolverReport<T: Scalar = f64> {
    pub w: Tensor<T>,
    /// Objective value at `w_0` and after every completed iteration.
    pub objective_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> SparseRegressionProblem<T> {
    pub fn new(z: Tensor<T>, x: Tensor<T>, lambda: T, eta: T, nonneg: bool) -> Result<Self> {
        let (d, m) = z.dims2()?;
        if d < 1 || m < 1 {
            return Err(Error::param("codebook must be at least 1x1"));
        }
        if x.dims1()? != d {
            return Err(Error::shape(format!(
                "target length {} does not match codebook rows {d}",
                x.len()
            )));
        }
        if !z.all_finite() || !x.all_finite() {
            return Err(Error::numeric("codebook and target must be finite"));
        }
        if lambda < T::zero() {
            return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(eta > T::zero()) || !eta.is_finite() {
            return Err(Error::param(format!("eta must be > 0, got {eta}")));
        }
        Ok(SparseRegressionProblem {
            z,
            x,
            lambda,
            eta,
            nonneg,
        })
    }

    /// Builds a problem with the guaranteed-descent default step
    /// `eta = 0.9 / sigma_max(Z^T Z)`.
    pub fn with_default_eta(z: Tensor<T>, x: Tensor<T>, lambda: T, nonneg: bool) -> Result<Self> {
        let eta = default_eta(&z)?;
        SparseRegressionProblem::new(z, x, lambda, eta, nonneg)
    }
}

/// Elementwise `sgn(a) * max(|a| - t, 0)` (the proximal map of `t*||.||_1`).
pub fn soft_threshold<T: Scalar>(a: &Tensor<T>, t: T) -> Result<Tensor<T>> {
    if t < T::zero() {
        return Err(Error::param(format!("threshold must be >= 0, got {t}")));
    }
    Ok(a.map(|v| v.signum() * (v.abs() - t).max(T::zero())))
}

/// Elementwise `max(a - t, 0)` (proximal map of `t*||.||_1` plus `w >= 0`).
pub fn nonneg_threshold<T: Scalar>(a: &Tensor<T>, t: T) -> Result<Tensor<T>> {
    if t < T::zero() {
        return Err(Error::param(format!("threshold must be >= 0, got {t}")));
    }
    Ok(a.map(|v| (v - t).max(T::zero())))
}

/// Reconstruction `Z w`.
pub fn reconstruct<T: Scalar>(z: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    matvec(z, w)
}

/// Objective `1/2 ||x - Z w||^2 + lambda ||w||_1`.
pub fn objective<T: Scalar>(z: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>, lambda: T) -> Result<T> {
    let r = x.sub(&reconstruct(z, w)?)?;
    let half = T::c(0.5);
    let l1 = w.data().iter().fold(T::zero(), |acc, &v| acc + v.abs());
    Ok(half * r.data().iter().fold(T::zero(), |a, &v| a + v * v) + lambda * l1)
}

/// Estimates `sigma_max(Z^T Z)` (the largest eigenvalue) by `steps` rounds of
/// power iteration from the all-ones direction, finishing with a Rayleigh
/// quotient. Deterministic.
pub fn sigma_max_ztz<T: Scalar>(z: &Tensor<T>, steps: usize) -> Result<T> {
    let (_, m) = z.dims2()?;
    let mut v = Tensor::full(&[m], T::c((1.0 / m as f64).sqrt()));
    let zt = z.transpose2()?;
    let apply = |v: &Tensor<T>| -> Result<Tensor<T>> { matvec(&zt, &matvec(z, v)?) };
    for _ in 0..steps {
        let av = apply(&v)?;
        let norm = av.l2();
        if !(norm > T::zero()) {
            return Ok(T::zero());
        }
        v = av.scale(T::one() / norm);
    }
    let av = apply(&v)?;
    let num = av
        .data()
        .iter()
        .zip(v.data())
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    Ok(num)
}

/// Default step size `0.9 / sigma_max(Z^T Z)` via 20 power-iteration steps.
pub fn default_eta<T: Scalar>(z: &Tensor<T>) -> Result<T> {
    let sigma = sigma_max_ztz(z, 20)?;
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::numeric(
            "cannot pick a default step size for a zero or non-finite codebook",
        ));
    }
    Ok(T::c(0.9) / sigma)
}

/// One proximal-gradient iteration; both `ista_solve` and `one_step_weights`
/// funnel through this, which is what makes their equivalence exact.
fn prox_gradient_step<T: Scalar>(
    p: &SparseRegressionProblem<T>,
    zt: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<Tensor<T>> {
    let residual = reconstruct(&p.z, w)?.sub(&p.x)?;
    let grad = matvec(zt, &residual)?;
    let stepped = w.zip_map(&grad, |wi, gi| wi - p.eta * gi)?;
    let t = p.lambda * p.eta;
    if p.nonneg {
        nonneg_threshold(&stepped, t)
    } else {
        soft_threshold(&stepped, t)
    }
}

fn divergence_error<T: Scalar>(p: &SparseRegressionProblem<T>, iteration: usize) -> Error {
    let bound = sigma_max_ztz(&p.z, 20)
        .map(|s| (T::one() / s).f64())
        .unwrap_or(f64::NAN);
    Error::Divergence(format!(
        "non-finite iterate at iteration {iteration}: step size eta={} exceeds the stable \
         range (descent requires eta <= 1/sigma_max(Z^T Z) ~= {bound:.6e})",
        p.eta
    ))
}

/// Proximal-gradient (ISTA) solve from `w_0 = 0`; stops when the infinity
/// norm of the iterate change drops below `tol` or after `max_iters` steps.
pub fn ista_solve<T: Scalar>(
    p: &SparseRegressionProblem<T>,
    max_iters: usize,
    tol: T,
) -> Result<SolverReport<T>> {
    if max_iters < 1 {
        return Err(Error::param("max_iters must be >= 1"));
    }
    if !(tol > T::zero()) {
        return Err(Error::param("tol must be > 0"));
    }
    let (_, m) = p.z.dims2()?;
    let zt = p.z.transpose2()?;
    let mut w = Tensor::zeros(&[m]);
    let mut trace = vec![objective(&p.z, &p.x, &w, p.lambda)?];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iters {
        let w_next = prox_gradient_step(p, &zt, &w)?;
        if !w_next.all_finite() {
            return Err(divergence_error(p, it + 1));
        }
        let delta = w_next.sub(&w)?.linf();
        w = w_next;
        iterations = it + 1;
        trace.push(objective(&p.z, &p.x, &w, p.lambda)?);
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(SolverReport {
        w,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Nesterov-accelerated proximal gradient (FISTA) from `w_0 = 0`.
pub fn fista_solve<T: Scalar>(
    p: &SparseRegressionProblem<T>,
    max_iters: usize,
    tol: T,
) -> Result<SolverReport<T>> {
    let (_, m) = p.z.dims2()?;
    fista_solve_from(p, Tensor::zeros(&[m]), max_iters, tol)
}

/// FISTA from an arbitrary warm start (a fixed point converges immediately).
pub fn fista_solve_from<T: Scalar>(
    p: &SparseRegressionProblem<T>,
    w0: Tensor<T>,
    max_iters: usize,
    tol: T,
) -> Result<SolverReport<T>> {
    if max_iters < 1 {
        return Err(Error::param("max_iters must be >= 1"));
    }
    if !(tol > T::zero()) {
        return Err(Error::param("tol must be > 0"));
    }
    let (_, m) = p.z.dims2()?;
    if w0.dims1()? != m {
        return Err(Error::shape("warm start length does not match codebook"));
    }
    let zt = p.z.transpose2()?;
    let mut w = w0;
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut trace = vec![objective(&p.z, &p.x, &w, p.lambda)?];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iters {
        let w_next = prox_gradient_step(p, &zt, &y)?;
        if !w_next.all_finite() {
            return Err(divergence_error(p, it + 1));
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = T::c((t - 1.0) / t_next);
        y = w_next.zip_map(&w, |wn, wp| wn + momentum * (wn - wp))?;
        let delta = w_next.sub(&w)?.linf();
        w = w_next;
        t = t_next;
        iterations = it + 1;
        trace.push(objective(&p.z, &p.x, &w, p.lambda)?);
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(SolverReport {
        w,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Closed-form single iteration from zero: `prox(eta * Z^T x, lambda*eta)`.
/// Computed through the same code path as `ista_solve`, so the two agree
/// bit for bit.
pub fn one_step_weights<T: Scalar>(
    z: &Tensor<T>,
    x: &Tensor<T>,
    lambda: T,
    eta: T,
    nonneg: bool,
) -> Result<Tensor<T>> {
    let p = SparseRegressionProblem::new(z.clone(), x.clone(), lambda, eta, nonneg)?;
    let (_, m) = p.z.dims2()?;
    let zt = p.z.transpose2()?;
    prox_gradient_step(&p, &zt, &Tensor::zeros(&[m]))
}

/// Quantizes a batch of row-vector tokens by running the exact solver per
/// token and reconstructing: returns `(Z w_b stacked, w_b stacked)`.
pub fn svq_raw_quantize<T: Scalar>(
    tokens: &Tensor<T>,
    z: &Tensor<T>,
    lambda: T,
    eta: T,
    iters: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if iters < 1 {
        return Err(Error::param("iters must be >= 1"));
    }
    let (b, d) = tokens.dims2()?;
    let (zd, m) = z.dims2()?;
    if d != zd {
        return Err(Error::shape(format!(
            "token dim {d} does not match codebook rows {zd}"
        )));
    }
    let mut quantized = Tensor::zeros(&[b, d]);
    let mut weights = Tensor::zeros(&[b, m]);
    for i in 0..b {
        let x = Tensor::new(&[d], tokens.row(i).to_vec())?;
        let p = SparseRegressionProblem::new(z.clone(), x, lambda, eta, false)?;
        let report = ista_solve(&p, iters, T::c(1e-14))?;
        let recon = reconstruct(z, &report.w)?;
        quantized.data_mut()[i * d..(i + 1) * d].copy_from_slice(recon.data());
        weights.data_mut()[i * m..(i + 1) * m].copy_from_slice(report.w.data());
    }
    Ok((quantized, weights))
}

/// Cost model for one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostModel {
    /// Iterative exact solve: per iteration one `Z w` (2dm), one residual
    /// subtraction (d), one `Z^T r` (2dm), one scaled step (2m) and one
    /// shrinkage (m): `iters * (4dm + d + 3m)`.
    SvqRaw { iters: u64 },
    /// Two-layer MLP projection plus codebook combination, multiply-add
    /// pairs counted as two: `2*(d*hidden + hidden*m + m*d)`.
    SvqMlp,
}

/// Analytic FLOP count for quantizing one `d`-dimensional token against an
/// `m`-entry codebook (`hidden` is the MLP width, ignored for `SvqRaw`).
pub fn flops_estimate(method: CostModel, d: u64, m: u64, hidden: u64) -> Result<u64> {
    if d == 0 || m == 0 {
        return Err(Error::param("sizes must be positive"));
    }
    match method {
        CostModel::SvqRaw { iters } => {
            if iters == 0 {
                return Err(Error::param("iters must be >= 1"));
            }
            Ok(iters * (4 * d * m + d + 3 * m))
        }
        CostModel::SvqMlp => {
            if hidden == 0 {
                return Err(Error::param("hidden width must be positive"));
            }
            Ok(2 * (d * hidden + hidden * m + m * d))
        }
    }
}

/// Samples a random problem used by tests and the covering study: codebook
/// entries uniform in `[-1, 1]`, target uniform in `[-1, 1]`.
pub fn random_problem<T: Scalar>(
    d: usize,
    m: usize,
    lambda: T,
    nonneg: bool,
    rng: &mut Rng,
) -> Result<SparseRegressionProblem<T>> {
    let mut z = Tensor::zeros(&[d, m]);
    rng.fill_uniform(z.data_mut(), -1.0, 1.0);
    let mut x = Tensor::zeros(&[d]);
    rng.fill_uniform(x.data_mut(), -1.0, 1.0);
    SparseRegressionProblem::with_default_eta(z, x, lambda, nonneg)
}
