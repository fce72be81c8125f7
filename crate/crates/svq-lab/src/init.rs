//! Matrix initializers used for codebooks and projection layers.
//!
//! Four schemes are provided: Kaiming-uniform, truncated normal, orthogonal
//! (QR of a Gaussian draw), and column-sparse Gaussian. All draw from the
//! crate's deterministic [`Rng`], so a seed pins the exact matrix.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{matmul, Tensor};

/// Initialization scheme for a `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Uniform in `[-b, b]` with `b = gain * sqrt(6 / fan_in)` where the
    /// fan-in is the column count (a `128 x 64` matrix gets bound
    /// `sqrt(6/64)`).
    KaimingUniform { gain: f64 },
    /// `N(0, std^2)` redrawn until inside `[-2 std, 2 std]`.
    TruncNormal { std: f64 },
    /// Orthonormal columns (rows if the matrix is wide), scaled by `gain`.
    Orthogonal { gain: f64 },
    /// Per column, exactly `floor(sparsity * rows)` entries are zero
    /// (positions chosen uniformly); the rest are `N(0, std^2)`.
    Sparse { sparsity: f64, std: f64 },
}

impl InitSpec {
    pub fn kaiming_uniform() -> Self {
        InitSpec::KaimingUniform { gain: 1.0 }
    }
    pub fn trunc_normal() -> Self {
        InitSpec::TruncNormal { std: 0.02 }
    }
    pub fn orthogonal() -> Self {
        InitSpec::Orthogonal { gain: 1.0 }
    }
    pub fn sparse(sparsity: f64) -> Self {
        InitSpec::Sparse {
            sparsity,
            std: 0.01,
        }
    }
}

/// Draws a `rows x cols` matrix per `spec` from `rng`.
///
/// Kaiming fan-in convention: the bound is `sqrt(6 / cols)`, i.e. a
/// `128 x 64` matrix has all entries within `+-sqrt(6/64)`.
pub fn init_matrix<T: Scalar>(
    rows: usize,
    cols: usize,
    spec: &InitSpec,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::param(format!(
            "init_matrix needs positive dimensions, got {rows}x{cols}"
        )));
    }
    match spec {
        InitSpec::KaimingUniform { gain } => {
            let bound = gain * (6.0 / cols as f64).sqrt();
            let mut t = Tensor::zeros(&[rows, cols]);
            rng.fill_uniform(t.data_mut(), -bound, bound);
            Ok(t)
        }
        InitSpec::TruncNormal { std } => {
            if *std <= 0.0 {
                return Err(Error::param(format!("trunc-normal std must be > 0, got {std}")));
            }
            let mut t = Tensor::zeros(&[rows, cols]);
            for v in t.data_mut() {
                loop {
                    let draw = rng.gaussian(0.0, *std);
                    if draw.abs() <= 2.0 * std {
                        *v = T::c(draw);
                        break;
                    }
                }
            }
            Ok(t)
        }
        InitSpec::Orthogonal { gain } => {
            let q = orthogonal_matrix(rows, cols, rng)?;
            Ok(q.scale(T::c(*gain)))
        }
        InitSpec::Sparse { sparsity, std } => {
            if !(0.0..1.0).contains(sparsity) {
                return Err(Error::param(format!(
                    "sparsity must lie in [0, 1), got {sparsity}"
                )));
            }
            if *std <= 0.0 {
                return Err(Error::param(format!("sparse std must be > 0, got {std}")));
            }
            let zeros_per_col = (sparsity * rows as f64).floor() as usize;
            let mut t = Tensor::zeros(&[rows, cols]);
            let mut row_order: Vec<usize> = (0..rows).collect();
            for c in 0..cols {
                for r in 0..rows {
                    t.data_mut()[r * cols + c] = T::c(rng.gaussian(0.0, *std));
                }
                row_order.iter_mut().enumerate().for_each(|(i, v)| *v = i);
                rng.shuffle(&mut row_order);
                for &r in row_order.iter().take(zeros_per_col) {
                    t.data_mut()[r * cols + c] = T::zero();
                }
            }
            Ok(t)
        }
    }
}

/// Orthogonal (orthonormal-column) matrix via Householder QR of a Gaussian
/// draw, with the sign of each R diagonal fixed positive so the result is
/// deterministic. Wide matrices are handled by transposing the problem,
/// giving orthonormal rows.
fn orthogonal_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    if rows < cols {
        let t: Tensor<T> = orthogonal_matrix(cols, rows, rng)?;
        return t.transpose2();
    }
    let mut a = vec![0f64; rows * cols];
    for v in &mut a {
        *v = rng.next_gaussian();
    }
    // Householder QR: reduce `a` to R while accumulating Q (rows x rows).
    let m = rows;
    let n = cols;
    let mut q = vec![0f64; m * m];
    for i in 0..m {
        q[i * m + i] = 1.0;
    }
    for k in 0..n {
        // Householder vector for column k below the diagonal.
        let mut norm = 0.0;
        for i in k..m {
            norm += a[i * n + k] * a[i * n + k];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k * n + k] >= 0.0 { -norm } else { norm };
        let mut v = vec![0f64; m - k];
        v[0] = a[k * n + k] - alpha;
        for i in k + 1..m {
            v[i - k] = a[i * n + k];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        // Apply H = I - 2 v v^T / (v^T v) to A from the left.
        for j in k..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * a[i * n + j];
            }
            let f = 2.0 * dot / vtv;
            for i in k..m {
                a[i * n + j] -= f * v[i - k];
            }
        }
        // Accumulate Q <- Q H (apply H to Q from the right).
        for i in 0..m {
            let mut dot = 0.0;
            for j in k..m {
                dot += q[i * m + j] * v[j - k];
            }
            let f = 2.0 * dot / vtv;
            for j in k..m {
                q[i * m + j] -= f * v[j - k];
            }
        }
    }
    // Fix signs so R's diagonal is nonnegative, then keep the first n columns.
    let mut out = Tensor::zeros(&[m, n]);
    for j in 0..n {
        let flip = a[j * n + j] < 0.0;
        for i in 0..m {
            let v = if flip { -q[i * m + j] } else { q[i * m + j] };
            out.data_mut()[i * n + j] = T::c(v);
        }
    }
    Ok(out)
}

/// `||Q^T Q - I||_inf`, the orthonormality defect of the columns.
pub fn orthonormality_defect<T: Scalar>(q: &Tensor<T>) -> Result<T> {
    let (_, n) = q.dims2()?;
    let qtq = matmul(&q.transpose2()?, q)?;
    let eye = Tensor::<T>::eye(n);
    Ok(qtq.sub(&eye)?.linf())
}
