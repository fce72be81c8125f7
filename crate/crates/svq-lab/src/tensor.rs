//! Dense row-major n-dimensional arrays.
//!
//! `Tensor<T>` is the universal value carrier of the crate: a shape vector
//! plus a flat row-major buffer. Internally everything runs in `f64` (the
//! crate-root alias); `f32` exists for compact file storage. Matrix products
//! go through [`Scalar::gemm`], single-threaded and deterministic per build.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Element count implied by a shape (empty shape = scalar = 1 element).
pub fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a shape and a matching flat row-major buffer.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let n = element_count(shape);
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {n} elements but buffer holds {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); element_count(shape)],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; element_count(shape)],
        }
    }

    /// 1-D tensor from a vector.
    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("from_rows needs at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows requires equal-length rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), cols], data)
    }

    /// n-by-n identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides of the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    fn expect_rank(&self, r: usize) -> Result<()> {
        if self.rank() != r {
            return Err(Error::shape(format!(
                "expected rank {r}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn dims1(&self) -> Result<usize> {
        self.expect_rank(1)?;
        Ok(self.shape[0])
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        self.expect_rank(2)?;
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        self.expect_rank(3)?;
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        self.expect_rank(4)?;
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims5(&self) -> Result<(usize, usize, usize, usize, usize)> {
        self.expect_rank(5)?;
        Ok((
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            self.shape[4],
        ))
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.rank());
        let strides = self.strides();
        let off: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    #[inline]
    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.shape[1] + j] = v;
    }

    /// Contiguous row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[self.rank() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        Tensor::new(new_shape, self.data.clone())
    }

    /// New tensor with `f` applied elementwise.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::c(self.len() as f64)
    }

    /// Largest absolute entry (0 for the impossible empty case).
    pub fn linf(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Euclidean norm of the flattened buffer.
    pub fn l2(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 2-D transpose.
    pub fn transpose2(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let r = self.rank();
        if axes.len() != r {
            return Err(Error::shape(format!(
                "permutation {axes:?} does not match rank {r}"
            )));
        }
        let mut seen = vec![false; r];
        for &a in axes {
            if a >= r || seen[a] {
                return Err(Error::shape(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = self.strides();
        // stride in the input for each output axis
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut out = Tensor::zeros(&out_shape);
        let mut out_index = vec![0usize; r];
        for out_off in 0..out.data.len() {
            let mut in_off = 0;
            for d in 0..r {
                in_off += out_index[d] * perm_strides[d];
            }
            out.data[out_off] = self.data[in_off];
            // odometer increment of the multi-index
            for d in (0..r).rev() {
                out_index[d] += 1;
                if out_index[d] < out_shape[d] {
                    break;
                }
                out_index[d] = 0;
            }
        }
        Ok(out)
    }

    /// Copies the `[start, end)` slices along axis 0 into a new tensor.
    pub fn slice0(&self, start: usize, end: usize) -> Result<Self> {
        if self.rank() == 0 || end > self.shape[0] || start >= end {
            return Err(Error::shape(format!(
                "slice0 [{start}, {end}) out of range for shape {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(&shape, self.data[start * inner..end * inner].to_vec())
    }

    /// Gathers the given axis-0 slices, in order, into a new tensor.
    pub fn gather0(&self, indices: &[usize]) -> Result<Self> {
        if self.rank() == 0 {
            return Err(Error::shape("gather0 needs rank >= 1"));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(Error::shape(format!(
                    "gather0 index {i} out of range {}",
                    self.shape[0]
                )));
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(&shape, data)
    }

    /// Converts the element type (used only at the file-format boundary).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::c(v.f64())).collect(),
        }
    }
}

/// Largest absolute elementwise difference; shapes must match.
pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    Ok(a.sub(b)?.linf())
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::usage("concat of zero tensors"));
    }
    let rank = parts[0].rank();
    if axis >= rank {
        return Err(Error::shape(format!("concat axis {axis} >= rank {rank}")));
    }
    for p in parts {
        if p.rank() != rank {
            return Err(Error::shape("concat rank mismatch"));
        }
        for d in 0..rank {
            if d != axis && p.shape()[d] != parts[0].shape()[d] {
                return Err(Error::shape(format!(
                    "concat shape mismatch on axis {d}: {:?} vs {:?}",
                    p.shape(),
                    parts[0].shape()
                )));
            }
        }
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(element_count(&out_shape));
    for o in 0..outer {
        for p in parts {
            let span = p.shape()[axis] * inner;
            let start = o * span;
            data.extend_from_slice(&p.data()[start..start + span]);
        }
    }
    Tensor::new(&out_shape, data)
}

/// Core kernel: writes `a (m x k) * b (k x n)` into `out` (row-major, length
/// `m * n`). Delegates to the scalar type's GEMM, which runs on the calling
/// thread, so results do not depend on any thread pool.
fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(m, k, n, a, false, b, false, false, out);
}

/// Matrix product with limited batching:
/// - `[m,k] x [k,n] -> [m,n]`
/// - `[B,m,k] x [k,n] -> [B,m,n]` (shared right factor)
/// - `[m,k] x [B,k,n] -> [B,m,n]` (shared left factor)
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, ka) = a.dims2()?;
            let (kb, n) = b.dims2()?;
            if ka != kb {
                return Err(Error::shape(format!(
                    "matmul inner dimensions {ka} vs {kb} (shapes {:?}, {:?})",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = Tensor::zeros(&[m, n]);
            matmul_kernel(a.data(), b.data(), out.data_mut(), m, ka, n);
            Ok(out)
        }
        (3, 2) => {
            let (bs, m, ka) = a.dims3()?;
            let (kb, n) = b.dims2()?;
            if ka != kb {
                return Err(Error::shape(format!(
                    "matmul inner dimensions {ka} vs {kb} (shapes {:?}, {:?})",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = Tensor::zeros(&[bs, m, n]);
            for s in 0..bs {
                let a_s = &a.data()[s * m * ka..(s + 1) * m * ka];
                let o_s = &mut out.data[s * m * n..(s + 1) * m * n];
                matmul_kernel(a_s, b.data(), o_s, m, ka, n);
            }
            Ok(out)
        }
        (2, 3) => {
            let (m, ka) = a.dims2()?;
            let (bs, kb, n) = b.dims3()?;
            if ka != kb {
                return Err(Error::shape(format!(
                    "matmul inner dimensions {ka} vs {kb} (shapes {:?}, {:?})",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = Tensor::zeros(&[bs, m, n]);
            for s in 0..bs {
                let b_s = &b.data()[s * kb * n..(s + 1) * kb * n];
                let o_s = &mut out.data[s * m * n..(s + 1) * m * n];
                matmul_kernel(a.data(), b_s, o_s, m, ka, n);
            }
            Ok(out)
        }
        (ra, rb) => Err(Error::shape(format!(
            "matmul supports 2-D and one-side-batched 3-D operands, got ranks {ra} and {rb}"
        ))),
    }
}

/// Matrix-vector product `[m,k] x [k] -> [m]`.
pub fn matvec<T: Scalar>(a: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let xl = x.dims1()?;
    if k != xl {
        return Err(Error::shape(format!("matvec: {k} columns vs {xl} entries")));
    }
    let mut out = Tensor::zeros(&[m]);
    matmul_kernel(a.data(), x.data(), out.data_mut(), m, k, 1);
    Ok(out)
}

/// Dot product of equal-length 1-D tensors, accumulated in f64.
pub fn dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    let n = a.dims1()?;
    if b.dims1()? != n {
        return Err(Error::shape("dot length mismatch"));
    }
    let mut acc = 0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        acc = x.f64().mul_add(y.f64(), acc);
    }
    Ok(T::c(acc))
}
