//! Floating-point abstraction so the numeric core works over `f32` and `f64`.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Element type of [`crate::tensor::Tensor`]: an IEEE float with the handful
/// of conversions and assignment operators the kernels need.
///
/// Implemented for `f32` and `f64`; the crate root exports concrete aliases
/// so everyday code never spells the parameter out.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// dtype code used by the tensor file format (0 = f32, 1 = f64).
    const DTYPE_CODE: u8;
    /// Size of one element in bytes.
    const BYTE_WIDTH: usize;

    /// Lossless-enough conversion from `f64` (rounds for `f32`).
    #[inline(always)]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion to `f64` (exact for both supported types' values).
    #[inline(always)]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;

    /// General matrix multiply on row-major slices:
    /// `C = A·B` (or `C += A·B` when `accumulate`), with `A` logically `m x k`
    /// and `B` logically `k x n`. A transpose flag means the slice stores the
    /// transpose of the logical operand (`a_trans`: stored `k x m`; `b_trans`:
    /// stored `n x k`), which lets convolution backward passes avoid
    /// materializing transposed copies.
    ///
    /// The default is a cache-friendly loop accumulating in `f64`; `f32` and
    /// `f64` override it with the tuned `matrixmultiply` kernels. Either way
    /// the product runs on the calling thread and is deterministic for a
    /// given build.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        accumulate: bool,
        c: &mut [Self],
    ) {
        gemm_check(m, k, n, a.len(), b.len(), c.len());
        for i in 0..m {
            let mut acc = vec![0f64; n];
            for kk in 0..k {
                let av = if a_trans { a[kk * m + i] } else { a[i * k + kk] }.f64();
                if b_trans {
                    for (j, slot) in acc.iter_mut().enumerate() {
                        *slot = av.mul_add(b[j * k + kk].f64(), *slot);
                    }
                } else {
                    for (slot, &bv) in acc.iter_mut().zip(&b[kk * n..(kk + 1) * n]) {
                        *slot = av.mul_add(bv.f64(), *slot);
                    }
                }
            }
            for (o, &v) in c[i * n..(i + 1) * n].iter_mut().zip(&acc) {
                *o = if accumulate { Self::c(o.f64() + v) } else { Self::c(v) };
            }
        }
    }
}

/// Shared argument validation for [`Scalar::gemm`] implementations.
fn gemm_check(m: usize, k: usize, n: usize, a_len: usize, b_len: usize, c_len: usize) {
    assert_eq!(a_len, m * k, "gemm: a holds {a_len} elements, needs {m}x{k}");
    assert_eq!(b_len, k * n, "gemm: b holds {b_len} elements, needs {k}x{n}");
    assert_eq!(c_len, m * n, "gemm: c holds {c_len} elements, needs {m}x{n}");
}

/// Row/column strides for a row-major operand, honoring a transpose flag.
/// `rows x cols` is the logical shape; when `trans` the storage is `cols x rows`.
fn gemm_strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

/// Degenerate shapes the tuned kernels need not see: empty output, or an
/// empty inner dimension (where the product contributes nothing). Returns
/// true when the call is fully handled.
fn gemm_trivial<T: Scalar>(m: usize, k: usize, n: usize, accumulate: bool, c: &mut [T]) -> bool {
    if m == 0 || n == 0 {
        return true;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return true;
    }
    false
}

impl Scalar for f32 {
    const DTYPE_CODE: u8 = 0;
    const BYTE_WIDTH: usize = 4;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes per f32"))
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        accumulate: bool,
        c: &mut [Self],
    ) {
        gemm_check(m, k, n, a.len(), b.len(), c.len());
        if gemm_trivial(m, k, n, accumulate, c) {
            return;
        }
        let (rsa, csa) = gemm_strides(m, k, a_trans);
        let (rsb, csb) = gemm_strides(k, n, b_trans);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: lengths match the m x k / k x n / m x n extents (checked
        // above) and the strides describe those same row-major buffers.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    const DTYPE_CODE: u8 = 1;
    const BYTE_WIDTH: usize = 8;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes per f64"))
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        accumulate: bool,
        c: &mut [Self],
    ) {
        gemm_check(m, k, n, a.len(), b.len(), c.len());
        if gemm_trivial(m, k, n, accumulate, c) {
            return;
        }
        let (rsa, csa) = gemm_strides(m, k, a_trans);
        let (rsb, csb) = gemm_strides(k, n, b_trans);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: lengths match the m x k / k x n / m x n extents (checked
        // above) and the strides describe those same row-major buffers.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
