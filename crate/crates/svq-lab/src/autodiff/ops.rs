//! Operator set recorded on the tape.
//!
//! Exactly the operations the quantizers and the toy forecaster need:
//! elementwise arithmetic, (batched) matrix products, relu, 2-D convolution,
//! nearest-neighbor upsampling, reductions, reshaping, axis permutation,
//! concatenation and the straight-through estimator.

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

impl<'t> Var<'t> {
    /// Elementwise sum of two same-shape variables.
    pub fn add(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(rhs)?;
        let value = self.value().add(&rhs.value())?;
        Ok(self.tape().push_op(
            value,
            vec![self.id(), rhs.id()],
            Box::new(move |g| Ok(vec![g.clone(), g.clone()])),
        ))
    }

    /// Elementwise difference.
    pub fn sub(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(rhs)?;
        let value = self.value().sub(&rhs.value())?;
        Ok(self.tape().push_op(
            value,
            vec![self.id(), rhs.id()],
            Box::new(move |g| Ok(vec![g.clone(), g.scale(-1.0)])),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(rhs)?;
        let a = self.value_clone();
        let b = rhs.value_clone();
        let value = a.mul(&b)?;
        Ok(self.tape().push_op(
            value,
            vec![self.id(), rhs.id()],
            Box::new(move |g| Ok(vec![g.mul(&b)?, g.mul(&a)?])),
        ))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&self, k: f64) -> Var<'t> {
        let value = self.value().scale(k);
        self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| Ok(vec![g.scale(k)])),
        )
    }

    /// Adds a length-`n` bias vector to every row of an `[..., n]` tensor.
    pub fn add_bias(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(bias)?;
        let x = self.value_clone();
        let b = bias.value_clone();
        let n = b.dims1()?;
        let last = *x.shape().last().ok_or_else(|| Error::shape("add_bias on scalar"))?;
        if last != n {
            return Err(Error::shape(format!(
                "bias length {n} does not match last dimension {last}"
            )));
        }
        let mut value = x.clone();
        for chunk in value.data_mut().chunks_mut(n) {
            for (v, bv) in chunk.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Ok(self.tape().push_op(
            value,
            vec![self.id(), bias.id()],
            Box::new(move |g| {
                let mut db = vec![0.0f64; n];
                for chunk in g.data().chunks(n) {
                    for (acc, gv) in db.iter_mut().zip(chunk) {
                        *acc += gv;
                    }
                }
                Ok(vec![g.clone(), Tensor::from_vec(db)])
            }),
        ))
    }

    /// Matrix product; shares the batching rules of [`tensor::matmul`].
    pub fn matmul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(rhs)?;
        let a = self.value_clone();
        let b = rhs.value_clone();
        let value = tensor::matmul(&a, &b)?;
        Ok(self.tape().push_op(
            value,
            vec![self.id(), rhs.id()],
            Box::new(move |g| {
                let (da, db) = matmul_backward(&a, &b, g)?;
                Ok(vec![da, db])
            }),
        ))
    }

    /// Rectified linear unit; the derivative at exactly 0 is taken as 0.
    pub fn relu(&self) -> Result<Var<'t>> {
        let x = self.value_clone();
        let value = x.map(|v| v.max(0.0));
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| g.zip_map(&x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }).map(|t| vec![t])),
        ))
    }

    /// Elementwise absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&self) -> Result<Var<'t>> {
        let x = self.value_clone();
        let value = x.map(f64::abs);
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| {
                g.zip_map(&x, |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })
                .map(|t| vec![t])
            }),
        ))
    }

    /// Elementwise square.
    pub fn square(&self) -> Result<Var<'t>> {
        let x = self.value_clone();
        let value = x.map(|v| v * v);
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| g.zip_map(&x, |gv, xv| 2.0 * xv * gv).map(|t| vec![t])),
        ))
    }

    /// Elementwise hyperbolic tangent (used by the bounded scalar quantizer).
    pub fn tanh(&self) -> Result<Var<'t>> {
        let value = self.value().map(f64::tanh);
        let y = value.clone();
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| g.zip_map(&y, |gv, yv| gv * (1.0 - yv * yv)).map(|t| vec![t])),
        ))
    }

    /// Mean over all elements (scalar of shape `[1]`).
    pub fn mean(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let n = self.value().len();
        let value = Tensor::scalar(self.value().mean());
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| {
                let gv = g.data()[0] / n as f64;
                Ok(vec![Tensor::full(&shape, gv)])
            }),
        ))
    }

    /// Sum over all elements (scalar of shape `[1]`).
    pub fn sum(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let value = Tensor::scalar(self.value().sum());
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| Ok(vec![Tensor::full(&shape, g.data()[0])])),
        ))
    }

    /// Same data, new shape.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Var<'t>> {
        let old_shape = self.shape();
        let value = self.value().reshape(new_shape)?;
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| Ok(vec![g.reshape(&old_shape)?])),
        ))
    }

    /// Axis permutation; backward applies the inverse permutation.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t>> {
        let value = self.value().permute(axes)?;
        let mut inverse = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.tape().push_op(
            value,
            vec![self.id()],
            Box::new(move |g| Ok(vec![g.permute(&inverse)?])),
        ))
    }

    /// Straight-through estimator: the forward value is `q` (bit-exact), the
    /// backward pass forwards the incoming gradient to `self` unchanged.
    pub fn straight_through(&self, q: &Tensor) -> Result<Var<'t>> {
        if self.value().shape() != q.shape() {
            return Err(Error::shape(format!(
                "straight_through value shape {:?} vs replacement {:?}",
                self.value().shape(),
                q.shape()
            )));
        }
        Ok(self.tape().push_op(
            q.clone(),
            vec![self.id()],
            Box::new(move |g| Ok(vec![g.clone()])),
        ))
    }

    /// 2-D convolution over `[B, C_in, H, W]` with kernel
    /// `[C_out, C_in, kh, kw]`, zero padding and the given stride.
    pub fn conv2d(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        self.check_same_tape(weight)?;
        if let Some(b) = bias {
            self.check_same_tape(b)?;
        }
        let x = self.value_clone();
        let w = weight.value_clone();
        let b = bias.map(|b| b.value_clone());
        let value = conv2d_forward(&x, &w, b.as_ref(), stride, padding)?;
        let mut parents = vec![self.id(), weight.id()];
        if let Some(bv) = bias {
            parents.push(bv.id());
        }
        let has_bias = bias.is_some();
        Ok(self.tape().push_op(
            value,
            parents,
            Box::new(move |g| {
                let dx = conv2d_backward_input(g, &w, x.shape(), stride, padding)?;
                let dw = conv2d_backward_weight(g, &x, w.shape(), stride, padding)?;
                let mut out = vec![dx, dw];
                if has_bias {
                    out.push(conv2d_backward_bias(g)?);
                }
                Ok(out)
            }),
        ))
    }

    /// Nearest-neighbor 2x upsampling of `[B, C, H, W]`.
    pub fn upsample_nearest_2x(&self) -> Result<Var<'t>> {
        let x = self.value_clone();
        let (b, c, h, w) = x.dims4()?;
        let mut out = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
        {
            let src = x.data();
            let dst = out.data_mut();
            for bc in 0..b * c {
                let sbase = bc * h * w;
                let dbase = bc * 4 * h * w;
                for y in 0..2 * h {
                    let srow = sbase + (y / 2) * w;
                    let drow = dbase + y * 2 * w;
                    for xx in 0..2 * w {
                        dst[drow + xx] = src[srow + xx / 2];
                    }
                }
            }
        }
        Ok(self.tape().push_op(
            out,
            vec![self.id()],
            Box::new(move |g| {
                let mut dx = Tensor::zeros(&[b, c, h, w]);
                let gd = g.data();
                let dd = dx.data_mut();
                for bc in 0..b * c {
                    let sbase = bc * h * w;
                    let gbase = bc * 4 * h * w;
                    for y in 0..2 * h {
                        let srow = sbase + (y / 2) * w;
                        let grow = gbase + y * 2 * w;
                        for xx in 0..2 * w {
                            dd[srow + xx / 2] += gd[grow + xx];
                        }
                    }
                }
                Ok(vec![dx])
            }),
        ))
    }
}

/// Concatenates variables along `axis`.
pub fn concat_vars<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    if parts.is_empty() {
        return Err(Error::usage("concat of zero variables"));
    }
    for p in &parts[1..] {
        parts[0].check_same_tape(p)?;
    }
    let values: Vec<Tensor> = parts.iter().map(|p| p.value_clone()).collect();
    let refs: Vec<&Tensor> = values.iter().collect();
    let value = tensor::concat(&refs, axis)?;
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let parents: Vec<usize> = parts.iter().map(|p| p.id()).collect();
    Ok(parts[0].tape().push_op(
        value,
        parents,
        Box::new(move |g| split_axis(g, axis, &sizes)),
    ))
}

/// Inverse of concat: splits `t` along `axis` into chunks of the given sizes.
fn split_axis(t: &Tensor, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let total_axis = shape[axis];
    debug_assert_eq!(total_axis, sizes.iter().sum::<usize>());
    let mut outs: Vec<Tensor> = sizes
        .iter()
        .map(|&s| {
            let mut sh = shape.to_vec();
            sh[axis] = s;
            Tensor::zeros(&sh)
        })
        .collect();
    let src = t.data();
    for o in 0..outer {
        let mut offset = 0usize;
        for (part, &s) in outs.iter_mut().zip(sizes) {
            let span = s * inner;
            let src_start = o * total_axis * inner + offset * inner;
            let dst_start = o * span;
            part.data_mut()[dst_start..dst_start + span]
                .copy_from_slice(&src[src_start..src_start + span]);
            offset += s;
        }
    }
    Ok(outs)
}

/// Gradients of `C = A x B` for the three supported matmul forms.
fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let da = tensor::matmul(g, &b.transpose2()?)?;
            let db = tensor::matmul(&a.transpose2()?, g)?;
            Ok((da, db))
        }
        (3, 2) => {
            // A: [S,m,k], B: [k,n], G: [S,m,n]
            let (s, m, k) = a.dims3()?;
            let (_, n) = b.dims2()?;
            let da = tensor::matmul(g, &b.transpose2()?)?; // [S,m,k]
            let mut db = Tensor::zeros(&[k, n]);
            for si in 0..s {
                let a_s = Tensor::new(&[m, k], a.data()[si * m * k..(si + 1) * m * k].to_vec())?;
                let g_s = Tensor::new(&[m, n], g.data()[si * m * n..(si + 1) * m * n].to_vec())?;
                db = db.add(&tensor::matmul(&a_s.transpose2()?, &g_s)?)?;
            }
            Ok((da, db))
        }
        (2, 3) => {
            // A: [m,k], B: [S,k,n], G: [S,m,n]
            let (m, k) = a.dims2()?;
            let (s, _, n) = b.dims3()?;
            let mut da = Tensor::zeros(&[m, k]);
            for si in 0..s {
                let b_s = Tensor::new(&[k, n], b.data()[si * k * n..(si + 1) * k * n].to_vec())?;
                let g_s = Tensor::new(&[m, n], g.data()[si * m * n..(si + 1) * m * n].to_vec())?;
                da = da.add(&tensor::matmul(&g_s, &b_s.transpose2()?)?)?;
            }
            let db = tensor::matmul(&a.transpose2()?, g)?; // [S,k,n]
            Ok((da, db))
        }
        _ => Err(Error::shape("unsupported matmul ranks in backward")),
    }
}

fn conv2d_output_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::param("conv2d stride must be >= 1"));
    }
    let h_p = h + 2 * padding;
    let w_p = w + 2 * padding;
    if kh > h_p || kw > w_p {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than padded input {h_p}x{w_p}"
        )));
    }
    Ok(((h_p - kh) / stride + 1, (w_p - kw) / stride + 1))
}

/// Valid output-column range `[lo, hi)` for a kernel column `kx`, i.e. the
/// `ox` values whose input column `ox*stride + kx - padding` is in `[0, w)`.
#[inline]
fn ox_range(kx: usize, stride: usize, padding: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kx >= padding {
        0
    } else {
        (padding - kx).div_ceil(stride)
    };
    // ox*stride + kx - padding <= w-1
    let hi_num = w + padding;
    let hi = if hi_num > kx {
        ((hi_num - 1 - kx) / stride + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Geometry shared by the patch-matrix (im2col) convolution kernels.
#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Rows of the patch matrix: one per (input channel, kernel offset).
    fn patch_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    /// Columns of the patch matrix: one per output position.
    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// Scatters one input frame `[cin, h, w]` into the patch matrix `cols`
/// (`[patch_rows, positions]`, pre-zeroed so padding entries stay zero), with
/// row `(ci*kh + ky)*kw + kx` and column `oy*wo + ox`. The convolution then
/// becomes a single `weights x cols` product per frame.
fn im2col(frame: &[f64], g: ConvGeom, cols: &mut [f64]) {
    let l = g.positions();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * l;
                let (lo, hi) = ox_range(kx, g.stride, g.padding, g.w, g.wo);
                for oy in 0..g.ho {
                    let iy = oy * g.stride + ky;
                    if iy < g.padding || iy >= g.h + g.padding {
                        continue;
                    }
                    let iy = iy - g.padding;
                    let dst = row + oy * g.wo;
                    let src = (ci * g.h + iy) * g.w;
                    if g.stride == 1 {
                        let ix0 = lo + kx - g.padding;
                        cols[dst + lo..dst + hi].copy_from_slice(&frame[src + ix0..src + ix0 + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            cols[dst + ox] = frame[src + ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates the patch-matrix gradient back onto the
/// input frame (positions hit by several patches sum their contributions).
fn col2im_add(cols: &[f64], g: ConvGeom, frame: &mut [f64]) {
    let l = g.positions();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * l;
                let (lo, hi) = ox_range(kx, g.stride, g.padding, g.w, g.wo);
                for oy in 0..g.ho {
                    let iy = oy * g.stride + ky;
                    if iy < g.padding || iy >= g.h + g.padding {
                        continue;
                    }
                    let iy = iy - g.padding;
                    let src = row + oy * g.wo;
                    let dst = (ci * g.h + iy) * g.w;
                    for ox in lo..hi {
                        frame[dst + ox * g.stride + kx - g.padding] += cols[src + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, cin, h, wd) = x.dims4()?;
    let (cout, cin_w, kh, kw) = w.dims4()?;
    if cin != cin_w {
        return Err(Error::shape(format!(
            "conv2d input channels {cin} vs kernel channels {cin_w}"
        )));
    }
    if let Some(bv) = bias {
        if bv.dims1()? != cout {
            return Err(Error::shape("conv2d bias length must equal output channels"));
        }
    }
    let (ho, wo) = conv2d_output_dims(h, wd, kh, kw, stride, padding)?;
    let geom = ConvGeom { cin, h, w: wd, kh, kw, stride, padding, ho, wo };
    let (rows, l) = (geom.patch_rows(), geom.positions());
    let mut out = Tensor::zeros(&[b, cout, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    let mut cols = vec![0.0; rows * l];
    for bi in 0..b {
        cols.fill(0.0);
        im2col(&xd[bi * cin * h * wd..(bi + 1) * cin * h * wd], geom, &mut cols);
        let frame_out = &mut od[bi * cout * l..(bi + 1) * cout * l];
        f64::gemm(cout, rows, l, w.data(), false, &cols, false, false, frame_out);
        if let Some(bv) = bias {
            for (co, &bval) in bv.data().iter().enumerate() {
                for v in &mut frame_out[co * l..(co + 1) * l] {
                    *v += bval;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv2d_backward_input(
    g: &Tensor,
    w: &Tensor,
    x_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, cin, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (cout, _, kh, kw) = w.dims4()?;
    let (_, _, ho, wo) = g.dims4()?;
    let geom = ConvGeom { cin, h, w: wd, kh, kw, stride, padding, ho, wo };
    let (rows, l) = (geom.patch_rows(), geom.positions());
    let mut dx = Tensor::zeros(x_shape);
    let gd = g.data();
    let dd = dx.data_mut();
    let mut gcols = vec![0.0; rows * l];
    for bi in 0..b {
        // patch-matrix gradient = weights^T x frame gradient
        f64::gemm(
            rows,
            cout,
            l,
            w.data(),
            true,
            &gd[bi * cout * l..(bi + 1) * cout * l],
            false,
            false,
            &mut gcols,
        );
        col2im_add(&gcols, geom, &mut dd[bi * cin * h * wd..(bi + 1) * cin * h * wd]);
    }
    Ok(dx)
}

pub(crate) fn conv2d_backward_weight(
    g: &Tensor,
    x: &Tensor,
    w_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, cin, h, wd) = x.dims4()?;
    let (cout, _, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    let (_, _, ho, wo) = g.dims4()?;
    let geom = ConvGeom { cin, h, w: wd, kh, kw, stride, padding, ho, wo };
    let (rows, l) = (geom.patch_rows(), geom.positions());
    let mut dw = Tensor::zeros(w_shape);
    let xd = x.data();
    let gd = g.data();
    let mut cols = vec![0.0; rows * l];
    for bi in 0..b {
        cols.fill(0.0);
        im2col(&xd[bi * cin * h * wd..(bi + 1) * cin * h * wd], geom, &mut cols);
        // dw += frame gradient x patches^T, accumulated across the batch
        f64::gemm(
            cout,
            l,
            rows,
            &gd[bi * cout * l..(bi + 1) * cout * l],
            false,
            &cols,
            true,
            true,
            dw.data_mut(),
        );
    }
    Ok(dw)
}

pub(crate) fn conv2d_backward_bias(g: &Tensor) -> Result<Tensor> {
    let (b, cout, ho, wo) = g.dims4()?;
    let mut db = Tensor::zeros(&[cout]);
    let gd = g.data();
    for bi in 0..b {
        for co in 0..cout {
            let base = (bi * cout + co) * ho * wo;
            let mut acc = 0.0;
            for v in &gd[base..base + ho * wo] {
                acc += v;
            }
            db.data_mut()[co] += acc;
        }
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::super::{grad_check, Tape};
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::max_abs_diff;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        Rng::new(seed).fill_uniform(t.data_mut(), -1.0, 1.0);
        t
    }

    /// Random values kept away from relu/abs kinks.
    fn random_kink_free(shape: &[usize], seed: u64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        let mut rng = Rng::new(seed);
        for v in t.data_mut() {
            loop {
                let draw = rng.uniform(-1.0, 1.0);
                if draw.abs() >= 1e-3 {
                    *v = draw;
                    break;
                }
            }
        }
        t
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = x.relu().unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mean_square_gradient_is_analytic() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![1.0, 2.0]));
        let y = x.square().unwrap().mean().unwrap();
        tape.backward(y).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn straight_through_contract() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![0.3]));
        let q = Tensor::from_vec(vec![1.0]);
        let y = x.straight_through(&q).unwrap();
        assert_eq!(y.value().data(), &[1.0]);
        let loss = y.scale(2.0).sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0]);
    }

    #[test]
    fn straight_through_identity_when_q_equals_value() {
        let tape = Tape::new();
        let v = Tensor::from_vec(vec![0.5, -0.25]);
        let x = tape.var(v.clone());
        let y = x.straight_through(&v).unwrap();
        assert_eq!(y.value().data(), v.data());
        let loss = y.square().unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, -0.5]);
    }

    #[test]
    fn straight_through_mse_routes_output_gradient() {
        // loss = mean((STE(x,q) - t)^2) => dx = 2(q - t)/n
        let tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![0.3, -0.7]));
        let q = Tensor::from_vec(vec![1.0, 0.0]);
        let t = tape.constant(Tensor::from_vec(vec![0.25, 0.5]));
        let y = x.straight_through(&q).unwrap();
        let loss = y.sub(&t).unwrap().square().unwrap().mean().unwrap();
        tape.backward(loss).unwrap();
        let expect = [2.0 * (1.0 - 0.25) / 2.0, 2.0 * (0.0 - 0.5) / 2.0];
        assert_eq!(x.grad().unwrap().data(), &expect);
    }

    #[test]
    fn straight_through_shape_mismatch_errors() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![0.3]));
        let q = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(matches!(x.straight_through(&q), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_ops_pass_grad_check() {
        let p = random_kink_free(&[2, 3], 1);
        let q = random_kink_free(&[2, 3], 2);
        let err = grad_check(
            |_, vars| {
                let s = vars[0].mul(&vars[1])?.add(&vars[0])?.sub(&vars[1])?;
                s.square()?.mean()
            },
            &[p, q],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn abs_and_relu_pass_grad_check_off_kink() {
        let p = random_kink_free(&[3, 3], 3);
        let err = grad_check(
            |_, vars| vars[0].relu()?.sum()?.add(&vars[0].abs()?.mean()?),
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn tanh_passes_grad_check() {
        let p = random(&[2, 4], 30);
        let err = grad_check(
            |_, vars| vars[0].tanh()?.square()?.mean(),
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn matmul_2d_passes_grad_check() {
        let a = random(&[3, 4], 4);
        let b = random(&[4, 2], 5);
        let err = grad_check(
            |_, vars| vars[0].matmul(&vars[1])?.square()?.mean(),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "rel err {err}");
    }

    #[test]
    fn batched_matmul_passes_grad_check() {
        let a = random(&[2, 3, 4], 6);
        let b = random(&[4, 5], 7);
        let err = grad_check(
            |_, vars| vars[0].matmul(&vars[1])?.square()?.mean(),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "3d x 2d rel err {err}");

        let a = random(&[3, 4], 8);
        let b = random(&[2, 4, 5], 9);
        let err = grad_check(
            |_, vars| vars[0].matmul(&vars[1])?.square()?.mean(),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "2d x 3d rel err {err}");
    }

    #[test]
    fn add_bias_broadcasts_and_checks_gradient() {
        let x = random(&[4, 3], 10);
        let b = random(&[3], 11);
        let err = grad_check(
            |_, vars| vars[0].add_bias(&vars[1])?.square()?.mean(),
            &[x, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn conv2d_matches_finite_differences() {
        let x = random(&[1, 1, 5, 5], 12);
        let w = random(&[1, 1, 3, 3], 13);
        let b = random(&[1], 14);
        let err = grad_check(
            |_, vars| {
                vars[0]
                    .conv2d(&vars[1], Some(&vars[2]), 1, 1)?
                    .square()?
                    .mean()
            },
            &[x, w, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn strided_conv2d_passes_grad_check() {
        let x = random(&[2, 2, 6, 6], 15);
        let w = random(&[3, 2, 3, 3], 16);
        let err = grad_check(
            |_, vars| vars[0].conv2d(&vars[1], None, 2, 1)?.square()?.mean(),
            &[x, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    /// Independent oracle: direct six-deep loop over every output element.
    fn naive_conv2d_forward(
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Tensor {
        let (b, cin, h, wd) = x.dims4().unwrap();
        let (cout, _, kh, kw) = w.dims4().unwrap();
        let (ho, wo) = conv2d_output_dims(h, wd, kh, kw, stride, padding).unwrap();
        let mut out = Tensor::zeros(&[b, cout, ho, wo]);
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.map_or(0.0, |bv| bv.data()[co]);
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((bi * cin + ci) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_patch_matrix_path_matches_direct_loop_oracle() {
        // exercise strides, padding, rectangular frames and channel mixes
        let cases: &[(&[usize], usize, usize, usize, bool)] = &[
            (&[2, 3, 7, 5], 4, 1, 1, true),
            (&[1, 2, 6, 6], 3, 2, 1, false),
            (&[2, 1, 5, 8], 2, 2, 0, true),
            (&[1, 4, 4, 4], 5, 1, 0, false),
            (&[3, 2, 9, 9], 1, 3, 1, true),
        ];
        for (idx, &(xs, cout, stride, padding, with_bias)) in cases.iter().enumerate() {
            let seed = 40 + idx as u64;
            let x = random(xs, seed);
            let w = random(&[cout, xs[1], 3, 3], seed + 100);
            let bias = with_bias.then(|| random(&[cout], seed + 200));
            let fast = conv2d_forward(&x, &w, bias.as_ref(), stride, padding).unwrap();
            let slow = naive_conv2d_forward(&x, &w, bias.as_ref(), stride, padding);
            assert!(
                max_abs_diff(&fast, &slow).unwrap() < 1e-12,
                "case {idx}: forward mismatch"
            );

            // backward passes against the same oracle via finite reasoning:
            // dx[i] = sum_j w-path contributions, checked by perturbing the
            // direct-loop forward one coordinate at a time
            let g = random(fast.shape(), seed + 300);
            let dx = conv2d_backward_input(&g, &w, x.shape(), stride, padding).unwrap();
            let dw = conv2d_backward_weight(&g, &x, w.shape(), stride, padding).unwrap();
            let step = 1e-6;
            let dot = |t: &Tensor, u: &Tensor| -> f64 {
                t.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()
            };
            for probe in 0..4 {
                let mut xp = x.clone();
                let xi = (probe * 37) % xp.data().len();
                xp.data_mut()[xi] += step;
                let shifted = naive_conv2d_forward(&xp, &w, bias.as_ref(), stride, padding);
                let num = (dot(&shifted, &g) - dot(&slow, &g)) / step;
                assert!(
                    (num - dx.data()[xi]).abs() < 1e-4,
                    "case {idx}: dx[{xi}] {} vs numeric {num}",
                    dx.data()[xi]
                );
                let mut wp = w.clone();
                let wi = (probe * 11) % wp.data().len();
                wp.data_mut()[wi] += step;
                let shifted = naive_conv2d_forward(&x, &wp, bias.as_ref(), stride, padding);
                let num = (dot(&shifted, &g) - dot(&slow, &g)) / step;
                assert!(
                    (num - dw.data()[wi]).abs() < 1e-4,
                    "case {idx}: dw[{wi}] {} vs numeric {num}",
                    dw.data()[wi]
                );
            }
        }
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let x = random(&[1, 1, 4, 4], 17);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // center tap
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let wv = tape.constant(w);
        let y = xv.conv2d(&wv, None, 1, 1).unwrap();
        assert!(max_abs_diff(&y.value_clone(), &x).unwrap() == 0.0);
    }

    #[test]
    fn conv2d_shape_errors() {
        let tape = Tape::new();
        let x = tape.var(random(&[1, 2, 4, 4], 18));
        let w = tape.var(random(&[1, 3, 3, 3], 19));
        assert!(matches!(x.conv2d(&w, None, 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_values_and_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = x.upsample_nearest_2x().unwrap();
        assert_eq!(
            y.value().data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let loss = y.sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[4.0, 4.0, 4.0, 4.0]);

        let err = grad_check(
            |_, vars| vars[0].upsample_nearest_2x()?.square()?.mean(),
            &[random(&[2, 3, 3, 2], 20)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn reshape_and_permute_pass_grad_check() {
        let x = random(&[2, 3, 4], 21);
        let err = grad_check(
            |_, vars| {
                vars[0]
                    .permute(&[2, 0, 1])?
                    .reshape(&[4, 6])?
                    .square()?
                    .mean()
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn concat_values_and_gradients() {
        let tape = Tape::new();
        let a = tape.var(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = tape.var(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = concat_vars(&[a, b], 0).unwrap();
        assert_eq!(c.value().shape(), &[3, 2]);
        let loss = c.square().unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(a.grad().unwrap().data(), &[2.0, 4.0]);
        assert_eq!(b.grad().unwrap().data(), &[6.0, 8.0, 10.0, 12.0]);

        let x = random(&[2, 2], 22);
        let y = random(&[2, 3], 23);
        let err = grad_check(
            |_, vars| concat_vars(&[vars[0], vars[1]], 1)?.square()?.mean(),
            &[x, y],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn two_layer_mlp_with_mae_loss_grad_checks() {
        // x -> relu(x W1 + b1) W2, MAE against a fixed target; inputs chosen
        // away from both relu and abs kinks.
        let x = random_kink_free(&[2, 3], 24);
        let w1 = random(&[3, 5], 25);
        let b1 = random(&[5], 26);
        let w2 = random(&[5, 2], 27);
        let target = random(&[2, 2], 28).scale(10.0); // far from predictions
        let err = grad_check(
            |tape, vars| {
                let t = tape.constant(target.clone());
                let h = vars[0].matmul(&vars[1])?.add_bias(&vars[2])?.relu()?;
                let pred = h.matmul(&vars[3])?;
                pred.sub(&t)?.abs()?.mean()
            },
            &[x, w1, b1, w2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }
}
