//! Forecast quality metrics: MSE, MAE, PSNR, SSIM, and index perplexity.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::perplexity_of_counts;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "shape {:?} does not match {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Mean absolute error over all elements.
pub fn mae(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB; identical inputs give positive
/// infinity (rendered as `inf` downstream).
pub fn psnr(pred: &Tensor, target: &Tensor, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) || !max_val.is_finite() {
        return Err(Error::param("peak value must be positive and finite"));
    }
    let e = mse(pred, target)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / e).log10())
}

/// The 11x11 Gaussian window (sigma 1.5) as flat weights summing to one.
fn gaussian_window() -> Vec<f64> {
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut w = vec![0.0; n * n];
    let inv = 1.0 / (2.0 * SSIM_SIGMA * SSIM_SIGMA);
    let mut total = 0.0;
    for y in 0..n {
        for x in 0..n {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let g = (-d2 * inv).exp();
            w[y * n + x] = g;
            total += g;
        }
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// SSIM of one pair of frames given as flat `[h*w]` slices.
fn ssim_frame(pred: &[f64], target: &[f64], h: usize, w: usize, max_val: f64) -> Result<f64> {
    let win = SSIM_WINDOW;
    if h < win || w < win {
        return Err(Error::param(format!(
            "frame {h}x{w} is smaller than the {win}x{win} comparison window"
        )));
    }
    let weights = gaussian_window();
    let c1 = (SSIM_K1 * max_val) * (SSIM_K1 * max_val);
    let c2 = (SSIM_K2 * max_val) * (SSIM_K2 * max_val);
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(h - win) {
        for wx in 0..=(w - win) {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            let mut xx = 0.0;
            let mut yy = 0.0;
            let mut xy = 0.0;
            for ky in 0..win {
                let row = (wy + ky) * w + wx;
                let wrow = ky * win;
                for kx in 0..win {
                    let g = weights[wrow + kx];
                    let a = pred[row + kx];
                    let b = target[row + kx];
                    mu_x += g * a;
                    mu_y += g * b;
                    xx += g * a * a;
                    yy += g * b * b;
                    xy += g * a * b;
                }
            }
            let var_x = xx - mu_x * mu_x;
            let var_y = yy - mu_y * mu_y;
            let cov = xy - mu_x * mu_y;
            let num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean structural similarity over all frames. Accepts `[h, w]` frames or
/// any higher-rank tensor whose trailing two axes are the frame; leading
/// axes are averaged.
pub fn ssim(pred: &Tensor, target: &Tensor, max_val: f64) -> Result<f64> {
    check_shapes(pred, target)?;
    if !(max_val > 0.0) || !max_val.is_finite() {
        return Err(Error::param("peak value must be positive and finite"));
    }
    let shape = pred.shape();
    if shape.len() < 2 {
        return Err(Error::shape("frames need at least two axes"));
    }
    let w = shape[shape.len() - 1];
    let h = shape[shape.len() - 2];
    let frames = pred.len() / (h * w);
    let mut total = 0.0;
    for f in 0..frames {
        let lo = f * h * w;
        let hi = lo + h * w;
        total += ssim_frame(&pred.data()[lo..hi], &target.data()[lo..hi], h, w, max_val)?;
    }
    Ok(total / frames as f64)
}

/// Exponential of the Shannon entropy of the empirical index distribution.
/// Uniform usage returns the number of distinct indices exactly.
pub fn index_perplexity(indices: &[u32], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("index range must be at least 1"));
    }
    if indices.is_empty() {
        return Err(Error::param("at least one index required"));
    }
    let mut counts = vec![0u64; n];
    for &i in indices {
        let slot = counts
            .get_mut(i as usize)
            .ok_or_else(|| Error::data(format!("index {i} out of range 0..{n}")))?;
        *slot += 1;
    }
    Ok(perplexity_of_counts(&counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        Rng::new(seed).fill_uniform(t.data_mut(), 0.0, 1.0);
        t
    }

    #[test]
    fn mse_mae_examples() {
        let a = random(&[3, 4], 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let p = Tensor::from_vec(vec![3.0, 0.0]);
        let t = Tensor::from_vec(vec![0.0, 3.0]);
        assert_eq!(mse(&p, &t).unwrap(), 9.0);
        assert_eq!(mae(&p, &t).unwrap(), 3.0);
        assert!(mse(&a, &p).is_err());
    }

    #[test]
    fn mse_mae_match_scalar_loop_oracle() {
        let a = random(&[5, 7], 2);
        let b = random(&[5, 7], 3);
        let mut se = 0.0;
        let mut ae = 0.0;
        for i in 0..a.len() {
            let d = a.data()[i] - b.data()[i];
            se += d * d;
            ae += d.abs();
        }
        assert!((mse(&a, &b).unwrap() - se / 35.0).abs() < 1e-15);
        assert!((mae(&a, &b).unwrap() - ae / 35.0).abs() < 1e-15);
    }

    #[test]
    fn psnr_examples() {
        // MSE 0.01 at peak 1 -> exactly 20 dB
        let p = Tensor::from_vec(vec![0.1, 0.1, 0.1, 0.1]);
        let t = Tensor::from_vec(vec![0.0, 0.2, 0.0, 0.2]);
        assert!((psnr(&p, &t, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&p, &p, 1.0).unwrap(), f64::INFINITY);
        // doubling the peak adds 20 log10(2) ~ 6.0206 dB
        let d = psnr(&p, &t, 2.0).unwrap() - psnr(&p, &t, 1.0).unwrap();
        assert!((d - 20.0 * 2.0f64.log10()).abs() < 1e-12);
        assert!(psnr(&p, &t, 0.0).is_err());
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let x = random(&[16, 16], 4);
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
        let batched = random(&[2, 3, 12, 14], 5);
        assert_eq!(ssim(&batched, &batched, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        // checkerboard against its inverse: luminance terms collapse and
        // the structure term is anti-correlated
        let mut x = Tensor::zeros(&[12, 12]);
        for i in 0..12 {
            for j in 0..12 {
                x.data_mut()[i * 12 + j] = ((i + j) % 2) as f64;
            }
        }
        let inv = x.map(|v| 1.0 - v);
        let s = ssim(&x, &inv, 1.0).unwrap();
        assert!(s < 0.0, "ssim {s}");
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let x = random(&[10, 12], 6);
        assert!(ssim(&x, &x, 1.0).is_err());
        let y = random(&[11, 11], 6);
        assert!(ssim(&y, &y, 1.0).is_ok());
    }

    /// Straight-line reference: per window, compute the weighted moments
    /// with scalar loops laid out differently from the production code.
    fn ssim_naive(pred: &Tensor, target: &Tensor, max_val: f64) -> f64 {
        let (h, w) = (pred.shape()[0], pred.shape()[1]);
        let c = (SSIM_WINDOW / 2) as f64;
        let mut weights = Vec::new();
        for y in 0..SSIM_WINDOW {
            for x in 0..SSIM_WINDOW {
                let d2 = (y as f64 - c) * (y as f64 - c) + (x as f64 - c) * (x as f64 - c);
                weights.push((-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
            }
        }
        let z: f64 = weights.iter().sum();
        let c1 = (SSIM_K1 * max_val).powi(2);
        let c2 = (SSIM_K2 * max_val).powi(2);
        let mut vals = Vec::new();
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let mut px = Vec::new();
                let mut py = Vec::new();
                let mut pw = Vec::new();
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        px.push(pred.get2(wy + ky, wx + kx));
                        py.push(target.get2(wy + ky, wx + kx));
                        pw.push(weights[ky * SSIM_WINDOW + kx] / z);
                    }
                }
                let mu_x: f64 = px.iter().zip(&pw).map(|(v, g)| v * g).sum();
                let mu_y: f64 = py.iter().zip(&pw).map(|(v, g)| v * g).sum();
                let var_x: f64 = px.iter().zip(&pw).map(|(v, g)| g * (v - mu_x) * (v - mu_x)).sum();
                let var_y: f64 = py.iter().zip(&pw).map(|(v, g)| g * (v - mu_y) * (v - mu_y)).sum();
                let cov: f64 = px
                    .iter()
                    .zip(py.iter())
                    .zip(&pw)
                    .map(|((a, b), g)| g * (a - mu_x) * (b - mu_y))
                    .sum();
                vals.push(
                    ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)),
                );
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_matches_naive_reference() {
        let a = random(&[16, 16], 7);
        let b = random(&[16, 16], 8);
        let fast = ssim(&a, &b, 1.0).unwrap();
        let slow = ssim_naive(&a, &b, 1.0);
        assert!((fast - slow).abs() < 1e-9, "fast {fast} naive {slow}");
        // a correlated pair too, not just independent noise
        let c = a.map(|v| (0.8 * v + 0.1).clamp(0.0, 1.0));
        let fast = ssim(&a, &c, 1.0).unwrap();
        let slow = ssim_naive(&a, &c, 1.0);
        assert!((fast - slow).abs() < 1e-9);
    }

    #[test]
    fn index_perplexity_examples() {
        assert_eq!(index_perplexity(&[0, 1, 2, 3], 4).unwrap(), 4.0);
        assert_eq!(index_perplexity(&[5, 5, 5], 8).unwrap(), 1.0);
        assert_eq!(index_perplexity(&[0, 0, 1, 1], 1024).unwrap(), 2.0);
        assert!(index_perplexity(&[4], 4).is_err());
        assert!(index_perplexity(&[], 4).is_err());
        assert!(index_perplexity(&[0], 0).is_err());
    }

    #[test]
    fn index_perplexity_nonuniform_matches_entropy() {
        // counts 3,1 -> H = ln4 - (3 ln 3)/4
        let p = index_perplexity(&[2, 2, 2, 7], 8).unwrap();
        let h = 4.0f64.ln() - 3.0 * 3.0f64.ln() / 4.0;
        assert!((p - h.exp()).abs() < 1e-12);
    }
}
