//! Scalar quantizers without code lookup: finite scalar quantization over a
//! per-channel integer grid, and binary sign quantization.

use super::QuantizeResult;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest number of binary channels whose index fits comfortably in u32.
pub const MAX_LFQ_CHANNELS: usize = 30;

/// Per-channel bounding constants for a given level count.
///
/// `bounded(v) = half * tanh(v + shift) - offset` maps the real line into an
/// open interval that rounds onto exactly `levels` integers. Odd level counts
/// use a symmetric grid around 0; even counts shift the grid by one half so
/// it still covers `levels` integers, and `shift` re-centers the map so that
/// `bounded(0)` rounds to a valid code.
#[derive(Debug, Clone, Copy)]
pub struct ChannelBound {
    pub half: f64,
    pub offset: f64,
    pub shift: f64,
    pub levels: u32,
}

impl ChannelBound {
    pub fn new(levels: u32) -> Result<Self> {
        if levels < 2 {
            return Err(Error::config(format!(
                "every channel needs at least 2 levels, got {levels}"
            )));
        }
        let half = (levels - 1) as f64 / 2.0;
        let offset = if levels % 2 == 0 { 0.5 } else { 0.0 };
        // offset/half reaches 1 only for 2 levels; clamp keeps atanh finite
        let ratio = (offset / half).min(1.0 - 1e-9);
        let shift = ratio.atanh();
        Ok(Self {
            half,
            offset,
            shift,
            levels,
        })
    }

    /// Smooth squashing of a raw value into the roundable range.
    #[inline]
    pub fn bound(&self, v: f64) -> f64 {
        self.half * (v + self.shift).tanh() - self.offset
    }

    /// Integer grid value for a raw input.
    #[inline]
    pub fn quantize(&self, v: f64) -> f64 {
        self.bound(v).round()
    }

    /// Grid value -> digit in `[0, levels)`.
    #[inline]
    pub fn digit(&self, q: f64) -> u32 {
        (q + (self.levels / 2) as f64) as u32
    }
}

/// Validated bounds for a whole channel list.
pub fn channel_bounds(levels: &[u32]) -> Result<Vec<ChannelBound>> {
    if levels.is_empty() {
        return Err(Error::config("at least one quantization level required"));
    }
    levels.iter().map(|&l| ChannelBound::new(l)).collect()
}

/// Product of all level counts: the implied codebook size.
pub fn fsq_codebook_size(levels: &[u32]) -> usize {
    levels.iter().map(|&l| l as usize).product()
}

/// Finite scalar quantization of `[B, k]` onto a per-channel integer grid.
///
/// Each channel is squashed by a shifted tanh and rounded; the per-channel
/// digits compose into one index in mixed radix with channel 0 least
/// significant. The quantized tensor holds the integer grid values.
pub fn fsq_forward(x: &Tensor, levels: &[u32]) -> Result<QuantizeResult> {
    let bounds = channel_bounds(levels)?;
    let (b, k) = x.dims2()?;
    if k != levels.len() {
        return Err(Error::shape(format!(
            "input has {k} channels but {} levels given",
            levels.len()
        )));
    }
    if !x.all_finite() {
        return Err(Error::numeric("quantizer input must be finite"));
    }
    let mut quantized = Tensor::zeros(&[b, k]);
    let mut indices = Vec::with_capacity(b);
    for bi in 0..b {
        let row = x.row(bi);
        let mut index: u64 = 0;
        let mut radix: u64 = 1;
        let out = &mut quantized.data_mut()[bi * k..(bi + 1) * k];
        for (ci, bound) in bounds.iter().enumerate() {
            let q = bound.quantize(row[ci]);
            out[ci] = q;
            index += bound.digit(q) as u64 * radix;
            radix *= bound.levels as u64;
        }
        indices.push(index as u32);
    }
    Ok(QuantizeResult {
        quantized,
        indices,
        codes_per_sample: 1,
        commit_loss: 0.0,
        aux_loss: 0.0,
    })
}

/// Binary sign quantization of `[B, k]` into codes over {-1, +1}.
///
/// `sign(0) = +1`; the sample index packs bit i = (channel i > 0) with
/// channel 0 as bit 0. The auxiliary loss is `entropy_weight` times the
/// difference between the mean per-sample soft code entropy (factorized
/// per channel with p(+1) = sigmoid(2 x_i)) and the entropy of the
/// empirical distribution of the chosen codes; minimizing it rewards
/// confident assignments spread over many codes. It is reported as a
/// diagnostic, not backpropagated.
pub fn lfq_forward(x: &Tensor, entropy_weight: f64) -> Result<QuantizeResult> {
    let (b, k) = x.dims2()?;
    if k > MAX_LFQ_CHANNELS {
        return Err(Error::config(format!(
            "{k} binary channels exceed the {MAX_LFQ_CHANNELS}-bit index limit"
        )));
    }
    if k == 0 {
        return Err(Error::config("at least one binary channel required"));
    }
    if !x.all_finite() {
        return Err(Error::numeric("quantizer input must be finite"));
    }
    let mut quantized = Tensor::zeros(&[b, k]);
    let mut indices = Vec::with_capacity(b);
    let mut soft_entropy_sum = 0.0;
    for bi in 0..b {
        let row = x.row(bi);
        let out = &mut quantized.data_mut()[bi * k..(bi + 1) * k];
        let mut index: u32 = 0;
        let mut h = 0.0;
        for (ci, &v) in row.iter().enumerate() {
            let q = if v >= 0.0 { 1.0 } else { -1.0 };
            out[ci] = q;
            if q > 0.0 {
                index |= 1 << ci;
            }
            h += bernoulli_entropy(sigmoid(2.0 * v));
        }
        indices.push(index);
        soft_entropy_sum += h;
    }
    let aux_loss = if entropy_weight == 0.0 {
        0.0
    } else {
        let per_sample = soft_entropy_sum / b as f64;
        entropy_weight * (per_sample - index_distribution_entropy(&indices))
    };
    Ok(QuantizeResult {
        quantized,
        indices,
        codes_per_sample: 1,
        commit_loss: 0.0,
        aux_loss,
    })
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Entropy (nats) of a Bernoulli distribution, with 0 ln 0 = 0.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

/// Entropy (nats) of the empirical distribution of observed indices.
pub fn index_distribution_entropy(indices: &[u32]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for &i in indices {
        *counts.entry(i).or_insert(0u64) += 1;
    }
    let total = indices.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_levels_saturate_and_center() {
        let x = Tensor::from_rows(&[vec![1e6], vec![0.0], vec![-1e6]]).unwrap();
        let r = fsq_forward(&x, &[3]).unwrap();
        assert_eq!(r.quantized.data(), &[1.0, 0.0, -1.0]);
        assert_eq!(r.indices, vec![2, 1, 0]);
    }

    #[test]
    fn even_levels_center_on_a_valid_code() {
        // 8 levels: grid {-4..3}; zero input must round to 0 and extremes
        // must hit both ends
        let x = Tensor::from_rows(&[vec![0.0], vec![1e6], vec![-1e6]]).unwrap();
        let r = fsq_forward(&x, &[8]).unwrap();
        assert_eq!(r.quantized.data(), &[0.0, 3.0, -4.0]);
        assert_eq!(r.indices, vec![4, 7, 0]);
    }

    #[test]
    fn bound_is_strictly_inside_grid_range() {
        for levels in [2u32, 3, 4, 5, 8] {
            let b = ChannelBound::new(levels).unwrap();
            let lo = -((levels / 2) as f64);
            let hi = ((levels - 1) / 2) as f64;
            for v in [-50.0, -3.0, -0.1, 0.0, 0.1, 3.0, 50.0] {
                let q = b.quantize(v);
                assert!(q >= lo && q <= hi, "levels {levels} v {v} -> {q}");
                assert!(b.digit(q) < levels);
            }
            // zero always maps to some valid code (centering contract)
            assert!(b.quantize(0.0).abs() <= hi.max(-lo));
        }
    }

    #[test]
    fn mixed_radix_index_covers_all_combinations() {
        // construct an input that realizes every digit combination and check
        // the composed indices enumerate 0..600 exactly once
        let levels = [8u32, 5, 5, 3];
        let n = fsq_codebook_size(&levels);
        assert_eq!(n, 600);
        let bounds = channel_bounds(&levels).unwrap();
        let mut rows = Vec::with_capacity(n);
        for combo in 0..n {
            let mut rem = combo;
            let mut row = Vec::with_capacity(4);
            for (ci, b) in bounds.iter().enumerate() {
                let digit = rem % levels[ci] as usize;
                rem /= levels[ci] as usize;
                let target = digit as f64 - (levels[ci] / 2) as f64;
                // invert bound(): raw value whose squashed image rounds to target
                let ratio = ((target + b.offset) / b.half).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                row.push(ratio.atanh() - b.shift);
            }
            rows.push(row);
        }
        let x = Tensor::from_rows(&rows).unwrap();
        let r = fsq_forward(&x, &levels).unwrap();
        let mut seen = vec![false; n];
        for (combo, &idx) in r.indices.iter().enumerate() {
            assert_eq!(idx as usize, combo, "combination {combo}");
            assert!(!seen[idx as usize]);
            seen[idx as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn fsq_rejects_bad_configs() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(fsq_forward(&x, &[3, 1]).is_err());
        assert!(fsq_forward(&x, &[3]).is_err());
        assert!(fsq_forward(&x, &[]).is_err());
    }

    #[test]
    fn lfq_signs_and_bit_order() {
        let x = Tensor::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let r = lfq_forward(&x, 0.1).unwrap();
        assert_eq!(r.quantized.data(), &[1.0, -1.0]);
        assert_eq!(r.indices, vec![1]);
    }

    #[test]
    fn lfq_all_negative_is_index_zero() {
        let x = Tensor::from_rows(&[vec![-1.0, -1.0]]).unwrap();
        let r = lfq_forward(&x, 0.1).unwrap();
        assert_eq!(r.indices, vec![0]);
    }

    #[test]
    fn lfq_sign_of_zero_is_positive() {
        let x = Tensor::from_rows(&[vec![0.0]]).unwrap();
        let r = lfq_forward(&x, 0.0).unwrap();
        assert_eq!(r.quantized.data(), &[1.0]);
        assert_eq!(r.indices, vec![1]);
    }

    #[test]
    fn lfq_rejects_too_many_channels() {
        let x = Tensor::zeros(&[1, 31]);
        assert!(lfq_forward(&x, 0.1).is_err());
    }

    #[test]
    fn identical_codes_make_diversity_zero_and_soft_term_maximal() {
        // every row identical: the diversity term vanishes and the aux loss
        // equals weight * the soft per-sample entropy of those logits
        let row = vec![0.4, -1.2, 0.05];
        let x = Tensor::from_rows(&[row.clone(), row.clone(), row.clone()]).unwrap();
        let r = lfq_forward(&x, 0.1).unwrap();
        assert!(r.indices.iter().all(|&i| i == r.indices[0]));
        assert_eq!(index_distribution_entropy(&r.indices), 0.0);
        let soft: f64 = row.iter().map(|&v| bernoulli_entropy(sigmoid(2.0 * v))).sum();
        assert!((r.aux_loss - 0.1 * soft).abs() < 1e-12);
    }

    #[test]
    fn diverse_confident_codes_give_negative_aux() {
        // two opposite, confident codes: soft entropy ~ 0, diversity ln 2
        let x = Tensor::from_rows(&[vec![8.0, 8.0], vec![-8.0, -8.0]]).unwrap();
        let r = lfq_forward(&x, 0.1).unwrap();
        assert_eq!(r.indices, vec![3, 0]);
        assert!(r.aux_loss < 0.0);
        let soft_mean = 2.0 * bernoulli_entropy(sigmoid(16.0));
        assert!((r.aux_loss - 0.1 * (soft_mean - 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn empirical_entropy_of_uniform_indices() {
        let h = index_distribution_entropy(&[0, 1, 2, 3]);
        assert!((h - 4.0f64.ln()).abs() < 1e-12);
    }
}
