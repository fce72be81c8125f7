//! Code-lookup quantizer family: plain EMA-VQ, residual, grouped, multi-head
//! and stochastic-residual variants, plus the generic residual wrapper.

use super::codebook::Codebook;
use super::QuantizeResult;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Commitment term: mean over the batch of the squared Euclidean distance
/// between each input row and its (stop-gradient) quantization.
pub(crate) fn commitment_loss(x: &Tensor, q: &Tensor, beta: f64) -> f64 {
    let b = x.shape()[0].max(1);
    let sq: f64 = x
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, c)| (a - c) * (a - c))
        .sum();
    beta * sq / b as f64
}

/// One nearest-code quantization of a batch, optionally updating the table.
///
/// Training mode performs the EMA update after assignment; eval mode leaves
/// every statistic untouched.
pub fn vq_forward(
    x: &Tensor,
    codebook: &mut Codebook,
    beta: f64,
    training: bool,
    rng: Option<&mut Rng>,
) -> Result<QuantizeResult> {
    let (indices, _) = codebook.assign_batch(x)?;
    let quantized = codebook.lookup(&indices)?;
    codebook.record_usage(&indices);
    if training {
        codebook.ema_update(x, &indices, rng)?;
    }
    let commit_loss = commitment_loss(x, &quantized, beta);
    Ok(QuantizeResult {
        quantized,
        indices,
        codes_per_sample: 1,
        commit_loss,
        aux_loss: 0.0,
    })
}

/// Generic residual recursion: quantize the running residual, subtract the
/// (scaled) selection, repeat `q_levels` times, and sum the contributions.
///
/// `quantize_once` maps a residual batch to (quantized batch, per-sample
/// indices, aux loss). `scales[q]` multiplies level q's contribution; lookup
/// quantizers use unit scales, while bounded scalar quantizers halve the
/// scale per level so later levels refine earlier ones.
pub fn residual_stack<F>(
    x: &Tensor,
    q_levels: usize,
    scales: Option<&[f64]>,
    mut quantize_once: F,
) -> Result<(Tensor, Vec<u32>, f64)>
where
    F: FnMut(&Tensor, usize) -> Result<(Tensor, Vec<u32>, f64)>,
{
    if q_levels == 0 {
        return Err(Error::param("residual stack needs at least one level"));
    }
    if let Some(s) = scales {
        if s.len() != q_levels {
            return Err(Error::param("one scale per residual level required"));
        }
    }
    let b = x.shape()[0];
    let mut residual = x.clone();
    let mut total = Tensor::zeros(x.shape());
    let mut indices: Vec<Vec<u32>> = Vec::with_capacity(q_levels);
    let mut aux = 0.0;
    for q in 0..q_levels {
        let scale = scales.map_or(1.0, |s| s[q]);
        let input = if scale == 1.0 {
            residual.clone()
        } else {
            residual.scale(1.0 / scale)
        };
        let (level_q, level_idx, level_aux) = quantize_once(&input, q)?;
        if level_idx.len() != b {
            return Err(Error::shape("level must return one index per sample"));
        }
        let contribution = if scale == 1.0 { level_q } else { level_q.scale(scale) };
        residual = residual.sub(&contribution)?;
        total = total.add(&contribution)?;
        indices.push(level_idx);
        aux += level_aux;
    }
    // interleave to sample-major order: sample b's levels are contiguous
    let mut flat = Vec::with_capacity(b * q_levels);
    for bi in 0..b {
        for level in &indices {
            flat.push(level[bi]);
        }
    }
    Ok((total, flat, aux))
}

/// Residual VQ: recursively quantizes what the previous levels missed.
/// With `shared_codebook` all levels use `codebooks[0]`; otherwise one table
/// per level is required. Training applies one EMA update per table from all
/// the (residual, assignment) pairs observed at the table's levels.
pub fn residual_vq_forward(
    x: &Tensor,
    q_levels: usize,
    codebooks: &mut [Codebook],
    shared_codebook: bool,
    beta: f64,
    training: bool,
    mut rng: Option<&mut Rng>,
) -> Result<QuantizeResult> {
    check_books(q_levels, codebooks.len(), shared_codebook)?;
    let (b, d) = x.dims2()?;
    let mut pending: Vec<(Tensor, Vec<u32>)> = Vec::with_capacity(q_levels);
    let (total, flat, _) = residual_stack(x, q_levels, None, |r, q| {
        let book = if shared_codebook { &mut codebooks[0] } else { &mut codebooks[q] };
        let (idx, _) = book.assign_batch(r)?;
        let quantized = book.lookup(&idx)?;
        book.record_usage(&idx);
        if training {
            pending.push((r.clone(), idx.clone()));
        }
        Ok((quantized, idx, 0.0))
    })?;
    if training {
        if shared_codebook {
            // one update over the concatenated (residual, assignment) pairs
            let mut all = Tensor::zeros(&[b * q_levels, d]);
            let mut assigns = Vec::with_capacity(b * q_levels);
            for (li, (r, idx)) in pending.iter().enumerate() {
                all.data_mut()[li * b * d..(li + 1) * b * d].copy_from_slice(r.data());
                assigns.extend_from_slice(idx);
            }
            codebooks[0].ema_update(&all, &assigns, rng.as_deref_mut())?;
        } else {
            for (li, (r, idx)) in pending.iter().enumerate() {
                codebooks[li].ema_update(r, idx, rng.as_deref_mut())?;
            }
        }
    }
    let commit_loss = commitment_loss(x, &total, beta);
    Ok(QuantizeResult {
        quantized: total,
        indices: flat,
        codes_per_sample: q_levels,
        commit_loss,
        aux_loss: 0.0,
    })
}

/// Stochastic residual VQ: during training each level samples its code with
/// probability proportional to `exp(-dist^2 / temperature)`; in eval mode it
/// is exactly the deterministic residual VQ.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_residual_vq_forward(
    x: &Tensor,
    q_levels: usize,
    codebooks: &mut [Codebook],
    shared_codebook: bool,
    beta: f64,
    temperature: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<QuantizeResult> {
    if !training {
        return residual_vq_forward(x, q_levels, codebooks, shared_codebook, beta, false, None);
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::param(format!(
            "sampling temperature must be positive and finite, got {temperature}"
        )));
    }
    check_books(q_levels, codebooks.len(), shared_codebook)?;
    let (b, d) = x.dims2()?;
    let mut pending: Vec<(Tensor, Vec<u32>)> = Vec::with_capacity(q_levels);
    let (total, flat, _) = residual_stack(x, q_levels, None, |r, q| {
        let book = if shared_codebook { &mut codebooks[0] } else { &mut codebooks[q] };
        let mut idx = Vec::with_capacity(b);
        for bi in 0..b {
            let dists = book.distances(r.row(bi))?;
            idx.push(sample_softmax_neg(&dists, temperature, rng)? as u32);
        }
        let quantized = book.lookup(&idx)?;
        book.record_usage(&idx);
        pending.push((r.clone(), idx.clone()));
        Ok((quantized, idx, 0.0))
    })?;
    if shared_codebook {
        let mut all = Tensor::zeros(&[b * q_levels, d]);
        let mut assigns = Vec::with_capacity(b * q_levels);
        for (li, (r, idx)) in pending.iter().enumerate() {
            all.data_mut()[li * b * d..(li + 1) * b * d].copy_from_slice(r.data());
            assigns.extend_from_slice(idx);
        }
        codebooks[0].ema_update(&all, &assigns, Some(rng))?;
    } else {
        for (li, (r, idx)) in pending.iter().enumerate() {
            codebooks[li].ema_update(r, idx, Some(rng))?;
        }
    }
    let commit_loss = commitment_loss(x, &total, beta);
    Ok(QuantizeResult {
        quantized: total,
        indices: flat,
        codes_per_sample: q_levels,
        commit_loss,
        aux_loss: 0.0,
    })
}

/// Samples an index with probability `softmax(-dists / temperature)`.
fn sample_softmax_neg(dists: &[f64], temperature: f64, rng: &mut Rng) -> Result<usize> {
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = dists.iter().map(|&d| (-(d - min) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::numeric("degenerate sampling weights"));
    }
    let u = rng.next_f64() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(dists.len() - 1)
}

/// Grouped residual VQ: the channel axis is split into `groups` contiguous
/// blocks of `d / groups`, each quantized by its own independent residual VQ;
/// the outputs are concatenated back. `codebooks` holds each group's tables
/// consecutively (1 per group when shared, `q_levels` per group otherwise).
#[allow(clippy::too_many_arguments)]
pub fn grouped_residual_vq_forward(
    x: &Tensor,
    groups: usize,
    q_levels: usize,
    codebooks: &mut [Codebook],
    shared_codebook: bool,
    beta: f64,
    training: bool,
    mut rng: Option<&mut Rng>,
) -> Result<QuantizeResult> {
    let (b, d) = x.dims2()?;
    if groups == 0 || d % groups != 0 {
        return Err(Error::config(format!(
            "token dim {d} must be divisible by groups {groups}"
        )));
    }
    let per_group = if shared_codebook { 1 } else { q_levels };
    if codebooks.len() != groups * per_group {
        return Err(Error::config(format!(
            "expected {} codebooks for {groups} groups, got {}",
            groups * per_group,
            codebooks.len()
        )));
    }
    let gd = d / groups;
    let mut quantized = Tensor::zeros(&[b, d]);
    let mut per_sample: Vec<Vec<u32>> = vec![Vec::with_capacity(groups * q_levels); b];
    let mut commit_total = 0.0;
    for gi in 0..groups {
        let mut sub = Tensor::zeros(&[b, gd]);
        for bi in 0..b {
            sub.data_mut()[bi * gd..(bi + 1) * gd]
                .copy_from_slice(&x.row(bi)[gi * gd..(gi + 1) * gd]);
        }
        let books = &mut codebooks[gi * per_group..(gi + 1) * per_group];
        let r = residual_vq_forward(
            &sub,
            q_levels,
            books,
            shared_codebook,
            beta,
            training,
            rng.as_deref_mut(),
        )?;
        for bi in 0..b {
            quantized.data_mut()[bi * d + gi * gd..bi * d + (gi + 1) * gd]
                .copy_from_slice(&r.quantized.row(bi));
            per_sample[bi]
                .extend_from_slice(&r.indices[bi * q_levels..(bi + 1) * q_levels]);
        }
        commit_total += r.commit_loss;
    }
    Ok(QuantizeResult {
        quantized,
        indices: per_sample.into_iter().flatten().collect(),
        codes_per_sample: groups * q_levels,
        commit_loss: commit_total,
        aux_loss: 0.0,
    })
}

/// Multi-head VQ: each row is split into `heads` sub-vectors of `d / heads`,
/// all quantized against one shared codebook of that smaller dimension.
pub fn multihead_vq_forward(
    x: &Tensor,
    heads: usize,
    codebook: &mut Codebook,
    beta: f64,
    training: bool,
    rng: Option<&mut Rng>,
) -> Result<QuantizeResult> {
    let (b, d) = x.dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "token dim {d} must be divisible by heads {heads}"
        )));
    }
    let hd = d / heads;
    if codebook.dim() != hd {
        return Err(Error::config(format!(
            "multi-head codebook dim {} must be {hd}",
            codebook.dim()
        )));
    }
    // [B, d] reinterpreted as [B*heads, d/heads]: heads of one sample are
    // consecutive rows, so the result indices are already sample-major.
    let slices = x.reshape(&[b * heads, hd])?;
    let inner = vq_forward(&slices, codebook, beta, training, rng)?;
    let quantized = inner.quantized.reshape(&[b, d])?;
    let commit_loss = commitment_loss(x, &quantized, beta);
    Ok(QuantizeResult {
        quantized,
        indices: inner.indices,
        codes_per_sample: heads,
        commit_loss,
        aux_loss: 0.0,
    })
}

fn check_books(q_levels: usize, available: usize, shared: bool) -> Result<()> {
    if q_levels == 0 {
        return Err(Error::param("residual VQ needs at least one level"));
    }
    let needed = if shared { 1 } else { q_levels };
    if available != needed {
        return Err(Error::config(format!(
            "expected {needed} codebooks, got {available}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::InitSpec;
    use crate::tensor::max_abs_diff;

    fn book(rows: &[Vec<f64>]) -> Codebook {
        Codebook::from_codes(Tensor::from_rows(rows).unwrap(), 0.99, 1e-5).unwrap()
    }

    fn random_book(n: usize, d: usize, seed: u64) -> Codebook {
        let mut rng = Rng::new(seed);
        Codebook::new(n, d, 0.99, 1e-5, &InitSpec::kaiming_uniform(), &mut rng).unwrap()
    }

    #[test]
    fn vq_fixed_point_on_a_code() {
        let mut cb = book(&[vec![0.5, -0.5], vec![3.0, 3.0]]);
        let x = Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap();
        let before = cb.codes().clone();
        let r = vq_forward(&x, &mut cb, 0.25, true, None).unwrap();
        assert_eq!(r.quantized.data(), x.data());
        assert_eq!(r.commit_loss, 0.0);
        assert_eq!(r.indices, vec![0]);
        // the assigned code is a fixed point up to Laplace smoothing
        assert!(max_abs_diff(cb.codes(), &before).unwrap() < 1e-3);
    }

    #[test]
    fn eval_mode_leaves_statistics_untouched() {
        let mut cb = random_book(8, 4, 5);
        let before = cb.clone();
        let mut x = Tensor::zeros(&[6, 4]);
        Rng::new(6).fill_gaussian(x.data_mut(), 0.0, 1.0);
        vq_forward(&x, &mut cb, 0.25, false, None).unwrap();
        assert_eq!(cb.codes().data(), before.codes().data());
        assert_eq!(cb.ema_cluster_size(), before.ema_cluster_size());
    }

    #[test]
    fn vq_rejects_non_finite_input() {
        let mut cb = random_book(4, 2, 7);
        let x = Tensor::new(&[1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(vq_forward(&x, &mut cb, 0.25, false, None).is_err());
    }

    #[test]
    fn commit_loss_definition() {
        let mut cb = book(&[vec![0.0, 0.0]]);
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let r = vq_forward(&x, &mut cb, 0.25, false, None).unwrap();
        // squared norms 2 and 4, mean 3, beta 0.25
        assert!((r.commit_loss - 0.75).abs() < 1e-12);
    }

    #[test]
    fn residual_hand_recursion() {
        let mut books = vec![book(&[vec![0.0], vec![0.9]])];
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let r = residual_vq_forward(&x, 2, &mut books, true, 0.25, false, None).unwrap();
        // picks 0.9 (residual 0.1), then 0.0; output 0.9
        assert_eq!(r.indices, vec![1, 0]);
        assert!((r.quantized.data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn residual_with_one_level_is_plain_vq() {
        let mut a = random_book(16, 4, 8);
        let mut b = a.clone();
        let mut x = Tensor::zeros(&[5, 4]);
        Rng::new(9).fill_gaussian(x.data_mut(), 0.0, 1.0);
        let mut rng_a = Rng::new(10);
        let mut rng_b = Rng::new(10);
        let ra = vq_forward(&x, &mut a, 0.25, true, Some(&mut rng_a)).unwrap();
        let rb =
            residual_vq_forward(&x, 1, std::slice::from_mut(&mut b), true, 0.25, true, Some(&mut rng_b))
                .unwrap();
        assert_eq!(ra.quantized.data(), rb.quantized.data());
        assert_eq!(ra.indices, rb.indices);
        assert_eq!(ra.commit_loss, rb.commit_loss);
        assert_eq!(a.codes().data(), b.codes().data());
    }

    #[test]
    fn representable_sum_has_zero_residual_after_two_levels() {
        let mut books = vec![
            book(&[vec![2.0, 0.0], vec![0.0, 0.0]]),
            book(&[vec![0.25, 0.5], vec![0.0, 0.0]]),
        ];
        let x = Tensor::from_rows(&[vec![2.25, 0.5]]).unwrap();
        let r = residual_vq_forward(&x, 2, &mut books, false, 0.25, false, None).unwrap();
        assert!(max_abs_diff(&r.quantized, &x).unwrap() < 1e-12);
        assert_eq!(r.commit_loss, 0.0);
    }

    #[test]
    fn reconstruction_error_non_increasing_with_zero_code_present() {
        // When the zero vector is representable, adding a level can never
        // hurt: each level picks the argmin, and choosing 0 keeps the
        // previous residual.
        let mut rng = Rng::new(12);
        for trial in 0..10 {
            let mut codes = Tensor::zeros(&[9, 3]);
            rng.fill_gaussian(codes.data_mut(), 0.0, 1.0);
            codes.data_mut()[24..27].fill(0.0); // last code = 0
            let mut x = Tensor::zeros(&[4, 3]);
            rng.fill_gaussian(x.data_mut(), 0.0, 2.0);
            let mut prev = f64::INFINITY;
            for q in 1..=5 {
                let mut books = vec![Codebook::from_codes(codes.clone(), 0.99, 1e-5).unwrap()];
                let r = residual_vq_forward(&x, q, &mut books, true, 0.0, false, None).unwrap();
                let err: f64 = x
                    .data()
                    .iter()
                    .zip(r.quantized.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(
                    err <= prev + 1e-12,
                    "trial {trial}: error rose from {prev} to {err} at Q={q}"
                );
                prev = err;
            }
        }
    }

    #[test]
    fn grouped_with_one_group_is_residual_vq() {
        let mut a = vec![random_book(8, 4, 20), random_book(8, 4, 21)];
        let mut b = a.clone();
        let mut x = Tensor::zeros(&[3, 4]);
        Rng::new(22).fill_gaussian(x.data_mut(), 0.0, 1.0);
        let ra = residual_vq_forward(&x, 2, &mut a, false, 0.25, true, None).unwrap();
        let rb = grouped_residual_vq_forward(&x, 1, 2, &mut b, false, 0.25, true, None).unwrap();
        assert_eq!(ra.quantized.data(), rb.quantized.data());
        assert_eq!(ra.indices, rb.indices);
        assert_eq!(ra.commit_loss, rb.commit_loss);
        assert_eq!(a[0].codes().data(), b[0].codes().data());
        assert_eq!(a[1].codes().data(), b[1].codes().data());
    }

    #[test]
    fn fully_grouped_is_per_dimension_scalar_quantization() {
        // g = d with Q=1 and scalar codebooks: every channel independently
        // snaps to the nearest scalar.
        let scalars = book(&[vec![-1.0], vec![0.0], vec![1.0]]);
        let mut books = vec![scalars.clone(), scalars.clone(), scalars];
        let x = Tensor::from_rows(&[vec![0.9, -0.2, -1.4]]).unwrap();
        let r = grouped_residual_vq_forward(&x, 3, 1, &mut books, false, 0.0, false, None).unwrap();
        assert_eq!(r.quantized.data(), &[1.0, 0.0, -1.0]);
        assert_eq!(r.indices, vec![2, 1, 0]);
    }

    #[test]
    fn permuting_groups_permutes_outputs() {
        // identical per-group codebooks: swapping the two group payloads
        // swaps the two halves of the output
        let shared = random_book(8, 2, 23);
        let mut books = vec![shared.clone(), shared.clone()];
        let x = Tensor::from_rows(&[vec![0.3, -0.4, 0.8, 0.1]]).unwrap();
        let xs = Tensor::from_rows(&[vec![0.8, 0.1, 0.3, -0.4]]).unwrap();
        let r1 = grouped_residual_vq_forward(&x, 2, 1, &mut books.clone(), true, 0.0, false, None)
            .unwrap();
        let r2 = grouped_residual_vq_forward(&xs, 2, 1, &mut books, true, 0.0, false, None).unwrap();
        assert_eq!(&r1.quantized.data()[0..2], &r2.quantized.data()[2..4]);
        assert_eq!(&r1.quantized.data()[2..4], &r2.quantized.data()[0..2]);
        assert_eq!(r1.indices[0], r2.indices[1]);
        assert_eq!(r1.indices[1], r2.indices[0]);
    }

    #[test]
    fn grouped_rejects_bad_divisibility() {
        let mut books = vec![random_book(4, 1, 24)];
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(grouped_residual_vq_forward(&x, 2, 1, &mut books, true, 0.25, false, None).is_err());
    }

    #[test]
    fn single_head_is_plain_vq() {
        let mut a = random_book(8, 4, 25);
        let mut b = a.clone();
        let mut x = Tensor::zeros(&[5, 4]);
        Rng::new(26).fill_gaussian(x.data_mut(), 0.0, 1.0);
        let mut ra_rng = Rng::new(27);
        let mut rb_rng = Rng::new(27);
        let ra = vq_forward(&x, &mut a, 0.25, true, Some(&mut ra_rng)).unwrap();
        let rb = multihead_vq_forward(&x, 1, &mut b, 0.25, true, Some(&mut rb_rng)).unwrap();
        assert_eq!(ra.quantized.data(), rb.quantized.data());
        assert_eq!(ra.indices, rb.indices);
        assert_eq!(ra.commit_loss, rb.commit_loss);
        assert_eq!(a.codes().data(), b.codes().data());
    }

    #[test]
    fn identical_heads_get_identical_indices() {
        let mut cb = random_book(16, 2, 28);
        let x = Tensor::from_rows(&[vec![0.3, 0.7, 0.3, 0.7, 0.3, 0.7]]).unwrap();
        let r = multihead_vq_forward(&x, 3, &mut cb, 0.25, false, None).unwrap();
        assert_eq!(r.codes_per_sample, 3);
        assert_eq!(r.indices[0], r.indices[1]);
        assert_eq!(r.indices[1], r.indices[2]);
    }

    #[test]
    fn two_heads_match_independent_nearest_calls() {
        let cb = book(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.5]]);
        let mut work = cb.clone();
        let x = Tensor::from_rows(&[vec![0.9, 1.1, -0.8, 0.4]]).unwrap();
        let r = multihead_vq_forward(&x, 2, &mut work, 0.25, false, None).unwrap();
        let (i0, c0) = super::super::codebook::nearest_code(&[0.9, 1.1], &cb).unwrap();
        let (i1, c1) = super::super::codebook::nearest_code(&[-0.8, 0.4], &cb).unwrap();
        assert_eq!(r.indices, vec![i0 as u32, i1 as u32]);
        assert_eq!(&r.quantized.data()[0..2], c0.as_slice());
        assert_eq!(&r.quantized.data()[2..4], c1.as_slice());
    }

    #[test]
    fn multihead_rejects_bad_divisibility() {
        let mut cb = random_book(4, 2, 29);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(multihead_vq_forward(&x, 2, &mut cb, 0.25, false, None).is_err());
    }

    #[test]
    fn stochastic_eval_equals_deterministic() {
        let mut a = vec![random_book(8, 3, 30)];
        let mut b = a.clone();
        let mut x = Tensor::zeros(&[4, 3]);
        Rng::new(31).fill_gaussian(x.data_mut(), 0.0, 1.0);
        let mut rng = Rng::new(32);
        let ra = residual_vq_forward(&x, 2, &mut a, true, 0.25, false, None).unwrap();
        let rb =
            stochastic_residual_vq_forward(&x, 2, &mut b, true, 0.25, 1.0, false, &mut rng).unwrap();
        assert_eq!(ra.quantized.data(), rb.quantized.data());
        assert_eq!(ra.indices, rb.indices);
    }

    #[test]
    fn stochastic_rejects_non_positive_temperature() {
        let mut books = vec![random_book(4, 2, 33)];
        let x = Tensor::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let mut rng = Rng::new(34);
        assert!(stochastic_residual_vq_forward(
            &x, 1, &mut books, true, 0.25, 0.0, true, &mut rng
        )
        .is_err());
    }

    #[test]
    fn tiny_temperature_recovers_argmin() {
        let det = vec![random_book(8, 2, 35)];
        let mut x = Tensor::zeros(&[1, 2]);
        Rng::new(36).fill_gaussian(x.data_mut(), 0.0, 1.0);
        let expect = residual_vq_forward(&x, 1, &mut det.clone(), true, 0.0, false, None)
            .unwrap()
            .indices;
        let mut rng = Rng::new(37);
        for _ in 0..1000 {
            let mut books = det.clone();
            let r = stochastic_residual_vq_forward(
                &x, 1, &mut books, true, 0.0, 1e-9, true, &mut rng,
            )
            .unwrap();
            assert_eq!(r.indices, expect);
        }
    }

    #[test]
    fn equidistant_codes_sample_evenly_at_unit_temperature() {
        let mut hits = [0usize; 2];
        let mut rng = Rng::new(38);
        let x = Tensor::from_rows(&[vec![0.0]]).unwrap();
        for _ in 0..10_000 {
            let mut books = vec![book(&[vec![1.0], vec![-1.0]])];
            let r = stochastic_residual_vq_forward(
                &x, 1, &mut books, true, 0.0, 1.0, true, &mut rng,
            )
            .unwrap();
            hits[r.indices[0] as usize] += 1;
        }
        let ratio = hits[0] as f64 / 10_000.0;
        assert!((ratio - 0.5).abs() < 0.05, "pick ratio {ratio}");
    }

    #[test]
    fn residual_stack_bookkeeping_sums_level_outputs() {
        let x = Tensor::from_rows(&[vec![1.7], vec![-0.4]]).unwrap();
        let mut level_outputs: Vec<Tensor> = Vec::new();
        let (total, idx, _) = residual_stack(&x, 2, None, |r, _| {
            let q = r.map(f64::round);
            level_outputs.push(q.clone());
            Ok((q, vec![0; 2], 0.0))
        })
        .unwrap();
        let manual = level_outputs[0].add(&level_outputs[1]).unwrap();
        assert_eq!(total.data(), manual.data());
        assert_eq!(idx.len(), 4);
    }
}
