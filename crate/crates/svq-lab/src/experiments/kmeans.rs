//! Restarted Lloyd k-means with k-means++ seeding.
//!
//! Serves as the clustering baseline of the covering study, so it has to be
//! competent: 5 restarts and 100 iterations by default, squared-distance
//! seeding, and empty clusters reseeded to the point farthest from its
//! center.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// `[k, d]` cluster centers.
    pub centers: Tensor,
    /// Index of the nearest center per input point.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centers.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[f64], k: usize, d: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let dist = sq_dist(point, &centers[c * d..(c + 1) * d]);
        if dist < best_d {
            best_d = dist;
            best = c;
        }
    }
    (best, best_d)
}

/// Squared-distance-weighted (k-means++) choice of `k` initial centers.
fn seed_centers(points: &[f64], n: usize, d: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.next_below(n as u64) as usize;
    centers.extend_from_slice(&points[first * d..(first + 1) * d]);
    let mut dists: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points[i * d..(i + 1) * d], &centers[0..d]))
        .collect();
    for c in 1..k {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut chosen = n - 1;
            for (i, &w) in dists.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // every point already coincides with a center
            rng.next_below(n as u64) as usize
        };
        let slice = &points[pick * d..(pick + 1) * d];
        centers.extend_from_slice(slice);
        for (i, dist) in dists.iter_mut().enumerate() {
            let nd = sq_dist(&points[i * d..(i + 1) * d], slice);
            if nd < *dist {
                *dist = nd;
            }
        }
        debug_assert_eq!(centers.len(), (c + 1) * d);
    }
    centers
}

fn lloyd(points: &[f64], n: usize, d: usize, k: usize, iters: usize, rng: &mut Rng) -> (Vec<f64>, Vec<usize>, f64) {
    let mut centers = seed_centers(points, n, d, k, rng);
    let mut assignments = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let (a, _) = nearest(&points[i * d..(i + 1) * d], &centers, k, d);
            if assignments[i] != a {
                assignments[i] = a;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let a = assignments[i];
            counts[a] += 1;
            for j in 0..d {
                sums[a * d + j] += points[i * d + j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            } else {
                // reseed an empty cluster at the point farthest from its
                // current center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(
                            &points[a * d..(a + 1) * d],
                            &centers[assignments[a] * d..(assignments[a] + 1) * d],
                        );
                        let db = sq_dist(
                            &points[b * d..(b + 1) * d],
                            &centers[assignments[b] * d..(assignments[b] + 1) * d],
                        );
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centers[c * d..(c + 1) * d].copy_from_slice(&points[far * d..(far + 1) * d]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut inertia = 0.0;
    for i in 0..n {
        let (a, dist) = nearest(&points[i * d..(i + 1) * d], &centers, k, d);
        assignments[i] = a;
        inertia += dist;
    }
    (centers, assignments, inertia)
}

/// Clusters the `[n, d]` points into `k` groups; the best of `restarts`
/// seeded runs (by inertia) wins.
pub fn kmeans(
    points: &Tensor,
    k: usize,
    restarts: usize,
    iters: usize,
    rng: &mut Rng,
) -> Result<KmeansResult> {
    let (n, d) = points.dims2()?;
    if k == 0 || restarts == 0 || iters == 0 {
        return Err(Error::param("k, restarts and iters must all be >= 1"));
    }
    let data = points.data();
    let mut best: Option<(Vec<f64>, Vec<usize>, f64)> = None;
    for _ in 0..restarts {
        let run = lloyd(data, n, d, k, iters, rng);
        if best.as_ref().map(|b| run.2 < b.2).unwrap_or(true) {
            best = Some(run);
        }
    }
    let (centers, assignments, inertia) = best.expect("restarts >= 1");
    Ok(KmeansResult {
        centers: Tensor::new(&[k, d], centers)?,
        assignments,
        inertia,
    })
}
