//! Lloyd's k-means with k-means++ initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DictError, Result};

const MAX_ITERS: usize = 100;
const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ centers. Ties and degenerate (all-duplicate) cases fall
/// back to a uniform draw so initialization always yields `k` centers.
fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    let mut min_d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = min_d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in min_d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(p, centers.last().unwrap());
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }
    centers
}

/// Cluster `points` into `k` groups.
///
/// Runs at most 100 Lloyd iterations, stopping when the relative inertia
/// change drops below 1e-6. An empty cluster is repaired by promoting the
/// point farthest from its current centroid. When `k >= |points|` every
/// point becomes its own centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KmeansResult> {
    if points.is_empty() {
        return Err(DictError::EmptyPoints);
    }
    if k == 0 {
        return Err(DictError::BadK(k));
    }
    let n = points.len();
    if k >= n {
        return Ok(KmeansResult {
            assignments: (0..n).collect(),
            centroids: points.to_vec(),
            inertia: 0.0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;

    for _ in 0..MAX_ITERS {
        // Assignment: nearest centroid, ties to the lowest centroid index.
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = dist_sq(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = dist_sq(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = best;
        }

        // Repair empty clusters with the point farthest from its centroid.
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let empty = match counts.iter().position(|&c| c == 0) {
                Some(e) => e,
                None => break,
            };
            let mut far_idx = 0;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                // Skip points that are alone in their cluster.
                if counts[assignments[i]] <= 1 {
                    continue;
                }
                let d = dist_sq(p, &centroids[assignments[i]]);
                if d > far_d {
                    far_d = d;
                    far_idx = i;
                }
            }
            assignments[far_idx] = empty;
            centroids[empty] = points[far_idx].clone();
        }

        // Update step.
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, v) in sums[assignments[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            for s in sums[c].iter_mut() {
                *s /= counts[c] as f64;
            }
        }
        centroids = sums;

        let inertia: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| dist_sq(p, &centroids[a]))
            .sum();
        if prev_inertia.is_finite() {
            let rel = (prev_inertia - inertia).abs() / prev_inertia.max(f64::MIN_POSITIVE);
            if rel < REL_TOL {
                break;
            }
        }
        prev_inertia = inertia;
    }

    let inertia: f64 = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| dist_sq(p, &centroids[a]))
        .sum();
    Ok(KmeansResult {
        assignments,
        centroids,
        inertia,
    })
}
