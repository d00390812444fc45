//! History-based top-K retrieval with a hybrid similarity score.
//!
//! Query and entry histories are re-anchored to their own last pose and
//! flattened to `(x, y)` per step. The score of entry `i` is
//! `S = alpha * sim - (1 - alpha) * d`, where `sim` is cosine similarity
//! mapped to [0, 1] via `(cos + 1) / 2` (zero vectors score 0.5) and `d` is
//! the L2 distance min-max normalized over the dictionary for this query
//! (all-equal distances normalize to 0). Ties rank the lower entry index
//! first.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use traj_core::normalize::{Pose, RigidTransform};
use traj_core::Trajectory;

use crate::build::TrajectoryDictionary;
use crate::error::{DictError, Result};

/// One scored entry: the final score plus the normalized terms it mixes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredEntry {
    pub index: usize,
    pub score: f64,
    /// Normalized cosine term in [0, 1].
    pub cosine: f64,
    /// Normalized distance term in [0, 1].
    pub distance: f64,
}

/// Ranked retrieval output, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub ranked: Vec<ScoredEntry>,
}

impl RetrievalResult {
    /// The retrieved futures in rank order.
    pub fn futures<'d>(&self, dict: &'d TrajectoryDictionary) -> Vec<&'d Trajectory> {
        self.ranked
            .iter()
            .map(|s| &dict.entries[s.index].future)
            .collect()
    }
}

/// Flatten a history to `(x, y)` per step in the frame of its own last pose.
pub fn ego_flatten(traj: &Trajectory) -> Vec<f64> {
    let last = traj.points.last().expect("non-empty trajectory");
    let tf = RigidTransform::into_frame_of(Pose::new(last.x, last.y, last.psi));
    let mut out = Vec::with_capacity(traj.points.len() * 2);
    for p in &traj.points {
        let (x, y) = tf.apply_point(p.x, p.y);
        out.push(x);
        out.push(y);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Score every entry against the query. Output is in entry-index order.
pub fn similarity_scores(
    query: &Trajectory,
    dict: &TrajectoryDictionary,
    alpha: f64,
) -> Result<Vec<ScoredEntry>> {
    if dict.is_empty() {
        return Err(DictError::EmptyDictionary);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DictError::BadAlpha(alpha));
    }
    let q = ego_flatten(query);
    let entry_len = dict.entries[0].history.len();
    if query.len() != entry_len {
        return Err(DictError::QueryLengthMismatch {
            query: query.len(),
            entries: entry_len,
        });
    }

    let q_norm = norm(&q);
    let mut sims = Vec::with_capacity(dict.len());
    let mut dists = Vec::with_capacity(dict.len());
    for e in &dict.entries {
        let h = ego_flatten(&e.history);
        let h_norm = norm(&h);
        let cos = if q_norm == 0.0 || h_norm == 0.0 {
            0.0
        } else {
            dot(&q, &h) / (q_norm * h_norm)
        };
        sims.push((cos + 1.0) / 2.0);
        let d: f64 = q
            .iter()
            .zip(&h)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        dists.push(d);
    }

    let d_min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = d_max - d_min;
    let scored = sims
        .iter()
        .zip(&dists)
        .enumerate()
        .map(|(index, (&sim, &d))| {
            let d_norm = if span > 0.0 { (d - d_min) / span } else { 0.0 };
            ScoredEntry {
                index,
                score: alpha * sim - (1.0 - alpha) * d_norm,
                cosine: sim,
                distance: d_norm,
            }
        })
        .collect();
    Ok(scored)
}

// Rank order: higher score first, then lower index. `WorstFirst` inverts it
// so a max-heap keeps the worst of the current top-K on top.
fn rank_cmp(a: &ScoredEntry, b: &ScoredEntry) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .expect("finite scores")
        .then(a.index.cmp(&b.index))
}

struct WorstFirst(ScoredEntry);

impl PartialEq for WorstFirst {
    fn eq(&self, other: &Self) -> bool {
        rank_cmp(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for WorstFirst {}
impl PartialOrd for WorstFirst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for WorstFirst {
    fn cmp(&self, other: &Self) -> Ordering {
        // Better entries compare Less, so the heap max is the worst-ranked
        // of the kept set and gets evicted first.
        rank_cmp(&self.0, &other.0)
    }
}

/// Top-K retrieval via a bounded heap; one pass over the dictionary.
pub fn retrieve_top_k(
    query: &Trajectory,
    dict: &TrajectoryDictionary,
    k: usize,
    alpha: f64,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(DictError::BadTopK(k));
    }
    let scored = similarity_scores(query, dict, alpha)?;
    let mut heap: BinaryHeap<WorstFirst> = BinaryHeap::with_capacity(k + 1);
    for s in scored {
        heap.push(WorstFirst(s));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut ranked: Vec<ScoredEntry> = heap.into_iter().map(|w| w.0).collect();
    ranked.sort_by(rank_cmp);
    Ok(RetrievalResult { ranked })
}

/// Reference implementation: score everything, fully sort, truncate.
pub fn brute_force_oracle(
    query: &Trajectory,
    dict: &TrajectoryDictionary,
    k: usize,
    alpha: f64,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(DictError::BadTopK(k));
    }
    let mut scored = similarity_scores(query, dict, alpha)?;
    scored.sort_by(rank_cmp);
    scored.truncate(k);
    Ok(RetrievalResult { ranked: scored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bin::{bin_index, BinIndex, DEFAULT_RESOLUTION};
    use crate::build::{BuildManifest, DictionaryEntry, TrajectoryDictionary};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use traj_core::{compute_motion_features, FeatureLimits, State, Trajectory};

    pub(crate) fn toy_history(points: Vec<(f64, f64)>) -> Trajectory {
        let pts = points
            .into_iter()
            .map(|(x, y)| State::full(x, y, 0.0, 0.0, 0.0))
            .collect();
        Trajectory::history(pts, 0.1)
    }

    pub(crate) fn toy_dict(histories: Vec<Trajectory>) -> TrajectoryDictionary {
        let entries = histories
            .into_iter()
            .enumerate()
            .map(|(i, history)| {
                let features =
                    compute_motion_features(&history, &FeatureLimits::default()).unwrap();
                let future = Trajectory::future(
                    vec![State::pose(i as f64, 0.0, 0.0); 4],
                    0.1,
                );
                DictionaryEntry {
                    bin: bin_index(&features, &DEFAULT_RESOLUTION).unwrap_or(BinIndex([0; 5])),
                    history,
                    future,
                    features,
                    source_dataset: "toy".into(),
                }
            })
            .collect();
        TrajectoryDictionary {
            resolution: DEFAULT_RESOLUTION,
            n_clusters: 2,
            seed: 0,
            entries,
            manifest: BuildManifest {
                sources: vec![],
                record_count: 0,
            },
        }
    }

    fn line_x(n: usize, step: f64) -> Trajectory {
        // Ends at the origin so the ego re-anchor is the identity.
        toy_history(
            (0..n)
                .map(|t| ((t as f64 - (n - 1) as f64) * step, 0.0))
                .collect(),
        )
    }

    fn line_y(n: usize, step: f64) -> Trajectory {
        toy_history(
            (0..n)
                .map(|t| (0.0, (t as f64 - (n - 1) as f64) * step))
                .collect(),
        )
    }

    #[test]
    fn exact_match_scores_alpha_and_wins() {
        let query = line_x(20, 0.5);
        let dict = toy_dict(vec![line_x(20, 0.5), line_y(20, 0.5), line_x(20, 0.9)]);
        let scores = similarity_scores(&query, &dict, 0.3).unwrap();
        assert!((scores[0].score - 0.3).abs() < 1e-12);
        assert!((scores[0].cosine - 1.0).abs() < 1e-12);
        assert_eq!(scores[0].distance, 0.0);
        let best = scores
            .iter()
            .cloned()
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
            .unwrap();
        assert_eq!(best.index, 0);
    }

    #[test]
    fn orthogonal_entry_at_max_distance_scores_minus_055() {
        // Entry 0 is the query itself (distance 0 = min); entry 1 is
        // orthogonal and the farthest.
        let query = line_x(20, 0.5);
        let dict = toy_dict(vec![line_x(20, 0.5), line_y(20, 0.5)]);
        let scores = similarity_scores(&query, &dict, 0.3).unwrap();
        assert!((scores[1].cosine - 0.5).abs() < 1e-12, "{:?}", scores[1]);
        assert!((scores[1].distance - 1.0).abs() < 1e-12);
        assert!((scores[1].score - (0.3 * 0.5 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_ranks_by_raw_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let histories: Vec<Trajectory> = (0..30)
            .map(|_| {
                toy_history(
                    (0..20)
                        .map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                        .collect(),
                )
            })
            .collect();
        let dict = toy_dict(histories);
        let query = line_x(20, 0.7);
        let result = retrieve_top_k(&query, &dict, dict.len(), 1.0).unwrap();
        let q = ego_flatten(&query);
        let mut by_cosine: Vec<(usize, f64)> = dict
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let h = ego_flatten(&e.history);
                (i, dot(&q, &h) / (norm(&q) * norm(&h)))
            })
            .collect();
        by_cosine.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<usize> = by_cosine.iter().map(|(i, _)| *i).collect();
        let got: Vec<usize> = result.ranked.iter().map(|s| s.index).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn k1_exact_match_returns_its_future() {
        let query = line_x(20, 0.5);
        let dict = toy_dict(vec![line_y(20, 0.5), line_x(20, 0.5)]);
        let result = retrieve_top_k(&query, &dict, 1, 0.3).unwrap();
        assert_eq!(result.ranked.len(), 1);
        assert_eq!(result.ranked[0].index, 1);
        let futures = result.futures(&dict);
        assert_eq!(futures[0].points[0].x, 1.0);
    }

    #[test]
    fn k_beyond_dictionary_returns_everything_sorted() {
        let dict = toy_dict(vec![line_x(20, 0.5), line_y(20, 0.5), line_x(20, 0.8)]);
        let query = line_x(20, 0.6);
        let result = retrieve_top_k(&query, &dict, 50, 0.3).unwrap();
        assert_eq!(result.ranked.len(), 3);
        for w in result.ranked.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn equal_scores_rank_lower_index_first() {
        // Two identical histories with different futures tie exactly.
        let dict = toy_dict(vec![line_x(20, 0.5), line_x(20, 0.5), line_y(20, 0.5)]);
        let query = line_x(20, 0.5);
        let result = brute_force_oracle(&query, &dict, 2, 0.3).unwrap();
        assert_eq!(result.ranked[0].index, 0);
        assert_eq!(result.ranked[1].index, 1);
        assert_eq!(result.ranked[0].score, result.ranked[1].score);
        let heap = retrieve_top_k(&query, &dict, 2, 0.3).unwrap();
        assert_eq!(heap, result);
    }

    #[test]
    fn heap_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..200 {
            let n = rng.gen_range(1..40);
            let histories: Vec<Trajectory> = (0..n)
                .map(|_| {
                    toy_history(
                        (0..12)
                            .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                            .collect(),
                    )
                })
                .collect();
            let dict = toy_dict(histories);
            let query = toy_history(
                (0..12)
                    .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                    .collect(),
            );
            for &alpha in &[0.0, 0.3, 1.0] {
                let k = rng.gen_range(1..=n + 3);
                let a = retrieve_top_k(&query, &dict, k, alpha).unwrap();
                let b = brute_force_oracle(&query, &dict, k, alpha).unwrap();
                assert_eq!(a, b, "trial {} alpha {} k {}", trial, alpha, k);
            }
        }
    }

    #[test]
    fn ranking_is_invariant_under_shared_rigid_transforms() {
        use traj_core::normalize::RigidTransform;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let histories: Vec<Trajectory> = (0..25)
            .map(|_| {
                toy_history(
                    (0..20)
                        .map(|_| (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)))
                        .collect(),
                )
            })
            .collect();
        let query = toy_history(
            (0..20)
                .map(|_| (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)))
                .collect(),
        );
        let dict = toy_dict(histories.clone());
        let base = retrieve_top_k(&query, &dict, 9, 0.3).unwrap();

        let tf = RigidTransform::new(1.234, 45.0, -17.0);
        let moved_dict = toy_dict(
            histories
                .iter()
                .map(|h| tf.apply_trajectory(h))
                .collect(),
        );
        let moved = retrieve_top_k(&tf.apply_trajectory(&query), &moved_dict, 9, 0.3).unwrap();
        let idx: Vec<usize> = base.ranked.iter().map(|s| s.index).collect();
        let idx2: Vec<usize> = moved.ranked.iter().map(|s| s.index).collect();
        assert_eq!(idx, idx2);
        for (a, b) in base.ranked.iter().zip(&moved.ranked) {
            assert!((a.score - b.score).abs() < 1e-9);
        }
    }

    #[test]
    fn raising_alpha_promotes_the_cosine_preferred_entry() {
        // Entries A and B sit at the same L2 distance from the query but A
        // keeps a positive cosine while B is orthogonal. Increasing alpha
        // must never push A below B.
        let n = 20;
        let q: Vec<(f64, f64)> = (0..n).map(|t| ((t as f64 - 19.0) * 0.5, 0.0)).collect();
        // Blockwise 90-degree rotation of q: orthogonal, same norm, and the
        // last point stays at the origin.
        let rot: Vec<(f64, f64)> = q.iter().map(|&(x, y)| (y, -x)).collect();
        // A = q + sqrt(2) * rot  ->  |A - q| = sqrt(2) |q|, cos(A, q) = 1/sqrt(3).
        let a: Vec<(f64, f64)> = q
            .iter()
            .zip(&rot)
            .map(|(&(qx, qy), &(rx, ry))| (qx + 2.0_f64.sqrt() * rx, qy + 2.0_f64.sqrt() * ry))
            .collect();
        // B = rot  ->  |B - q| = sqrt(2) |q|, cos(B, q) = 0.
        let far: Vec<(f64, f64)> = q.iter().map(|&(x, y)| (-10.0 * x, -10.0 * y)).collect();
        let query = toy_history(q.clone());
        let dict = toy_dict(vec![
            toy_history(q),   // 0: the query itself (min distance)
            toy_history(a),   // 1: cosine-preferred
            toy_history(rot), // 2: orthogonal at the same distance
            toy_history(far), // 3: max distance, cosine -1
        ]);
        let pos_of = |alpha: f64, idx: usize| {
            retrieve_top_k(&query, &dict, 4, alpha)
                .unwrap()
                .ranked
                .iter()
                .position(|s| s.index == idx)
                .unwrap()
        };
        for alphas in [(0.0, 0.3), (0.3, 1.0), (0.0, 1.0)] {
            assert!(pos_of(alphas.1, 1) <= pos_of(alphas.0, 1));
        }
        // With alpha = 1 the cosine-preferred entry strictly outranks the
        // orthogonal one.
        assert!(pos_of(1.0, 1) < pos_of(1.0, 2));
    }

    #[test]
    fn empty_dictionary_and_bad_alpha_are_rejected() {
        let dict = toy_dict(vec![]);
        let query = line_x(20, 0.5);
        assert!(matches!(
            similarity_scores(&query, &dict, 0.3),
            Err(DictError::EmptyDictionary)
        ));
        let dict = toy_dict(vec![line_x(20, 0.5)]);
        assert!(matches!(
            similarity_scores(&query, &dict, 1.5),
            Err(DictError::BadAlpha(_))
        ));
        assert!(matches!(
            retrieve_top_k(&query, &dict, 0, 0.3),
            Err(DictError::BadTopK(0))
        ));
    }

    #[test]
    fn zero_vector_convention_scores_half_cosine() {
        // A stationary history flattens to all zeros after re-anchoring.
        let stationary = toy_history(vec![(3.0, 4.0); 20]);
        let dict = toy_dict(vec![line_x(20, 0.5), stationary.clone()]);
        let scores = similarity_scores(&stationary, &dict, 1.0).unwrap();
        assert_eq!(scores[1].cosine, 0.5);
    }
}
