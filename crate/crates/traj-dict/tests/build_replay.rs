//! Independent replay of the dictionary construction.
//!
//! The production builder streams records through a bin map with interleaved
//! selection and a content-keyed dedupe. This oracle re-codes the whole
//! orchestration naively — hash-map binning, explicit selection lists, a
//! quadratic dedupe — sharing only the published `kmeans`, `bin_index`, and
//! per-bin seed derivation. The two must select exactly the same entry set.

use std::collections::HashMap;

use traj_core::corpus::CorpusRecord;
use traj_core::synth::{gen_scenario, ScenarioConfig};
use traj_core::compute_motion_features;
use traj_dict::build::{bin_kmeans_seed, build_dictionary, flatten_future, flatten_history};
use traj_dict::{bin_index, kmeans, BinIndex, DictConfig, DictionaryEntry};

fn l2_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Naive construction replay, from scratch.
fn naive_replay(records: &[CorpusRecord], cfg: &DictConfig) -> Vec<usize> {
    // Bin everything.
    let mut bins: HashMap<BinIndex, Vec<usize>> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        let f = compute_motion_features(&rec.history_trajectory(), &cfg.limits).unwrap();
        let b = bin_index(&f, &cfg.resolution).unwrap();
        bins.entry(b).or_default().push(i);
    }

    // Select per bin: for each history centroid the nearest member pair,
    // for each future centroid likewise.
    let mut picked: Vec<usize> = Vec::new();
    for (bin, members) in &bins {
        let hists: Vec<Vec<f64>> = members.iter().map(|&m| flatten_history(&records[m])).collect();
        let futs: Vec<Vec<f64>> = members.iter().map(|&m| flatten_future(&records[m])).collect();
        for (side, pts) in [(0u64, &hists), (1u64, &futs)] {
            let km = kmeans(pts, cfg.n_clusters, bin_kmeans_seed(cfg.seed, bin, side)).unwrap();
            for c in &km.centroids {
                let mut best = members[0];
                let mut best_d = f64::INFINITY;
                for (j, &m) in members.iter().enumerate() {
                    let d = l2_sq(&pts[j], c);
                    if d < best_d || (d == best_d && m < best) {
                        best_d = d;
                        best = m;
                    }
                }
                picked.push(best);
            }
        }
    }

    // Quadratic dedupe on exact pair content, lowest record index wins.
    let key = |i: usize| -> Vec<u64> {
        records[i]
            .history
            .iter()
            .flatten()
            .chain(records[i].future.iter().flatten())
            .map(|v| v.to_bits())
            .collect::<Vec<u64>>()
    };
    picked.sort_unstable();
    picked.dedup();
    let mut kept: Vec<usize> = Vec::new();
    'outer: for &i in &picked {
        let ki = key(i);
        for &j in &kept {
            if key(j) == ki {
                continue 'outer; // kept is sorted ascending, so j < i wins
            }
        }
        kept.push(i);
    }
    kept
}

fn entry_matches_record(e: &DictionaryEntry, rec: &CorpusRecord) -> bool {
    e.source_dataset == rec.dataset_id
        && e.history
            .points
            .iter()
            .zip(&rec.history)
            .all(|(p, r)| p.x == r[0] && p.y == r[1] && p.psi == r[2])
        && e.future
            .points
            .iter()
            .zip(&rec.future)
            .all(|(p, r)| p.x == r[0] && p.y == r[1] && p.psi == r[2])
}

#[test]
fn builder_matches_naive_replay_on_random_corpora() {
    for corpus_seed in [101u64, 202, 303, 404, 505] {
        let mut scen = ScenarioConfig::new(format!("ds{corpus_seed}"), corpus_seed);
        scen.noise_std = 0.03;
        let records: Vec<CorpusRecord> = (0..500)
            .map(|i| gen_scenario(&scen, i).unwrap())
            .collect();
        let cfg = DictConfig {
            seed: corpus_seed ^ 0xABCD,
            ..DictConfig::default()
        };
        let dict = build_dictionary(&records, &cfg, vec![]).unwrap();
        let want = naive_replay(&records, &cfg);
        assert_eq!(
            dict.len(),
            want.len(),
            "seed {}: {} entries vs oracle {}",
            corpus_seed,
            dict.len(),
            want.len()
        );
        for (e, &i) in dict.entries.iter().zip(&want) {
            assert!(
                entry_matches_record(e, &records[i]),
                "seed {}: entry mismatch at record {}",
                corpus_seed,
                i
            );
        }
    }
}
