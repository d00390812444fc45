//! Dictionary construction: clipped features -> bins -> per-bin k-means over
//! flattened histories and futures -> nearest-pair selection -> global
//! dedupe.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use traj_core::corpus::{read_corpora, CorpusRecord};
use traj_core::{compute_motion_features, FeatureLimits, MotionFeatures, Trajectory};

use crate::bin::{bin_index, BinIndex};
use crate::error::Result;
use crate::kmeans::kmeans;

/// One representative history-future pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryEntry {
    pub history: Trajectory,
    pub future: Trajectory,
    pub features: MotionFeatures,
    pub bin: BinIndex,
    pub source_dataset: String,
}

/// Build inputs recorded alongside the entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildManifest {
    pub sources: Vec<String>,
    pub record_count: usize,
}

/// Immutable dictionary of representative pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDictionary {
    pub resolution: [f64; 5],
    pub n_clusters: usize,
    pub seed: u64,
    pub entries: Vec<DictionaryEntry>,
    pub manifest: BuildManifest,
}

impl TrajectoryDictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictConfig {
    pub resolution: [f64; 5],
    pub n_clusters: usize,
    pub seed: u64,
    pub limits: FeatureLimits,
}

impl Default for DictConfig {
    fn default() -> Self {
        Self {
            resolution: crate::bin::DEFAULT_RESOLUTION,
            n_clusters: 2,
            seed: 0,
            limits: FeatureLimits::default(),
        }
    }
}

/// History flattened to `(x, y)` per step; heading is excluded from the
/// clustering distance.
pub fn flatten_history(rec: &CorpusRecord) -> Vec<f64> {
    rec.history.iter().flat_map(|r| [r[0], r[1]]).collect()
}

pub fn flatten_future(rec: &CorpusRecord) -> Vec<f64> {
    rec.future.iter().flat_map(|r| [r[0], r[1]]).collect()
}

/// Per-bin k-means seed, derived from the build seed, the bin coordinates,
/// and which side (0 = histories, 1 = futures) is being clustered.
pub fn bin_kmeans_seed(base: u64, bin: &BinIndex, side: u64) -> u64 {
    // splitmix64 over the folded inputs.
    let mut z = base ^ side.wrapping_mul(0x9E3779B97F4A7C15);
    for &c in &bin.0 {
        z = z.wrapping_add(c as u64).wrapping_mul(0xBF58476D1CE4E5B9);
        z ^= z >> 27;
    }
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Content key for pair dedupe: the exact bit pattern of the flattened
/// history and future rows.
fn pair_key(rec: &CorpusRecord) -> Vec<u64> {
    rec.history
        .iter()
        .flatten()
        .chain(rec.future.iter().flatten())
        .map(|v| v.to_bits())
        .collect()
}

fn nearest_member(points: &[Vec<f64>], members: &[usize], centroid: &[f64]) -> usize {
    let mut best = members[0];
    let mut best_d = f64::INFINITY;
    for &m in members {
        let d: f64 = points[m]
            .iter()
            .zip(centroid)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        // Strict less keeps the lowest record index on ties.
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    best
}

/// Run the construction over in-memory records.
pub fn build_dictionary(
    records: &[CorpusRecord],
    cfg: &DictConfig,
    sources: Vec<String>,
) -> Result<TrajectoryDictionary> {
    let histories: Vec<Vec<f64>> = records.iter().map(flatten_history).collect();
    let futures: Vec<Vec<f64>> = records.iter().map(flatten_future).collect();

    // Feature extraction + binning.
    let mut bins: BTreeMap<BinIndex, Vec<usize>> = BTreeMap::new();
    let mut features = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let f = compute_motion_features(&rec.history_trajectory(), &cfg.limits)?;
        let b = bin_index(&f, &cfg.resolution)?;
        bins.entry(b).or_default().push(i);
        features.push(f);
    }

    // Per-bin clustering and nearest-pair selection.
    let mut selected: BTreeSet<usize> = BTreeSet::new();
    for (bin, members) in &bins {
        for (side, points) in [(0u64, &histories), (1u64, &futures)] {
            let bin_points: Vec<Vec<f64>> = members.iter().map(|&m| points[m].clone()).collect();
            let seed = bin_kmeans_seed(cfg.seed, bin, side);
            let result = kmeans(&bin_points, cfg.n_clusters, seed)?;
            for centroid in &result.centroids {
                selected.insert(nearest_member(points, members, centroid));
            }
        }
    }

    // Global dedupe on exact (history, future) content, keeping the lowest
    // record index.
    let mut by_content: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for &i in &selected {
        let key = pair_key(&records[i]);
        by_content
            .entry(key)
            .and_modify(|slot| {
                if i < *slot {
                    *slot = i;
                }
            })
            .or_insert(i);
    }
    let mut kept: Vec<usize> = by_content.into_values().collect();
    kept.sort_unstable();

    let entries = kept
        .into_iter()
        .map(|i| {
            let rec = &records[i];
            DictionaryEntry {
                history: rec.history_trajectory(),
                future: rec.future_trajectory(),
                features: features[i],
                bin: bin_index(&features[i], &cfg.resolution).expect("validated resolution"),
                source_dataset: rec.dataset_id.clone(),
            }
        })
        .collect();

    Ok(TrajectoryDictionary {
        resolution: cfg.resolution,
        n_clusters: cfg.n_clusters,
        seed: cfg.seed,
        entries,
        manifest: BuildManifest {
            sources,
            record_count: records.len(),
        },
    })
}

/// Read the corpora in order and build.
pub fn build_dictionary_from_files(
    paths: &[impl AsRef<Path>],
    cfg: &DictConfig,
) -> Result<TrajectoryDictionary> {
    let records = read_corpora(paths)?;
    let sources = paths
        .iter()
        .map(|p| p.as_ref().display().to_string())
        .collect();
    build_dictionary(&records, cfg, sources)
}
