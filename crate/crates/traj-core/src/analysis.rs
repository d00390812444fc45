//! Corpus statistics: maneuver distributions and history→future transition
//! matrices, grouped per dataset and overall.

use std::collections::BTreeMap;

use crate::corpus::CorpusRecord;
use crate::error::Result;
use crate::features::FeatureLimits;
use crate::maneuver::{classify_maneuver, ManeuverClass, ManeuverThresholds};

/// Per-class counts and shares.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassShares {
    pub counts: [usize; 4],
    pub shares: [f64; 4],
}

impl ClassShares {
    pub fn from_counts(counts: [usize; 4]) -> Self {
        let total: usize = counts.iter().sum();
        let shares = if total == 0 {
            [0.0; 4]
        } else {
            let t = total as f64;
            [
                counts[0] as f64 / t,
                counts[1] as f64 / t,
                counts[2] as f64 / t,
                counts[3] as f64 / t,
            ]
        };
        Self { counts, shares }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Maneuver distribution of history trajectories, per dataset and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub per_dataset: BTreeMap<String, ClassShares>,
    pub overall: ClassShares,
}

/// Row-stochastic 4x4 matrix of history-class to future-class transitions,
/// with the raw counts alongside. Rows with zero observations are emitted as
/// uniform and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub counts: [[u64; 4]; 4],
    pub rows: [[f64; 4]; 4],
    pub uniform_rows: [bool; 4],
}

impl TransitionMatrix {
    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        let mut rows = [[0.0; 4]; 4];
        let mut uniform_rows = [false; 4];
        for i in 0..4 {
            let total: u64 = counts[i].iter().sum();
            if total == 0 {
                rows[i] = [0.25; 4];
                uniform_rows[i] = true;
            } else {
                for j in 0..4 {
                    rows[i][j] = counts[i][j] as f64 / total as f64;
                }
            }
        }
        Self {
            counts,
            rows,
            uniform_rows,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Share of all transitions covered by the `k` most frequent cells.
    pub fn top_k_coverage(&self, k: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let mut cells: Vec<u64> = self.counts.iter().flatten().copied().collect();
        cells.sort_unstable_by(|a, b| b.cmp(a));
        let covered: u64 = cells.iter().take(k).sum();
        covered as f64 / total as f64
    }

    /// The 16 cell probabilities (joint distribution over cells).
    pub fn cell_distribution(&self) -> [f64; 16] {
        let total = self.total().max(1) as f64;
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[i * 4 + j] = self.counts[i][j] as f64 / total;
            }
        }
        out
    }
}

/// Transition statistics per dataset and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionReport {
    pub per_dataset: BTreeMap<String, TransitionMatrix>,
    pub overall: TransitionMatrix,
}

/// Classify every record's history and tabulate class shares.
pub fn maneuver_distribution(
    records: &[CorpusRecord],
    limits: &FeatureLimits,
    thresholds: &ManeuverThresholds,
) -> Result<DistributionReport> {
    let mut per_dataset: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    let mut overall = [0usize; 4];
    for rec in records {
        let class = classify_maneuver(&rec.history_trajectory(), limits, thresholds)?;
        overall[class.index()] += 1;
        per_dataset.entry(rec.dataset_id.clone()).or_default()[class.index()] += 1;
    }
    Ok(DistributionReport {
        per_dataset: per_dataset
            .into_iter()
            .map(|(k, v)| (k, ClassShares::from_counts(v)))
            .collect(),
        overall: ClassShares::from_counts(overall),
    })
}

/// Classify (history, future) per record and tabulate the 4x4 transitions.
pub fn transition_matrix(
    records: &[CorpusRecord],
    limits: &FeatureLimits,
    thresholds: &ManeuverThresholds,
) -> Result<TransitionReport> {
    let mut per_dataset: BTreeMap<String, [[u64; 4]; 4]> = BTreeMap::new();
    let mut overall = [[0u64; 4]; 4];
    for rec in records {
        let h = classify_maneuver(&rec.history_trajectory(), limits, thresholds)?;
        let f = classify_maneuver(&rec.future_trajectory(), limits, thresholds)?;
        overall[h.index()][f.index()] += 1;
        per_dataset.entry(rec.dataset_id.clone()).or_default()[h.index()][f.index()] += 1;
    }
    Ok(TransitionReport {
        per_dataset: per_dataset
            .into_iter()
            .map(|(k, v)| (k, TransitionMatrix::from_counts(v)))
            .collect(),
        overall: TransitionMatrix::from_counts(overall),
    })
}

/// Shannon entropy of `shares` normalized by `ln(len)`, in `[0, 1]`.
pub fn normalized_entropy(shares: &[f64]) -> f64 {
    let h: f64 = shares
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h / (shares.len() as f64).ln()
}

/// Jensen-Shannon divergence between two distributions, in nats.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&ai, _)| ai > 0.0)
            .map(|(&ai, &bi)| ai * (ai / bi).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

/// Tab-separated maneuver distribution table with a header row.
pub fn distribution_table(report: &DistributionReport) -> String {
    let mut out = String::from("dataset\tclass\tcount\tshare\n");
    let push_group = |name: &str, shares: &ClassShares, out: &mut String| {
        for class in ManeuverClass::ALL {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.9}\n",
                name,
                class.label(),
                shares.counts[class.index()],
                shares.shares[class.index()]
            ));
        }
    };
    for (name, shares) in &report.per_dataset {
        push_group(name, shares, &mut out);
    }
    push_group("<all>", &report.overall, &mut out);
    out
}

/// Tab-separated transition table with a header row.
pub fn transition_table(report: &TransitionReport) -> String {
    let mut out = String::from("dataset\thistory\tfuture\tcount\tprob\tuniform_row\n");
    let push_group = |name: &str, m: &TransitionMatrix, out: &mut String| {
        for hist in ManeuverClass::ALL {
            for fut in ManeuverClass::ALL {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{:.9}\t{}\n",
                    name,
                    hist.label(),
                    fut.label(),
                    m.counts[hist.index()][fut.index()],
                    m.rows[hist.index()][fut.index()],
                    m.uniform_rows[hist.index()]
                ));
            }
        }
        out.push_str(&format!(
            "{}\t<top7>\t<coverage>\t{}\t{:.9}\tfalse\n",
            name,
            m.total(),
            m.top_k_coverage(7)
        ));
    };
    for (name, m) in &report.per_dataset {
        push_group(name, m, &mut out);
    }
    push_group("<all>", &report.overall, &mut out);
    out
}
