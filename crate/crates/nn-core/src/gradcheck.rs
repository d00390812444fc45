//! Central finite-difference gradient verification.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::params::{GradStore, ParamSet};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter block.
    pub per_block: BTreeMap<String, f64>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Compare a model's analytic gradients against central finite differences.
///
/// `loss_fn` evaluates the model on fixed inputs and returns the scalar loss
/// plus its gradients; it is called twice per trainable parameter element, so
/// keep the model small (O(P) evaluations).
///
/// The relative error of a block compares the analytic and numeric gradient
/// vectors: `||a - n|| / max(||a|| + ||n||, 1e-8)`.
pub fn grad_check<F>(params: &ParamSet, mut loss_fn: F, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<(f64, GradStore)>,
{
    let (_, analytic) = loss_fn(params)?;
    let mut per_block = BTreeMap::new();
    let mut max_rel_err: f64 = 0.0;

    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let len = params.get(&name)?.value.len();
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        for k in 0..len {
            let mut plus = params.clone();
            plus.get_mut(&name)?.value.data_mut()[k] += step;
            let (lp, _) = loss_fn(&plus)?;
            let mut minus = params.clone();
            minus.get_mut(&name)?.value.data_mut()[k] -= step;
            let (lm, _) = loss_fn(&minus)?;
            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[k]);
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        let block_err = diff_sq.sqrt() / (a_sq.sqrt() + n_sq.sqrt()).max(1e-8);
        max_rel_err = max_rel_err.max(block_err);
        per_block.insert(name, block_err);
    }
    Ok(GradCheckReport {
        per_block,
        max_rel_err,
    })
}
