//! Shared mini-batch training driver.
//!
//! Per-sample losses and gradients are computed in parallel, then reduced in
//! batch order, so a run is bit-reproducible for a fixed seed regardless of
//! thread count.

use std::path::PathBuf;

use nn_core::{adam_step, AdamConfig, AdamState, GradStore, ParamSet};
use rayon::prelude::*;

use crate::data::{shuffle_epoch, split_indices, Sample};
use crate::error::{PlanError, Result};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Stop once validation loss falls below `initial / factor`.
    pub early_stop_factor: Option<f64>,
    /// Stop once the epoch's mean training loss falls below this.
    pub early_stop_train_below: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainOptions {
    pub fn new(epochs: usize, batch: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch,
            lr,
            seed,
            val_fraction: 0.1,
            early_stop_factor: None,
            early_stop_train_below: None,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Training trace: the pre-training validation loss and per-epoch stats.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub initial_val: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainTrace {
    pub fn final_val(&self) -> f64 {
        self.epochs.last().map_or(self.initial_val, |e| e.val_loss)
    }
}

/// Run the epoch loop.
///
/// `step_fn` produces one sample's loss and gradients against the current
/// parameters; `eval_fn` produces the loss only (no gradient bookkeeping);
/// `after_epoch` runs on the updated parameters (checkpointing hook). Both
/// loss closures also receive the sample's corpus index, so per-sample
/// caches (priors, retrievals) can key off it.
pub fn run_training<S, E, A>(
    params: &mut ParamSet,
    samples: &[Sample],
    opts: &TrainOptions,
    step_fn: S,
    eval_fn: E,
    mut after_epoch: A,
) -> Result<TrainTrace>
where
    S: Fn(&ParamSet, usize, &Sample) -> Result<(f64, GradStore)> + Sync,
    E: Fn(&ParamSet, usize, &Sample) -> Result<f64> + Sync,
    A: FnMut(&ParamSet, &EpochStats) -> Result<()>,
{
    if samples.is_empty() {
        return Err(PlanError::EmptyCorpus("training set"));
    }
    let (mut train_idx, val_idx) = split_indices(samples.len(), opts.val_fraction, opts.seed);

    let mean_val = |p: &ParamSet| -> Result<f64> {
        if val_idx.is_empty() {
            return Ok(f64::NAN);
        }
        let losses: Vec<f64> = val_idx
            .par_iter()
            .map(|&i| eval_fn(p, i, &samples[i]))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };

    let initial_val = mean_val(params)?;
    let mut state = AdamState::new();
    let adam_cfg = AdamConfig::with_lr(opts.lr);
    let mut trace = TrainTrace {
        initial_val,
        epochs: Vec::with_capacity(opts.epochs),
    };

    for epoch in 1..=opts.epochs {
        shuffle_epoch(&mut train_idx, opts.seed, epoch);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in train_idx.chunks(opts.batch.max(1)) {
            let results: Vec<(f64, GradStore)> = batch
                .par_iter()
                .map(|&i| step_fn(params, i, &samples[i]))
                .collect::<Result<_>>()?;
            let scale = 1.0 / results.len() as f64;
            let mut grads = GradStore::new();
            for (loss, g) in &results {
                loss_sum += loss;
                loss_count += 1;
                for (name, tensor) in g.iter() {
                    grads.add(name, tensor, scale);
                }
            }
            if !grads.all_finite() || !loss_sum.is_finite() {
                return Err(PlanError::TrainingDiverged { epoch });
            }
            adam_step(params, &grads, &mut state, &adam_cfg);
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / loss_count.max(1) as f64,
            val_loss: mean_val(params)?,
        };
        after_epoch(params, &stats)?;
        trace.epochs.push(stats);
        if let Some(factor) = opts.early_stop_factor {
            if stats.val_loss.is_finite() && stats.val_loss <= initial_val / factor {
                break;
            }
        }
        if let Some(threshold) = opts.early_stop_train_below {
            if stats.train_loss < threshold {
                break;
            }
        }
    }
    Ok(trace)
}
