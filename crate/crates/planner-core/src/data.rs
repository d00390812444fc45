//! Corpus records viewed as model samples.
//!
//! Positions and speeds are scaled by 0.1 on the way into recurrent
//! encoders; decoder outputs are scaled by 10 on the way out, so parameters
//! stay near unit magnitude while positions span tens of meters.

use nn_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use traj_core::CorpusRecord;

/// Input scaling applied to positions and speeds.
pub const INPUT_SCALE: f64 = 0.1;
/// Output gain applied by position decoder heads.
pub const OUTPUT_SCALE: f64 = 10.0;

/// One training sample: scaled encoder inputs plus flat targets.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Ego history inputs, one scaled 5-vector per step.
    pub ego_inputs: Vec<Tensor>,
    /// Neighbor history inputs, per neighbor.
    pub neighbor_inputs: Vec<Vec<Tensor>>,
    /// Ego future positions, flat `[x0, y0, x1, y1, ...]`.
    pub target_xy: Tensor,
    /// Ego future headings, flat.
    pub target_psi: Tensor,
    /// Constant-turn-rate extrapolation of each neighbor, flat xy. Stands in
    /// for neighbor future ground truth, which the corpus schema does not
    /// carry.
    pub neighbor_cv_xy: Vec<Tensor>,
    /// Raw future rows, for metric computation.
    pub future_rows: Vec<[f64; 3]>,
}

fn history_inputs(rows: &[[f64; 5]]) -> Vec<Tensor> {
    rows.iter()
        .map(|r| {
            Tensor::vector(vec![
                r[0] * INPUT_SCALE,
                r[1] * INPUT_SCALE,
                r[2],
                r[3] * INPUT_SCALE,
                r[4],
            ])
        })
        .collect()
}

/// Future rows as scaled encoder inputs `[x/10, y/10, psi]`.
pub fn future_inputs(points: &[traj_core::State]) -> Vec<Tensor> {
    points
        .iter()
        .map(|p| Tensor::vector(vec![p.x * INPUT_SCALE, p.y * INPUT_SCALE, p.psi]))
        .collect()
}

/// Constant-velocity/turn-rate rollout from the last history state, same
/// Euler convention as the generator.
fn ctrv_rollout(last: &[f64; 5], steps: usize, dt: f64) -> Tensor {
    let (mut x, mut y, mut psi) = (last[0], last[1], last[2]);
    let (v, omega) = (last[3], last[4]);
    let mut out = Vec::with_capacity(steps * 2);
    for _ in 0..steps {
        x += v * psi.cos() * dt;
        y += v * psi.sin() * dt;
        psi += omega * dt;
        out.push(x);
        out.push(y);
    }
    Tensor::vector(out)
}

impl Sample {
    pub fn from_record(rec: &CorpusRecord) -> Self {
        let ego_inputs = history_inputs(&rec.history);
        let neighbor_inputs = rec
            .neighbors
            .iter()
            .map(|n| history_inputs(n))
            .collect();
        let mut xy = Vec::with_capacity(rec.future.len() * 2);
        let mut psi = Vec::with_capacity(rec.future.len());
        for r in &rec.future {
            xy.push(r[0]);
            xy.push(r[1]);
            psi.push(r[2]);
        }
        let steps = rec.future.len();
        let neighbor_cv_xy = rec
            .neighbors
            .iter()
            .map(|n| ctrv_rollout(n.last().expect("non-empty neighbor"), steps, rec.dt))
            .collect();
        Sample {
            ego_inputs,
            neighbor_inputs,
            target_xy: Tensor::vector(xy),
            target_psi: Tensor::vector(psi),
            neighbor_cv_xy,
            future_rows: rec.future.clone(),
        }
    }

    pub fn num_neighbors(&self) -> usize {
        self.neighbor_inputs.len()
    }
}

/// Deterministic shuffled train/validation split over sample indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Seeded epoch shuffle.
pub fn shuffle_epoch(indices: &mut [usize], seed: u64, epoch: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E3779B97F4A7C15));
    indices.shuffle(&mut rng);
}
