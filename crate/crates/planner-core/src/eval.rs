//! Open-loop displacement metrics over held-out corpora.

use rayon::prelude::*;
use traj_core::CorpusRecord;
use traj_dict::TrajectoryDictionary;

use crate::data::Sample;
use crate::error::{PlanError, Result};
use crate::gftm::HUBER_DELTA;
use crate::hftdn::{guided_plan, HftdnModel};
use crate::planner::{PlanOutput, TrainedPlanner};
use crate::s2d::S2dPhase;

/// Aggregated evaluation metrics (means over records).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean L2 position error over all future steps, meters.
    pub ade: f64,
    /// Position error at the final step, meters.
    pub fde: f64,
    /// Mean absolute heading error, radians.
    pub yaw_mae: f64,
    /// The phase-I/III planning loss (Huber positions + Huber heading).
    pub plan_loss: f64,
    pub count: usize,
}

/// Per-record displacement metrics between a predicted `(T, 3)` future and
/// the ground-truth rows.
pub fn displacement_metrics(pred: &nn_core::Tensor, truth: &[[f64; 3]]) -> (f64, f64, f64) {
    let t = truth.len();
    assert_eq!(pred.shape(), &[t, 3], "prediction shape");
    let mut sum = 0.0;
    let mut yaw_sum = 0.0;
    let mut last = 0.0;
    for (k, row) in truth.iter().enumerate() {
        let dx = pred.at2(k, 0) - row[0];
        let dy = pred.at2(k, 1) - row[1];
        let d = dx.hypot(dy);
        sum += d;
        yaw_sum += (pred.at2(k, 2) - row[2]).abs();
        if k == t - 1 {
            last = d;
        }
    }
    (sum / t as f64, last, yaw_sum / t as f64)
}

fn huber_mean(errors: impl Iterator<Item = f64>, delta: f64) -> (f64, usize) {
    let mut acc = 0.0;
    let mut n = 0;
    for e in errors {
        acc += if e.abs() <= delta {
            0.5 * e * e
        } else {
            delta * (e.abs() - 0.5 * delta)
        };
        n += 1;
    }
    (acc, n)
}

/// Planning loss of a prediction against the record's future.
pub fn plan_loss_value(pred: &PlanOutput, truth: &[[f64; 3]]) -> f64 {
    let t = truth.len();
    let (xy_acc, xy_n) = huber_mean(
        (0..t).flat_map(|k| {
            [
                pred.ego_future.at2(k, 0) - truth[k][0],
                pred.ego_future.at2(k, 1) - truth[k][1],
            ]
        }),
        HUBER_DELTA,
    );
    let (psi_acc, psi_n) = huber_mean(
        (0..t).map(|k| pred.ego_future.at2(k, 2) - truth[k][2]),
        HUBER_DELTA,
    );
    xy_acc / xy_n as f64 + psi_acc / psi_n as f64
}

/// Evaluate a planner (optionally with dictionary guidance) over a corpus.
/// Requires the mask phase to be `Inference`.
pub fn evaluate(
    planner: &TrainedPlanner,
    guidance: Option<(&HftdnModel, &TrajectoryDictionary)>,
    records: &[CorpusRecord],
) -> Result<Metrics> {
    if records.is_empty() {
        return Err(PlanError::EmptyCorpus("evaluation corpus"));
    }
    if planner.model.cfg.use_s2d && planner.model.s2d.phase != S2dPhase::Inference {
        return Err(PlanError::WrongPhase(
            "evaluation requires the mask in Inference".into(),
        ));
    }
    let per_record: Vec<(f64, f64, f64, f64)> = records
        .par_iter()
        .map(|rec| {
            let output = match guidance {
                Some((hftdn, dict)) => guided_plan(planner, hftdn, dict, rec)?,
                None => planner.model.plan(&Sample::from_record(rec))?,
            };
            let (ade, fde, yaw) = displacement_metrics(&output.ego_future, &rec.future);
            let loss = plan_loss_value(&output, &rec.future);
            Ok((ade, fde, yaw, loss))
        })
        .collect::<Result<_>>()?;
    let n = per_record.len() as f64;
    let mut sums = (0.0, 0.0, 0.0, 0.0);
    for (a, f, y, l) in &per_record {
        sums.0 += a;
        sums.1 += f;
        sums.2 += y;
        sums.3 += l;
    }
    Ok(Metrics {
        ade: sums.0 / n,
        fde: sums.1 / n,
        yaw_mae: sums.2 / n,
        plan_loss: sums.3 / n,
        count: per_record.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nn_core::Tensor;

    fn truth_rows(t: usize) -> Vec<[f64; 3]> {
        (0..t)
            .map(|k| [0.5 * k as f64, -0.25 * k as f64, 0.01 * k as f64])
            .collect()
    }

    fn as_pred(rows: &[[f64; 3]]) -> Tensor {
        Tensor::matrix(rows.len(), 3, rows.iter().flatten().copied().collect())
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let truth = truth_rows(80);
        let (ade, fde, yaw) = displacement_metrics(&as_pred(&truth), &truth);
        assert_eq!((ade, fde, yaw), (0.0, 0.0, 0.0));
        let out = PlanOutput {
            ego_future: as_pred(&truth),
            neighbors: vec![],
        };
        assert_eq!(plan_loss_value(&out, &truth), 0.0);
    }

    #[test]
    fn constant_lateral_offset_gives_unit_ade_and_fde() {
        let truth = truth_rows(80);
        let shifted: Vec<[f64; 3]> = truth.iter().map(|r| [r[0], r[1] + 1.0, r[2]]).collect();
        let (ade, fde, yaw) = displacement_metrics(&as_pred(&shifted), &truth);
        assert!((ade - 1.0).abs() < 1e-12);
        assert!((fde - 1.0).abs() < 1e-12);
        assert_eq!(yaw, 0.0);
    }

    #[test]
    fn metrics_match_a_naive_recomputation() {
        let truth = truth_rows(80);
        let pred: Vec<[f64; 3]> = truth
            .iter()
            .enumerate()
            .map(|(k, r)| {
                [
                    r[0] + (k as f64 * 0.37).sin(),
                    r[1] - (k as f64 * 0.73).cos() * 0.5,
                    r[2] + 0.02 * (k % 5) as f64,
                ]
            })
            .collect();
        let (ade, fde, yaw) = displacement_metrics(&as_pred(&pred), &truth);

        // Oracle: direct per-step arithmetic, no shared helpers.
        let t = truth.len();
        let mut d_sum = 0.0;
        let mut y_sum = 0.0;
        for k in 0..t {
            let dx = pred[k][0] - truth[k][0];
            let dy = pred[k][1] - truth[k][1];
            d_sum += (dx * dx + dy * dy).sqrt();
            y_sum += (pred[k][2] - truth[k][2]).abs();
        }
        let dx = pred[t - 1][0] - truth[t - 1][0];
        let dy = pred[t - 1][1] - truth[t - 1][1];
        assert!((ade - d_sum / t as f64).abs() < 1e-12);
        assert!((fde - (dx * dx + dy * dy).sqrt()).abs() < 1e-12);
        assert!((yaw - y_sum / t as f64).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_rigid_transform_invariant() {
        use traj_core::normalize::RigidTransform;
        let truth = truth_rows(40);
        let pred: Vec<[f64; 3]> = truth
            .iter()
            .map(|r| [r[0] + 0.3, r[1] - 0.1, r[2] + 0.05])
            .collect();
        let (ade0, fde0, yaw0) = displacement_metrics(&as_pred(&pred), &truth);
        let tf = RigidTransform::new(0.9, -12.0, 5.0);
        let map = |rows: &[[f64; 3]]| -> Vec<[f64; 3]> {
            rows.iter()
                .map(|r| {
                    let (x, y) = tf.apply_point(r[0], r[1]);
                    [x, y, r[2] + 0.9]
                })
                .collect()
        };
        let (ade1, fde1, yaw1) = displacement_metrics(&as_pred(&map(&pred)), &map(&truth));
        assert!((ade0 - ade1).abs() < 1e-9);
        assert!((fde0 - fde1).abs() < 1e-9);
        assert!((yaw0 - yaw1).abs() < 1e-9);
    }
}
