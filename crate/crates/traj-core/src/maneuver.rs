//! Maneuver classification from speed, heading change, and curvature.

use crate::error::Result;
use crate::features::{compute_motion_features, FeatureLimits};
use crate::trajectory::Trajectory;

/// The four fundamental maneuver classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ManeuverClass {
    Stationary,
    Forward,
    LeftTurn,
    RightTurn,
}

impl ManeuverClass {
    pub const ALL: [ManeuverClass; 4] = [
        ManeuverClass::Stationary,
        ManeuverClass::Forward,
        ManeuverClass::LeftTurn,
        ManeuverClass::RightTurn,
    ];

    pub fn index(self) -> usize {
        match self {
            ManeuverClass::Stationary => 0,
            ManeuverClass::Forward => 1,
            ManeuverClass::LeftTurn => 2,
            ManeuverClass::RightTurn => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ManeuverClass::Stationary => "stationary",
            ManeuverClass::Forward => "forward",
            ManeuverClass::LeftTurn => "left_turn",
            ManeuverClass::RightTurn => "right_turn",
        }
    }
}

/// Classification cutoffs. The signals are fixed (mean speed, total heading
/// change, mean curvature); the cutoffs are configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverThresholds {
    /// Below this mean speed (m/s) the trajectory is stationary.
    pub v_stat: f64,
    /// Total heading change (rad) beyond which the trajectory is a turn.
    pub psi_turn: f64,
    /// Mean |curvature| (1/m) beyond which the trajectory is a turn.
    pub kappa_turn: f64,
}

impl Default for ManeuverThresholds {
    fn default() -> Self {
        Self {
            v_stat: 0.5,
            psi_turn: 15.0_f64.to_radians(),
            kappa_turn: 0.02,
        }
    }
}

/// Assign exactly one maneuver class to a trajectory.
///
/// Stationary wins below the speed cutoff. Otherwise a turn is detected when
/// either the total heading change or the mean curvature exceeds its
/// threshold; the sign of the heading change (counterclockwise positive)
/// picks left versus right. Everything else is forward.
pub fn classify_maneuver(
    traj: &Trajectory,
    limits: &FeatureLimits,
    thresholds: &ManeuverThresholds,
) -> Result<ManeuverClass> {
    let f = compute_motion_features(traj, limits)?;
    if f.v_bar < thresholds.v_stat {
        return Ok(ManeuverClass::Stationary);
    }
    let dpsi = traj.points.last().unwrap().psi - traj.points.first().unwrap().psi;
    if dpsi.abs() > thresholds.psi_turn || f.kappa_bar.abs() > thresholds.kappa_turn {
        let sign = if dpsi != 0.0 { dpsi } else { f.kappa_bar };
        return Ok(if sign > 0.0 {
            ManeuverClass::LeftTurn
        } else {
            ManeuverClass::RightTurn
        });
    }
    Ok(ManeuverClass::Forward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::RigidTransform;
    use crate::trajectory::{State, Trajectory};

    fn defaults() -> (FeatureLimits, ManeuverThresholds) {
        (FeatureLimits::default(), ManeuverThresholds::default())
    }

    fn arc(radius: f64, speed: f64, steps: usize, ccw: bool) -> Trajectory {
        // Closed form of the unicycle under constant (v, omega) from the
        // origin heading +x; valid for either turn direction.
        let omega = if ccw { speed / radius } else { -speed / radius };
        let r_signed = speed / omega;
        let points = (0..steps)
            .map(|t| {
                let theta = omega * 0.1 * t as f64;
                State::pose(r_signed * theta.sin(), r_signed * (1.0 - theta.cos()), theta)
            })
            .collect();
        Trajectory::history(points, 0.1)
    }

    #[test]
    fn identical_points_are_stationary() {
        let t = Trajectory::history(vec![State::pose(3.0, -2.0, 1.0); 20], 0.1);
        let (l, th) = defaults();
        assert_eq!(
            classify_maneuver(&t, &l, &th).unwrap(),
            ManeuverClass::Stationary
        );
    }

    #[test]
    fn straight_constant_speed_is_forward() {
        let points = (0..20)
            .map(|t| State::pose(0.5 * t as f64, 0.0, 0.0))
            .collect();
        let t = Trajectory::history(points, 0.1);
        let (l, th) = defaults();
        assert_eq!(
            classify_maneuver(&t, &l, &th).unwrap(),
            ManeuverClass::Forward
        );
    }

    #[test]
    fn quarter_circle_ccw_is_left_turn() {
        // 90 degrees over the window: radius chosen so 20 steps cover pi/2.
        let speed = 5.0;
        let steps = 20;
        let total = std::f64::consts::FRAC_PI_2;
        let radius = speed * 0.1 * (steps - 1) as f64 / total;
        let t = arc(radius, speed, steps, true);
        let (l, th) = defaults();
        assert_eq!(
            classify_maneuver(&t, &l, &th).unwrap(),
            ManeuverClass::LeftTurn
        );
    }

    #[test]
    fn mirrored_turn_flips_left_to_right() {
        let t = arc(10.0, 5.0, 20, true);
        let (l, th) = defaults();
        assert_eq!(
            classify_maneuver(&t, &l, &th).unwrap(),
            ManeuverClass::LeftTurn
        );
        let mirrored = Trajectory::history(
            t.points
                .iter()
                .map(|p| State::pose(p.x, -p.y, -p.psi))
                .collect(),
            t.dt,
        );
        assert_eq!(
            classify_maneuver(&mirrored, &l, &th).unwrap(),
            ManeuverClass::RightTurn
        );
    }

    #[test]
    fn classification_invariant_under_rigid_transforms() {
        let (l, th) = defaults();
        let cases = [
            Trajectory::history(vec![State::pose(1.0, 1.0, 0.3); 20], 0.1),
            arc(10.0, 5.0, 20, true),
            arc(10.0, 5.0, 20, false),
        ];
        for t in &cases {
            let c0 = classify_maneuver(t, &l, &th).unwrap();
            for k in 0..5 {
                let tf = RigidTransform::new(1.1 * k as f64, -3.0 * k as f64, 8.0);
                let c = classify_maneuver(&tf.apply_trajectory(t), &l, &th).unwrap();
                assert_eq!(c, c0);
            }
        }
    }
}
