//! Kinematic motion features.
//!
//! A trajectory is summarized by the 5-vector `[a_bar, v_bar, kappa_bar,
//! omega_bar, alpha_bar]`: mean acceleration, speed, curvature, yaw rate, and
//! angular acceleration. Per-step rates come from finite differences (central
//! in the interior, one-sided at the boundaries); per-step acceleration and
//! curvature are clipped to physical bounds before averaging.

use crate::error::{Result, TrajError};
use crate::trajectory::Trajectory;

/// Physical clipping bounds and the standstill guard for curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureLimits {
    /// Maximum |acceleration| in m/s^2.
    pub a_max: f64,
    /// Maximum |curvature| in 1/m.
    pub kappa_max: f64,
    /// Speeds below this (m/s) force curvature to zero.
    pub v_eps: f64,
}

impl Default for FeatureLimits {
    fn default() -> Self {
        Self {
            a_max: 5.0,
            kappa_max: 0.5,
            v_eps: 0.1,
        }
    }
}

/// Mean motion features of a trajectory, post-clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionFeatures {
    /// Mean acceleration, m/s^2.
    pub a_bar: f64,
    /// Mean speed, m/s.
    pub v_bar: f64,
    /// Mean curvature, 1/m.
    pub kappa_bar: f64,
    /// Mean yaw rate, rad/s.
    pub omega_bar: f64,
    /// Mean angular acceleration, rad/s^2.
    pub alpha_bar: f64,
}

impl MotionFeatures {
    /// Feature vector in the canonical order `[a, v, kappa, omega, alpha]`.
    pub fn to_array(self) -> [f64; 5] {
        [
            self.a_bar,
            self.v_bar,
            self.kappa_bar,
            self.omega_bar,
            self.alpha_bar,
        ]
    }

    pub fn from_array(f: [f64; 5]) -> Self {
        Self {
            a_bar: f[0],
            v_bar: f[1],
            kappa_bar: f[2],
            omega_bar: f[3],
            alpha_bar: f[4],
        }
    }
}

/// First derivative of a uniformly sampled series: central differences in the
/// interior, one-sided at both ends. Output has the same length as the input.
pub fn finite_diff(series: &[f64], dt: f64) -> Vec<f64> {
    let n = series.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[0] = (series[1] - series[0]) / dt;
    out[n - 1] = (series[n - 1] - series[n - 2]) / dt;
    for i in 1..n - 1 {
        out[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
    }
    out
}

fn clip(x: f64, bound: f64) -> f64 {
    x.clamp(-bound, bound)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Compute the clipped mean motion features of a trajectory.
///
/// Speed and yaw rate are differentiated from positions and heading; the
/// second-level rates (acceleration, angular acceleration) are differentiated
/// from those series. Curvature is `omega/v`, forced to zero below the
/// standstill guard. Acceleration and curvature are clipped per step, before
/// the mean is taken.
pub fn compute_motion_features(traj: &Trajectory, limits: &FeatureLimits) -> Result<MotionFeatures> {
    if traj.points.len() < 3 {
        return Err(TrajError::TooShort {
            need: 3,
            got: traj.points.len(),
        });
    }
    if traj.dt <= 0.0 {
        return Err(TrajError::NonPositiveDt(traj.dt));
    }
    for (i, p) in traj.points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.psi.is_finite()) {
            return Err(TrajError::NonFinite {
                what: "state",
                index: i,
            });
        }
    }

    let xs = traj.xs();
    let ys = traj.ys();
    let psis = traj.psis();

    let vx = finite_diff(&xs, traj.dt);
    let vy = finite_diff(&ys, traj.dt);
    let speed: Vec<f64> = vx.iter().zip(&vy).map(|(a, b)| a.hypot(*b)).collect();

    let accel = finite_diff(&speed, traj.dt);
    let omega = finite_diff(&psis, traj.dt);
    let alpha = finite_diff(&omega, traj.dt);

    let kappa: Vec<f64> = speed
        .iter()
        .zip(&omega)
        .map(|(&v, &w)| if v < limits.v_eps { 0.0 } else { w / v })
        .collect();

    let accel_clipped: Vec<f64> = accel.iter().map(|&a| clip(a, limits.a_max)).collect();
    let kappa_clipped: Vec<f64> = kappa.iter().map(|&k| clip(k, limits.kappa_max)).collect();

    Ok(MotionFeatures {
        a_bar: mean(&accel_clipped),
        v_bar: mean(&speed),
        kappa_bar: mean(&kappa_clipped),
        omega_bar: mean(&omega),
        alpha_bar: mean(&alpha),
    })
}
