//! Fixed-rate ego state sequences.
//!
//! A [`Trajectory`] is a uniformly sampled sequence of planar vehicle states.
//! History trajectories carry the full state `(x, y, psi, v, omega)`, future
//! trajectories only the pose `(x, y, psi)`. Headings are stored unwrapped:
//! consecutive values never jump by more than pi.

use crate::error::{Result, TrajError};

/// Default number of history steps (2 s at 10 Hz).
pub const DEFAULT_HISTORY_STEPS: usize = 20;
/// Default number of future steps (8 s at 10 Hz).
pub const DEFAULT_FUTURE_STEPS: usize = 80;
/// Default sampling interval in seconds.
pub const DEFAULT_DT: f64 = 0.1;

/// One planar vehicle state. `v` (speed, m/s) and `omega` (yaw rate, rad/s)
/// are present on history states and absent on future states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: Option<f64>,
    pub omega: Option<f64>,
}

impl State {
    pub fn pose(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi,
            v: None,
            omega: None,
        }
    }

    pub fn full(x: f64, y: f64, psi: f64, v: f64, omega: f64) -> Self {
        Self {
            x,
            y,
            psi,
            v: Some(v),
            omega: Some(omega),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajKind {
    History,
    Future,
}

impl TrajKind {
    pub fn label(self) -> &'static str {
        match self {
            TrajKind::History => "history",
            TrajKind::Future => "future",
        }
    }
}

/// Uniformly sampled state sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<State>,
    pub dt: f64,
    pub kind: TrajKind,
}

impl Trajectory {
    pub fn history(points: Vec<State>, dt: f64) -> Self {
        Self {
            points,
            dt,
            kind: TrajKind::History,
        }
    }

    pub fn future(points: Vec<State>, dt: f64) -> Self {
        Self {
            points,
            dt,
            kind: TrajKind::Future,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Check shared invariants: positive dt, finite values, unwrapped heading,
    /// and (when given) the expected step count for this trajectory kind.
    pub fn validate(&self, expected_steps: Option<usize>) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(TrajError::NonPositiveDt(self.dt));
        }
        if let Some(expected) = expected_steps {
            if self.points.len() != expected {
                return Err(TrajError::WrongStepCount {
                    kind: self.kind.label(),
                    expected,
                    got: self.points.len(),
                });
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            let finite = p.x.is_finite()
                && p.y.is_finite()
                && p.psi.is_finite()
                && p.v.map_or(true, f64::is_finite)
                && p.omega.map_or(true, f64::is_finite);
            if !finite {
                return Err(TrajError::NonFinite {
                    what: "state",
                    index: i,
                });
            }
        }
        for i in 1..self.points.len() {
            let jump = self.points[i].psi - self.points[i - 1].psi;
            if !(jump > -std::f64::consts::PI && jump <= std::f64::consts::PI) {
                return Err(TrajError::HeadingJump { index: i, jump });
            }
        }
        Ok(())
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    pub fn psis(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.psi).collect()
    }

    /// Positions flattened as `[x0, y0, x1, y1, ...]`.
    pub fn flat_positions(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 2);
        for p in &self.points {
            out.push(p.x);
            out.push(p.y);
        }
        out
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_to_pi(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Unwrap a raw heading sequence so consecutive differences lie in `(-pi, pi]`.
pub fn unwrap_angles(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    for (i, &a) in raw.iter().enumerate() {
        if i == 0 {
            out.push(a);
        } else {
            let step = wrap_to_pi(a - raw[i - 1]);
            out.push(out[i - 1] + step);
        }
    }
    out
}
