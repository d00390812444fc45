//! Seeded synthetic scenario generation.
//!
//! Scenarios integrate a kinematic unicycle (`x' = v cos psi`, `y' = v sin
//! psi`, `psi' = omega`) with maneuver-class-specific speed/yaw-rate profiles
//! over the full history+future window, optionally switch maneuver at the
//! history/future boundary, add Gaussian position noise, and pass through
//! schema normalization so every emitted record is a fixed point of
//! [`normalize_schema`].
//!
//! Each record draws from its own RNG stream keyed by `(seed, index)`, so
//! generation order (or parallelism) cannot change the corpus. The draw
//! sequence is identical for every record regardless of the sampled classes,
//! which keeps the noiseless geometry a function of `(seed, index,
//! maneuver/speed settings)` alone: two configs differing only in
//! `dataset_id` and `noise_std` produce the same geometry with rescaled
//! perturbations.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, CorpusRecord};
use crate::error::{Result, TrajError};
use crate::normalize::{derive_rates, normalize_schema, Pose, RawRecord, RigidTransform, SchemaConfig};


/// Generator settings for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Probabilities over [stationary, forward, left turn, right turn].
    pub maneuver_mix: [f64; 4],
    /// Sampled cruise speed interval, m/s.
    pub speed_range: (f64, f64),
    /// Sampled turn radius interval, m.
    pub turn_radius_range: (f64, f64),
    /// Standard deviation of the position noise, m.
    pub noise_std: f64,
    pub dataset_id: String,
    pub seed: u64,
    /// Probability that the maneuver switches at the history/future boundary.
    pub transition_prob: f64,
    /// Upper bound on emitted neighbor tracks (capped at 4).
    pub max_neighbors: usize,
    pub schema: SchemaConfig,
}

impl ScenarioConfig {
    pub fn new(dataset_id: impl Into<String>, seed: u64) -> Self {
        Self {
            maneuver_mix: [0.15, 0.55, 0.20, 0.10],
            speed_range: (2.0, 12.0),
            turn_radius_range: (8.0, 30.0),
            noise_std: 0.02,
            dataset_id: dataset_id.into(),
            seed,
            transition_prob: 0.3,
            max_neighbors: 4,
            schema: SchemaConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.maneuver_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.maneuver_mix.iter().any(|&p| p < 0.0) {
            return Err(TrajError::BadConfig(format!(
                "maneuver_mix must be a probability vector, sums to {}",
                sum
            )));
        }
        if self.speed_range.1 < self.speed_range.0 || self.speed_range.0 < 0.0 {
            return Err(TrajError::BadConfig("empty speed_range".into()));
        }
        if self.turn_radius_range.1 < self.turn_radius_range.0 || self.turn_radius_range.0 <= 0.0 {
            return Err(TrajError::BadConfig("empty turn_radius_range".into()));
        }
        if self.noise_std < 0.0 {
            return Err(TrajError::BadConfig("negative noise_std".into()));
        }
        if !(0.0..=1.0).contains(&self.transition_prob) {
            return Err(TrajError::BadConfig("transition_prob out of [0,1]".into()));
        }
        if self.dataset_id.is_empty() {
            return Err(TrajError::BadConfig("empty dataset_id".into()));
        }
        if self.schema.dt <= 0.0 {
            return Err(TrajError::NonPositiveDt(self.schema.dt));
        }
        Ok(())
    }
}

// Maneuver indices, matching ManeuverClass order.
const STATIONARY: usize = 0;
const FORWARD: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;

// Lateral acceleration cap used to slow down tight turns.
const MAX_LATERAL_ACCEL: f64 = 3.0;
// Steps over which controls blend after a boundary maneuver switch.
const BLEND_STEPS: usize = 10;

/// One agent's sampled scenario parameters. Every field is drawn for every
/// agent so the RNG consumption is class-independent.
#[derive(Debug, Clone, Copy)]
struct AgentPlan {
    class_hist: usize,
    class_fut: usize,
    speed: f64,
    speed_fut: f64,
    radius: f64,
    accel: f64,
}

fn sample_class(mix: &[f64; 4], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    3
}

fn sample_plan(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> AgentPlan {
    // Fixed draw count: 7 uniforms per agent.
    let u_class = rng.gen::<f64>();
    let speed = rng.gen_range(cfg.speed_range.0..=cfg.speed_range.1);
    let speed_fut = rng.gen_range(cfg.speed_range.0..=cfg.speed_range.1);
    let radius = rng.gen_range(cfg.turn_radius_range.0..=cfg.turn_radius_range.1);
    let accel = rng.gen_range(-0.3..=0.3);
    let u_switch = rng.gen::<f64>();
    let u_class2 = rng.gen::<f64>();

    let class_hist = sample_class(&cfg.maneuver_mix, u_class);
    let class_fut = if u_switch < cfg.transition_prob {
        sample_class(&cfg.maneuver_mix, u_class2)
    } else {
        class_hist
    };
    AgentPlan {
        class_hist,
        class_fut,
        speed,
        speed_fut,
        radius,
        accel,
    }
}

/// Target controls (v, omega) for a class at time `t` seconds into its segment.
fn class_controls(class: usize, t: f64, plan: &AgentPlan, fut: bool) -> (f64, f64) {
    let cruise = if fut { plan.speed_fut } else { plan.speed };
    match class {
        STATIONARY => (0.0, 0.0),
        FORWARD => ((cruise + plan.accel * t).max(1.0), 0.0),
        LEFT | RIGHT => {
            let v = cruise.min((MAX_LATERAL_ACCEL * plan.radius).sqrt());
            let omega = v / plan.radius;
            (v, if class == LEFT { omega } else { -omega })
        }
        _ => unreachable!(),
    }
}

/// Integrate the unicycle for one agent over the full window, in world frame.
fn integrate(plan: &AgentPlan, cfg: &ScenarioConfig, start: Pose) -> Vec<Pose> {
    let schema = &cfg.schema;
    let total = schema.history_steps + schema.future_steps;
    let dt = schema.dt;
    let mut poses = Vec::with_capacity(total);
    let mut x = start.x;
    let mut y = start.y;
    let mut psi = start.psi;
    // Controls at the end of history, used as the blend origin.
    let t_hist_end = (schema.history_steps.saturating_sub(1)) as f64 * dt;
    let (v_end, w_end) = class_controls(plan.class_hist, t_hist_end, plan, false);
    for k in 0..total {
        poses.push(Pose::new(x, y, psi));
        let (v, w) = if k < schema.history_steps {
            class_controls(plan.class_hist, k as f64 * dt, plan, false)
        } else {
            let steps_in = k - schema.history_steps;
            let t = steps_in as f64 * dt;
            let (vt, wt) = class_controls(plan.class_fut, t, plan, true);
            if plan.class_fut != plan.class_hist && steps_in < BLEND_STEPS {
                let b = (steps_in + 1) as f64 / BLEND_STEPS as f64;
                (v_end + b * (vt - v_end), w_end + b * (wt - w_end))
            } else {
                (vt, wt)
            }
        };
        x += v * psi.cos() * dt;
        y += v * psi.sin() * dt;
        psi += w * dt;
    }
    poses
}

/// Draw one standard normal per coordinate; fixed count per agent.
fn noise_table(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

/// Generate one record. `index` selects the record's own RNG stream.
pub fn gen_scenario(cfg: &ScenarioConfig, index: u64) -> Result<CorpusRecord> {
    cfg.validate()?;
    let schema = cfg.schema;
    let total = schema.history_steps + schema.future_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);

    // Ego plan, geometry, and noise. All draw counts are fixed.
    let ego_plan = sample_plan(cfg, &mut rng);
    let ego_noise = noise_table(&mut rng, total);

    // Neighbors: always draw the full table of 4 so counts stay aligned.
    let n_neighbors = rng.gen_range(0..=4usize.min(cfg.max_neighbors.min(4)));
    let mut neighbor_specs = Vec::with_capacity(4);
    for _ in 0..4 {
        let plan = sample_plan(cfg, &mut rng);
        let offset_mag = rng.gen_range(3.0..=8.0);
        let side = if rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
        let noise = noise_table(&mut rng, total);
        neighbor_specs.push((plan, offset_mag * side, noise));
    }

    let ego_world = integrate(&ego_plan, cfg, Pose::new(0.0, 0.0, 0.0));
    let timestamps: Vec<f64> = (0..total).map(|k| k as f64 * schema.dt).collect();
    let noisy = |poses: &[Pose], noise: &[(f64, f64)]| -> Vec<Pose> {
        poses
            .iter()
            .zip(noise)
            .map(|(p, &(nx, ny))| {
                Pose::new(
                    p.x + cfg.noise_std * nx,
                    p.y + cfg.noise_std * ny,
                    p.psi,
                )
            })
            .collect()
    };

    let raw = RawRecord {
        timestamps: timestamps.clone(),
        poses: noisy(&ego_world, &ego_noise),
    };
    let (history, future) = normalize_schema(&raw, &schema)?;

    // Neighbors share the ego window and are expressed in the ego frame: the
    // frame anchored at the ego's last (noisy) history pose.
    let anchor_idx = schema.history_steps - 1;
    let ego_anchor = raw.poses[anchor_idx];
    let tf = RigidTransform::into_frame_of(ego_anchor);
    let mut neighbors = Vec::with_capacity(n_neighbors);
    for (plan, offset, noise) in neighbor_specs.iter().take(n_neighbors) {
        let world = integrate(plan, cfg, Pose::new(0.0, *offset, 0.0));
        let noisy_world = noisy(&world, noise);
        let ego_framed: Vec<Pose> = noisy_world.iter().map(|p| tf.apply_pose(*p)).collect();
        let xs: Vec<f64> = ego_framed.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = ego_framed.iter().map(|p| p.y).collect();
        let psis: Vec<f64> = ego_framed.iter().map(|p| p.psi).collect();
        let (speed, omega) = derive_rates(&xs, &ys, &psis, schema.dt);
        let rows: Vec<[f64; 5]> = (0..schema.history_steps)
            .map(|k| [xs[k], ys[k], psis[k], speed[k], omega[k]])
            .collect();
        neighbors.push(rows);
    }

    let history_rows: Vec<[f64; 5]> = history
        .points
        .iter()
        .map(|s| [s.x, s.y, s.psi, s.v.unwrap(), s.omega.unwrap()])
        .collect();
    let future_rows: Vec<[f64; 3]> = future.points.iter().map(|s| [s.x, s.y, s.psi]).collect();

    Ok(CorpusRecord {
        dataset_id: cfg.dataset_id.clone(),
        scenario_id: format!("s{:06}", index),
        dt: schema.dt,
        history: history_rows,
        future: future_rows,
        neighbors,
    })
}

/// Generate `count` records and write them with a manifest line.
pub fn gen_corpus(cfg: &ScenarioConfig, count: usize, path: &Path) -> Result<Vec<CorpusRecord>> {
    cfg.validate()?;
    let records: Result<Vec<CorpusRecord>> =
        (0..count as u64).map(|i| gen_scenario(cfg, i)).collect();
    let records = records?;
    let manifest = serde_json::json!({
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "count": count,
    });
    write_corpus(path, &manifest, &records)?;
    Ok(records)
}
