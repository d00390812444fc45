//! Dual-branch recurrent history encoder with a detachable future head.
//!
//! An LSTM branch and a GRU branch independently consume the ego history;
//! their final hidden states are concatenated and linearly projected into a
//! fixed-dimension planning prior. During pretraining an MLP head maps the
//! prior to the full future trajectory; deployment drops the head and
//! freezes every remaining parameter, so the prior producer can never
//! receive gradients from downstream training.

use std::path::Path;

use nn_core::{
    save_params, BoundParams, GradStore, Graph, GruCell, LstmCell, NodeId, ParamSet, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use traj_core::CorpusRecord;

use crate::data::{Sample, OUTPUT_SCALE};
use crate::error::{PlanError, Result};
use crate::train::{run_training, TrainOptions, TrainTrace};

pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GftmConfig {
    pub input_dim: usize,
    /// Prior dimension and per-branch hidden size.
    pub hidden: usize,
    pub head_hidden: usize,
    pub future_steps: usize,
}

impl Default for GftmConfig {
    fn default() -> Self {
        Self {
            input_dim: 5,
            hidden: 64,
            head_hidden: 128,
            future_steps: 80,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GftmModel {
    pub cfg: GftmConfig,
    pub params: ParamSet,
}

fn lstm_cell(cfg: &GftmConfig) -> LstmCell {
    LstmCell::new("gftm.lstm", cfg.input_dim, cfg.hidden)
}

fn gru_cell(cfg: &GftmConfig) -> GruCell {
    GruCell::new("gftm.gru", cfg.input_dim, cfg.hidden)
}

impl GftmModel {
    pub fn new(cfg: GftmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        lstm_cell(&cfg).register(&mut params, &mut rng);
        gru_cell(&cfg).register(&mut params, &mut rng);
        let d = cfg.hidden;
        let h = cfg.head_hidden;
        let t = cfg.future_steps;
        let u = nn_core::params::fan_in_bound(2 * d);
        params.insert("gftm.fuse.w", nn_core::params::init_uniform(&[d, 2 * d], u, &mut rng), true);
        params.insert("gftm.fuse.b", Tensor::zeros(&[d]), true);
        let u1 = nn_core::params::fan_in_bound(d);
        params.insert("gftm.head.w1", nn_core::params::init_uniform(&[h, d], u1, &mut rng), true);
        params.insert("gftm.head.b1", Tensor::zeros(&[h]), true);
        let u2 = nn_core::params::fan_in_bound(h);
        params.insert("gftm.head.w2", nn_core::params::init_uniform(&[h, h], u2, &mut rng), true);
        params.insert("gftm.head.b2", Tensor::zeros(&[h]), true);
        params.insert("gftm.head.w_xy", nn_core::params::init_uniform(&[2 * t, h], u2, &mut rng), true);
        params.insert("gftm.head.b_xy", Tensor::zeros(&[2 * t]), true);
        params.insert("gftm.head.w_psi", nn_core::params::init_uniform(&[t, h], u2, &mut rng), true);
        params.insert("gftm.head.b_psi", Tensor::zeros(&[t]), true);
        Self { cfg, params }
    }

    pub fn has_head(&self) -> bool {
        self.params.contains("gftm.head.w1")
    }

    /// Dual-branch encode + fusion: the planning prior node.
    pub fn prior_node(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let hl = lstm_cell(&self.cfg).encode(graph, bound, inputs)?;
        let hg = gru_cell(&self.cfg).encode(graph, bound, inputs)?;
        let cat = graph.concat(&[hl, hg])?;
        let w = graph.matvec(bound.node("gftm.fuse.w")?, cat)?;
        Ok(graph.add(w, bound.node("gftm.fuse.b")?)?)
    }

    /// Pretraining head: `(flat xy, flat psi)` future prediction nodes.
    pub fn future_nodes(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        prior: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let z1 = graph.matvec(bound.node("gftm.head.w1")?, prior)?;
        let z1b = graph.add(z1, bound.node("gftm.head.b1")?)?;
        let h1 = graph.tanh(z1b);
        let z2 = graph.matvec(bound.node("gftm.head.w2")?, h1)?;
        let z2b = graph.add(z2, bound.node("gftm.head.b2")?)?;
        let h2 = graph.tanh(z2b);
        let xy_raw = graph.matvec(bound.node("gftm.head.w_xy")?, h2)?;
        let xy_b = graph.add(xy_raw, bound.node("gftm.head.b_xy")?)?;
        let xy = graph.scale(xy_b, OUTPUT_SCALE);
        let psi_raw = graph.matvec(bound.node("gftm.head.w_psi")?, h2)?;
        let psi = graph.add(psi_raw, bound.node("gftm.head.b_psi")?)?;
        Ok((xy, psi))
    }

    /// Prior for one history, computed on a throwaway constant graph.
    pub fn prior_value(&self, ego_inputs: &[Tensor]) -> Result<Tensor> {
        let mut graph = Graph::new();
        let bound = self.params.bind_const(&mut graph);
        let inputs: Vec<NodeId> = ego_inputs
            .iter()
            .map(|x| graph.constant(x.clone()))
            .collect();
        let prior = self.prior_node(&mut graph, &bound, &inputs)?;
        Ok(graph.value(prior).clone())
    }

    /// Pretraining-mode forward: the predicted future as a `(T_f, 3)` tensor.
    pub fn predict_future(&self, ego_inputs: &[Tensor]) -> Result<Tensor> {
        if !self.has_head() {
            return Err(PlanError::WrongPhase(
                "model is frozen; the pretraining head was removed".into(),
            ));
        }
        let mut graph = Graph::new();
        let bound = self.params.bind_const(&mut graph);
        let inputs: Vec<NodeId> = ego_inputs
            .iter()
            .map(|x| graph.constant(x.clone()))
            .collect();
        let prior = self.prior_node(&mut graph, &bound, &inputs)?;
        let (xy, psi) = self.future_nodes(&mut graph, &bound, prior)?;
        let xy = graph.value(xy).data();
        let psi = graph.value(psi).data();
        let t = self.cfg.future_steps;
        let mut rows = Vec::with_capacity(t * 3);
        for k in 0..t {
            rows.push(xy[2 * k]);
            rows.push(xy[2 * k + 1]);
            rows.push(psi[k]);
        }
        Ok(Tensor::matrix(t, 3, rows))
    }
}

/// A head-less, fully frozen prior extractor plus its export digest.
#[derive(Debug, Clone)]
pub struct FrozenGftm {
    model: GftmModel,
    pub digest: [u8; 32],
}

impl FrozenGftm {
    pub fn cfg(&self) -> &GftmConfig {
        &self.model.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.model.params
    }

    pub fn prior(&self, ego_inputs: &[Tensor]) -> Result<Tensor> {
        self.model.prior_value(ego_inputs)
    }

    /// Reconstruct from a checkpointed parameter set. Every parameter must
    /// be frozen and the head absent.
    pub fn from_params(cfg: GftmConfig, params: ParamSet) -> Result<Self> {
        if params.iter().any(|(n, p)| n.starts_with("gftm.head.") || p.trainable) {
            return Err(PlanError::WrongPhase(
                "checkpoint is not a frozen export".into(),
            ));
        }
        let digest = params.digest("gftm.");
        Ok(Self {
            model: GftmModel {
                cfg,
                params,
            },
            digest,
        })
    }
}

/// Drop the pretraining head, freeze everything else, and record the digest.
pub fn freeze_export(mut model: GftmModel) -> FrozenGftm {
    model.params.remove_prefix("gftm.head.");
    model.params.set_trainable("gftm.", false);
    let digest = model.params.digest("gftm.");
    FrozenGftm { model, digest }
}

/// Composite planning loss on the pretraining head outputs.
fn pretrain_loss(
    model: &GftmModel,
    params: &ParamSet,
    sample: &Sample,
    with_grads: bool,
) -> Result<(f64, GradStore)> {
    let mut graph = Graph::new();
    let bound = if with_grads {
        params.bind(&mut graph)
    } else {
        params.bind_const(&mut graph)
    };
    let inputs: Vec<NodeId> = sample
        .ego_inputs
        .iter()
        .map(|x| graph.constant(x.clone()))
        .collect();
    let prior = model.prior_node(&mut graph, &bound, &inputs)?;
    let (xy, psi) = model.future_nodes(&mut graph, &bound, prior)?;
    let l_xy = graph.huber_loss(xy, &sample.target_xy, HUBER_DELTA)?;
    let l_psi = graph.huber_loss(psi, &sample.target_psi, HUBER_DELTA)?;
    let loss = graph.add(l_xy, l_psi)?;
    let value = graph.value(loss).item();
    let mut store = GradStore::new();
    if with_grads {
        let grads = graph.backward(loss)?;
        bound.accumulate_grads(&graph, &grads, &mut store, 1.0);
    }
    Ok((value, store))
}

/// Phase I: supervised history-to-future pretraining on auxiliary corpora.
pub fn gftm_pretrain(
    model: &mut GftmModel,
    records: &[CorpusRecord],
    opts: &TrainOptions,
) -> Result<TrainTrace> {
    if records.is_empty() {
        return Err(PlanError::EmptyCorpus("auxiliary corpora"));
    }
    if !model.has_head() {
        return Err(PlanError::WrongPhase("cannot pretrain a frozen model".into()));
    }
    let samples: Vec<Sample> = records.iter().map(Sample::from_record).collect();
    let snapshot = model.clone();
    let ckpt_dir = opts.checkpoint_dir.clone();
    let trace = run_training(
        &mut model.params,
        &samples,
        opts,
        |params, _, sample| pretrain_loss(&snapshot, params, sample, true),
        |params, _, sample| pretrain_loss(&snapshot, params, sample, false).map(|(l, _)| l),
        |params, stats| {
            if let Some(dir) = &ckpt_dir {
                std::fs::create_dir_all(dir)?;
                save_params(params, &dir.join(format!("gftm_epoch_{:03}.ckpt", stats.epoch)))?;
            }
            Ok(())
        },
    )?;
    Ok(trace)
}

/// Validation loss of a model on a corpus (pretraining head required).
pub fn gftm_validation_loss(model: &GftmModel, records: &[CorpusRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(PlanError::EmptyCorpus("validation corpus"));
    }
    let mut sum = 0.0;
    for rec in records {
        let sample = Sample::from_record(rec);
        let (l, _) = pretrain_loss(model, &model.params, &sample, false)?;
        sum += l;
    }
    Ok(sum / records.len() as f64)
}

/// Save either mode's parameters to a checkpoint file.
pub fn save_gftm(model_params: &ParamSet, path: &Path) -> Result<()> {
    save_params(model_params, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nn_core::{adam_step, AdamConfig, AdamState};
    use traj_core::synth::{gen_scenario, ScenarioConfig};

    fn tiny_cfg() -> GftmConfig {
        GftmConfig {
            input_dim: 1,
            hidden: 1,
            head_hidden: 1,
            future_steps: 1,
        }
    }

    #[test]
    fn shape_contracts_hold() {
        let cfg = GftmConfig {
            input_dim: 5,
            hidden: 16,
            head_hidden: 32,
            future_steps: 80,
        };
        let model = GftmModel::new(cfg, 1);
        let inputs: Vec<Tensor> = (0..20).map(|_| Tensor::zeros(&[5])).collect();
        let prior = model.prior_value(&inputs).unwrap();
        assert_eq!(prior.shape(), &[16]);
        let fut = model.predict_future(&inputs).unwrap();
        assert_eq!(fut.shape(), &[80, 3]);
    }

    #[test]
    fn scalar_forward_matches_hand_arithmetic() {
        // Hidden size 1, two steps, every weight hand-set; the oracle is the
        // same gate arithmetic written out on scalars.
        let cfg = tiny_cfg();
        let mut model = GftmModel::new(cfg, 0);
        let assigns: Vec<(&str, f64)> = vec![
            ("gftm.lstm.w_i", 0.5), ("gftm.lstm.u_i", -0.2), ("gftm.lstm.b_i", 0.1),
            ("gftm.lstm.w_f", 0.3), ("gftm.lstm.u_f", 0.4), ("gftm.lstm.b_f", -0.1),
            ("gftm.lstm.w_g", -0.6), ("gftm.lstm.u_g", 0.2), ("gftm.lstm.b_g", 0.0),
            ("gftm.lstm.w_o", 0.7), ("gftm.lstm.u_o", -0.3), ("gftm.lstm.b_o", 0.2),
            ("gftm.gru.w_z", 0.4), ("gftm.gru.u_z", 0.1), ("gftm.gru.b_z", -0.2),
            ("gftm.gru.w_r", -0.5), ("gftm.gru.u_r", 0.3), ("gftm.gru.b_r", 0.1),
            ("gftm.gru.w_n", 0.6), ("gftm.gru.u_n", -0.4), ("gftm.gru.b_n", 0.05),
        ];
        for (name, v) in assigns {
            let shape = model.params.get(name).unwrap().value.shape().to_vec();
            model.params.get_mut(name).unwrap().value = Tensor::new(shape, vec![v]);
        }
        model.params.get_mut("gftm.fuse.w").unwrap().value =
            Tensor::matrix(1, 2, vec![0.9, -0.8]);
        model.params.get_mut("gftm.fuse.b").unwrap().value = Tensor::vector(vec![0.15]);

        let xs = [0.8, -0.4];
        let sigm = |z: f64| 1.0 / (1.0 + (-z).exp());
        // LSTM branch.
        let (mut h, mut c) = (0.0, 0.0);
        for &x in &xs {
            let i = sigm(0.5 * x - 0.2 * h + 0.1);
            let f = sigm(0.3 * x + 0.4 * h - 0.1);
            let g = (-0.6 * x + 0.2 * h).tanh();
            let o = sigm(0.7 * x - 0.3 * h + 0.2);
            c = f * c + i * g;
            h = o * c.tanh();
        }
        // GRU branch.
        let mut hg = 0.0;
        for &x in &xs {
            let z = sigm(0.4 * x + 0.1 * hg - 0.2);
            let r = sigm(-0.5 * x + 0.3 * hg + 0.1);
            let n = (0.6 * x + 0.05 + r * (-0.4 * hg)).tanh();
            hg = (1.0 - z) * n + z * hg;
        }
        let want = 0.9 * h - 0.8 * hg + 0.15;

        let inputs: Vec<Tensor> = xs.iter().map(|&x| Tensor::vector(vec![x])).collect();
        let prior = model.prior_value(&inputs).unwrap();
        assert!((prior.data()[0] - want).abs() < 1e-12, "{} vs {}", prior.data()[0], want);
    }

    #[test]
    fn export_preserves_the_prior_and_is_reproducible() {
        let model = GftmModel::new(GftmConfig::default(), 7);
        let cfg = ScenarioConfig::new("a", 3);
        let rec = gen_scenario(&cfg, 0).unwrap();
        let sample = Sample::from_record(&rec);
        let before = model.prior_value(&sample.ego_inputs).unwrap();

        let frozen = freeze_export(model.clone());
        let after = frozen.prior(&sample.ego_inputs).unwrap();
        assert_eq!(before, after);

        let frozen2 = freeze_export(model);
        assert_eq!(frozen.digest, frozen2.digest);
    }

    #[test]
    fn optimizer_steps_cannot_move_a_frozen_model() {
        let model = GftmModel::new(GftmConfig::default(), 7);
        let frozen = freeze_export(model);
        let mut params = frozen.params().clone();
        let mut grads = GradStore::new();
        for (name, p) in params.iter() {
            grads.add(name, &Tensor::new(p.value.shape().to_vec(), vec![1.0; p.value.len()]), 1.0);
        }
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, &AdamConfig::with_lr(0.1));
        assert_eq!(params.digest("gftm."), frozen.digest);
    }

    #[test]
    fn single_pair_overfits() {
        let cfg = GftmConfig {
            input_dim: 5,
            hidden: 16,
            head_hidden: 32,
            future_steps: 80,
        };
        let mut model = GftmModel::new(cfg, 11);
        let scen = ScenarioConfig::new("a", 5);
        let records = vec![gen_scenario(&scen, 0).unwrap()];
        let mut opts = TrainOptions::new(2000, 1, 2e-3, 1);
        opts.val_fraction = 0.0;
        opts.early_stop_train_below = Some(1e-3);
        let trace = gftm_pretrain(&mut model, &records, &opts).unwrap();
        let final_train = trace.epochs.last().unwrap().train_loss;
        assert!(
            final_train < 1e-3,
            "failed to overfit: {} after {} steps",
            final_train,
            trace.epochs.len()
        );
    }

    #[test]
    fn constant_future_reaches_the_noise_floor() {
        // Future pinned at the ego anchor: the optimal predictor is the zero
        // trajectory, so validation loss should approach zero.
        let scen = {
            let mut s = ScenarioConfig::new("a", 8);
            s.noise_std = 0.0;
            s
        };
        let records: Vec<CorpusRecord> = (0..30)
            .map(|i| {
                let mut r = gen_scenario(&scen, i).unwrap();
                for row in &mut r.future {
                    *row = [0.0, 0.0, 0.0];
                }
                r
            })
            .collect();
        let cfg = GftmConfig {
            input_dim: 5,
            hidden: 16,
            head_hidden: 32,
            future_steps: 80,
        };
        let mut model = GftmModel::new(cfg, 3);
        let mut opts = TrainOptions::new(300, 8, 2e-3, 2);
        opts.early_stop_train_below = Some(5e-4);
        gftm_pretrain(&mut model, &records, &opts).unwrap();
        let val = gftm_validation_loss(&model, &records).unwrap();
        assert!(val < 1e-3, "val loss {}", val);
    }

    #[test]
    fn pretraining_reduces_validation_loss() {
        let scen = ScenarioConfig::new("a", 21);
        let records: Vec<CorpusRecord> = (0..200)
            .map(|i| gen_scenario(&scen, i).unwrap())
            .collect();
        let cfg = GftmConfig {
            input_dim: 5,
            hidden: 32,
            head_hidden: 64,
            future_steps: 80,
        };
        let mut model = GftmModel::new(cfg, 4);
        let opts = TrainOptions::new(5, 32, 2e-3, 3);
        let trace = gftm_pretrain(&mut model, &records, &opts).unwrap();
        assert!(
            trace.final_val() < trace.initial_val,
            "{} !< {}",
            trace.final_val(),
            trace.initial_val
        );
    }
}
