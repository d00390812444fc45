//! The main planning network and its phase-II trainer.
//!
//! A shared recurrent encoder turns each agent history into one token; the
//! ego token is fused with the (masked) planning prior; one round of
//! self-attention mixes the tokens; per-agent heads decode the ego future
//! and per-neighbor Gaussian parameters. The prior producer stays outside
//! the training graph: its value enters as a constant, so no gradient can
//! ever reach it.

use nn_core::{BoundParams, GradStore, Graph, LstmCell, NodeId, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use traj_core::CorpusRecord;

use crate::data::{Sample, OUTPUT_SCALE};
use crate::error::{PlanError, Result};
use crate::gftm::{FrozenGftm, HUBER_DELTA};
use crate::s2d::{S2dMask, S2dPhase};
use crate::train::{run_training, TrainOptions, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub d_model: usize,
    pub d_prior: usize,
    pub head_hidden: usize,
    pub history_steps: usize,
    pub future_steps: usize,
    pub use_gftm: bool,
    pub use_s2d: bool,
    pub epsilon: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_prior: 64,
            head_hidden: 128,
            history_steps: 20,
            future_steps: 80,
            use_gftm: true,
            use_s2d: true,
            epsilon: 0.7,
        }
    }
}

/// Decoded plan: the ego future and per-neighbor Gaussian tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    /// `(T_f, 3)`: x, y, psi.
    pub ego_future: Tensor,
    /// Per neighbor `(T_f, 4)`: mean x, mean y, logvar x, logvar y.
    pub neighbors: Vec<Tensor>,
}

/// Graph-level forward product.
pub struct ForwardNodes {
    pub ego_xy: NodeId,
    pub ego_psi: NodeId,
    /// Per neighbor `(mu, logvar)` flat `2 T_f` nodes.
    pub neighbors: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone)]
pub struct PlannerModel {
    pub cfg: PlannerConfig,
    /// `planner.*` plus, when masking is enabled, `s2d.*`.
    pub params: ParamSet,
    pub s2d: S2dMask,
    pub gftm: Option<FrozenGftm>,
}

fn agent_encoder(cfg: &PlannerConfig) -> LstmCell {
    LstmCell::new("planner.agent_enc", 5, cfg.d_model)
}

impl PlannerModel {
    pub fn new(cfg: PlannerConfig, seed: u64, gftm: Option<FrozenGftm>) -> Result<Self> {
        if cfg.use_gftm {
            match &gftm {
                None => return Err(PlanError::MissingArtifact("frozen GFTM for phase II")),
                Some(g) if g.cfg().hidden != cfg.d_prior => {
                    return Err(PlanError::BadConfig(format!(
                        "prior dim {} != gftm hidden {}",
                        cfg.d_prior,
                        g.cfg().hidden
                    )))
                }
                _ => {}
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        agent_encoder(&cfg).register(&mut params, &mut rng);
        let d = cfg.d_model;
        let fuse_in = d + cfg.d_prior;
        let u = nn_core::params::fan_in_bound(fuse_in);
        params.insert("planner.ego_fuse.w", nn_core::params::init_uniform(&[d, fuse_in], u, &mut rng), true);
        params.insert("planner.ego_fuse.b", Tensor::zeros(&[d]), true);
        let ua = nn_core::params::fan_in_bound(d);
        for name in ["wq", "wk", "wv", "wo"] {
            params.insert(
                format!("planner.attn.{name}"),
                nn_core::params::init_uniform(&[d, d], ua, &mut rng),
                true,
            );
        }
        let h = cfg.head_hidden;
        let t = cfg.future_steps;
        let uh = nn_core::params::fan_in_bound(h);
        params.insert("planner.ego_head.w1", nn_core::params::init_uniform(&[h, d], ua, &mut rng), true);
        params.insert("planner.ego_head.b1", Tensor::zeros(&[h]), true);
        params.insert("planner.ego_head.w_xy", nn_core::params::init_uniform(&[2 * t, h], uh, &mut rng), true);
        params.insert("planner.ego_head.b_xy", Tensor::zeros(&[2 * t]), true);
        params.insert("planner.ego_head.w_psi", nn_core::params::init_uniform(&[t, h], uh, &mut rng), true);
        params.insert("planner.ego_head.b_psi", Tensor::zeros(&[t]), true);
        params.insert("planner.nbr_head.w1", nn_core::params::init_uniform(&[h, d], ua, &mut rng), true);
        params.insert("planner.nbr_head.b1", Tensor::zeros(&[h]), true);
        params.insert("planner.nbr_head.w_mu", nn_core::params::init_uniform(&[2 * t, h], uh, &mut rng), true);
        params.insert("planner.nbr_head.b_mu", Tensor::zeros(&[2 * t]), true);
        params.insert("planner.nbr_head.w_lv", nn_core::params::init_uniform(&[2 * t, h], uh, &mut rng), true);
        params.insert("planner.nbr_head.b_lv", Tensor::zeros(&[2 * t]), true);

        let mut s2d = S2dMask::new(cfg.d_prior, cfg.epsilon);
        if cfg.use_s2d {
            s2d.register(&mut params, &mut rng);
        }
        s2d.set_phase(S2dPhase::Inference);
        Ok(Self {
            cfg,
            params,
            s2d,
            gftm,
        })
    }

    /// The planning prior for a sample: frozen-mapper output or zeros.
    pub fn prior_for(&self, sample: &Sample) -> Result<Tensor> {
        if self.cfg.use_gftm {
            self.gftm
                .as_ref()
                .expect("checked at construction")
                .prior(&sample.ego_inputs)
        } else {
            Ok(Tensor::zeros(&[self.cfg.d_prior]))
        }
    }

    /// Encode all agent tokens. The prior enters as a graph constant.
    pub fn context_tokens(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        sample: &Sample,
        prior: &Tensor,
    ) -> Result<Vec<NodeId>> {
        let enc = agent_encoder(&self.cfg);
        let ego_in: Vec<NodeId> = sample
            .ego_inputs
            .iter()
            .map(|x| graph.constant(x.clone()))
            .collect();
        let ego_h = enc.encode(graph, bound, &ego_in)?;
        let prior_node = graph.constant(prior.clone());
        let masked = if self.cfg.use_s2d {
            self.s2d.apply(graph, bound, prior_node)?
        } else {
            prior_node
        };
        let fused_in = graph.concat(&[ego_h, masked])?;
        let w = graph.matvec(bound.node("planner.ego_fuse.w")?, fused_in)?;
        let ego_tok = graph.add(w, bound.node("planner.ego_fuse.b")?)?;

        let mut tokens = vec![ego_tok];
        for nbr in &sample.neighbor_inputs {
            let nbr_in: Vec<NodeId> = nbr.iter().map(|x| graph.constant(x.clone())).collect();
            tokens.push(enc.encode(graph, bound, &nbr_in)?);
        }
        Ok(tokens)
    }

    /// One round of single-head self-attention with a residual connection.
    fn attend(&self, graph: &mut Graph, bound: &BoundParams, x: NodeId) -> Result<NodeId> {
        let q = graph.matmul(x, bound.node("planner.attn.wq")?)?;
        let k = graph.matmul(x, bound.node("planner.attn.wk")?)?;
        let v = graph.matmul(x, bound.node("planner.attn.wv")?)?;
        let kt = graph.transpose(k)?;
        let scores = graph.matmul(q, kt)?;
        let scaled = graph.scale(scores, 1.0 / (self.cfg.d_model as f64).sqrt());
        let attn = graph.softmax_rows(scaled)?;
        let ctx = graph.matmul(attn, v)?;
        let proj = graph.matmul(ctx, bound.node("planner.attn.wo")?)?;
        Ok(graph.add(x, proj)?)
    }

    fn decode(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        refined: NodeId,
        n_neighbors: usize,
    ) -> Result<ForwardNodes> {
        let ego_tok = graph.row(refined, 0)?;
        let z1 = graph.matvec(bound.node("planner.ego_head.w1")?, ego_tok)?;
        let z1b = graph.add(z1, bound.node("planner.ego_head.b1")?)?;
        let h1 = graph.tanh(z1b);
        let xy_raw = graph.matvec(bound.node("planner.ego_head.w_xy")?, h1)?;
        let xy_b = graph.add(xy_raw, bound.node("planner.ego_head.b_xy")?)?;
        let ego_xy = graph.scale(xy_b, OUTPUT_SCALE);
        let psi_raw = graph.matvec(bound.node("planner.ego_head.w_psi")?, h1)?;
        let ego_psi = graph.add(psi_raw, bound.node("planner.ego_head.b_psi")?)?;

        let mut neighbors = Vec::with_capacity(n_neighbors);
        for i in 0..n_neighbors {
            let tok = graph.row(refined, 1 + i)?;
            let z = graph.matvec(bound.node("planner.nbr_head.w1")?, tok)?;
            let zb = graph.add(z, bound.node("planner.nbr_head.b1")?)?;
            let hh = graph.tanh(zb);
            let mu_raw = graph.matvec(bound.node("planner.nbr_head.w_mu")?, hh)?;
            let mu_b = graph.add(mu_raw, bound.node("planner.nbr_head.b_mu")?)?;
            let mu = graph.scale(mu_b, OUTPUT_SCALE);
            let lv_raw = graph.matvec(bound.node("planner.nbr_head.w_lv")?, hh)?;
            let lv = graph.add(lv_raw, bound.node("planner.nbr_head.b_lv")?)?;
            neighbors.push((mu, lv));
        }
        Ok(ForwardNodes {
            ego_xy,
            ego_psi,
            neighbors,
        })
    }

    /// Full forward: tokens, self-attention, optional guidance refinement,
    /// decode. `refine` maps the `(M, D)` context matrix to a refined one.
    pub fn forward_nodes<R>(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        sample: &Sample,
        prior: &Tensor,
        refine: Option<R>,
    ) -> Result<ForwardNodes>
    where
        R: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
    {
        let tokens = self.context_tokens(graph, bound, sample, prior)?;
        let x = graph.stack_rows(&tokens)?;
        let mut refined = self.attend(graph, bound, x)?;
        if let Some(f) = refine {
            refined = f(graph, refined)?;
        }
        self.decode(graph, bound, refined, sample.num_neighbors())
    }

    /// Inference-mode forward on a constant graph.
    pub fn plan(&self, sample: &Sample) -> Result<PlanOutput> {
        let prior = self.prior_for(sample)?;
        let mut graph = Graph::new();
        let bound = self.params.bind_const(&mut graph);
        let out = self.forward_nodes(
            &mut graph,
            &bound,
            sample,
            &prior,
            None::<fn(&mut Graph, NodeId) -> Result<NodeId>>,
        )?;
        Ok(assemble_output(&graph, &out, self.cfg.future_steps))
    }
}

/// Collect graph outputs into the `(T_f, 3)` / `(T_f, 4)` shape contract.
pub fn assemble_output(graph: &Graph, nodes: &ForwardNodes, t: usize) -> PlanOutput {
    let xy = graph.value(nodes.ego_xy).data();
    let psi = graph.value(nodes.ego_psi).data();
    let mut ego = Vec::with_capacity(t * 3);
    for k in 0..t {
        ego.push(xy[2 * k]);
        ego.push(xy[2 * k + 1]);
        ego.push(psi[k]);
    }
    let neighbors = nodes
        .neighbors
        .iter()
        .map(|(mu, lv)| {
            let mu = graph.value(*mu).data();
            let lv = graph.value(*lv).data();
            let mut rows = Vec::with_capacity(t * 4);
            for k in 0..t {
                rows.push(mu[2 * k]);
                rows.push(mu[2 * k + 1]);
                rows.push(lv[2 * k]);
                rows.push(lv[2 * k + 1]);
            }
            Tensor::matrix(t, 4, rows)
        })
        .collect();
    PlanOutput {
        ego_future: Tensor::matrix(t, 3, ego),
        neighbors,
    }
}

/// `L_Plan` on the graph: Huber on positions plus Huber on heading.
pub fn plan_loss_nodes(graph: &mut Graph, out: &ForwardNodes, sample: &Sample) -> Result<NodeId> {
    let l_xy = graph.huber_loss(out.ego_xy, &sample.target_xy, HUBER_DELTA)?;
    let l_psi = graph.huber_loss(out.ego_psi, &sample.target_psi, HUBER_DELTA)?;
    Ok(graph.add(l_xy, l_psi)?)
}

/// `L_Main = L_Plan + L_Pred`; the prediction term averages the per-neighbor
/// Gaussian NLL and vanishes when there are no neighbors.
pub fn main_loss_nodes(graph: &mut Graph, out: &ForwardNodes, sample: &Sample) -> Result<NodeId> {
    let plan = plan_loss_nodes(graph, out, sample)?;
    if out.neighbors.is_empty() {
        return Ok(plan);
    }
    let mut nll_sum: Option<NodeId> = None;
    for ((mu, lv), target) in out.neighbors.iter().zip(&sample.neighbor_cv_xy) {
        let nll = graph.gaussian_nll(*mu, *lv, target)?;
        nll_sum = Some(match nll_sum {
            Some(acc) => graph.add(acc, nll)?,
            None => nll,
        });
    }
    let pred = graph.scale(nll_sum.expect("non-empty"), 1.0 / out.neighbors.len() as f64);
    Ok(graph.add(plan, pred)?)
}

/// A planner that has been through phase II (or loaded from its artifact).
#[derive(Debug, Clone)]
pub struct TrainedPlanner {
    pub model: PlannerModel,
}

fn step_loss(
    model: &PlannerModel,
    params: &ParamSet,
    sample: &Sample,
    prior: &Tensor,
    with_grads: bool,
) -> Result<(f64, GradStore)> {
    let mut graph = Graph::new();
    let bound = if with_grads {
        params.bind(&mut graph)
    } else {
        params.bind_const(&mut graph)
    };
    let out = model.forward_nodes(
        &mut graph,
        &bound,
        sample,
        prior,
        None::<fn(&mut Graph, NodeId) -> Result<NodeId>>,
    )?;
    let loss = main_loss_nodes(&mut graph, &out, sample)?;
    let value = graph.value(loss).item();
    let mut store = GradStore::new();
    if with_grads {
        let grads = graph.backward(loss)?;
        bound.accumulate_grads(&graph, &grads, &mut store, 1.0);
    }
    Ok((value, store))
}

/// Phase II: train the main network over the primary corpus. The frozen
/// mapper is digest-checked before and after; any drift aborts.
pub fn train_main(
    mut model: PlannerModel,
    records: &[CorpusRecord],
    opts: &TrainOptions,
) -> Result<(TrainedPlanner, TrainTrace)> {
    if records.is_empty() {
        return Err(PlanError::EmptyCorpus("primary corpus"));
    }
    if model.cfg.use_s2d && model.s2d.phase != S2dPhase::MainTraining {
        return Err(PlanError::WrongPhase(
            "phase II requires the mask in MainTraining".into(),
        ));
    }
    let gftm_digest_before = model.gftm.as_ref().map(|g| g.params().digest("gftm."));
    if let (true, Some(g)) = (model.cfg.use_gftm, model.gftm.as_ref()) {
        if g.params().iter().any(|(_, p)| p.trainable) {
            return Err(PlanError::WrongPhase("mapper is not frozen".into()));
        }
    }

    let samples: Vec<Sample> = records.iter().map(Sample::from_record).collect();
    // The prior of a sample is fixed for the whole phase; compute it once.
    let priors: Vec<Tensor> = samples
        .par_iter()
        .map(|s| model.prior_for(s))
        .collect::<Result<_>>()?;

    let snapshot = model.clone();
    let mut params = model.params.clone();
    let trace = run_training(
        &mut params,
        &samples,
        opts,
        |p, i, s| step_loss(&snapshot, p, s, &priors[i], true),
        |p, i, s| step_loss(&snapshot, p, s, &priors[i], false).map(|(l, _)| l),
        |_, _| Ok(()),
    )?;
    model.params = params;

    if let (Some(before), Some(g)) = (gftm_digest_before, model.gftm.as_ref()) {
        if g.params().digest("gftm.") != before {
            return Err(PlanError::IsolationViolation(
                "frozen mapper parameters changed during phase II".into(),
            ));
        }
    }
    Ok((TrainedPlanner { model }, trace))
}
