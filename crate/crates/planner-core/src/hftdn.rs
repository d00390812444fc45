//! Dictionary-guidance subsystem: retrieval-driven aggregation and its
//! cross-attention injection into the frozen planner.
//!
//! Retrieved future candidates are encoded by one shared LSTM, averaged
//! within contiguous rank-order groups, and max-pooled across groups into a
//! single guidance vector. That vector queries the planner's context tokens
//! through single-head cross-attention whose output projection starts at
//! zero, so an untrained module is exactly the identity on the context and
//! phase III opens at the frozen planner's loss.

use nn_core::{BoundParams, GradStore, Graph, LstmCell, NodeId, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use traj_core::{CorpusRecord, Trajectory};
use traj_dict::{retrieve_top_k, TrajectoryDictionary};

use crate::data::{future_inputs, Sample};
use crate::error::{PlanError, Result};
use crate::planner::{assemble_output, plan_loss_nodes, PlanOutput, TrainedPlanner};
use crate::s2d::S2dPhase;
use crate::train::{run_training, TrainOptions, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HftdnConfig {
    /// Guidance dimension (shared encoder hidden size).
    pub d_guide: usize,
    /// Planner context token dimension.
    pub d_model: usize,
    /// Number of rank-contiguous candidate groups.
    pub groups: usize,
    pub top_k: usize,
    pub alpha: f64,
}

impl Default for HftdnConfig {
    fn default() -> Self {
        Self {
            d_guide: 64,
            d_model: 64,
            groups: 3,
            top_k: 9,
            alpha: 0.3,
        }
    }
}

/// Aggregated guidance plus the dictionary entries it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceVector {
    pub q: Tensor,
    pub provenance: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct HftdnModel {
    pub cfg: HftdnConfig,
    pub params: ParamSet,
}

fn future_encoder(cfg: &HftdnConfig) -> LstmCell {
    LstmCell::new("hftdn.enc", 3, cfg.d_guide)
}

/// Contiguous rank-order group sizes, as equal as possible; the leading
/// groups take the remainder. Never yields an empty group.
pub fn group_sizes(k: usize, n: usize) -> Vec<usize> {
    let n_eff = n.min(k).max(1);
    let base = k / n_eff;
    let extra = k % n_eff;
    (0..n_eff)
        .map(|g| base + usize::from(g < extra))
        .collect()
}

impl HftdnModel {
    pub fn new(cfg: HftdnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        future_encoder(&cfg).register(&mut params, &mut rng);
        let (dg, dm) = (cfg.d_guide, cfg.d_model);
        let uq = nn_core::params::fan_in_bound(dg);
        let um = nn_core::params::fan_in_bound(dm);
        params.insert("hftdn.attn.wq", nn_core::params::init_uniform(&[dm, dg], uq, &mut rng), true);
        params.insert("hftdn.attn.wk", nn_core::params::init_uniform(&[dm, dm], um, &mut rng), true);
        params.insert("hftdn.attn.wv", nn_core::params::init_uniform(&[dm, dm], um, &mut rng), true);
        // Zero-init output projection: guidance is strictly additive and the
        // untrained refinement is the identity.
        params.insert("hftdn.attn.wo", Tensor::zeros(&[dm, dm]), true);
        Self { cfg, params }
    }

    /// Group-encode candidates and pool them into the guidance node.
    pub fn aggregate_nodes(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        futures: &[&Trajectory],
    ) -> Result<NodeId> {
        if futures.is_empty() {
            return Err(PlanError::EmptyCorpus("guidance candidates"));
        }
        let enc = future_encoder(&self.cfg);
        let mut encodings = Vec::with_capacity(futures.len());
        for f in futures {
            let inputs: Vec<NodeId> = future_inputs(&f.points)
                .into_iter()
                .map(|x| graph.constant(x))
                .collect();
            encodings.push(enc.encode(graph, bound, &inputs)?);
        }
        let sizes = group_sizes(futures.len(), self.cfg.groups);
        let mut group_vecs = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for size in sizes {
            let members = &encodings[offset..offset + size];
            let stacked = graph.stack_rows(members)?;
            group_vecs.push(graph.mean_rows(stacked)?);
            offset += size;
        }
        let grouped = graph.stack_rows(&group_vecs)?;
        Ok(graph.max_rows(grouped)?)
    }

    /// Value-level aggregation with provenance.
    pub fn udtgm_aggregate(
        &self,
        futures: &[&Trajectory],
        provenance: Vec<usize>,
    ) -> Result<GuidanceVector> {
        let mut graph = Graph::new();
        let bound = self.params.bind_const(&mut graph);
        let q = self.aggregate_nodes(&mut graph, &bound, futures)?;
        Ok(GuidanceVector {
            q: graph.value(q).clone(),
            provenance,
        })
    }

    /// Cross-attention refinement: guidance queries the context tokens and
    /// the projected read-out is added to every token.
    pub fn refine_nodes(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        context: NodeId,
        guidance: NodeId,
    ) -> Result<NodeId> {
        let qp = graph.matvec(bound.node("hftdn.attn.wq")?, guidance)?;
        let keys = graph.matmul(context, bound.node("hftdn.attn.wk")?)?;
        let scores = graph.matvec(keys, qp)?;
        let scaled = graph.scale(scores, 1.0 / (self.cfg.d_model as f64).sqrt());
        let attn = graph.softmax_rows(scaled)?;
        let values = graph.matmul(context, bound.node("hftdn.attn.wv")?)?;
        let vt = graph.transpose(values)?;
        let read = graph.matvec(vt, attn)?;
        let proj = graph.matvec(bound.node("hftdn.attn.wo")?, read)?;
        Ok(graph.add_row_broadcast(context, proj)?)
    }

    /// Retrieve candidates for a query history; `None` when the dictionary
    /// is empty (guidance unavailable, caller passes context through).
    pub fn retrieve(
        &self,
        query: &Trajectory,
        dict: &TrajectoryDictionary,
    ) -> Result<Option<Vec<usize>>> {
        if dict.is_empty() {
            log::warn!("empty dictionary: guidance unavailable, passing context through");
            return Ok(None);
        }
        let result = retrieve_top_k(query, dict, self.cfg.top_k, self.cfg.alpha)?;
        Ok(Some(result.ranked.iter().map(|s| s.index).collect()))
    }

    /// Value-level refinement of a context matrix, for inspection and tests.
    pub fn hftdn_forward(
        &self,
        context: &Tensor,
        query: &Trajectory,
        dict: &TrajectoryDictionary,
    ) -> Result<Tensor> {
        let retrieved = self.retrieve(query, dict)?;
        let mut graph = Graph::new();
        let bound = self.params.bind_const(&mut graph);
        let ctx = graph.constant(context.clone());
        let out = match retrieved {
            None => ctx,
            Some(indices) => {
                let futures: Vec<&Trajectory> =
                    indices.iter().map(|&i| &dict.entries[i].future).collect();
                let q = self.aggregate_nodes(&mut graph, &bound, &futures)?;
                self.refine_nodes(&mut graph, &bound, ctx, q)?
            }
        };
        Ok(graph.value(out).clone())
    }
}

fn phase3_loss(
    planner: &TrainedPlanner,
    hftdn: &HftdnModel,
    hftdn_params: &ParamSet,
    sample: &Sample,
    prior: &Tensor,
    futures: Option<&[Trajectory]>,
    with_grads: bool,
) -> Result<(f64, GradStore)> {
    let mut graph = Graph::new();
    let planner_bound = planner.model.params.bind_const(&mut graph);
    let hftdn_bound = if with_grads {
        hftdn_params.bind(&mut graph)
    } else {
        hftdn_params.bind_const(&mut graph)
    };
    let refine = futures.map(|futs| {
        |graph: &mut Graph, ctx: NodeId| -> Result<NodeId> {
            let refs: Vec<&Trajectory> = futs.iter().collect();
            let q = hftdn.aggregate_nodes(graph, &hftdn_bound, &refs)?;
            hftdn.refine_nodes(graph, &hftdn_bound, ctx, q)
        }
    });
    let out = planner
        .model
        .forward_nodes(&mut graph, &planner_bound, sample, prior, refine)?;
    // Phase III optimizes the planning loss only.
    let loss = plan_loss_nodes(&mut graph, &out, sample)?;
    let value = graph.value(loss).item();
    let mut store = GradStore::new();
    if with_grads {
        let grads = graph.backward(loss)?;
        hftdn_bound.accumulate_grads(&graph, &grads, &mut store, 1.0);
    }
    Ok((value, store))
}

/// Full-system forward for one sample (used by evaluation).
pub fn guided_plan(
    planner: &TrainedPlanner,
    hftdn: &HftdnModel,
    dict: &TrajectoryDictionary,
    rec: &CorpusRecord,
) -> Result<PlanOutput> {
    let sample = Sample::from_record(rec);
    let prior = planner.model.prior_for(&sample)?;
    let retrieved = hftdn.retrieve(&rec.history_trajectory(), dict)?;
    let mut graph = Graph::new();
    let planner_bound = planner.model.params.bind_const(&mut graph);
    let hftdn_bound = hftdn.params.bind_const(&mut graph);
    let refine = retrieved.map(|indices| {
        move |graph: &mut Graph, ctx: NodeId| -> Result<NodeId> {
            let futures: Vec<&Trajectory> =
                indices.iter().map(|&i| &dict.entries[i].future).collect();
            let q = hftdn.aggregate_nodes(graph, &hftdn_bound, &futures)?;
            hftdn.refine_nodes(graph, &hftdn_bound, ctx, q)
        }
    });
    let out = planner
        .model
        .forward_nodes(&mut graph, &planner_bound, &sample, &prior, refine)?;
    Ok(assemble_output(
        &graph,
        &out,
        planner.model.cfg.future_steps,
    ))
}

/// Phase III: train only the guidance subsystem against the frozen planner.
///
/// Every planner, mask, and mapper parameter is digest-compared before and
/// after; any drift is an isolation failure.
pub fn hftdn_train(
    planner: &TrainedPlanner,
    hftdn: &mut HftdnModel,
    records: &[CorpusRecord],
    dict: &TrajectoryDictionary,
    opts: &TrainOptions,
) -> Result<TrainTrace> {
    if records.is_empty() {
        return Err(PlanError::EmptyCorpus("phase III corpus"));
    }
    if planner.model.cfg.use_s2d && planner.model.s2d.phase != S2dPhase::HftdnTraining {
        return Err(PlanError::WrongPhase(
            "phase III requires the mask in HftdnTraining (deactivated)".into(),
        ));
    }
    let planner_digest = planner.model.params.digest("");
    let gftm_digest = planner.model.gftm.as_ref().map(|g| g.params().digest(""));

    let samples: Vec<Sample> = records.iter().map(Sample::from_record).collect();
    let priors: Vec<Tensor> = samples
        .par_iter()
        .map(|s| planner.model.prior_for(s))
        .collect::<Result<_>>()?;
    // Retrieval is a fixed metric over a fixed dictionary: resolve each
    // record's candidate futures once.
    let retrievals: Vec<Option<Vec<Trajectory>>> = records
        .par_iter()
        .map(|rec| {
            Ok(hftdn
                .retrieve(&rec.history_trajectory(), dict)?
                .map(|idx| {
                    idx.iter()
                        .map(|&i| dict.entries[i].future.clone())
                        .collect::<Vec<Trajectory>>()
                }))
        })
        .collect::<Result<_>>()?;

    let snapshot = hftdn.clone();
    let mut params = hftdn.params.clone();
    let trace = run_training(
        &mut params,
        &samples,
        opts,
        |p, i, s| {
            phase3_loss(
                planner,
                &snapshot,
                p,
                s,
                &priors[i],
                retrievals[i].as_deref(),
                true,
            )
        },
        |p, i, s| {
            phase3_loss(
                planner,
                &snapshot,
                p,
                s,
                &priors[i],
                retrievals[i].as_deref(),
                false,
            )
            .map(|(l, _)| l)
        },
        |_, _| Ok(()),
    )?;
    hftdn.params = params;

    if planner.model.params.digest("") != planner_digest {
        return Err(PlanError::IsolationViolation(
            "planner parameters changed during phase III".into(),
        ));
    }
    if planner.model.gftm.as_ref().map(|g| g.params().digest("")) != gftm_digest {
        return Err(PlanError::IsolationViolation(
            "mapper parameters changed during phase III".into(),
        ));
    }
    Ok(trace)
}
