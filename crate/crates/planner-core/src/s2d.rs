//! Sparse-to-dense adaptive masking of the planning prior.
//!
//! During main-network training a learnable offset and a sigmoid-activated
//! linear layer turn the prior into keep probabilities; thresholding them
//! yields a binary mask over the prior elements. The threshold is
//! non-differentiable, so the backward pass treats it as identity
//! (straight-through), which keeps the offset and the layer trainable. In
//! every other phase the mask is inactive and the prior passes through
//! untouched.

use nn_core::{BoundParams, Graph, NodeId, ParamSet, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S2dPhase {
    MainTraining,
    HftdnTraining,
    Inference,
}

/// Mask module: owns its phase flag; parameters live under the `s2d.`
/// prefix of the planner's parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S2dMask {
    pub dim: usize,
    pub epsilon: f64,
    pub phase: S2dPhase,
}

impl S2dMask {
    pub fn new(dim: usize, epsilon: f64) -> Self {
        Self {
            dim,
            epsilon,
            phase: S2dPhase::Inference,
        }
    }

    /// Register `theta` (zero-init) and the gating layer. The gate bias
    /// starts near the threshold logit so the initial mask is mixed rather
    /// than all-or-nothing.
    pub fn register(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        params.insert("s2d.theta", Tensor::zeros(&[self.dim]), true);
        let bound = nn_core::params::fan_in_bound(self.dim);
        params.insert(
            "s2d.fc_w",
            nn_core::params::init_uniform(&[self.dim, self.dim], bound, rng),
            true,
        );
        params.insert(
            "s2d.fc_b",
            Tensor::new(vec![self.dim], vec![0.85; self.dim]),
            true,
        );
    }

    pub fn set_phase(&mut self, phase: S2dPhase) {
        self.phase = phase;
    }

    /// Apply the mask to a prior node. Outside `MainTraining` this returns
    /// the input node itself, so the pass-through is exact by construction.
    pub fn apply(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        prior: NodeId,
    ) -> Result<NodeId> {
        if self.phase != S2dPhase::MainTraining {
            return Ok(prior);
        }
        let augmented = graph.add(prior, bound.node("s2d.theta")?)?;
        let pre = graph.matvec(bound.node("s2d.fc_w")?, augmented)?;
        let pre_b = graph.add(pre, bound.node("s2d.fc_b")?)?;
        let p = graph.sigmoid(pre_b);
        let mask = graph.threshold_ste(p, self.epsilon);
        Ok(graph.mul(prior, mask)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nn_core::GradStore;
    use rand::SeedableRng;

    fn setup(dim: usize) -> (ParamSet, S2dMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask = S2dMask::new(dim, 0.7);
        let mut params = ParamSet::new();
        mask.register(&mut params, &mut rng);
        (params, mask)
    }

    fn zeroed(params: &mut ParamSet) {
        for name in ["s2d.theta", "s2d.fc_w", "s2d.fc_b"] {
            let shape = params.get(name).unwrap().value.shape().to_vec();
            params.get_mut(name).unwrap().value = Tensor::zeros(&shape);
        }
    }

    #[test]
    fn zero_init_masks_everything_in_main_training() {
        let (mut params, mut mask) = setup(6);
        zeroed(&mut params);
        mask.set_phase(S2dPhase::MainTraining);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let prior = g.constant(Tensor::vector(vec![1.0, -2.0, 3.0, 0.5, -0.5, 9.0]));
        let out = mask.apply(&mut g, &bound, prior).unwrap();
        // sigmoid(0) = 0.5 < 0.7 everywhere -> all masked.
        assert_eq!(g.value(out).data(), &[0.0; 6]);
    }

    #[test]
    fn inference_and_hftdn_phases_are_bit_exact_identity() {
        let (params, mut mask) = setup(4);
        let prior_vals = vec![0.1, -0.0, f64::MIN_POSITIVE, 123.456];
        for phase in [S2dPhase::Inference, S2dPhase::HftdnTraining] {
            mask.set_phase(phase);
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let prior = g.constant(Tensor::vector(prior_vals.clone()));
            let out = mask.apply(&mut g, &bound, prior).unwrap();
            assert_eq!(out, prior);
            for (a, b) in g.value(out).data().iter().zip(&prior_vals) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn saturated_gate_bias_passes_everything() {
        let (mut params, mut mask) = setup(4);
        zeroed(&mut params);
        params.get_mut("s2d.fc_b").unwrap().value = Tensor::vector(vec![10.0; 4]);
        mask.set_phase(S2dPhase::MainTraining);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let vals = vec![1.5, -2.5, 0.25, -0.125];
        let prior = g.constant(Tensor::vector(vals.clone()));
        let out = mask.apply(&mut g, &bound, prior).unwrap();
        assert_eq!(g.value(out).data(), vals.as_slice());
    }

    #[test]
    fn output_elements_are_zero_or_the_input() {
        let (params, mut mask) = setup(16);
        mask.set_phase(S2dPhase::MainTraining);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let vals = nn_core::params::init_uniform(&[16], 2.0, &mut rng);
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let prior = g.constant(vals.clone());
            let out = mask.apply(&mut g, &bound, prior).unwrap();
            for (o, i) in g.value(out).data().iter().zip(vals.data()) {
                assert!(*o == 0.0 || o.to_bits() == i.to_bits());
            }
        }
    }

    #[test]
    fn phase_round_trip_leaves_parameters_untouched() {
        let (params, mut mask) = setup(8);
        let digest = params.digest("s2d.");
        for phase in [
            S2dPhase::MainTraining,
            S2dPhase::HftdnTraining,
            S2dPhase::Inference,
            S2dPhase::MainTraining,
        ] {
            mask.set_phase(phase);
        }
        assert_eq!(params.digest("s2d."), digest);
    }

    #[test]
    fn straight_through_gradient_reaches_theta() {
        let (params, mut mask) = setup(5);
        mask.set_phase(S2dPhase::MainTraining);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let prior = g.constant(Tensor::vector(vec![1.0, 2.0, -1.0, 0.5, 3.0]));
        let out = mask.apply(&mut g, &bound, prior).unwrap();
        let loss = g.sum_all(out);
        let grads = g.backward(loss).unwrap();
        let mut store = GradStore::new();
        bound.accumulate_grads(&g, &grads, &mut store, 1.0);
        let g_theta = store.get("s2d.theta").expect("theta receives gradient");
        assert!(g_theta.data().iter().any(|&v| v != 0.0));
        assert!(store.get("s2d.fc_w").is_some());
    }
}
