//! Minimal differentiable-computation substrate.
//!
//! Everything the learned modules need, built from scratch on 64-bit floats:
//! a define-by-run tape ([`graph::Graph`]) with reverse-mode gradients for
//! dense layers, LSTM/GRU cells, softmax attention, pooling, Huber and
//! Gaussian-NLL losses, and a straight-through threshold; named parameter
//! sets with per-parameter freeze flags; an Adam optimizer that skips frozen
//! parameters entirely; a bit-exact checkpoint container; and a central
//! finite-difference gradient checker.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rnn;
pub mod tensor;

pub use checkpoint::{load_params, save_params};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{BoundParams, GradStore, ParamSet, Parameter};
pub use rnn::{GruCell, LstmCell};
pub use tensor::Tensor;
