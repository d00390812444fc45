//! The planning model stack and its three-phase trainer.
//!
//! Phase I pretrains the dual-branch trajectory mapper on auxiliary corpora
//! and freezes it. Phase II trains the main planner with the frozen prior
//! behind an adaptive binary mask. Phase III attaches dictionary-retrieval
//! guidance and trains only that subsystem with everything else frozen.
//! Parameter isolation between phases is enforced by digest comparison, and
//! every training path is deterministic for a fixed seed.

pub mod data;
pub mod error;
pub mod eval;
pub mod gftm;
pub mod hftdn;
pub mod pipeline;
pub mod planner;
pub mod s2d;
pub mod train;

pub use data::Sample;
pub use error::{PlanError, Result};
pub use eval::{evaluate, Metrics};
pub use gftm::{freeze_export, gftm_pretrain, FrozenGftm, GftmConfig, GftmModel};
pub use hftdn::{hftdn_train, HftdnConfig, HftdnModel};
pub use pipeline::{run_pipeline, PipelineArtifacts, PipelineConfig};
pub use planner::{train_main, PlanOutput, PlannerConfig, PlannerModel, TrainedPlanner};
pub use s2d::{S2dMask, S2dPhase};
pub use train::{EpochStats, TrainOptions};
