//! Trajectory foundations for the planning stack.
//!
//! This crate owns the trajectory data model shared by every other crate:
//! fixed-rate history/future state sequences, kinematic motion features with
//! physical clipping, maneuver classification, schema normalization from raw
//! timestamped poses, the line-delimited corpus format, a seeded synthetic
//! scenario generator, and corpus-level statistics (maneuver distributions
//! and history→future transition matrices).

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod features;
pub mod maneuver;
pub mod normalize;
pub mod synth;
pub mod trajectory;

pub use corpus::{read_corpus, write_corpus, CorpusRecord};
pub use error::{Result, TrajError};
pub use features::{compute_motion_features, FeatureLimits, MotionFeatures};
pub use maneuver::{classify_maneuver, ManeuverClass, ManeuverThresholds};
pub use normalize::{normalize_schema, Pose, RawRecord, RigidTransform, SchemaConfig};
pub use synth::{gen_corpus, gen_scenario, ScenarioConfig};
pub use trajectory::{State, TrajKind, Trajectory};
