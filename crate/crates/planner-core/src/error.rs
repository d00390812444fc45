use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Nn(#[from] nn_core::NnError),

    #[error(transparent)]
    Traj(#[from] traj_core::TrajError),

    #[error(transparent)]
    Dict(#[from] traj_dict::DictError),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("isolation violated: {0}")]
    IsolationViolation(String),

    #[error("missing phase artifact: {0}")]
    MissingArtifact(&'static str),

    #[error("wrong phase: {0}")]
    WrongPhase(String),

    #[error("invalid config: {0}")]
    BadConfig(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, PlanError>;
