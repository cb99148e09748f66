use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty rollout group")]
    EmptyGroup,

    #[error("invalid probability ratio {0}: must be finite and > 0")]
    InvalidRatio(f64),

    #[error("rollout group is inconsistent: {trajectories} trajectories, {rewards} rewards, {advantages} advantages")]
    GroupShape {
        trajectories: usize,
        rewards: usize,
        advantages: usize,
    },

    #[error("advantages have not been computed for group {0}")]
    MissingAdvantages(String),

    #[error("policy geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty task list")]
    EmptyTaskList,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite {metric} at iteration {iteration}")]
    Divergence { metric: &'static str, iteration: usize },

    #[error("{0}")]
    InvalidTask(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
