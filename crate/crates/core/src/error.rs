use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("failed to read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("peer count {peers} is not below node count {nodes}")]
    TooManyPeers { peers: usize, nodes: usize },
    #[error("mixed strategy needs at least 2 peers, got {0}")]
    MixedNeedsTwo(usize),
    #[error("node {node} outside 1..={nodes}")]
    BadNode { node: u32, nodes: usize },
    #[error("no connected overlay after {0} draws")]
    NeverConnected(usize),
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("matrix aborted after {completed} completed runs: {cause}")]
    MatrixAborted { completed: usize, cause: Box<SimError> },
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        match self {
            SimError::Config(_) | SimError::Topology(_) => true,
            SimError::MatrixAborted { cause, .. } => cause.is_config_error(),
            _ => false,
        }
    }
}
