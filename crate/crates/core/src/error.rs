use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid topology: {0}")]
    Validation(String),

    #[error("topology is disconnected: no path between {0} and {1}")]
    Disconnected(String, String),

    #[error("could not generate a connected topology after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("path set is empty")]
    EmptyPathSet,

    #[error("edge {0} is not covered by any path")]
    UncoveredEdge(usize),

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("covariance matrix is singular")]
    Singular,

    #[error("design is rank deficient; unidentifiable edges: {unidentifiable:?}")]
    RankDeficient { unidentifiable: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("path {path} has positive log survival probability {value}")]
    PositiveLogProbability { path: usize, value: f64 },

    #[error("probe pool for path {0} is empty")]
    EmptyPool(usize),

    #[error("all loss observations are zero; the log-linear fit diverges")]
    AllZeroObservations,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("design {design}, budget {budget}, run {run} failed")]
    Run {
        design: String,
        budget: usize,
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
