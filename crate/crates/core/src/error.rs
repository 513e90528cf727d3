use std::path::PathBuf;

/// Unified error type for the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// File could not be opened, read, or written.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line of input could not be decoded. Line numbers are 1-based.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Episodes must contain at least one step.
    #[error("episode {id:?} has no steps")]
    EmptyEpisode { id: String },

    /// A dataset must contain at least one episode.
    #[error("dataset contains no episodes")]
    EmptyDataset,

    /// Rewards may be integers or strings, never fractional numbers.
    #[error("fractional reward {value} on line {line}; rewards must be integers or string tokens")]
    FractionalReward { line: usize, value: f64 },

    /// Reward discretization needs numeric tokens.
    #[error("reward token {token:?} is not numeric and cannot be discretized")]
    NonNumericReward { token: String },

    /// Quantile discretization needs at least one bin.
    #[error("bin count must be positive")]
    InvalidBins,

    /// Sample extraction needs min_t > lag so the history window exists.
    #[error("min_t = {min_t} is too small for lag {lag}; need min_t >= lag + 1")]
    MinTTooSmall { min_t: usize, lag: usize },

    /// The digamma function is evaluated on positive reals only.
    #[error("digamma is undefined at x = {x}")]
    DigammaDomain { x: f64 },

    /// Count tables and entropy estimates need at least one sample.
    #[error("count table is empty; need at least one sample")]
    EmptyTable,

    /// A projection cannot ask for more history than the samples carry.
    #[error("projection needs {needed} history steps but samples carry {available}")]
    ProjectionTooLong { needed: usize, available: usize },

    /// Conditional information terms need a past step to condition on.
    #[error("conditional mutual information needs at least one history step per sample")]
    NoHistory,

    /// Information quantities need at least one sample.
    #[error("no samples available at lag {lag} under the current restriction")]
    NoEligibleSamples { lag: usize },

    /// All samples fed to one statistic must share a history length.
    #[error("samples mix history lengths {a} and {b}")]
    MixedLags { a: usize, b: usize },

    /// Permutation tests need enough replicates to resolve the level.
    #[error("{replicates} permutation replicates is too few; need at least 20")]
    TooFewReplicates { replicates: usize },

    /// Significance levels live strictly inside (0, 1).
    #[error("significance level {level} is outside (0, 1)")]
    InvalidLevel { level: f64 },

    /// A joint policy model failed validation.
    #[error("invalid joint model: {0}")]
    Model(String),

    /// Capacity search exhausted its node budget before finishing.
    #[error("capacity search exceeded its budget after {nodes} partition nodes")]
    BudgetExceeded { nodes: u64 },

    /// Conditioning events must have positive probability.
    #[error("event {name:?} has zero probability under the model")]
    EmptyEvent { name: String },

    /// A synthetic environment spec was rejected.
    #[error("invalid environment spec: {0}")]
    EnvSpec(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Builds an [`Error::Io`] from a path and source error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Builds an [`Error::Parse`] with a 1-based line number.
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
