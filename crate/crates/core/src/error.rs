use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row ({state}, {action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },

    #[error("negative transition probability {value} at ({state}, {action}, {next})")]
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },

    #[error("reward {value} at ({state}, {action}) is negative or not finite")]
    RewardOutOfRange { state: usize, action: usize, value: f64 },

    #[error("initial distribution entry mu[{state}] = {value} must be strictly positive")]
    DegenerateMu { state: usize, value: f64 },

    #[error("discount factor {0} must lie strictly inside (0, 1)")]
    InvalidGamma(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("entry {index} = {value} must be strictly positive")]
    NonPositiveEntry { index: usize, value: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("invalid box [{low}, {high}]")]
    InvalidBox { low: f64, high: f64 },

    #[error("missing generative sample for pair ({state}, {action})")]
    MissingSample { state: usize, action: usize },

    #[error("replay list for pair ({state}, {action}) is empty")]
    EmptyList { state: usize, action: usize },

    #[error("induced Markov chain is reducible: state {0} is not reachable from every state")]
    Reducible(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),

    #[error("bias formula requires an uncapped replay buffer")]
    CappedBuffer,

    #[error("reference vector has zero norm on the evaluation mask")]
    ZeroReference,

    #[error("traces do not share a checkpoint grid: {0}")]
    GridMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

impl Error {
    /// Configuration problems map to exit code 2, everything numeric to 3.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Shape(_)
                | Error::RowSum { .. }
                | Error::NegativeProbability { .. }
                | Error::RewardOutOfRange { .. }
                | Error::DegenerateMu { .. }
                | Error::InvalidGamma(_)
        )
    }
}
