use thiserror::Error;

/// Errors raised while building, solving or post-processing a random
/// Fisher-KPP model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("truncated normal sampling exhausted {attempts} attempts on [{lo}, {hi}]")]
    SamplingExhausted { lo: f64, hi: f64, attempts: usize },

    #[error(
        "{role} values [{computed_lo}, {computed_hi}] fall outside the declared bounds [{declared_lo}, {declared_hi}]"
    )]
    DeclaredBoundsViolated {
        role: String,
        computed_lo: f64,
        computed_hi: f64,
        declared_lo: f64,
        declared_hi: f64,
    },

    #[error("model hypothesis violated: {0}")]
    ModelHypothesis(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid time mesh: {0}")]
    InvalidTimeMesh(String),

    #[error("nonpositive diffusion {value} at node {node}")]
    NonPositiveDiffusion { node: usize, value: f64 },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("matrix exponential overflowed")]
    Overflow,

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    #[error("initial state entry {value} at node {node} is outside [0, 1]")]
    InitialOutOfRange { node: usize, value: f64 },

    #[error("initial and boundary conditions are incoherent: {0}")]
    Incoherent(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("inadmissible stepsizes: {0}")]
    Inadmissible(String),

    #[error("u[{node}][{level}] = {value} leaves [0, 1] under admissible stepsizes")]
    PositivityViolation { node: usize, level: usize, value: f64 },

    #[error("boundary value u[{node}][{level}] = {value} differs from the prescribed {expected}")]
    BoundaryMismatch {
        node: usize,
        level: usize,
        value: f64,
        expected: f64,
    },

    #[error("sample {sample_id} failed: {source}")]
    SampleFailed {
        sample_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot merge partial statistics: {0}")]
    MergeMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
