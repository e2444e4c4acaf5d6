use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("{what} did not converge (last gap {gap:e})")]
    Convergence { what: &'static str, gap: f64 },

    #[error("monodromy matrix is defective at multiplier {multiplier}")]
    DefectiveMonodromy { multiplier: String },

    #[error("slowest Floquet mode is complex (kappa = {re} {im:+}i); amplitude response needs a real exponent")]
    ComplexSlowMode { re: f64, im: f64 },

    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("pulse experiment failed: {0}")]
    ExperimentFailed(String),

    #[error("unreliable estimate: {0}")]
    UnreliableEstimate(String),

    #[error("degenerate experiment: {0}")]
    DegenerateExperiment(String),

    #[error("no amplitude response: both amplitude estimates are zero")]
    NoAmplitudeResponse,

    #[error("inconsistent data: {0}")]
    InconsistentData(String),

    #[error("degenerate output map: {0}")]
    DegenerateOutput(String),

    #[error("non-finite cost at time index {index}")]
    NonFiniteCost { index: usize },

    #[error("cost-to-go cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
