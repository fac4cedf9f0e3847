use thiserror::Error;

/// Errors raised by the curve, transform and solver routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("curve needs at least 8 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite coordinate at sample {0}")]
    NonFinite(usize),
    #[error("degenerate curve: |c'| = {speed:e} at sample {index}")]
    DegenerateCurve { index: usize, speed: f64 },
    #[error("tangent turns by {increment:.3} rad between samples {index} and {next}; refine the grid")]
    TurningTooFast { index: usize, next: usize, increment: f64 },
    #[error("curve is not strictly convex: min curvature {min_kappa:e} at sample {index}")]
    NotConvex { index: usize, min_kappa: f64 },
    #[error("operator is only defined for closed curves")]
    OpenCurveUnsupported,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("closed/open mismatch between inputs")]
    ClosednessMismatch,
    #[error("component {component} is non-positive ({value:e}) at sample {index}")]
    NonPositive { index: usize, component: usize, value: f64 },
    #[error("point is off the image: constraint residual {residual:e} exceeds {tolerance:e}")]
    OffImage { residual: f64, tolerance: f64 },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("constraint Gram matrix is rank deficient")]
    RankDeficiency,
    #[error("solver failed: {0}")]
    SolverFailure(String),
    #[error("argument {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Newton iteration diverged; residual history {history:?}")]
    NewtonDivergence { history: Vec<f64> },
    #[error("q1 became non-positive during a step at t = {t}; try a smaller time step")]
    StepLeftDomain { t: f64 },
    #[error("path leaves the domain at t = {exit_time}")]
    DomainExit { exit_time: f64 },
    #[error("plane is degenerate: Gram determinant {gram:e}")]
    DegeneratePlane { gram: f64 },
    #[error("vertical operator is singular")]
    SingularVerticalOperator,
    #[error("shooting stalled with endpoint mismatch {mismatch:e}")]
    ShootingStall { mismatch: f64 },
    #[error("operation not supported for metric {0}")]
    UnsupportedMetric(&'static str),
    #[error("path needs at least {needed} time samples, got {got}")]
    TooFewTimeSamples { needed: usize, got: usize },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
