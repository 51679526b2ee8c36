use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("ball (center {center:?}, radius {radius}) is not contained in the grid box")]
    BallOutsideGrid { center: [f64; 2], radius: f64 },

    #[error("rescaling is not aligned with the source lattice: {0}")]
    Misaligned(String),

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("potential is discontinuous; no modulus of continuity exists")]
    Discontinuous,

    #[error("potential depends on x; a modulus in t alone is not defined")]
    XDependent,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no sign change for the root condition at step {step}: g(lo)={g_lo:e}, g(1)={g_hi:e}")]
    BracketFailure { step: usize, g_lo: f64, g_hi: f64 },

    #[error("modulus table depth {depth} too shallow, level {needed} required")]
    TableTooShallow { needed: usize, depth: usize },

    #[error("L2 norm vanishes on the normalizing ball")]
    ZeroNorm,

    #[error("need at least two radii at or above the discretization floor, got {0}")]
    InsufficientRadii(usize),

    #[error("calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("config: {0}")]
    Config(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error("in module `{module}`: {source}")]
    Pipeline {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_module(self, module: &'static str) -> Self {
        match self {
            e @ Error::Pipeline { .. } => e,
            e => Error::Pipeline {
                module,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
