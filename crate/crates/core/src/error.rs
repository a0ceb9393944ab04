use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("box side {box_side} is not an integer multiple of the texture period {period}")]
    NonCommensurateBox { box_side: f64, period: f64 },

    #[error("Poisson draw produced zero points (seed {seed}); no Voronoi partition exists")]
    EmptyPointProcess { seed: u64 },

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("phase {0} is missing from the material table")]
    MissingPhase(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("membrane block is not positive definite")]
    NotPositiveDefinite,

    #[error("quadrature under-resolved: cell size {cell} exceeds limit {limit}")]
    UnderResolved { cell: f64, limit: f64 },

    #[error("missing corrector for patch {0}")]
    MissingCorrector(usize),

    #[error("seed {seed}: {source}")]
    Seeded {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Residual history attached to a solver failure, if any.
    pub fn residual_history(&self) -> Option<&[f64]> {
        match self {
            Error::NotConverged { history, .. } => Some(history),
            Error::Seeded { source, .. } => source.residual_history(),
            _ => None,
        }
    }
}
