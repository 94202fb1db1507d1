use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies outside the chart domain (l-inf distance {distance} > {limit})")]
    OutsideChart { distance: usize, limit: usize },

    #[error("ball of radius {radius} wraps onto itself on a torus of side {side}")]
    BallWraps { radius: usize, side: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e}, tolerance {tolerance:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("unstable extrapolation at boundary point {point:?}: q(R1)={q_small}, q(R2)={q_large}")]
    UnstableExtrapolation {
        point: Vec<i64>,
        q_small: f64,
        q_large: f64,
    },

    #[error("the complement of the excluded set is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("loss of precision: {0}")]
    Precision(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable tag, used by the command line error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::OutsideChart { .. } => "outside_chart",
            Error::BallWraps { .. } => "ball_wraps",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ResourceGuard(_) => "resource_guard",
            Error::NoConvergence { .. } => "no_convergence",
            Error::UnstableExtrapolation { .. } => "unstable_extrapolation",
            Error::Disconnected { .. } => "disconnected",
            Error::Precision(_) => "precision",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
