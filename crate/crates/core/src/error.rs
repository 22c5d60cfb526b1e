use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {x} lies outside the domain [{a}, {b}]")]
    Domain { x: f64, a: f64, b: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("matrix is not symmetric positive definite (pivot {pivot} at row {row}): {cause}")]
    NotSpd { row: usize, pivot: f64, cause: String },

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("infeasible size: {0}")]
    Infeasible(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("unknown block id {0}")]
    UnknownBlock(usize),

    #[error("surrogate mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("missing artifact {path}: run `{hint}` first")]
    MissingArtifact { path: String, hint: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::Config(_) => "config",
            Error::NotSpd { .. } => "not-spd",
            Error::Instability(_) => "instability",
            Error::Infeasible(_) => "infeasible",
            Error::Divergence(_) => "divergence",
            Error::UnknownBlock(_) => "unknown-block",
            Error::ModeMismatch(_) => "mode-mismatch",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
