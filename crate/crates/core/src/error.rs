use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("model is not linear: {0}")]
    NotLinear(String),

    #[error("infinite interaction norm for target {target}, source {origin}")]
    InfiniteNorm { target: String, origin: String },

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("path enumeration exceeded cap of {0} paths")]
    PathCapExceeded(usize),

    #[error("intensity bound {bound:.3e} exceeds cap {cap:.3e} at t={time}: model is near or above criticality")]
    IntensityCap { bound: f64, cap: f64, time: f64 },

    #[error("cluster population exceeded cap of {0} individuals: model may be supercritical")]
    ClusterCap(usize),

    #[error("negative pre-intensity {value} for node {node} at t={time} under identity link")]
    NegativeIntensity { node: usize, time: f64, value: f64 },

    #[error("missing drift value for chain {chain} at lattice index {index}")]
    MissingDrift { chain: usize, index: i64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mismatched paths: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "invalid_model",
            Error::Schema { .. } => "schema",
            Error::NotLinear(_) => "not_linear",
            Error::InfiniteNorm { .. } => "infinite_norm",
            Error::NonSquare { .. } => "non_square",
            Error::PathCapExceeded(_) => "path_cap",
            Error::IntensityCap { .. } => "intensity_cap",
            Error::ClusterCap(_) => "cluster_cap",
            Error::NegativeIntensity { .. } => "negative_intensity",
            Error::MissingDrift { .. } => "missing_drift",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Mismatch(_) => "mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
