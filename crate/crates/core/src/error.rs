use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular intrinsics (determinant {0:e})")]
    SingularIntrinsics(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("warp inversion did not converge after {iterations} iterations (residual {residual:.3e} texels)")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("metric `{metric}` is unavailable: requires the external model `{model}`")]
    MetricUnavailable { metric: String, model: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("schema mismatch: expected `{expected}`, found `{found}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("image codec error on {path}: {message}")]
    ImageCodec { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path);
        }
        Error::Io { path, source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
