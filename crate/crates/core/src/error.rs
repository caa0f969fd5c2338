use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors that must agree in shape do not.
    #[error("shape contract violated in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument lies outside the domain an operation accepts.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// The oracle velocity was requested too close to t = 1.
    #[error("singular oracle velocity at t = {t} (t must stay below {limit})")]
    Singularity { t: f32, limit: f32 },

    /// A sampler step produced NaN or infinity.
    #[error("non-finite velocity at sampler step {step}")]
    NonFiniteStep { step: usize },

    /// A network layer produced NaN or infinity.
    #[error("non-finite activation in layer `{layer}`")]
    NonFiniteLayer { layer: String },

    /// Training diverged. Carries the sampled times and parameter norms for diagnosis.
    #[error("non-finite loss at step {step}; t = {times:?}; parameter norm = {param_norm}")]
    Diverged {
        step: u64,
        times: Vec<f32>,
        param_norm: f64,
    },

    /// An operation was invoked in the wrong state, e.g. backward before forward.
    #[error("invalid state: {0}")]
    State(String),

    #[error(transparent)]
    Checkpoint(#[from] crate::nn::checkpoint::CheckpointError),

    #[error("ingestion failed for {path}: {detail}")]
    Ingest { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
