use std::path::PathBuf;

use contour_autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    Dimensions {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, value: f64 },

    #[error("shape does not fit the {canvas}×{canvas} canvas: {detail}")]
    OutOfCanvas { canvas: usize, detail: String },

    #[error("infeasible degradation: {0}")]
    Infeasible(String),

    #[error("ground truth has no contour pixels")]
    EmptyGroundTruth,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
