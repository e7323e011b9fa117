use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the kit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("{channels} channels cannot be split into {groups} groups")]
    GroupDivisibility { channels: usize, groups: usize },

    #[error("group width {width} is smaller than the reduction factor {reduction}")]
    DegenerateWidth { width: usize, reduction: usize },

    #[error("configuration error at layer {layer}: {detail}")]
    LayerConfig { layer: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("node {0} is not recorded on this tape")]
    UnknownNode(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
