use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Load {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("every feature was removed by the low-expression filter")]
    EmptyFeatureSpace,

    #[error("dataset is already log-transformed")]
    AlreadyTransformed,

    #[error("operation requires raw (untransformed) values")]
    NotRaw,

    #[error("training data holds a single class; at least two are required")]
    SingleClass,

    #[error("feature subset is empty")]
    EmptyFeatureSubset,

    #[error("feature index {index} out of range for a dataset with {n_features} features")]
    MissingFeature { index: usize, n_features: usize },

    #[error("unknown feature id `{0}`")]
    UnknownFeature(String),

    #[error("z-scores need at least two trees, forest has {0}")]
    TooFewTrees(usize),

    #[error("no feature survived the partition stage")]
    NoInformativeFeatures,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class `{class}` has {count} samples, fewer than k = {k} folds")]
    InsufficientClassSamples { class: String, count: usize, k: usize },

    #[error("class code {code} out of range for {n_classes} classes")]
    LabelOutOfRange { code: usize, n_classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
