use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected:?} (layers, dims), found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("layer {layer} out of range for {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("dimension {dim} out of range for {dims} dims")]
    DimOutOfRange { dim: usize, dims: usize },

    #[error("insufficient seeds: need at least {needed}, found {found}")]
    InsufficientSeeds { needed: usize, found: usize },

    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("signatures overlap on {} (layer, dim) cells: {cells:?}", cells.len())]
    MaskConflict { cells: Vec<(usize, usize)> },

    #[error("unknown signature `{0}`")]
    UnknownSignature(String),

    #[error("cell assigns members `{0}` and `{1}` of one mutually exclusive family")]
    ExclusiveConflict(String, String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-binary value `{value}` in column `{column}`")]
    NonBinary { column: String, value: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("tie: {0}")]
    Tie(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
