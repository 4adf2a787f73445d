use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the SQW container reader.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SqwError {
    #[error("bad magic: expected \"SQW1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported SQW version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated SQW data: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
    #[error("malformed tensor {name}: {reason}")]
    Malformed { name: String, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate level set: all-zero layer and no max-level override")]
    DegenerateLevelSet,
    #[error("bit width {0} outside supported range 2..=16")]
    InvalidBitWidth(u32),
    #[error("invalid level set: {0}")]
    InvalidLevelSet(String),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("not a level: {0} is not in the level set")]
    NotALevel(f32),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid targets: {0}")]
    InvalidTarget(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Sqw(#[from] SqwError),
    #[error("requires quantized model: {0}")]
    RequiresQuantizedModel(String),
    #[error("uncertainty undefined: ensemble needs at least 2 members, got {0}")]
    UncertaintyUndefined(usize),
    #[error("empty pool")]
    EmptyPool,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("IDX format error: {0}")]
    Idx(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
