use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("address {addr} out of bounds for a TCDM of {capacity} words")]
    OutOfBounds { addr: usize, capacity: usize },
    #[error("malformed memory image: {0}")]
    BadImage(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("engine needs at least one row, column and pipeline register (got L={rows}, H={cols}, P={pipeline})")]
    Geometry { rows: usize, cols: usize, pipeline: usize },
    #[error("fault-tolerant mode pairs rows, so L must be even and at least 2 (got L={0})")]
    OddRows(usize),
    #[error("the baseline engine has no fault-tolerant mode")]
    ModeUnsupported,
    #[error("matrix dimensions must be at least 1 (got M={m}, N={n}, K={k})")]
    ZeroDimension { m: u32, n: u32, k: u32 },
    #[error("dimension {name}={value} exceeds the engine counter range")]
    DimensionTooLarge { name: &'static str, value: u32 },
    #[error("operand region {name} [{start}, {end}) lies outside the TCDM ({capacity} words)")]
    RegionOutOfBounds { name: &'static str, start: u64, end: u64, capacity: usize },
    #[error("operand region {0} overlaps the Z region")]
    RegionOverlap(&'static str),
    #[error("register-file parity mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    RegfileParity { stored: u32, computed: u32 },
    #[error("operand shapes do not conform: {0}")]
    Shape(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("engine is busy; status can only be cleared while idle")]
    Busy,
    #[error("engine has not been started")]
    NotStarted,
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed job file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid job: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}
