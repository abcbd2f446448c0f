use std::fmt;

use crate::array::DType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Position-tagged failure from the parameter-declaration parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the declaration string.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("incompatible shapes {0:?} and {1:?}")]
    IncompatibleShapes(Vec<usize>, Vec<usize>),
    #[error("array is not C-contiguous")]
    NotContiguous,
    #[error("cannot reshape {from} elements into {to}")]
    CountMismatch { from: usize, to: usize },
    #[error("{0:?} is not a permutation of the array axes")]
    BadPermutation(Vec<usize>),
    #[error("element count exceeds 2^31 - 1")]
    TooManyElements,
    #[error("rank {0} exceeds the supported maximum of 4")]
    UnsupportedRank(usize),
    #[error("negative strides are not supported")]
    NegativeStride,
    #[error("descriptor addresses {needed} elements but storage holds {available}")]
    StorageTooSmall { needed: usize, available: usize },
    #[error("expected {expected:?} data, array holds {found:?}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no compute-capable adapter: {0}")]
    NoAdapter(String),
    #[error("allocation of {requested} bytes exceeds the per-allocation cap of {cap} bytes")]
    AllocTooLarge { requested: u64, cap: u64 },
    #[error("device out of memory allocating {requested} bytes")]
    OutOfMemory { requested: u64 },
    #[error("zero-byte allocation")]
    ZeroSizedAllocation,
    #[error("buffer {0} was already freed")]
    DoubleFree(u64),
    #[error("buffer {0} was used after being freed")]
    UseAfterFree(u64),
    #[error("device lost: {0}")]
    DeviceLost(String),

    #[error("kernel parameter parse error {0}")]
    Parse(#[from] ParseError),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("shader compilation failed:\n{0}")]
    ShaderCompile(String),
    #[error("kernel expects {expected} arrays, got {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("integer division is not supported")]
    IntegerDivisionUnsupported,
    #[error("{op} is not defined for {dtype:?}")]
    UnsupportedDType { op: &'static str, dtype: DType },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("max reduction over an empty axis")]
    EmptyReduction,

    #[error("loss became non-finite at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Protocol(e.to_string())
    }
}
