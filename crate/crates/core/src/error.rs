use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor shape must be non-empty with positive dimensions, got {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("shape {shape:?} describes {expected} elements but {actual} values were given")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("duplicate tensor id `{0}`")]
    DuplicateId(String),

    #[error("tensor `{id}` holds a non-finite value at index {index}")]
    NonFinite { id: String, index: usize },

    #[error("unsupported container format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("blob is truncated: entry `{id}` needs bytes up to {needed}, blob has {available}")]
    TruncatedBlob {
        id: String,
        needed: u64,
        available: u64,
    },

    #[error("entry `{id}` is out of bounds: offset {offset} + length {length} exceeds blob length {blob_length}")]
    OffsetOutOfBounds {
        id: String,
        offset: u64,
        length: u64,
        blob_length: u64,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("packing record {record:?} does not match a {rows}x{cols} plane")]
    PackingMismatch {
        record: Vec<usize>,
        rows: usize,
        cols: usize,
    },

    #[error("calibration needs at least {needed} pooled samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("calibration data is constant; cannot fit a monotone transform")]
    DegenerateCalibration,

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("bit depth {0} is outside the supported range")]
    InvalidBitDepth(u8),

    #[error("code {code} at index {index} exceeds the {bit_depth}-bit range")]
    CodeOutOfRange {
        code: u16,
        index: usize,
        bit_depth: u8,
    },

    #[error("unknown codec `{0}`")]
    UnknownCodec(String),

    #[error("codec `{0}` is already registered")]
    DuplicateCodec(String),

    #[error("codec `{codec}` does not support bit depth {bit_depth}")]
    UnsupportedBitDepth { codec: String, bit_depth: u8 },

    #[error("bitstream has bad magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("bitstream version {found} is not supported (expected {expected})")]
    BitstreamVersion { found: u8, expected: u8 },

    #[error("bitstream is truncated: {0}")]
    TruncatedPayload(String),

    #[error("bitstream was produced by codec id {found}, expected {expected}")]
    CodecMismatch { found: u8, expected: u8 },

    #[error("malformed bitstream: {0}")]
    MalformedBitstream(String),

    #[error("unsupported source precision of {0} bits")]
    UnsupportedPrecision(u32),

    #[error("element count must be positive")]
    ZeroElements,

    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),

    #[error("duplicate lambda {0} in rate-performance runs")]
    DuplicateLambda(f64),

    #[error("at least one run is required")]
    NoRuns,

    #[error("degenerate dimensions {rows}x{cols} for axis correlation")]
    DegenerateDimensions { rows: usize, cols: usize },

    #[error("negative energy {0} in Gini input")]
    NegativeEnergy(f64),

    #[error("histogram needs at least one bin")]
    ZeroBins,

    #[error("tensor is empty")]
    EmptyTensor,

    #[error("total coding time must be positive")]
    ZeroTime,

    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
