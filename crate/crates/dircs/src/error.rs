//! Crate-wide error type. Variant names follow the failure they signal;
//! most carry enough context to point at the offending node or frame.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lifted state has last coordinate {0:e}, too close to zero")]
    LastCoordinateZero(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("measurement {index} is {value}, expected +1 or -1")]
    NonBinaryMeasurement { index: usize, value: f64 },
    #[error("base signal still all-zero after {0} draws")]
    DegenerateSignal(usize),
    #[error("pairwise similarity bound unmet after {0} family regenerations")]
    SimilarityUnsatisfiable(usize),
    #[error("cannot allocate {total} measurements over {m} nodes with floor {floor}")]
    InfeasibleAllocation {
        total: usize,
        m: usize,
        floor: usize,
    },
    #[error("validation split leaves {train} training measurements for dimension {p}")]
    TooFewMeasurements { train: usize, p: usize },
    #[error("zero-norm vector: {0}")]
    ZeroVector(String),
    #[error("degenerate lifted state: {0}")]
    DegenerateLift(String),
    #[error("degenerate denominator in invexity probe: {0}")]
    DegenerateDenominator(String),
    #[error("gram matrix is singular or ill-conditioned (cond {0:e})")]
    SingularGram(f64),
    #[error("mismatched node sets: {0}")]
    MismatchedNodes(String),
    #[error("gradient step diverged, state norm {0:e}")]
    StepDiverged(f64),
    #[error("payload of {0} scalars exceeds the frame limit")]
    PayloadTooLarge(usize),
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message kind byte {0}")]
    BadKind(u8),
    #[error("incomplete frame: needed {needed} bytes, got {got}")]
    FrameIncomplete { needed: usize, got: usize },
    #[error("node {0} timed out waiting for a frame")]
    NodeTimeout(u32),
    #[error("round mismatch: expected {expected}, got {got}")]
    RoundMismatch { expected: u64, got: u64 },
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("verification checks failed: {0}")]
    CheckFailed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for config/IO problems, 3 for
    /// numeric or protocol failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Io(_) => 2,
            _ => 3,
        }
    }
}
