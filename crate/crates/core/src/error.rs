use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. Each variant has a stable short code
/// (see [`Error::code`]) and a distinct process exit status for the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("patch edge {edge} larger than spatial dims {rows}x{cols}")]
    PatchTooLarge { edge: usize, rows: usize, cols: usize },
    #[error("rank {rank} too large for a {pixels}x{bands} cube")]
    RankTooLarge { rank: usize, pixels: usize, bands: usize },
    #[error("insufficient observed data")]
    InsufficientObservedData,
    #[error("sparse coding diverged")]
    SparseCodingDiverged,
    #[error("SVD failed to converge")]
    SvdFailed,
    #[error("empty mask")]
    EmptyMask,
    #[error("DIP diverged")]
    DipDiverged,
    #[error("zero diagonal entry in x-update system at element {0}")]
    SingularSystem(usize),
    #[error("solver diverged")]
    SolverDiverged,
    #[error("image too small for SSIM window")]
    ImageTooSmall,
    #[error("bad magic: not an HSIB1 container")]
    BadMagic,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: usize, found: usize },
    #[error("mask values must be 0/1")]
    InvalidMaskValue,
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::PatchTooLarge { .. } => "patch_too_large",
            Error::RankTooLarge { .. } => "rank_too_large",
            Error::InsufficientObservedData => "insufficient_observed_data",
            Error::SparseCodingDiverged => "sparse_coding_diverged",
            Error::SvdFailed => "svd_failed",
            Error::EmptyMask => "empty_mask",
            Error::DipDiverged => "dip_diverged",
            Error::SingularSystem(_) => "singular_system",
            Error::SolverDiverged => "solver_diverged",
            Error::ImageTooSmall => "image_too_small",
            Error::BadMagic => "bad_magic",
            Error::BadHeader(_) => "bad_header",
            Error::PayloadLengthMismatch { .. } => "payload_length_mismatch",
            Error::InvalidMaskValue => "invalid_mask_value",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    /// Process exit status; 1 is reserved for usage errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::DimensionMismatch(_) => 10,
            Error::InvalidParameter(_) => 11,
            Error::PatchTooLarge { .. } => 12,
            Error::RankTooLarge { .. } => 13,
            Error::InsufficientObservedData => 20,
            Error::SparseCodingDiverged => 21,
            Error::SvdFailed => 22,
            Error::EmptyMask => 23,
            Error::DipDiverged => 24,
            Error::SingularSystem(_) => 25,
            Error::SolverDiverged => 26,
            Error::ImageTooSmall => 27,
            Error::BadMagic => 30,
            Error::BadHeader(_) => 31,
            Error::PayloadLengthMismatch { .. } => 32,
            Error::InvalidMaskValue => 33,
            Error::Config(_) => 40,
            Error::Io(_) => 41,
        }
    }
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
