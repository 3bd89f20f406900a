use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("checksum mismatch in '{name}' (expected {expected:08x}, computed {computed:08x})")]
    ChecksumMismatch { name: String, expected: u32, computed: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("duplicate name '{0}'")]
    DuplicateName(String),

    #[error("shape mismatch for '{name}': {left:?} vs {right:?}")]
    ShapeMismatch { name: String, left: Vec<usize>, right: Vec<usize> },

    #[error("parameter sets differ; only in base: {only_in_base:?}; only in tuned: {only_in_tuned:?}")]
    NameSetMismatch { only_in_base: Vec<String>, only_in_tuned: Vec<String> },

    #[error("non-finite value in '{0}'")]
    NonFinite(String),

    #[error("model id mismatch: pack expects '{expected}', checkpoint is '{found}'")]
    ModelIdMismatch { expected: String, found: String },

    #[error("storage stats mismatch: header does not match recomputed stats ({0})")]
    StatsMismatch(String),

    #[error("corrupted codes in '{name}': code {code} outside {bits}-bit range")]
    CorruptCodes { name: String, code: i64, bits: u32 },

    #[error("damped hessian is not positive definite (increase damping)")]
    SingularHessian,

    #[error("missing calibration data for '{0}'")]
    MissingCalibration(String),

    #[error("unknown task tag '{0}'")]
    UnknownTag(String),

    #[error("unknown pack id '{0}'")]
    UnknownPack(String),

    #[error("degenerate router data: {0}")]
    DegenerateRouterData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid format: {0}")]
    InvalidFormat(String),
}

impl Error {
    /// Stable short identifier, used for machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::Truncated(_) => "truncated",
            Error::DuplicateName(_) => "duplicate_name",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NameSetMismatch { .. } => "name_set_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::ModelIdMismatch { .. } => "model_id_mismatch",
            Error::StatsMismatch(_) => "stats_mismatch",
            Error::CorruptCodes { .. } => "corrupt_codes",
            Error::SingularHessian => "singular_hessian",
            Error::MissingCalibration(_) => "missing_calibration",
            Error::UnknownTag(_) => "unknown_tag",
            Error::UnknownPack(_) => "unknown_pack",
            Error::DegenerateRouterData(_) => "degenerate_router_data",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidFormat(_) => "invalid_format",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
