use std::path::PathBuf;

/// Errors raised across the motion-tracking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("fewer than {required} valid overlapping samples ({found})")]
    EmptyOverlap { found: usize, required: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing slice with index {0}")]
    MissingSlice(usize),

    #[error("inconsistent slice geometry: {0}")]
    InconsistentGeometry(String),

    #[error("every objective value is invalid")]
    AllInvalid,

    #[error("value {value} outside domain {domain}")]
    DomainError { value: f64, domain: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no slice passed screening")]
    NoAcceptedSlices,

    #[error("calibration missing: {0}")]
    CalibrationMissing(String),

    #[error("truth mask is degenerate: {0}")]
    DegenerateTruth(&'static str),

    #[error("too few volumes: {0}")]
    TooFewVolumes(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("size mismatch in {path}: expected {expected} values, found {found}")]
    SizeMismatch { path: PathBuf, expected: usize, found: usize },

    #[error("bad NIfTI magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported NIfTI feature: {0}")]
    UnsupportedFeature(String),

    #[error("malformed data in {path}: {reason}")]
    MalformedData { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyOverlap { .. } => "EmptyOverlap",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::MissingSlice(_) => "MissingSlice",
            Error::InconsistentGeometry(_) => "InconsistentGeometry",
            Error::AllInvalid => "AllInvalid",
            Error::DomainError { .. } => "DomainError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::NoAcceptedSlices => "NoAcceptedSlices",
            Error::CalibrationMissing(_) => "CalibrationMissing",
            Error::DegenerateTruth(_) => "DegenerateTruth",
            Error::TooFewVolumes(_) => "TooFewVolumes",
            Error::MalformedHeader { .. } => "MalformedHeader",
            Error::SizeMismatch { .. } => "SizeMismatch",
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedFeature(_) => "UnsupportedFeature",
            Error::MalformedData { .. } => "MalformedData",
            Error::Config(_) => "Config",
            Error::Io { .. } => "Io",
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::EmptyOverlap { .. }
            | Error::AllInvalid
            | Error::DomainError { .. }
            | Error::NoAcceptedSlices => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
