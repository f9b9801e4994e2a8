use thiserror::Error;

use crate::geometry::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("projected ellipsoid is not a bounded ellipse")]
    DegenerateConic,
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("birth label {0} collides with an existing label")]
    DuplicateBirthLabel(Label),
    #[error("enumeration needs {required} maps, budget is {budget}")]
    BudgetExceeded { required: f64, budget: f64 },
    #[error("update called with no sensor frames")]
    EmptyFrameSet,
    #[error("estimate without a confidence score in frame {frame}")]
    NoConfidences { frame: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: schema_version {found}, expected {expected}")]
    SchemaVersionMismatch {
        path: String,
        line: usize,
        found: u32,
        expected: u32,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed input files or configuration.
    pub fn is_parse_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::SchemaVersionMismatch { .. } | Error::InvalidConfig(_)
        )
    }
}
