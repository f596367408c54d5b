use thiserror::Error;

use crate::cascade::CascadeError;
use crate::fit::FitError;
use crate::lifetime::LifetimeError;
use crate::positioning::PositioningError;
use crate::quantum::QuantumError;
use crate::strain::StrainError;
use crate::stream::StreamError;
use crate::tomography::TomographyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error; each module keeps its own error enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Tomography(#[from] TomographyError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Lifetime(#[from] LifetimeError),
    #[error(transparent)]
    Strain(#[from] StrainError),
    #[error(transparent)]
    Positioning(#[from] PositioningError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::Config(_) => ErrorClass::Config,
            Error::Data(_) | Error::Io { .. } => ErrorClass::Data,
            Error::Tomography(
                TomographyError::Csv { .. }
                | TomographyError::MissingLabels(_)
                | TomographyError::AllZero
                | TomographyError::InvalidExposure { .. },
            )
            | Error::Stream(StreamError::Format(_) | StreamError::MissingChannel(_))
            | Error::Lifetime(LifetimeError::EmptyTrace | LifetimeError::InvalidTrace(_) | LifetimeError::Format(_))
            | Error::Strain(
                StrainError::UnderSampled(_)
                | StrainError::TooFewMeasurements { .. }
                | StrainError::Csv(_),
            )
            | Error::Positioning(
                PositioningError::Format(_)
                | PositioningError::Io(_)
                | PositioningError::MismatchedLayout(_)
                | PositioningError::TooFewFrames(_)
                | PositioningError::NoMarkers(_),
            )
            | Error::Quantum(QuantumError::Document(_)) => ErrorClass::Data,
            Error::Cascade(CascadeError::InvalidParams(_))
            | Error::Stream(StreamError::InvalidConfig(_) | StreamError::NoDetectors)
            | Error::Lifetime(LifetimeError::InvalidParams(_) | LifetimeError::MissingRiseTau)
            | Error::Strain(StrainError::InvalidModel(_) | StrainError::EmptyGrid)
            | Error::Positioning(PositioningError::InvalidSpec(_)) => ErrorClass::Config,
            _ => ErrorClass::Numerical,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Config => 3,
            ErrorClass::Data => 4,
            ErrorClass::Numerical => 5,
        }
    }
}
