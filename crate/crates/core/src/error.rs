//! Crate-level error aggregating the per-module error types.

use thiserror::Error;

use crate::align::AlignError;
use crate::backend::BackendError;
use crate::compress::CompressError;
use crate::decode::DecodeError;
use crate::diagnose::DiagnoseError;
use crate::evalx::{DatasetError, MetricError};
use crate::vocab::VocabError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Diagnose(#[from] DiagnoseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad input rather than a failing dependency.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Vocab(_) | Error::Metric(_) | Error::Dataset(_) | Error::Config(_) => true,
            Error::Backend(e) => backend_validation(e),
            Error::Decode(DecodeError::Backend(e)) => backend_validation(e),
            Error::Decode(_) => true,
            Error::Align(e) => match e {
                AlignError::Backend(b) => backend_validation(b),
                AlignError::Decode(DecodeError::Backend(b)) => backend_validation(b),
                AlignError::Compress(c) => matches!(c, CompressError::InvalidConfig(_)),
                _ => true,
            },
            Error::Compress(e) => matches!(e, CompressError::InvalidConfig(_)),
            Error::Diagnose(_) => true,
            Error::Io(_) => false,
        }
    }
}

fn backend_validation(e: &BackendError) -> bool {
    !matches!(e, BackendError::BackendUnavailable(_) | BackendError::Protocol(_))
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
