//! Exit statuses: 0 success, 1 validation error, 2 numerical failure,
//! 3 I/O error.

use std::fmt;

use nmor::ErrorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Validation = 1,
    Numerical = 2,
    Io = 3,
}

/// Error raised by the front end itself.
#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { status: Status::Validation, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { status: Status::Numerical, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Status of the first recognised error in the chain.
pub fn classify(err: &anyhow::Error) -> Status {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.status;
        }
        if let Some(e) = cause.downcast_ref::<nmor::Error>() {
            return match e.kind() {
                ErrorKind::Validation => Status::Validation,
                ErrorKind::Numerical => Status::Numerical,
                ErrorKind::Io => Status::Io,
            };
        }
        if cause.is::<std::io::Error>() {
            return Status::Io;
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { Status::Io } else { Status::Validation };
        }
        if cause.is::<serde_json::Error>() {
            return Status::Validation;
        }
    }
    Status::Validation
}
