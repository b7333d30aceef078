use std::fmt;

use htl_core::HtlError;

pub const OK: u8 = 0;
pub const IO: u8 = 2;
pub const CONFIG: u8 = 3;
pub const CONVERGENCE: u8 = 4;
pub const INVARIANT: u8 = 5;

/// A failed command with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: IO,
            message: message.into(),
        }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Failure {
            code: INVARIANT,
            message: message.into(),
        }
    }
}

impl From<HtlError> for Failure {
    fn from(e: HtlError) -> Self {
        let code = match e {
            HtlError::Io { .. } => IO,
            HtlError::Parse(_) | HtlError::Config(_) | HtlError::Domain(_) | HtlError::Dimension { .. } => CONFIG,
            HtlError::Convergence { .. } | HtlError::Degenerate(_) | HtlError::LinearAlgebra(_) => CONVERGENCE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
