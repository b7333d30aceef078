use thiserror::Error;

/// Errors produced by the transfer-learning toolkit.
#[derive(Debug, Error)]
pub enum HtlError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate dataset: {0}")]
    Degenerate(String),

    #[error("solver did not converge{}: {iterations} iterations, residual {residual:.3e}", fold_suffix(.fold))]
    Convergence {
        iterations: usize,
        residual: f64,
        fold: Option<usize>,
    },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

fn fold_suffix(fold: &Option<usize>) -> String {
    match fold {
        Some(i) => format!(" (fold {i})"),
        None => String::new(),
    }
}

impl HtlError {
    pub(crate) fn in_fold(self, i: usize) -> Self {
        match self {
            HtlError::Convergence {
                iterations,
                residual,
                ..
            } => HtlError::Convergence {
                iterations,
                residual,
                fold: Some(i),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, HtlError>;
