use std::path::PathBuf;

/// Errors raised by the toolkit.
///
/// `Input` covers malformed data, bad parameters and shape mismatches;
/// `Numeric` is reserved for linear-algebra breakdowns. Solver
/// non-convergence is not an error: it is reported through
/// [`crate::solver::SolveStatus`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error: {message}")]
    Numeric {
        message: String,
        /// Condition estimate of the offending matrix, when one was computed.
        condition: Option<f64>,
    },

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, condition: Option<f64>) -> Self {
        Error::Numeric {
            message: msg.into(),
            condition,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than by the math.
    pub fn is_input(&self) -> bool {
        !matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
