use std::path::PathBuf;

/// Errors raised by the plant models, controllers and the simulation harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{quantity} = {value} is outside [{min}, {max}]")]
    Domain {
        quantity: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("correlation is singular: {0}")]
    Singular(String),

    #[error("{what} did not converge after {iterations} iterations (last value {last})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("simulation diverged: {0}")]
    Divergence(String),

    #[error("explicit scheme unstable: Courant number {courant:.4} > 1")]
    Stability { courant: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("power predictor failed for loop {index}: {source}")]
    Predictor {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing input files: {0:?}")]
    MissingFiles(Vec<PathBuf>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("runs are not comparable: {0}")]
    Comparison(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `ptc` command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Comparison(_) => 2,
            Error::Parse { .. } | Error::MissingFiles(_) | Error::Io { .. } => 3,
            Error::Training(_) => 5,
            _ => 4,
        }
    }
}

pub(crate) fn check_range(quantity: &'static str, value: f64, min: f64, max: f64) -> Result<f64> {
    if value.is_finite() && value >= min && value <= max {
        Ok(value)
    } else {
        Err(Error::Domain {
            quantity,
            value,
            min,
            max,
        })
    }
}
