use std::path::PathBuf;

/// Errors raised across the estimation, calibration and simulation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("equilibrium solve did not converge after {iterations} iterations (residual {residual:.3e} N)")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("frame {frame} (t = {time:.4} s): {source}")]
    Frame {
        frame: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: String,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation diverged at t = {time:.4} s (|spring torque| = {torque:.1} N·m)")]
    Diverged { time: f64, torque: f64 },
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NoConvergence { .. } | Error::Diverged { .. } => true,
            Error::Frame { source, .. } | Error::Trial { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
