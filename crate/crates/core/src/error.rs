use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain parameter: {0}")]
    DomainParameter(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("time step {dt:.3e} violates the CFL limit {limit:.3e}")]
    StepSize { dt: f64, limit: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag used in the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DomainParameter(_) => "domain_parameter",
            Error::Resource(_) => "resource",
            Error::Usage(_) => "usage",
            Error::Solver { .. } => "solver",
            Error::StepSize { .. } => "step_size",
            Error::Numeric(_) => "numeric",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
