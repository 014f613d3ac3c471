use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate point{}: layer {layer} is dead, the layer Jacobian vanishes", index.map(|i| format!(" {i}")).unwrap_or_default())]
    DegeneratePoint { index: Option<usize>, layer: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("Hessian is numerically singular (smallest singular value {sigma_min:e}); use the graphical derivative instead")]
    SingularHessian { sigma_min: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss:e}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DegeneratePoint { .. } => "degenerate_point",
            Error::Precondition(_) => "precondition",
            Error::SingularHessian { .. } => "singular_hessian",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
