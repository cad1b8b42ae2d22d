use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A non-finite value appeared while evaluating an expression.
    #[error("numerical error at node {node} ({op}): {detail}")]
    Numeric {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("parse error at {file}:{line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },
    /// Inputs that parse but violate a data contract.
    #[error("data error: {0}")]
    Data(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures that come from numerics rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::Diverged { .. })
    }
}
