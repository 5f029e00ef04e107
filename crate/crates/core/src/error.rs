use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input. `field` names the offending entry.
    #[error("invalid input at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("depth mismatch: {0}")]
    Depth(String),

    #[error("market rejected: {0}")]
    Market(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// An existence condition of the model does not hold.
    #[error("condition violated: {0}")]
    Condition(String),

    #[error("utility is -inf: {0}")]
    UtilityPole(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "schema",
            Error::UnknownNode(_) => "unknown_node",
            Error::Depth(_) => "depth",
            Error::Market(_) => "market",
            Error::Infeasible(_) => "infeasible",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Condition(_) => "condition",
            Error::UtilityPole(_) => "utility_pole",
            Error::Io(_) => "io",
        }
    }
}
