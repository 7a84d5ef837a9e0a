use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("privacy budget exhausted: requested {requested:.6e} rho with {remaining:.6e} remaining")]
    BudgetExhausted { requested: f64, remaining: f64 },

    #[error("privacy budget required: {0}")]
    BudgetRequired(String),

    #[error("domain parse error in column `{column}`: {reason}")]
    Parse { column: String, reason: String },

    #[error("corrupt data: {0}")]
    CorruptData(String),

    #[error("cannot encode value `{value}` in column `{column}`")]
    Encoding { column: String, value: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error("infeasible condition: {0}")]
    InfeasibleCondition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("model load error (format version {version:?}): {reason}")]
    Load { version: Option<u32>, reason: String },

    #[error("audit run {run} failed: {source}")]
    AuditRun {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Whether the error stems from privacy-budget accounting.
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExhausted { .. } | Error::BudgetRequired(_))
    }
}
