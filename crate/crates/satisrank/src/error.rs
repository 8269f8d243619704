use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("s = {0} is outside the conjugate domain")]
    Domain(f64),
    #[error("objective is +inf on the whole bracket [{lo}, {hi}]")]
    InfeasibleEvaluation { lo: f64, hi: f64 },
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("stream error at record {position}: {msg}")]
    Stream { position: u64, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Argument(_) => "argument",
            Error::Domain(_) => "domain",
            Error::InfeasibleEvaluation { .. } => "infeasible_evaluation",
            Error::Solver(_) => "solver",
            Error::Parse { .. } => "parse",
            Error::Stream { .. } => "stream",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
