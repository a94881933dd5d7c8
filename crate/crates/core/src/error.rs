use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: malformed files, out-of-range parameters, and so on.
    #[error("input error: {0}")]
    Input(String),
    /// A structural invariant failed to hold on data we produced ourselves.
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
