//! CLI error taxonomy mapped to exit codes: 1 usage, 2 config, 3 runtime.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        CliError::Config(message.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

macro_rules! runtime_from {
    ($($ty:ty),+) => {
        $(impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::Runtime(err.to_string())
            }
        })+
    };
}

runtime_from!(
    pagerag_core::CorpusError,
    pagerag_core::EmbedError,
    pagerag_core::IndexError,
    pagerag_core::GraphError,
    pagerag_core::GenerationError,
    pagerag_core::DatasetError,
    pagerag_core::RerankError,
    pagerag_core::EvalError,
    std::io::Error
);
