use std::path::PathBuf;

use thiserror::Error;

use crate::record::EntityKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One failed attempt against a model provider.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProviderFailure {
    pub provider: String,
    pub attempt: u32,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("discovery root not found: {0}")]
    RootNotFound(PathBuf),

    #[error("{scope} '{name}' is already registered")]
    DuplicateName { scope: String, name: String },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("{kind} '{name}' not found")]
    NotFound { kind: EntityKind, name: String },

    #[error("version {version} of '{name}' not found")]
    VersionNotFound { name: String, version: String },

    #[error("non-monotonic version for '{name}': {version} is not after {last}")]
    NonMonotonicVersion {
        name: String,
        version: String,
        last: String,
    },

    #[error("invalid delta: {0}")]
    InvalidDelta(String),

    #[error("variable '{0}' is not learnable")]
    NotLearnable(String),

    #[error("unknown variable '{0}'")]
    UnknownVariable(String),

    #[error("unregistered resource: {0}")]
    UnregisteredResource(String),

    #[error("build failed: {0}")]
    BuildFailure(String),

    #[error("execution error: {0}")]
    ExecutionError(String),

    #[error("path error for {path}: {message}")]
    PathError { path: PathBuf, message: String },

    #[error("parse error: {0}")]
    ParseError(String),

    #[error("unsupported format version {0}")]
    UnsupportedFormatVersion(u64),

    #[error("all providers failed: {}", summarize_failures(.0))]
    AllProvidersFailed(Vec<ProviderFailure>),

    #[error("invalid model request: {0}")]
    InvalidRequest(String),

    #[error("trace is closed")]
    TraceClosed,

    #[error("unknown parent span '{0}'")]
    UnknownParent(String),

    #[error("candidate set is empty")]
    EmptyCandidateSet,

    #[error("no sub-agents registered")]
    NoAgents,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },

    #[error("server error: {0}")]
    Server(String),
}

fn summarize_failures(failures: &[ProviderFailure]) -> String {
    if failures.is_empty() {
        return "empty provider chain".to_string();
    }
    failures
        .iter()
        .map(|f| format!("{}#{}: {}", f.provider, f.attempt, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn not_found(kind: EntityKind, name: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            name: name.into(),
        }
    }

    pub(crate) fn duplicate(scope: impl std::fmt::Display, name: impl Into<String>) -> Self {
        Error::DuplicateName {
            scope: scope.to_string(),
            name: name.into(),
        }
    }

    pub(crate) fn path(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::PathError {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Stable numeric code used on the control-plane wire.
    pub fn code(&self) -> i64 {
        match self {
            Error::NotFound { .. } => -32001,
            Error::DuplicateName { .. } => -32002,
            Error::VersionNotFound { .. } => -32003,
            Error::InvalidRecord(_) => -32004,
            Error::InvalidDelta(_) => -32005,
            Error::NotLearnable(_) => -32006,
            Error::UnknownVariable(_) => -32007,
            Error::BuildFailure(_) => -32008,
            Error::ExecutionError(_) => -32009,
            Error::PathError { .. } => -32010,
            Error::ParseError(_) => -32011,
            Error::UnsupportedFormatVersion(_) => -32012,
            Error::RootNotFound(_) => -32013,
            Error::NonMonotonicVersion { .. } => -32014,
            Error::UnregisteredResource(_) => -32015,
            Error::AllProvidersFailed(_) => -32016,
            Error::InvalidRequest(_) => -32017,
            Error::TraceClosed | Error::UnknownParent(_) => -32018,
            Error::EmptyCandidateSet => -32019,
            Error::NoAgents => -32020,
            Error::InvalidConfig(_) => -32021,
            Error::Unsupported(_) => -32022,
            Error::Bind { .. } => -32023,
            Error::Server(_) => -32603,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::RootNotFound(_) => "RootNotFound",
            Error::DuplicateName { .. } => "DuplicateName",
            Error::InvalidRecord(_) => "InvalidRecord",
            Error::NotFound { .. } => "NotFound",
            Error::VersionNotFound { .. } => "VersionNotFound",
            Error::NonMonotonicVersion { .. } => "NonMonotonicVersion",
            Error::InvalidDelta(_) => "InvalidDelta",
            Error::NotLearnable(_) => "NotLearnable",
            Error::UnknownVariable(_) => "UnknownVariable",
            Error::UnregisteredResource(_) => "UnregisteredResource",
            Error::BuildFailure(_) => "BuildFailure",
            Error::ExecutionError(_) => "ExecutionError",
            Error::PathError { .. } => "PathError",
            Error::ParseError(_) => "ParseError",
            Error::UnsupportedFormatVersion(_) => "UnsupportedFormatVersion",
            Error::AllProvidersFailed(_) => "AllProvidersFailed",
            Error::InvalidRequest(_) => "InvalidRequest",
            Error::TraceClosed => "TraceClosed",
            Error::UnknownParent(_) => "UnknownParent",
            Error::EmptyCandidateSet => "EmptyCandidateSet",
            Error::NoAgents => "NoAgents",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Unsupported(_) => "Unsupported",
            Error::Bind { .. } => "BindError",
            Error::Server(_) => "Server",
        }
    }
}
