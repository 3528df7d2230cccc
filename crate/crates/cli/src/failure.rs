use std::fmt;
use std::process::ExitCode;

/// A failed command: bad usage or configuration (exit 1) or a failure while
/// running (exit 2).
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Failure::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(1),
            Failure::Runtime(_) => ExitCode::from(2),
        }
    }

    /// Errors from reading inputs count as configuration problems.
    pub fn input(e: drape::Error) -> Self {
        match e {
            drape::Error::Io { .. } | drape::Error::Parse { .. } | drape::Error::Json(_) | drape::Error::MissingUvs => {
                Failure::Config(e.to_string())
            }
            other => Failure::Config(format!("invalid input: {other}")),
        }
    }
}

impl From<drape::Error> for Failure {
    fn from(e: drape::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(format!("{e:#}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}
