//! Harness for reproducible experiments: line-oriented configuration,
//! experiment runners that emit JSON summaries plus CSV tables under a
//! checksummed manifest, and self-documentation for every experiment kind.

pub mod config;
pub mod describe;
pub mod runner;

/// Failures are split by exit code: spec problems (exit 2) name the
/// offending key path; numeric failures (exit 3) surface the module error.
#[derive(Debug)]
pub enum HarnessError {
    Spec(String),
    Numeric(String),
    Io(String),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Spec(msg) => write!(f, "invalid spec: {msg}"),
            HarnessError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            HarnessError::Io(msg) => write!(f, "io failure: {msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Spec(_) => 2,
            HarnessError::Numeric(_) | HarnessError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
