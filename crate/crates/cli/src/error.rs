use emv_core::EmvError;

/// Command failure, mapped to the exit-code contract
/// (0 success, 1 runtime, 2 config, 3 divergence).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
    Divergence(String),
    /// `verify` found this many failing checks.
    FailedChecks(usize),
}

pub const MAX_CHECK_EXIT: usize = 100;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::FailedChecks(n) => (*n).clamp(1, MAX_CHECK_EXIT) as i32,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
            CliError::Divergence(msg) => write!(f, "divergence: {msg}"),
            CliError::FailedChecks(n) => write!(f, "{n} check(s) failed"),
        }
    }
}

impl From<EmvError> for CliError {
    fn from(e: EmvError) -> Self {
        match e {
            EmvError::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<EmvError>() {
            Ok(inner) => inner.into(),
            Err(e) => CliError::Runtime(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}
