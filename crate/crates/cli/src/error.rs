use kforge::backstep::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("runtime fault: {0}")]
    Runtime(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Runtime(_) | CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema(_) => "schema",
            CliError::Verification(_) => "verification",
            CliError::Runtime(_) => "runtime",
            CliError::Io(_) => "io",
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) | SynthError::Dim { .. } | SynthError::Bind(_) | SynthError::Func(_) => CliError::Schema(e.to_string()),
            SynthError::Override { .. } => CliError::Verification(e.to_string()),
            SynthError::NonFinite { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
