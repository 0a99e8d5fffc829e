use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("resume refused: {0}")]
    Resume(String),

    #[error("{0}")]
    Artifact(String),

    #[error(transparent)]
    Core(#[from] zdgan_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Short machine-readable kind, printed with the message on failure.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Protocol(_) => "protocol",
            CliError::Resume(_) => "resume",
            CliError::Artifact(_) => "artifact",
            CliError::Core(zdgan_core::Error::Protocol(_)) => "protocol",
            CliError::Core(_) => "core",
            CliError::Io(_) => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "protocol" => 3,
            "resume" => 4,
            _ => 1,
        }
    }
}
