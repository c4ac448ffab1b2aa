use thiserror::Error;

/// Failures of a command, each with its process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Module(#[from] stripwalk::Error),
    #[error("{failed} of {total} properties failed")]
    Verify { failed: usize, total: usize },
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Module(stripwalk::Error::Config(_)) | Self::Config(_) => 2,
            Self::Module(_) | Self::Output(_) => 1,
            Self::Verify { .. } => 3,
        }
    }
}
