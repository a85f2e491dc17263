use thiserror::Error;

/// CLI failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    #[error("configuration error: {0}")]
    Config(String),

    /// Missing, mismatched or unwritable run artifacts (exit 3).
    #[error("artifact error: {0}")]
    Artifact(String),

    /// A numerical-quality monitor tripped (exit 4).
    #[error("numerical error: {0}")]
    Numerical(gaptail::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Artifact(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<gaptail::Error> for CliError {
    fn from(e: gaptail::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e)
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Artifact(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
