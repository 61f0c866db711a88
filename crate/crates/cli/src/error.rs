#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad command line or configuration, detected before any compute.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] topoprior::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for usage/config problems, 2 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}
