use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("`{0}` is stochastic and needs run.seed (no wall-clock default)")]
    SeedRequired(String),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] hypomhd::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "E_CONFIG",
            CliError::SeedRequired(_) => "E_SEED_REQUIRED",
            CliError::Usage(_) => "E_USAGE",
            CliError::Io(_) => "E_IO",
            CliError::Core(e) => e.code(),
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let mut err = serde_json::json!({ "code": self.code(), "message": self.to_string() });
        if let CliError::Config(v) = self {
            err["violations"] = serde_json::json!(v);
        }
        serde_json::json!({ "error": err })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
