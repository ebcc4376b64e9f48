use std::io;
use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("config {path}: {source}")]
    ConfigSyntax {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("model file line {line}: field `{field}`: {message}")]
    ModelField {
        line: usize,
        field: &'static str,
        message: String,
    },

    #[error("unsupported model format `{0}`; this build reads HIPRENET-MODEL-v1")]
    ModelVersion(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Core(#[from] hiprenet_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable category printed with every failure.
    pub fn category(&self) -> &'static str {
        use hiprenet_core::Error as E;
        match self {
            CliError::Config(_) | CliError::ConfigSyntax { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::ModelField { .. } | CliError::ModelVersion(_) => "model_format",
            CliError::Training(_) => "training",
            CliError::Csv(_) => "data",
            CliError::Core(e) => match e {
                E::Io(_) => "io",
                E::Parse { .. } | E::Csv(_) => "data",
                E::DimensionMismatch { .. } | E::Empty(_) => "data",
                E::NeighborhoodTooSmall { .. } => "patch",
                E::DomainViolation { .. } | E::IllPosedDomain { .. } => "domain",
                E::InvalidArgument(_) => "config",
                _ => "training",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "data" | "domain" => 4,
            "model_format" => 5,
            "patch" => 6,
            _ => 7,
        }
    }
}
