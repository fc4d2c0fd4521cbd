use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing upstream artifact {}: run `mpq {producer}` first", .path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("no schema fits the budget of {budget} BOPs (smallest achievable is {min_bops})")]
    Infeasible { budget: f64, min_bops: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] mpq_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mpq_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } | CliError::Io { .. } => 3,
            CliError::Infeasible { .. } => 5,
            CliError::Core(e) => match e {
                E::TrainingDiverged { .. } => 4,
                E::Graph(_) | E::Validation(_) | E::UnsupportedOperator { .. } | E::Document { .. } => 6,
                E::Parse { .. } | E::Schema { .. } | E::Io(_) | E::Json(_) => 3,
                _ => 2,
            },
        }
    }
}

pub fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}
