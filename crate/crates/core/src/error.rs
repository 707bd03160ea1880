use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    Format(String),
    #[error("color space error: expected {expected}, got {actual}")]
    ColorSpace { expected: String, actual: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("detection error: {0}")]
    Detection(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("k-means fit error: {0}")]
    Fit(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("degenerate kernel weights: {0}")]
    DegenerateWeights(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("geotag parse error: {0}")]
    GeotagParse(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },
    #[error("training set assembly error: {0}")]
    Assembly(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("context error: {0}")]
    Context(String),
    #[error("no trained models: {0}")]
    NotTrained(String),
    #[error("model file error: {0}")]
    Model(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Name of the failing pipeline stage, if this error was tagged with one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// Process exit code: 1 usage, 2 data/schema, 3 training, 4 prediction.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) => 1,
            Error::Fit(_)
            | Error::Training(_)
            | Error::DegenerateWeights(_)
            | Error::Stratification(_)
            | Error::Sampling(_) => 3,
            Error::NotTrained(_) | Error::Detection(_) => 4,
            _ => 2,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
