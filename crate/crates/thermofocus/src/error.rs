use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all planning stages.
#[derive(Debug)]
pub enum Error {
    /// Tissue identifier not present in the database.
    UnknownTissue(String),
    /// Invalid configuration or scenario input.
    Config(String),
    /// File / parsing problem, with context.
    Io(String),
    /// Grid metadata of two operands disagree.
    GridMismatch(String),
    /// A required mask or region is empty.
    EmptyMask(String),
    /// Numerical failure (solver divergence, degenerate objective, ...).
    Numerical(String),
    /// Gaussian fit cannot be performed on the given data.
    DegenerateFit(String),
    /// A pipeline stage failed; carries the stage tag.
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for config/file problems, 1 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownTissue(_) | Error::Config(_) | Error::Io(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnknownTissue(name) => write!(f, "unknown tissue `{name}`"),
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
            Error::GridMismatch(msg) => write!(f, "grid mismatch: {msg}"),
            Error::EmptyMask(msg) => write!(f, "empty mask: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::DegenerateFit(msg) => write!(f, "degenerate fit: {msg}"),
            Error::Stage { stage, source } => write!(f, "[{stage}] {source}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(format!("json: {e}"))
    }
}
