use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("non-finite value in {path}")]
    Numeric { path: String },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("calibration degenerate: |eps0 + eps1 - 1| = {0:e}")]
    CalibrationDegenerate(f64),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<S: Into<String>>(msg: S) -> Error {
    Error::Argument(msg.into())
}
