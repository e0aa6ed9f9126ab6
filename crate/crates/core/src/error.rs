use thiserror::Error as ThisError;

#[derive(Debug, Clone, PartialEq, ThisError)]
pub enum Error {
    #[error("model error: {0}")]
    Model(String),
    #[error("analysis failure: {0}")]
    Analysis(String),
    #[error("certificate failure: {what} (residual {residual:e})")]
    Certificate { what: String, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn model_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Model(msg.into()))
}
