//! Error type shared by all modules.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("singular interpolation system: {detail} (pivot ratio max/min = {cond_estimate:.3e})")]
    Singular { detail: String, cond_estimate: f64 },

    #[error("label {0} is not in the enabled transform set")]
    DisabledLabel(usize),

    #[error("LCI transform requested but no inpainter was supplied")]
    MissingInpainter,

    #[error("unknown stage '{0}' (expected conv1..conv5)")]
    UnknownStage(String),

    #[error("non-finite loss at step {step}: {diagnostics}")]
    NanLoss { step: usize, diagnostics: String },

    #[error("checkpoint or container format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image decode error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
