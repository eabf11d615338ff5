use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch { context: &'static str, expected: String, found: String },
    #[error("invalid channel index {index} for an image with {channels} channels")]
    InvalidChannelIndex { index: usize, channels: usize },
    #[error("zero standard deviation for channel {channel}")]
    ZeroStd { channel: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite gradient for parameter {name}[{index}]")]
    NonFiniteGradient { name: String, index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("input mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("fine-tuning requires a pretrained difference embedding")]
    MissingDe,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
}

pub(crate) fn shape_err(context: &'static str, expected: impl core::fmt::Debug, found: impl core::fmt::Debug) -> Error {
    Error::ShapeMismatch { context, expected: alloc::format!("{:?}", expected), found: alloc::format!("{:?}", found) }
}
