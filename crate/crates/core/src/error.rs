use alloc::string::String;
use core::fmt;

use crate::tensor::Shape;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors produced by tensor primitives, graph construction, and the
/// detection toolchain.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that must agree do not; `context` names the check.
    ShapeMismatch {
        context: &'static str,
        left: Shape,
        right: Shape,
    },
    /// A tensor constructor received data of the wrong length.
    DataLength { expected: usize, got: usize },
    /// A dimension that must be positive (or within range) is not.
    InvalidDim { context: &'static str, value: usize },
    /// Convolution kernels must have odd side length.
    EvenKernel { kernel: usize },
    /// Convolution strides are restricted to 1 and 2.
    UnsupportedStride { stride: usize },
    /// A pooling window exceeds the input's spatial extent.
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },
    /// A CSL channel split would be fractional (out_ch odd, or the expanded
    /// half `t * out_ch / 2` not integral).
    ChannelSplit { out_ch: usize, expansion: f64 },
    /// A named structural constraint was violated.
    Constraint { name: &'static str, detail: String },
    /// A configuration value is invalid; `path` is the dotted key path.
    Config { path: String, detail: String },
    /// Clustering needs at least `need` boxes, got `have`.
    TooFewBoxes { have: usize, need: usize },
    /// A raw head tensor does not match the expected channel layout.
    Layout { detail: String },
    /// An operation received an empty input list.
    EmptyInput(&'static str),
    /// A graph node name was registered twice.
    DuplicateName { name: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                context,
                left,
                right,
            } => write!(f, "{context}: shapes {left} and {right} are incompatible"),
            Error::DataLength { expected, got } => {
                write!(
                    f,
                    "data length {got} does not match shape volume {expected}"
                )
            }
            Error::InvalidDim { context, value } => {
                write!(f, "{context}: invalid dimension {value}")
            }
            Error::EvenKernel { kernel } => {
                write!(f, "kernel size {kernel} must be odd")
            }
            Error::UnsupportedStride { stride } => {
                write!(f, "stride {stride} is unsupported (expected 1 or 2)")
            }
            Error::WindowTooLarge {
                window,
                height,
                width,
            } => write!(
                f,
                "pool window {window} exceeds input spatial dims {height}x{width}"
            ),
            Error::ChannelSplit { out_ch, expansion } => write!(
                f,
                "channel split is fractional: out_ch {out_ch} with expansion {expansion} \
                 requires out_ch even and expansion*out_ch/2 integral"
            ),
            Error::Constraint { name, detail } => write!(f, "constraint `{name}`: {detail}"),
            Error::Config { path, detail } => write!(f, "config `{path}`: {detail}"),
            Error::TooFewBoxes { have, need } => {
                write!(f, "need at least {need} boxes, got {have}")
            }
            Error::Layout { detail } => write!(f, "layout mismatch: {detail}"),
            Error::EmptyInput(context) => write!(f, "{context}: empty input"),
            Error::DuplicateName { name } => write!(f, "duplicate node name `{name}`"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
