use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
    #[error("pose not orthonormal (max |RᵀR - I| = {deviation:e})")]
    PoseNotOrthonormal { deviation: f64 },
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("view {0} has no feature map")]
    MissingFeatures(String),
    #[error("view {0} has no ground-truth mask")]
    MissingMask(String),
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: u64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Shorthand for building an [`Error::InvalidArgument`].
macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
