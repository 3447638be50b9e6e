use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical kernels.
///
/// Variants map onto the failure classes the command line distinguishes:
/// invalid arguments and configuration, insufficient data, and numerical
/// failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("calibration failure: {0}")]
    Calibration(String),

    /// Observed slope outside the invertible range of a calibration model.
    #[error(
        "slope {slope:.6e} s/rad is outside the calibrated range; nearest boundary is Δc = {nearest_delta_c:+.3} m/s"
    )]
    OutOfRange { slope: f64, nearest_delta_c: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Optimizer breakdown; carries the last iterate for inspection.
    #[error("solver failure: {message}")]
    Solver { message: String, iterate: Vec<f64> },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::Error::$variant(::alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
