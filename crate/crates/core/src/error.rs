use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length {len} is not a multiple of {multiple}")]
    LengthNotMultiple { len: usize, multiple: usize },

    #[error("expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("least-squares system is rank deficient at column {column} (condition estimate {condition:.3e})")]
    RankDeficient { column: usize, condition: f64 },

    /// The stacked distortion system cannot resolve the coefficient of this order.
    #[error("normalized coefficient of order {order} is not identifiable from the data")]
    UnidentifiableOrder { order: usize },

    #[error("unsupported nonlinearity order {order}: {reason}")]
    UnsupportedOrder { order: usize, reason: &'static str },

    #[error("polynomial fit underdetermined: {0}")]
    Underfit(String),

    #[error("Bussgang gain is zero; normalized coefficients are undefined")]
    ZeroGain,

    #[error("closed-form moment {name} = {closed} disagrees with direct average {direct}")]
    MomentMismatch {
        name: &'static str,
        closed: f64,
        direct: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
