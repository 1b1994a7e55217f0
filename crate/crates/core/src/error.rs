use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("resolution error: {samples:.2} grid samples per comb tooth, need at least {required}")]
    Resolution { samples: f64, required: f64 },

    #[error("comb sections {0} and {1} overlap in frequency")]
    Overlap(usize, usize),

    #[error("echo windows collide for sections {0:?}")]
    Ambiguity(Vec<(usize, usize)>),

    #[error("delay {delay:e} s is shorter than twice the pulse duration {pulse:e} s")]
    Unresolvable { delay: f64, pulse: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }

    /// True for errors caused by bad input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
