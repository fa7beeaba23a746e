use thiserror::Error;

/// Problems found while parsing or validating a configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("inconsistent settings: {0}")]
    Inconsistent(String),
}

impl ConfigError {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::InvalidValue {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FieldError {
    #[error("elliptic parameter m = {0} outside [0, 1)")]
    EllipticDomain(f64),
    #[error("point ({x}, {y}, {z}) m lies within the conductor exclusion radius of the loop")]
    WireProximity { x: f64, y: f64, z: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("non-finite state at t = {t} s, position ({x}, {y}, {z}) m")]
    NonFinite { t: f64, x: f64, y: f64, z: f64 },
    #[error("step size underflow at t = {t} s")]
    StepUnderflow { t: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Top-level error for experiment orchestration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("configuration is untrappable: well minimum {well_minimum:e} J is not below the escape level {escape_level:e} J")]
    Untrappable { well_minimum: f64, escape_level: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
