//! Process-level error taxonomy. Every failure is classified into one
//! of three exit codes so scripts can branch on the kind of problem:
//! 1 usage, 2 data/config, 3 numerical.

use attwarp_core::error::CoreError;
use std::fmt;

/// A failure with its scripting-contract classification.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: unknown flags, missing arguments, invalid values.
    Usage(String),
    /// Unreadable or malformed data, config, or checkpoint contents.
    Data(String),
    /// Numerical breakdown: NaN gradients or non-finite intermediate values.
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// The stable exit code for this class of failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NanGradient { .. } | CoreError::NonFinite { .. } => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_scripting_contract() {
        assert_eq!(CliError::usage("x").exit_code(), 1);
        assert_eq!(CliError::data("x").exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
    }

    #[test]
    fn nan_gradients_classify_as_numerical() {
        let e = CliError::from(CoreError::NanGradient {
            parameter: "enc0.conv.weight".into(),
        });
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn shape_problems_classify_as_data() {
        let e = CliError::from(CoreError::ShapeMismatch {
            context: "x",
            left: vec![1],
            right: vec![2],
        });
        assert_eq!(e.exit_code(), 2);
    }
}
