//! Process exit codes and the mapping from library errors onto them.

use std::fmt;

use rankpilot::Error;

pub const OTHER: u8 = 1;
pub const CONFIG: u8 = 2;
pub const EVALUATOR: u8 = 3;
pub const NUMERICAL: u8 = 4;
pub const EMPTY: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

    /// Wraps an error raised while an evaluator was being called.
    pub fn evaluator(err: Error) -> Self {
        Self::new(EVALUATOR, err.to_string())
    }

    /// Wraps an error raised while reading an input named in the config.
    pub fn input(what: &str, err: impl fmt::Display) -> Self {
        Self::config(format!("{what}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match err.root() {
            Error::InvalidMatrix(_)
            | Error::InvalidEnergy(_)
            | Error::InvalidRank { .. }
            | Error::InvalidScheme(_)
            | Error::SpaceShape(_)
            | Error::UnknownLayer(_)
            | Error::InvalidBaseline(_)
            | Error::ContractViolation(_)
            | Error::InvalidSize { .. }
            | Error::ModelShape(_)
            | Error::Format { .. }
            | Error::Json(_) => CONFIG,
            Error::EvalTimeout(_) | Error::Protocol(_) => EVALUATOR,
            Error::Numerical(_)
            | Error::DegenerateSpectrum
            | Error::StaleCache
            | Error::Divergence { .. }
            | Error::DegenerateFullset
            | Error::ProfileBuild(_) => NUMERICAL,
            Error::NoFeasiblePoint | Error::EmptyCondensedSet { .. } => EMPTY,
            Error::Io(_) | Error::Context { .. } => OTHER,
        };
        Self::new(code, err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::new(OTHER, err.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_root_cause() {
        let code = |e: Error| CliError::from(e).code;
        assert_eq!(code(Error::UnknownLayer("x".into()).context("sweep")), CONFIG);
        assert_eq!(code(Error::EvalTimeout(3).context("evaluation failed at step 4")), EVALUATOR);
        assert_eq!(code(Error::Numerical("nan".into())), NUMERICAL);
        assert_eq!(code(Error::EmptyCondensedSet { correl_min: 0.9, min_length: 0 }), EMPTY);
        assert_eq!(code(Error::NoFeasiblePoint), EMPTY);
    }
}
