use std::fmt;

use sparseproj::{Error, Stage};

/// Failure classes; each maps to its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Usage,
    Input,
    Posterior,
    Tuning,
    Projection,
    Debias,
    Model,
    Output,
}

impl Failure {
    pub fn code(self) -> i32 {
        match self {
            Failure::Usage => 2,
            Failure::Input => 3,
            Failure::Posterior => 4,
            Failure::Tuning => 5,
            Failure::Projection => 6,
            Failure::Debias => 7,
            Failure::Model => 8,
            Failure::Output => 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub failure: Failure,
    pub message: String,
}

impl CliError {
    pub fn new(failure: Failure, message: impl Into<String>) -> Self {
        Self { failure, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Failure::Usage, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(Failure::Input, message)
    }

    pub fn output(message: impl Into<String>) -> Self {
        Self::new(Failure::Output, message)
    }

    /// Classifies a library error by the stage label it carries.
    pub fn model(err: Error) -> Self {
        let failure = match err.stage() {
            Some(Stage::Posterior) => Failure::Posterior,
            Some(Stage::Tuning) => Failure::Tuning,
            Some(Stage::Projection) => Failure::Projection,
            Some(Stage::Debias) => Failure::Debias,
            None => Failure::Model,
        };
        Self::new(failure, err.to_string())
    }

    pub fn code(&self) -> i32 {
        self.failure.code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_labels_pick_the_code() {
        let e = Error::Singular("x".into()).at(Stage::Debias);
        assert_eq!(CliError::model(e).code(), 7);
        let wrapped = Error::Replicate { index: 3, source: Box::new(Error::Singular("x".into()).at(Stage::Posterior)) };
        assert_eq!(CliError::model(wrapped).code(), 4);
        assert_eq!(CliError::model(Error::InvalidArgument("x".into())).code(), 8);
    }
}
