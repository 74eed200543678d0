use std::fmt;
use std::process::ExitCode;

/// A failed command: bad input (exit 1) or a fault of the computation itself (exit 2).
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Validation(_) => ExitCode::from(1),
            Failure::Internal(_) => ExitCode::from(2),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "error: {e:#}"),
            Failure::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

fn is_validation(error: &nlspd::Error) -> bool {
    use nlspd::Error::*;
    match error {
        Domain(_)
        | Dimension(_)
        | Truncation { .. }
        | TruncationLimit { .. }
        | Range(_)
        | UndefinedFidelity
        | DegenerateData(_)
        | Parse(_) => true,
        Convergence { .. } | FitConvergence { .. } | IllConditioned { .. } | Consistency(_) => false,
    }
}

impl From<nlspd::Error> for Failure {
    fn from(error: nlspd::Error) -> Self {
        if is_validation(&error) {
            Failure::Validation(error.into())
        } else {
            Failure::Internal(error.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        match error.downcast_ref::<nlspd::Error>() {
            Some(inner) if is_validation(inner) => Failure::Validation(error),
            _ => Failure::Internal(error),
        }
    }
}

/// Marks any error as a problem with the user's input.
pub trait Invalid<T> {
    fn invalid(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Invalid<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }
}
