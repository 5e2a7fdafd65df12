use std::fmt;

use sigrisk_core::features::FeatureError;
use sigrisk_core::inference::InferenceError;
use sigrisk_core::io::IoError;
use sigrisk_core::matching::MatchingError;
use sigrisk_core::risk::RiskError;
use sigrisk_core::screening::ScreeningError;
use sigrisk_core::simgen::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    BadInput,
    Numerical,
    NonConvergence,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::BadInput => 2,
            Kind::Numerical => 3,
            Kind::NonConvergence => 4,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Kind::BadInput => "bad_input",
            Kind::Numerical => "numerical",
            Kind::NonConvergence => "non_convergence",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub reason: String,
}

impl CliError {
    pub fn bad_input(reason: impl Into<String>) -> Self {
        CliError {
            kind: Kind::BadInput,
            reason: reason.into(),
        }
    }

    pub fn non_convergence(reason: impl Into<String>) -> Self {
        CliError {
            kind: Kind::NonConvergence,
            reason: reason.into(),
        }
    }
}

/// `error kind=<kind> code=<n> reason="<text>"` on a single line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reason: String = self
            .reason
            .chars()
            .map(|c| if c.is_control() { ' ' } else { c })
            .collect::<String>()
            .replace('\\', "\\\\")
            .replace('"', "\\\"");
        write!(
            f,
            "error kind={} code={} reason=\"{}\"",
            self.kind.as_str(),
            self.kind.exit_code(),
            reason
        )
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

macro_rules! bad_input_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::bad_input(e.to_string())
            }
        }
    )*};
}

bad_input_from!(
    IoError,
    ScenarioError,
    MatchingError,
    RiskError,
    ScreeningError,
    FeatureError,
    serde_json::Error,
    std::io::Error
);

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        let kind = match e {
            InferenceError::MonotoneLikelihood { .. }
            | InferenceError::SingularHessian
            | InferenceError::NotConverged { .. } => Kind::Numerical,
            InferenceError::InvalidInput(_) | InferenceError::InvalidSettings(_) => Kind::BadInput,
        };
        CliError {
            kind,
            reason: e.to_string(),
        }
    }
}
