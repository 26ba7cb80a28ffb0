//! Error type of the command-line layer, folding every library failure onto
//! the documented exit codes.

use std::fmt;
use std::path::Path;

use levitrap::acoustics::AcousticsError;
use levitrap::forcemodel::ModelError;
use levitrap::ocp::OcpError;
use levitrap::paths::PathError;
use levitrap::sim::SimError;
use levitrap::trapsolve::TrapSolveError;

/// Exit code for bad flags or unreadable/malformed input files.
pub const EXIT_CONFIG: i32 = 4;
/// Exit code when the request is physically impossible for the device.
pub const EXIT_INFEASIBLE: i32 = 2;
/// Exit code when a numerical routine gives up.
pub const EXIT_SOLVER: i32 = 3;

/// One failure, classified by whose fault it is: the invocation (config), the
/// physics (infeasible) or the numerics (solver).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Infeasible(String),
    Solver(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Self::Infeasible(msg.into())
    }

    pub fn solver(msg: impl Into<String>) -> Self {
        Self::Solver(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Config(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Infeasible(_) => EXIT_INFEASIBLE,
            Self::Solver(_) => EXIT_SOLVER,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Infeasible(m) => write!(f, "infeasible: {m}"),
            Self::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PathError> for CliError {
    fn from(e: PathError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<AcousticsError> for CliError {
    fn from(e: AcousticsError) -> Self {
        match e {
            AcousticsError::SingularDistance(_) => Self::Solver(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ForceOutOfRange { .. } => Self::Infeasible(e.to_string()),
            ModelError::FitFailed(_) => Self::Solver(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<OcpError> for CliError {
    fn from(e: OcpError) -> Self {
        match e {
            OcpError::Model(inner) => inner.into(),
            OcpError::Path(inner) => inner.into(),
            OcpError::Infeasible { .. } => Self::Infeasible(e.to_string()),
            OcpError::MaxIterations { .. } => Self::Solver(e.to_string()),
            OcpError::BadConfig(_) => Self::Config(e.to_string()),
        }
    }
}

impl From<TrapSolveError> for CliError {
    fn from(e: TrapSolveError) -> Self {
        match e {
            TrapSolveError::Ocp(inner) => inner.into(),
            TrapSolveError::Model(inner) => inner.into(),
            TrapSolveError::Path(inner) => inner.into(),
            TrapSolveError::Unreachable { .. }
            | TrapSolveError::BackoffExhausted { .. }
            | TrapSolveError::OutsideVolume { .. } => Self::Infeasible(e.to_string()),
            TrapSolveError::DogLeg { .. }
            | TrapSolveError::SeamMismatch { .. }
            | TrapSolveError::NoForwardGamma { .. } => Self::Solver(e.to_string()),
            TrapSolveError::BadRate(_)
            | TrapSolveError::Io { .. }
            | TrapSolveError::Parse { .. } => Self::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Escaped { .. } => Self::Infeasible(e.to_string()),
            SimError::Path(inner) => inner.into(),
            SimError::StepTooLarge { .. } | SimError::Io { .. } => Self::Config(e.to_string()),
        }
    }
}
