use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anoca::dms::DmsError;
use anoca::hems::HemsError;
use anoca::sim::SimError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: io::Error },
    /// Bad input content or a solver that gave up.
    Domain(String),
    Infeasible(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Infeasible(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Domain(m) => f.write_str(m),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
        }
    }
}

impl From<DmsError> for CliError {
    fn from(e: DmsError) -> Self {
        match e {
            DmsError::LocallyInfeasible { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<HemsError> for CliError {
    fn from(e: HemsError) -> Self {
        match e {
            HemsError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let infeasible = matches!(
            &e,
            SimError::Hems {
                source: HemsError::Infeasible { .. },
                ..
            } | SimError::Dms {
                source: DmsError::LocallyInfeasible { .. },
                ..
            }
        );
        if infeasible {
            CliError::Infeasible(e.to_string())
        } else {
            CliError::Domain(e.to_string())
        }
    }
}
