use std::fmt;

use serde_json::json;
use thinbeam::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Numerical,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: m.into() }
    }

    pub fn io(m: impl Into<String>) -> Self {
        Self { kind: Kind::Io, message: m.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Numerical => 3,
            Kind::Io => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let kind = match self.kind {
            Kind::Config => "ConfigError",
            Kind::Numerical => "NumericalFailure",
            Kind::Io => "IoError",
        };
        json!({ "error": kind, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        // Failures of a solver on valid input are numerical; everything the
        // caller could have fixed in the config is a config error.
        let kind = match e {
            Error::SingularTruss { .. }
            | Error::DegenerateProjection(_)
            | Error::SingularSystem
            | Error::CannotAchieveEta { .. }
            | Error::EmptyRectangle(_)
            | Error::NoGoodRectangles
            | Error::CertificateViolation { .. } => Kind::Numerical,
            _ => Kind::Config,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::io(e.to_string())
    }
}
