use std::fmt;

/// Failure class of a command; each maps to one exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Contract(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Contract(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Contract(m) => write!(f, "contract violation: {m}"),
        }
    }
}

impl From<tokmoe::Error> for CliError {
    fn from(e: tokmoe::Error) -> Self {
        use tokmoe::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Parameter(_) => CliError::Config(msg),
            E::Contract(_) | E::FrozenState(_) | E::Protocol(_) => CliError::Contract(msg),
            E::Dimension(_)
            | E::Numeric { .. }
            | E::Ingestion { .. }
            | E::Malformed { .. }
            | E::Diverged { .. }
            | E::Incompatible { .. }
            | E::Integrity(_)
            | E::Io(_) => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
