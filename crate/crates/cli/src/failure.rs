//! Error classes and their exit codes.

use std::fmt;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

/// A failure raised by the driver itself rather than the library.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

fn library_code(e: &topomod::Error) -> u8 {
    use topomod::Error as E;
    match e {
        E::InvalidArgument(_) => EXIT_CONFIG,
        E::Invariant(_) => EXIT_INVARIANT,
        E::Io { .. }
        | E::Parse(_)
        | E::DimensionMismatch { .. }
        | E::Empty(_)
        | E::UnknownNode(_)
        | E::SubtreeTooSmall { .. }
        | E::Json(_)
        | E::Csv(_) => EXIT_DATA,
    }
}

/// Exit code for an error, from the first recognised cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Config(_) => EXIT_CONFIG,
                Failure::Data(_) => EXIT_DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<topomod::Error>() {
            return library_code(e);
        }
        if cause.is::<serde_json::Error>() || cause.is::<csv::Error>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_INVARIANT
}
