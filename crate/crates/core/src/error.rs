use core::fmt;

/// Errors reported by the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates its documented bounds.
    InvalidConfig(&'static str),
    /// `finalize_fitness` was called without any safety sample.
    EmptySamples,
    /// Genome shape does not match the scenario setup.
    MalformedGenome(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
            Error::EmptySamples => f.write_str("fitness requested for a scenario without samples"),
            Error::MalformedGenome(what) => write!(f, "malformed genome: {what}"),
        }
    }
}

impl core::error::Error for Error {}
