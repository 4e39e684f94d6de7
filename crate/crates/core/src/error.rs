use thiserror::Error;

/// Errors raised anywhere in the kernel laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Memory access or lane index outside the addressable range.
    #[error("range error: {0}")]
    Range(String),

    /// An operand is outside the numeric domain of an instruction
    /// (non-finite lanes, positive exponent inputs, integer overflow).
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// Kernel or engine configuration that cannot be executed.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent problem inputs.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix file format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit status used by the `vfa` binary for this error.
    ///
    /// Numeric failures map to 3; everything else is a usage problem (1).
    /// Accuracy-check failures are not errors and use status 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericDomain(_) => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
