//! Crate-wide error type.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A physical or numerical parameter violates its constraints.
    InvalidParam { name: String, message: String },
    /// An input value is unusable (NaN where a number is required, etc.).
    InvalidValue(String),
    /// Mesh construction or topology query failure.
    Mesh(String),
    /// Index out of range for the queried entity.
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    /// Operator/field shape mismatch during assembly or application.
    Shape(String),
    /// Finite-element assembly failure (e.g. bad coefficient on a cell).
    Assembly(String),
    /// Constraint application failure (node outside the constrainable set).
    Constraint(String),
    /// A linear solve did not converge or broke down.
    Solve { context: String, iterations: usize, residual: f64 },
    /// An operation was invoked in an incompatible spatial or field mode.
    Mode(String),
    /// A diagnostic functional is undefined for this state.
    UndefinedRegion(String),
    /// Configuration parse or validation failure.
    Config { line: Option<usize>, key: String, message: String },
    /// Filesystem or stream failure.
    Io(String),
    /// Checkpoint restore failure (truncation, mismatch, bad magic).
    Checkpoint(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParam { name, message } => {
                write!(f, "invalid parameter `{name}`: {message}")
            }
            Error::InvalidValue(msg) => write!(f, "invalid value: {msg}"),
            Error::Mesh(msg) => write!(f, "mesh error: {msg}"),
            Error::IndexOutOfRange { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Assembly(msg) => write!(f, "assembly error: {msg}"),
            Error::Constraint(msg) => write!(f, "constraint error: {msg}"),
            Error::Solve { context, iterations, residual } => write!(
                f,
                "linear solve failed in {context}: no convergence after {iterations} \
                 iterations (relative residual {residual:.3e})"
            ),
            Error::Mode(msg) => write!(f, "mode error: {msg}"),
            Error::UndefinedRegion(msg) => write!(f, "undefined region: {msg}"),
            Error::Config { line, key, message } => match line {
                Some(n) => write!(f, "config error at line {n}, key `{key}`: {message}"),
                None => write!(f, "config error, key `{key}`: {message}"),
            },
            Error::Io(msg) => write!(f, "io error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
