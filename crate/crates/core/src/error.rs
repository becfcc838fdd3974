//! Crate-wide error type.

use std::fmt;

/// Unified error for every fallible operation in the crate.
#[derive(Debug)]
pub enum Error {
    /// Incompatible tensor shapes; names both operand shapes.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Argument outside its mathematical domain (e.g. non-positive temperature).
    Domain(String),
    /// An API contract was violated (e.g. backward from a non-scalar).
    Contract(String),
    /// Id exceeds a configured table size.
    Vocabulary { what: &'static str, id: u64, limit: u64 },
    /// Invalid or inconsistent configuration.
    Config(String),
    /// File could not be read or written.
    Io { path: String, source: std::io::Error },
    /// Input text did not parse (line number when known).
    Format { path: String, line: Option<usize>, msg: String },
    /// Non-finite value produced during a forward pass, with coordinates.
    Numeric { context: String },
    /// Cache digest does not match the live parameters/config.
    Stale { expected: u64, found: u64 },
    /// Metric undefined on this input (e.g. single-class AUC).
    UndefinedMetric(String),
    /// Training loss became non-finite.
    Diverged { step: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Vocabulary { what, id, limit } => {
                write!(f, "{what} id {id} out of range (limit {limit})")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
            Error::Format { path, line, msg } => match line {
                Some(n) => write!(f, "format error in {path}:{n}: {msg}"),
                None => write!(f, "format error in {path}: {msg}"),
            },
            Error::Numeric { context } => write!(f, "non-finite value: {context}"),
            Error::Stale { expected, found } => write!(
                f,
                "stale cache: digest {found:#018x} does not match live state {expected:#018x}"
            ),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Diverged { step } => write!(f, "training diverged at step {step}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
