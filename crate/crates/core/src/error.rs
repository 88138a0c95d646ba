use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file could not be decoded.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A decoded record violates a domain invariant.
    #[error("line {line}: invalid record: {message}")]
    InvalidRecord { line: usize, message: String },

    #[error("dimension mismatch{}: expected {expected}, found {found}", at_line(.line))]
    Dimension {
        line: Option<usize>,
        expected: usize,
        found: usize,
    },

    /// Bad argument or configuration value.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Inputs are well formed but carry no usable signal.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_line(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dimension(expected: usize, found: usize) -> Self {
        Error::Dimension {
            line: None,
            expected,
            found,
        }
    }
}
