use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("Row buffer overflow: fill {fill} reached capacity {capacity} without a flush")]
    RowBufferOverflow { fill: usize, capacity: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable class name, used on the CLI's stderr line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Sequencing(_) => "sequencing",
            Error::Consistency(_) => "consistency",
            Error::Input(_) => "input",
            Error::Numeric(_) => "numeric",
            Error::RowBufferOverflow { .. } => "row_buffer_overflow",
            Error::Io(_) => "io",
        }
    }

    /// The message without its class prefix.
    pub fn detail(&self) -> String {
        match self {
            Error::Shape(m)
            | Error::Config(m)
            | Error::Sequencing(m)
            | Error::Consistency(m)
            | Error::Input(m)
            | Error::Numeric(m) => m.clone(),
            Error::Io(e) => e.to_string(),
            other => other.to_string(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Input(e.to_string())
    }
}
