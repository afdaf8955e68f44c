use std::io;

use thiserror::Error;

/// Errors produced by any stage of the refinement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate row: pixel {pixel} has norm {norm:.3e} (below 1e-12)")]
    DegenerateRow { pixel: usize, norm: f64 },

    #[error("size error: {0}")]
    Size(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 input/format, 3 dimension/partition,
    /// 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::Format(_)
            | Error::Length(_)
            | Error::Data(_)
            | Error::Parameter(_) => 2,
            Error::Size(_)
            | Error::Partition(_)
            | Error::Evaluation(_) => 3,
            Error::DegenerateRow { .. }
            | Error::Calibration(_)
            | Error::Numerical(_) => 4,
        }
    }
}
