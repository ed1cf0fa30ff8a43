//! Building blocks of the `ubfit` command line: mode parity checks, benchmarks and exit codes.

pub mod bench;
pub mod parity;

use std::fmt;

use ubfit::dataset::DataError;
use ubfit::eval::EvalError;
use ubfit::fit::FitError;
use ubfit::model_file::ModelFileError;
use ubfit::pdfs::PdfError;
use ubfit::sampling::SamplingError;

/// Exit status of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl fmt::Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self::new(ExitKind::Data, message)
    }

    pub fn numerical(message: impl fmt::Display) -> Self {
        Self::new(ExitKind::Numerical, message)
    }

    /// Prefixes the message, e.g. with the file it concerns.
    pub fn context(mut self, prefix: impl fmt::Display) -> Self {
        self.message = format!("{prefix}: {}", self.message);
        self
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    /// Single line, so that `error: ` output stays machine-parsable.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        f.write_str(&one_line)
    }
}

impl std::error::Error for CliError {}

fn pdf_kind(e: &PdfError) -> ExitKind {
    match e {
        PdfError::Integration(_) => ExitKind::Numerical,
        _ => ExitKind::Data,
    }
}

fn eval_kind(e: &EvalError) -> ExitKind {
    match e {
        EvalError::Pdf(p) => pdf_kind(p),
        EvalError::Normalization { .. } => ExitKind::Numerical,
        _ => ExitKind::Data,
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::new(eval_kind(&e), e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::data(e)
    }
}

impl From<ModelFileError> for CliError {
    fn from(e: ModelFileError) -> Self {
        let kind = match &e {
            ModelFileError::Eval(inner) => eval_kind(inner),
            _ => ExitKind::Data,
        };
        Self::new(kind, e)
    }
}

impl From<SamplingError> for CliError {
    fn from(e: SamplingError) -> Self {
        let kind = match &e {
            SamplingError::Pdf(p) => pdf_kind(p),
            SamplingError::Data(_) | SamplingError::InvalidRange { .. } => ExitKind::Data,
            _ => ExitKind::Numerical,
        };
        Self::new(kind, e)
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        let kind = match &e {
            FitError::Eval(inner) => eval_kind(inner),
            FitError::InfiniteStart { .. } => ExitKind::Numerical,
            FitError::Options(_) => ExitKind::Usage,
            _ => ExitKind::Data,
        };
        Self::new(kind, e)
    }
}
