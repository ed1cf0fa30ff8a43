//! Likelihood evaluation: normalization, scalar and batch NLL, and the generic batch fallback.

mod integrate;
mod model;

use thiserror::Error;

pub use integrate::{adaptive_simpson, IntegrationError, SimpsonOptions};
pub use model::Model;

use crate::dataset::DataError;
use crate::expr::ExprError;
use crate::fastmath::MathPolicy;
use crate::graph::GraphError;
use crate::pdfs::{analytic_integral, ParamSource, PdfError, PdfSpec, Prepared};

/// How a likelihood is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalMode {
    /// One entry at a time through the computation graph.
    Scalar,
    /// Whole columns per node.
    Batch(MathPolicy),
}

impl EvalMode {
    pub fn label(self) -> &'static str {
        match self {
            EvalMode::Scalar => "scalar",
            EvalMode::Batch(MathPolicy::Precise) => "batch-precise",
            EvalMode::Batch(MathPolicy::Fast) => "batch-fast",
        }
    }
}

/// Negative log-likelihood of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllValue {
    pub value: f64,
    pub n_entries: usize,
    /// Node recomputations (scalar) or kernel invocations plus node recomputations (batch).
    pub n_evaluations: u64,
    /// First entry with zero, negative or NaN probability; `value` is then `+inf`.
    pub first_invalid: Option<usize>,
}

impl NllValue {
    fn new(acc: f64, n_entries: usize, n_evaluations: u64, first_invalid: Option<usize>) -> Self {
        Self {
            value: if first_invalid.is_some() { f64::INFINITY } else { acc },
            n_entries,
            n_evaluations,
            first_invalid,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.first_invalid.is_none() && self.value.is_finite()
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Pdf(#[from] PdfError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("node `{0}` is not a parameter")]
    NotAParameter(String),
    #[error("normalization of `{pdf}` is {value}")]
    Normalization { pdf: String, value: f64 },
}

impl From<IntegrationError> for EvalError {
    fn from(e: IntegrationError) -> Self {
        EvalError::Pdf(e.into())
    }
}

/// Integral of the unnormalized density over `range`: closed form when the PDF provides one,
/// adaptive Simpson otherwise.
pub fn normalization(spec: &PdfSpec, range: (f64, f64), params: &dyn ParamSource) -> Result<f64, PdfError> {
    let value = match analytic_integral(spec, range, params)? {
        Some(v) => v,
        None => {
            let prepared = Prepared::new(spec, range, params)?;
            adaptive_simpson(
                |x| prepared.eval(x, MathPolicy::Precise),
                range.0,
                range.1,
                SimpsonOptions::default(),
            )?
        }
    };
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(IntegrationError::NonPositive(value).into())
    }
}

/// Fills `out` by calling a single-value density once per entry.
pub fn generic_batch_fallback<E>(
    mut scalar: impl FnMut(f64) -> Result<f64, E>,
    xs: &[f64],
    out: &mut [f64],
) -> Result<(), E>
where
    E: From<PdfError>,
{
    if xs.len() != out.len() {
        return Err(PdfError::LengthMismatch {
            input: xs.len(),
            output: out.len(),
        }
        .into());
    }
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = scalar(x)?;
    }
    Ok(())
}

/// NLL through the computation graph, one entry at a time.
pub fn nll_scalar(model: &mut Model, ds: &crate::dataset::DataSet) -> Result<NllValue, EvalError> {
    model.nll_scalar(ds)
}

/// NLL over whole columns with the given math policy.
pub fn nll_batch(model: &mut Model, ds: &crate::dataset::DataSet, policy: MathPolicy) -> Result<NllValue, EvalError> {
    model.nll_batch(ds, policy)
}
