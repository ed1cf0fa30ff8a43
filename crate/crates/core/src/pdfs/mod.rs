//! Built-in probability density functions and the weighted-sum composite.
//!
//! A [`PdfSpec`] names graph nodes (one observable, its parameters) and a [`PdfKind`].
//! Parameter values are read through a [`ParamSource`], normally the [`Graph`] itself.

mod kernels;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use kernels::{asinh, Shape};

use crate::eval::{self, IntegrationError};
use crate::expr::{self, ExprError, ExprProgram};
use crate::fastmath::MathPolicy;
use crate::graph::{Graph, NodeId, NodeKind};

/// Grid size and safety factor for [`max_hint`].
pub const MAX_HINT_POINTS: usize = 1024;
pub const MAX_HINT_SAFETY: f64 = 1.1;

/// Read access to current parameter values.
pub trait ParamSource {
    fn value(&self, id: NodeId) -> f64;
}

impl ParamSource for Graph {
    fn value(&self, id: NodeId) -> f64 {
        self.node(id).map_or(f64::NAN, |n| n.cached_value())
    }
}

impl ParamSource for HashMap<NodeId, f64> {
    fn value(&self, id: NodeId) -> f64 {
        self.get(&id).copied().unwrap_or(f64::NAN)
    }
}

/// Parameter values laid out parallel to a list of node ids.
#[derive(Debug, Clone, Copy)]
pub struct Bindings<'a> {
    pub ids: &'a [NodeId],
    pub values: &'a [f64],
}

impl ParamSource for Bindings<'_> {
    fn value(&self, id: NodeId) -> f64 {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map_or(f64::NAN, |k| self.values[k])
    }
}

/// A user-registered density. Unless a batch kernel is supplied, batch evaluation goes through
/// [`eval::generic_batch_fallback`].
pub trait ScalarPdf: Send + Sync {
    fn name(&self) -> &str;
    /// Unnormalized density at `x` given parameter values in declaration order.
    fn eval(&self, x: f64, params: &[f64]) -> f64;

    fn eval_batch(&self, xs: &[f64], params: &[f64], out: &mut [f64]) -> Result<(), PdfError> {
        eval::generic_batch_fallback(|x| Ok::<_, PdfError>(self.eval(x, params)), xs, out)
    }
}

/// Formula PDF: a compiled program plus the node bound to each program slot.
#[derive(Debug, Clone)]
pub struct ExprPdf {
    pub formula: String,
    pub program: ExprProgram,
    /// `bindings[slot]` is the node feeding program variable `slot`.
    pub bindings: Vec<NodeId>,
    /// Slot of the observable, if the formula uses it.
    pub observable_slot: Option<usize>,
}

#[derive(Clone)]
pub enum PdfKind {
    Gaussian,
    Exponential,
    ChiSquare,
    JohnsonSU,
    /// Components with `n - 1` fractions in `PdfSpec::parameters`; the last coefficient is
    /// `1 - sum(fractions)`.
    WeightedSum(Vec<PdfSpec>),
    Expression(Arc<ExprPdf>),
    Custom(Arc<dyn ScalarPdf>),
}

impl fmt::Debug for PdfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdfKind::Gaussian => f.write_str("Gaussian"),
            PdfKind::Exponential => f.write_str("Exponential"),
            PdfKind::ChiSquare => f.write_str("ChiSquare"),
            PdfKind::JohnsonSU => f.write_str("JohnsonSU"),
            PdfKind::WeightedSum(c) => f.debug_tuple("WeightedSum").field(c).finish(),
            PdfKind::Expression(e) => f.debug_tuple("Expression").field(&e.formula).finish(),
            PdfKind::Custom(c) => f.debug_tuple("Custom").field(&c.name()).finish(),
        }
    }
}

impl PdfKind {
    pub fn label(&self) -> &'static str {
        match self {
            PdfKind::Gaussian => "Gaussian",
            PdfKind::Exponential => "Exponential",
            PdfKind::ChiSquare => "ChiSquare",
            PdfKind::JohnsonSU => "JohnsonSU",
            PdfKind::WeightedSum(_) => "WeightedSum",
            PdfKind::Expression(_) => "Expression",
            PdfKind::Custom(_) => "Custom",
        }
    }

    /// Parameter role names for the built-in kinds.
    pub fn roles(&self) -> &'static [&'static str] {
        match self {
            PdfKind::Gaussian => &["mu", "sigma"],
            PdfKind::Exponential => &["c"],
            PdfKind::ChiSquare => &["k"],
            PdfKind::JohnsonSU => &["mu", "lambda", "gamma", "delta"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdfSpec {
    pub name: String,
    pub kind: PdfKind,
    pub observable: NodeId,
    pub parameters: Vec<NodeId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdfError {
    #[error("{kind} expects {expected} parameter(s), got {found}")]
    Arity {
        kind: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("weighted sum components must share one observable")]
    MixedObservables,
    #[error("weighted sum needs at least one component")]
    NoComponents,
    #[error("expression does not bind variable `{0}`")]
    UnboundVariable(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid parameters: {0}")]
    InvalidParams(ParamCheck),
    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("input has {input} values but output has {output}")]
    LengthMismatch { input: usize, output: usize },
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// One violated parameter constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub param: NodeId,
    pub role: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamCheck {
    Ok,
    Invalid(Vec<Violation>),
}

impl ParamCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, ParamCheck::Ok)
    }
}

impl fmt::Display for ParamCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamCheck::Ok => f.write_str("ok"),
            ParamCheck::Invalid(v) => {
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{} {}", x.role, x.reason)?;
                }
                Ok(())
            }
        }
    }
}

impl PdfSpec {
    fn builtin(kind: PdfKind, observable: NodeId, parameters: Vec<NodeId>) -> Self {
        Self {
            name: kind.label().to_lowercase(),
            kind,
            observable,
            parameters,
        }
    }

    pub fn gaussian(x: NodeId, mu: NodeId, sigma: NodeId) -> Self {
        Self::builtin(PdfKind::Gaussian, x, vec![mu, sigma])
    }

    pub fn exponential(x: NodeId, c: NodeId) -> Self {
        Self::builtin(PdfKind::Exponential, x, vec![c])
    }

    pub fn chi_square(x: NodeId, k: NodeId) -> Self {
        Self::builtin(PdfKind::ChiSquare, x, vec![k])
    }

    pub fn johnson_su(x: NodeId, mu: NodeId, lambda: NodeId, gamma: NodeId, delta: NodeId) -> Self {
        Self::builtin(PdfKind::JohnsonSU, x, vec![mu, lambda, gamma, delta])
    }

    /// Mixture of `components` with `fractions.len() == components.len() - 1`.
    pub fn weighted_sum(components: Vec<PdfSpec>, fractions: Vec<NodeId>) -> Result<Self, PdfError> {
        let first = components.first().ok_or(PdfError::NoComponents)?;
        if fractions.len() + 1 != components.len() {
            return Err(PdfError::Arity {
                kind: "WeightedSum",
                expected: components.len() - 1,
                found: fractions.len(),
            });
        }
        let observable = first.observable;
        if components.iter().any(|c| c.observable != observable) {
            return Err(PdfError::MixedObservables);
        }
        Ok(Self::builtin(PdfKind::WeightedSum(components), observable, fractions))
    }

    /// Formula PDF. `variables` binds every name the formula may use to a graph node; the
    /// observable must be among them.
    pub fn expression(formula: &str, observable: NodeId, variables: &[(&str, NodeId)]) -> Result<Self, PdfError> {
        let names: Vec<&str> = variables.iter().map(|(n, _)| *n).collect();
        let program = expr::compile(&expr::parse(formula, &names)?);
        let bindings = program
            .variables()
            .iter()
            .map(|v| {
                variables
                    .iter()
                    .find(|(n, _)| n == v)
                    .map(|(_, id)| *id)
                    .ok_or_else(|| PdfError::UnboundVariable(v.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let observable_slot = bindings.iter().position(|&b| b == observable);
        let parameters = bindings.iter().copied().filter(|&b| b != observable).collect();
        let pdf = ExprPdf {
            formula: formula.to_owned(),
            program,
            bindings,
            observable_slot,
        };
        Ok(Self::builtin(
            PdfKind::Expression(Arc::new(pdf)),
            observable,
            parameters,
        ))
    }

    pub fn custom(pdf: Arc<dyn ScalarPdf>, x: NodeId, parameters: Vec<NodeId>) -> Self {
        let name = pdf.name().to_owned();
        Self {
            name,
            kind: PdfKind::Custom(pdf),
            observable: x,
            parameters,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Checks parameter arity of built-in kinds.
    pub fn validate(&self) -> Result<(), PdfError> {
        let roles = self.kind.roles();
        if !roles.is_empty() && roles.len() != self.parameters.len() {
            return Err(PdfError::Arity {
                kind: self.kind.label(),
                expected: roles.len(),
                found: self.parameters.len(),
            });
        }
        if let PdfKind::WeightedSum(components) = &self.kind {
            for c in components {
                c.validate()?;
            }
        }
        Ok(())
    }

    /// Every parameter node this PDF reads, including those of components, without repeats.
    pub fn all_parameters(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.collect_parameters(&mut out);
        out
    }

    fn collect_parameters(&self, out: &mut Vec<NodeId>) {
        for &p in &self.parameters {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        if let PdfKind::WeightedSum(components) = &self.kind {
            for c in components {
                c.collect_parameters(out);
            }
        }
    }

    /// Builds the numeric shape of a built-in kind from parameter values in declaration order.
    pub fn shape_from(&self, values: &[f64]) -> Option<Shape> {
        Some(match self.kind {
            PdfKind::Gaussian => Shape::Gaussian {
                mu: values[0],
                sigma: values[1],
            },
            PdfKind::Exponential => Shape::Exponential { c: values[0] },
            PdfKind::ChiSquare => Shape::ChiSquare { k: values[0] },
            PdfKind::JohnsonSU => Shape::JohnsonSU {
                mu: values[0],
                lambda: values[1],
                gamma: values[2],
                delta: values[3],
            },
            _ => return None,
        })
    }
}

/// Mixture coefficients: the fractions followed by `1 - sum(fractions)`.
pub fn mixture_coefficients(fractions: &[f64]) -> Vec<f64> {
    let mut coefs = fractions.to_vec();
    let rest = fractions.iter().fold(1.0, |acc, f| acc - f);
    coefs.push(rest);
    coefs
}

/// `sum_j coefs[j] * (unnorm[j] / norms[j])`, accumulated left to right.
#[inline(always)]
pub fn mix(coefs: &[f64], unnorm: &[f64], norms: &[f64]) -> f64 {
    let mut acc = coefs[0] * (unnorm[0] / norms[0]);
    for j in 1..coefs.len() {
        acc += coefs[j] * (unnorm[j] / norms[j]);
    }
    acc
}

/// Batch form of [`mix`]: `out` is overwritten.
pub fn mix_batch(coefs: &[f64], components: &[&[f64]], norms: &[f64], out: &mut [f64]) {
    let (c0, n0) = (coefs[0], norms[0]);
    for (o, &u) in out.iter_mut().zip(components[0]) {
        *o = c0 * (u / n0);
    }
    for j in 1..coefs.len() {
        let (cj, nj) = (coefs[j], norms[j]);
        for (o, &u) in out.iter_mut().zip(components[j]) {
            *o += cj * (u / nj);
        }
    }
}

pub fn check_params(spec: &PdfSpec, params: &dyn ParamSource) -> ParamCheck {
    let mut bad = Vec::new();
    check_into(spec, params, &mut bad);
    if bad.is_empty() {
        ParamCheck::Ok
    } else {
        ParamCheck::Invalid(bad)
    }
}

fn check_into(spec: &PdfSpec, params: &dyn ParamSource, bad: &mut Vec<Violation>) {
    let mut positive = |idx: usize, role: &str| {
        let Some(&id) = spec.parameters.get(idx) else {
            return;
        };
        let v = params.value(id);
        if !(v > 0.0) {
            bad.push(Violation {
                param: id,
                role: role.to_owned(),
                reason: format!("nonpositive ({v})"),
            });
        }
    };
    match &spec.kind {
        PdfKind::Gaussian => positive(1, "sigma"),
        PdfKind::ChiSquare => positive(0, "k"),
        PdfKind::JohnsonSU => {
            positive(1, "lambda");
            positive(3, "delta");
        }
        PdfKind::WeightedSum(components) => {
            let mut sum = 0.0;
            for (i, &id) in spec.parameters.iter().enumerate() {
                let f = params.value(id);
                sum += f;
                if !(0.0..=1.0).contains(&f) {
                    bad.push(Violation {
                        param: id,
                        role: format!("fraction{i}"),
                        reason: format!("outside [0, 1] ({f})"),
                    });
                }
            }
            if sum > 1.0 {
                bad.push(Violation {
                    param: spec.parameters[spec.parameters.len() - 1],
                    role: "fractions".into(),
                    reason: format!("sum {sum} exceeds 1"),
                });
            }
            for c in components {
                check_into(c, params, bad);
            }
        }
        PdfKind::Exponential | PdfKind::Expression(_) | PdfKind::Custom(_) => {}
    }
}

fn require_ok(spec: &PdfSpec, params: &dyn ParamSource) -> Result<(), PdfError> {
    spec.validate()?;
    match check_params(spec, params) {
        ParamCheck::Ok => Ok(()),
        bad => Err(PdfError::InvalidParams(bad)),
    }
}

fn check_range(lo: f64, hi: f64) -> Result<(), PdfError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(PdfError::InvalidRange { lo, hi })
    }
}

/// A PDF with parameter values (and component normalizations) resolved, ready to evaluate.
#[derive(Clone)]
pub enum Prepared {
    Shape(Shape),
    Mixture {
        coefs: Vec<f64>,
        norms: Vec<f64>,
        components: Vec<Prepared>,
    },
    Expression {
        pdf: Arc<ExprPdf>,
        slots: Vec<f64>,
    },
    Custom {
        pdf: Arc<dyn ScalarPdf>,
        params: Vec<f64>,
    },
}

impl Prepared {
    /// Resolves parameters of `spec`. `range` is the observable range, needed to normalize
    /// mixture components.
    pub fn new(spec: &PdfSpec, range: (f64, f64), params: &dyn ParamSource) -> Result<Self, PdfError> {
        let values: Vec<f64> = spec.parameters.iter().map(|&p| params.value(p)).collect();
        if let Some(shape) = spec.shape_from(&values) {
            return Ok(Prepared::Shape(shape));
        }
        Ok(match &spec.kind {
            PdfKind::WeightedSum(components) => {
                let mut norms = Vec::with_capacity(components.len());
                let mut prepared = Vec::with_capacity(components.len());
                for c in components {
                    norms.push(eval::normalization(c, range, params)?);
                    prepared.push(Prepared::new(c, range, params)?);
                }
                Prepared::Mixture {
                    coefs: mixture_coefficients(&values),
                    norms,
                    components: prepared,
                }
            }
            PdfKind::Expression(pdf) => Prepared::Expression {
                pdf: pdf.clone(),
                slots: pdf.bindings.iter().map(|&b| params.value(b)).collect(),
            },
            PdfKind::Custom(pdf) => Prepared::Custom {
                pdf: pdf.clone(),
                params: values,
            },
            _ => unreachable!("built-in kinds handled by shape_from"),
        })
    }

    pub fn eval(&self, x: f64, policy: MathPolicy) -> f64 {
        match self {
            Prepared::Shape(s) => s.eval(x, policy),
            Prepared::Mixture {
                coefs,
                norms,
                components,
            } => {
                let mut inline = [0.0f64; 16];
                let mut heap = Vec::new();
                let unnorm: &mut [f64] = if components.len() <= inline.len() {
                    &mut inline[..components.len()]
                } else {
                    heap.resize(components.len(), 0.0);
                    &mut heap
                };
                for (u, c) in unnorm.iter_mut().zip(components) {
                    *u = c.eval(x, policy);
                }
                mix(coefs, unnorm, norms)
            }
            Prepared::Expression { pdf, slots } => {
                let mut slots = slots.clone();
                if let Some(s) = pdf.observable_slot {
                    slots[s] = x;
                }
                pdf.program.eval_slots(&slots, policy)
            }
            Prepared::Custom { pdf, params } => pdf.eval(x, params),
        }
    }

    pub fn eval_batch(&self, xs: &[f64], out: &mut [f64], policy: MathPolicy) -> Result<(), PdfError> {
        if xs.len() != out.len() {
            return Err(PdfError::LengthMismatch {
                input: xs.len(),
                output: out.len(),
            });
        }
        match self {
            Prepared::Shape(s) => s.eval_batch(xs, out, policy),
            Prepared::Mixture {
                coefs,
                norms,
                components,
            } => {
                let mut buffers = vec![vec![0.0; xs.len()]; components.len()];
                for (b, c) in buffers.iter_mut().zip(components) {
                    c.eval_batch(xs, b, policy)?;
                }
                let views: Vec<&[f64]> = buffers.iter().map(Vec::as_slice).collect();
                mix_batch(coefs, &views, norms, out);
            }
            Prepared::Expression { pdf, slots } => {
                let inputs: Vec<expr::Input> = slots
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        if Some(i) == pdf.observable_slot {
                            expr::Input::Column(xs)
                        } else {
                            expr::Input::Scalar(v)
                        }
                    })
                    .collect();
                pdf.program.eval_batch_slots(&inputs, out, policy)?;
            }
            Prepared::Custom { pdf, params } => {
                pdf.eval_batch(xs, params, out)?;
            }
        }
        Ok(())
    }
}

/// Unnormalized density at `x`. Mixture components are normalized over `range`.
pub fn eval_unnorm(spec: &PdfSpec, x: f64, range: (f64, f64), params: &dyn ParamSource) -> Result<f64, PdfError> {
    require_ok(spec, params)?;
    Ok(Prepared::new(spec, range, params)?.eval(x, MathPolicy::Precise))
}

/// Unnormalized density over a batch of observable values.
pub fn eval_batch(
    spec: &PdfSpec,
    xs: &[f64],
    range: (f64, f64),
    params: &dyn ParamSource,
    out: &mut [f64],
    policy: MathPolicy,
) -> Result<(), PdfError> {
    if xs.len() != out.len() {
        return Err(PdfError::LengthMismatch {
            input: xs.len(),
            output: out.len(),
        });
    }
    require_ok(spec, params)?;
    Prepared::new(spec, range, params)?.eval_batch(xs, out, policy)
}

/// Closed-form integral of the unnormalized density over `[lo, hi]`, where one exists.
///
/// A weighted sum integrates to the sum of its coefficients because every component is
/// normalized before mixing.
pub fn analytic_integral(spec: &PdfSpec, range: (f64, f64), params: &dyn ParamSource) -> Result<Option<f64>, PdfError> {
    check_range(range.0, range.1)?;
    require_ok(spec, params)?;
    let values: Vec<f64> = spec.parameters.iter().map(|&p| params.value(p)).collect();
    if let Some(shape) = spec.shape_from(&values) {
        return Ok(shape.integral(range.0, range.1));
    }
    Ok(match spec.kind {
        PdfKind::WeightedSum(_) => Some(mixture_coefficients(&values).iter().sum()),
        _ => None,
    })
}

/// Upper-bound estimate of the unnormalized density on `range` for accept/reject sampling.
pub fn max_hint(spec: &PdfSpec, range: (f64, f64), params: &dyn ParamSource) -> Result<f64, PdfError> {
    check_range(range.0, range.1)?;
    require_ok(spec, params)?;
    let prepared = Prepared::new(spec, range, params)?;
    let (lo, hi) = range;
    let step = (hi - lo) / (MAX_HINT_POINTS - 1) as f64;
    let at = |i: usize| {
        if i == MAX_HINT_POINTS - 1 {
            hi
        } else {
            lo + i as f64 * step
        }
    };
    let f = |x: f64| prepared.eval(x, MathPolicy::Precise);
    let (best, max) = (0..MAX_HINT_POINTS)
        .map(|i| (i, f(at(i))))
        .fold((0, 0.0f64), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    // Golden-section refinement between the neighbours of the best grid point catches peaks
    // narrower than the grid spacing.
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(MAX_HINT_POINTS - 1)));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut peak = max;
    for _ in 0..60 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        let (fc, fd) = (f(c), f(d));
        peak = peak.max(fc).max(fd);
        if fc > fd {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(peak * MAX_HINT_SAFETY)
}

/// Range of the observable node in `graph`.
pub fn range_of(graph: &Graph, spec: &PdfSpec) -> Option<(f64, f64)> {
    let node = graph.node(spec.observable).ok()?;
    if node.kind() != NodeKind::Observable {
        return None;
    }
    graph.observable(spec.observable).ok().map(|o| (o.lower, o.upper))
}
