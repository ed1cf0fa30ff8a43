//! Bounded Nelder-Mead minimization of the NLL with Hessian uncertainties.

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dataset::DataSet;
use crate::eval::{EvalError, EvalMode, Model};
use crate::graph::NodeId;
use crate::pdfs::{ParamCheck, PdfError};

/// Step of the central differences for the Hessian, in transformed coordinates.
pub const HESSIAN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub mode: EvalMode,
    /// Convergence threshold on the spread of NLL values over the simplex.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub verbose: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::Batch(crate::fastmath::MathPolicy::Fast),
            tolerance: 1e-8,
            max_iterations: 10_000,
            verbose: false,
        }
    }
}

impl FitOptions {
    pub fn with_mode(mode: EvalMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedParameter {
    pub id: NodeId,
    pub name: String,
    pub value: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub converged: bool,
    pub nll_min: f64,
    pub parameters: Vec<FittedParameter>,
    /// False when the Hessian could not be inverted; uncertainties are then 0.
    pub uncertainties_valid: bool,
    pub n_nll_calls: u64,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Every NLL value seen by the minimizer, in call order.
    pub nll_trace: Vec<f64>,
}

impl FitResult {
    pub fn parameter(&self, name: &str) -> Option<&FittedParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no floating parameters")]
    NoFreeParameters,
    #[error("invalid fit options: {0}")]
    Options(&'static str),
    #[error("invalid starting parameters: {0}")]
    InvalidStart(ParamCheck),
    #[error("parameter `{name}` = {value} is not inside its open range ({lower}, {upper})")]
    AtBound {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("NLL is infinite at the starting point (entry {entry} has zero probability)")]
    InfiniteStart { entry: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Maps `u` onto `[lower, upper]`: `lower + (upper - lower) * (sin u + 1) / 2`.
pub fn bound_transform(u: f64, lower: f64, upper: f64) -> f64 {
    let t = 0.5 * (u.sin() + 1.0);
    (lower * (1.0 - t) + upper * t).clamp(lower, upper)
}

/// Inverse of [`bound_transform`] on the open interval `(lower, upper)`.
pub fn bound_inverse(p: f64, lower: f64, upper: f64) -> Option<f64> {
    if !(lower < p && p < upper) {
        return None;
    }
    let s = 2.0 * (p - lower) / (upper - lower) - 1.0;
    Some(s.clamp(-1.0, 1.0).asin())
}

/// `dp/du` of [`bound_transform`].
pub fn bound_jacobian(u: f64, lower: f64, upper: f64) -> f64 {
    0.5 * (upper - lower) * u.cos()
}

struct Objective<'a> {
    model: &'a mut Model,
    data: &'a DataSet,
    mode: EvalMode,
    free: Vec<(NodeId, f64, f64)>,
    calls: u64,
    trace: Vec<f64>,
}

impl Objective<'_> {
    fn apply(&mut self, u: &[f64]) -> Result<(), EvalError> {
        for (&(id, lo, hi), &ui) in self.free.iter().zip(u) {
            self.model.set_parameter(id, bound_transform(ui, lo, hi))?;
        }
        Ok(())
    }

    /// NLL at `u`. Parameter sets outside a PDF's domain (for example σ = 0 on a bound) count
    /// as infinitely unlikely.
    fn nll(&mut self, u: &[f64]) -> Result<f64, EvalError> {
        self.apply(u)?;
        self.calls += 1;
        let v = match self.model.nll(self.data, self.mode) {
            Ok(v) => v.value,
            Err(EvalError::Pdf(PdfError::InvalidParams(_)))
            | Err(EvalError::Normalization { .. })
            | Err(EvalError::Pdf(PdfError::Integration(_))) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let v = if v.is_nan() { f64::INFINITY } else { v };
        self.trace.push(v);
        Ok(v)
    }
}

/// Minimizes the NLL of `model` on `data` over its non-constant parameters.
pub fn fit_to(model: &mut Model, data: &DataSet, options: &FitOptions) -> Result<FitResult, FitError> {
    if !(options.tolerance > 0.0) {
        return Err(FitError::Options("tolerance must be positive"));
    }
    if options.max_iterations == 0 {
        return Err(FitError::Options("max_iterations must be positive"));
    }
    let start = Instant::now();
    let check = model.check_params();
    if !check.is_ok() {
        return Err(FitError::InvalidStart(check));
    }
    let mut free = Vec::new();
    let mut u0 = Vec::new();
    let mut names = Vec::new();
    for id in model.parameters() {
        let p = model.graph().parameter(id).map_err(EvalError::from)?;
        if p.constant {
            continue;
        }
        let u = bound_inverse(p.value, p.lower, p.upper).ok_or_else(|| FitError::AtBound {
            name: p.name.clone(),
            value: p.value,
            lower: p.lower,
            upper: p.upper,
        })?;
        free.push((id, p.lower, p.upper));
        u0.push(u);
        names.push(p.name);
    }
    if free.is_empty() {
        return Err(FitError::NoFreeParameters);
    }

    let mut obj = Objective {
        model,
        data,
        mode: options.mode,
        free,
        calls: 0,
        trace: Vec::new(),
    };
    obj.apply(&u0)?;
    let first = obj.model.nll(data, options.mode)?;
    if let Some(entry) = first.first_invalid {
        return Err(FitError::InfiniteStart { entry });
    }

    let mut best = (u0, first.value);
    let mut iterations = 0;
    let mut converged = false;
    // A restart from the reported minimum guards against a collapsed simplex.
    for round in 0.. {
        let (u, f, iters, ok) = nelder_mead(&mut obj, &best.0, options, options.max_iterations - iterations)?;
        iterations += iters;
        let improvement = best.1 - f;
        best = (u, f);
        if !ok {
            break;
        }
        if round > 0 && improvement < options.tolerance {
            converged = true;
            break;
        }
    }

    obj.apply(&best.0)?;
    let nll_min = best.1;
    let (errors, valid) = uncertainties(&mut obj, &best.0, nll_min)?;
    obj.apply(&best.0)?;

    let mut parameters = Vec::with_capacity(names.len());
    for ((name, &(id, lo, hi)), (&u, &e)) in names.into_iter().zip(&obj.free).zip(best.0.iter().zip(&errors)) {
        let value = bound_transform(u, lo, hi);
        obj.model.set_error(id, e)?;
        parameters.push(FittedParameter {
            id,
            name,
            value,
            uncertainty: e,
        });
    }
    if options.verbose {
        eprintln!(
            "fit: converged={converged} nll={nll_min} iterations={iterations} calls={}",
            obj.calls
        );
    }
    Ok(FitResult {
        converged,
        nll_min,
        parameters,
        uncertainties_valid: valid,
        n_nll_calls: obj.calls,
        iterations,
        wall_time: start.elapsed(),
        nll_trace: obj.trace,
    })
}

/// Initial simplex step: 10% of the distance from `u` to the farther end of `[-pi/2, pi/2]`,
/// pointing that way.
fn initial_step(u: f64) -> f64 {
    if u >= 0.0 {
        -0.1 * (u + FRAC_PI_2)
    } else {
        0.1 * (FRAC_PI_2 - u)
    }
}

/// Returns the best vertex, its NLL, the iterations used and whether the simplex spread fell
/// below the tolerance.
fn nelder_mead(
    obj: &mut Objective,
    start: &[f64],
    options: &FitOptions,
    budget: usize,
) -> Result<(Vec<f64>, f64, usize, bool), EvalError> {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), obj.nll(start)?));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += initial_step(v[i]);
        let f = obj.nll(&v)?;
        simplex.push((v, f));
    }

    let mut it = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread < options.tolerance {
            let (u, f) = simplex.swap_remove(0);
            return Ok((u, f, it, true));
        }
        if it >= budget {
            let (u, f) = simplex.swap_remove(0);
            return Ok((u, f, it, false));
        }
        it += 1;
        if options.verbose && it % 500 == 0 {
            eprintln!("fit: iteration {it} best nll {} spread {spread:e}", simplex[0].1);
        }

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);
        let along =
            |t: f64, worst: &[f64]| -> Vec<f64> { centroid.iter().zip(worst).map(|(c, w)| c + t * (w - c)).collect() };

        let worst = simplex[n].0.clone();
        let reflected = along(-1.0, &worst);
        let fr = obj.nll(&reflected)?;
        if fr < simplex[0].1 {
            let expanded = along(-2.0, &worst);
            let fe = obj.nll(&expanded)?;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[n].1 {
            let c = along(-0.5, &worst);
            let f = obj.nll(&c)?;
            (c, f)
        } else {
            let c = along(0.5, &worst);
            let f = obj.nll(&c)?;
            (c, f)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let v: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            let f = obj.nll(&v)?;
            *vertex = (v, f);
        }
    }
}

/// Central-difference Hessian of the NLL in `u`, inverted and mapped back to parameter space.
fn uncertainties(obj: &mut Objective, u: &[f64], f0: f64) -> Result<(Vec<f64>, bool), EvalError> {
    let n = u.len();
    let h = HESSIAN_STEP;
    let at = |obj: &mut Objective, shifts: &[(usize, f64)]| {
        let mut v = u.to_vec();
        for &(i, s) in shifts {
            v[i] += s;
        }
        obj.nll(&v)
    };
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let fp = at(obj, &[(i, h)])?;
        let fm = at(obj, &[(i, -h)])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let fpp = at(obj, &[(i, h), (j, h)])?;
            let fpm = at(obj, &[(i, h), (j, -h)])?;
            let fmp = at(obj, &[(i, -h), (j, h)])?;
            let fmm = at(obj, &[(i, -h), (j, -h)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let cov = match hess.iter().all(|v| v.is_finite()).then(|| hess.try_inverse()).flatten() {
        Some(c) => c,
        None => return Ok((vec![0.0; n], false)),
    };
    if (0..n).any(|i| !(cov[(i, i)] > 0.0)) {
        return Ok((vec![0.0; n], false));
    }
    let errors = obj
        .free
        .iter()
        .enumerate()
        .map(|(i, &(_, lo, hi))| bound_jacobian(u[i], lo, hi).abs() * cov[(i, i)].sqrt())
        .collect();
    Ok((errors, true))
}
