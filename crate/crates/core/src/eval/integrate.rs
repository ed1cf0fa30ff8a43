//! Adaptive Simpson quadrature.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("integrand is not finite at x = {x} (value {value})")]
    NonFinite { x: f64, value: f64 },
    #[error("integral {0} is not positive")]
    NonPositive(f64),
    #[error("invalid integration range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpsonOptions {
    /// Absolute tolerance per unit of range length.
    pub abs_tol_per_width: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
    /// Uniform panels refined independently; keeps narrow peaks from being stepped over.
    pub panels: usize,
}

impl Default for SimpsonOptions {
    fn default() -> Self {
        Self {
            abs_tol_per_width: 1e-10,
            rel_tol: 1e-10,
            max_depth: 60,
            panels: 64,
        }
    }
}

struct Checked<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(f64) -> f64> Checked<F> {
    fn at(&mut self, x: f64) -> Result<f64, IntegrationError> {
        self.evaluations += 1;
        let value = (self.f)(x);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(IntegrationError::NonFinite { x, value })
        }
    }
}

/// Integrates `f` over `[lo, hi]`.
///
/// The range is split into `opts.panels` panels, the total tolerance
/// `max(abs_tol_per_width * (hi - lo), rel_tol * |rough estimate|)` is shared between panels in
/// proportion to their width, and each panel is bisected until the Simpson error estimate
/// `|S_left + S_right - S| / 15` is below its share or `max_depth` is reached.
pub fn adaptive_simpson(
    f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    opts: SimpsonOptions,
) -> Result<f64, IntegrationError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(IntegrationError::InvalidRange { lo, hi });
    }
    let mut f = Checked { f, evaluations: 0 };
    let panels = opts.panels.max(1);
    let width = (hi - lo) / panels as f64;
    let edge = |i: usize| if i == panels { hi } else { lo + i as f64 * width };

    let mut pts = Vec::with_capacity(panels);
    let mut fa = f.at(lo)?;
    let mut rough = 0.0;
    for i in 0..panels {
        let (a, b) = (edge(i), edge(i + 1));
        let m = 0.5 * (a + b);
        let (fm, fb) = (f.at(m)?, f.at(b)?);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rough += whole.abs();
        pts.push((a, fa, m, fm, b, fb, whole));
        fa = fb;
    }
    let tol = (opts.abs_tol_per_width * (hi - lo)).max(opts.rel_tol * rough);
    let mut total = 0.0;
    for (a, fa, m, fm, b, fb, whole) in pts {
        let eps = tol * (b - a) / (hi - lo);
        total += refine(&mut f, a, fa, m, fm, b, fb, whole, eps, opts.max_depth)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: FnMut(f64) -> f64>(
    f: &mut Checked<F>,
    a: f64,
    fa: f64,
    m: f64,
    fm: f64,
    b: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> Result<f64, IntegrationError> {
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f.at(lm)?, f.at(rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps || !(a < lm && lm < m && m < rm && rm < b) {
        return Ok(left + right + delta / 15.0);
    }
    Ok(refine(f, a, fa, lm, flm, m, fm, left, 0.5 * eps, depth - 1)?
        + refine(f, m, fm, rm, frm, b, fb, right, 0.5 * eps, depth - 1)?)
}
