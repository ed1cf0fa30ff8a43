//! Per-shape density formulas shared by the scalar graph nodes and the batch kernels.
//!
//! Every batch kernel is a loop over [`Shape::eval`] with the policy fixed outside the loop,
//! so the scalar and batch paths perform the same floating-point operations per entry.

use crate::fastmath::{blend, MathPolicy};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Built-in density with its parameter values read into locals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    Exponential {
        c: f64,
    },
    ChiSquare {
        k: f64,
    },
    JohnsonSU {
        mu: f64,
        lambda: f64,
        gamma: f64,
        delta: f64,
    },
}

/// `asinh` under a math policy. The fast variant is `ln(|z| + sqrt(z^2 + 1))` with the sign
/// restored, switching to `ln(2|z|)` where `z^2` would overflow.
#[inline(always)]
pub fn asinh(z: f64, policy: MathPolicy) -> f64 {
    match policy {
        MathPolicy::Precise => z.asinh(),
        MathPolicy::Fast => {
            let a = z.abs();
            let big = a > 1e150;
            let arg = blend(big, a, a + (a * a + 1.0).sqrt());
            let v = crate::fastmath::fast_log(arg) + blend(big, std::f64::consts::LN_2, 0.0);
            v.copysign(z)
        }
    }
}

impl Shape {
    /// Unnormalized density at `x`.
    #[inline(always)]
    pub fn eval(&self, x: f64, policy: MathPolicy) -> f64 {
        match *self {
            Shape::Gaussian { mu, sigma } => {
                let t = (x - mu) / sigma;
                policy.exp(-0.5 * t * t)
            }
            Shape::Exponential { c } => policy.exp(c * x),
            Shape::ChiSquare { k } => {
                let a = 0.5 * k - 1.0;
                let v = policy.exp(a * policy.ln(x) - 0.5 * x);
                // Right limit at 0 is 1 for k = 2 only; negative x has no support.
                let at_zero = blend(k == 2.0, 1.0, 0.0);
                blend(x > 0.0, v, blend(x == 0.0, at_zero, 0.0))
            }
            Shape::JohnsonSU {
                mu,
                lambda,
                gamma,
                delta,
            } => {
                let z = (x - mu) / lambda;
                let arg = gamma + delta * asinh(z, policy);
                let front = delta / (lambda * SQRT_2PI);
                front / (1.0 + z * z).sqrt() * policy.exp(-0.5 * arg * arg)
            }
        }
    }

    /// `out[i] = self.eval(xs[i])`. Lengths must match.
    pub fn eval_batch(&self, xs: &[f64], out: &mut [f64], policy: MathPolicy) {
        debug_assert_eq!(xs.len(), out.len());
        let shape = *self;
        match policy {
            MathPolicy::Precise => run(xs, out, |x| shape.eval(x, MathPolicy::Precise)),
            MathPolicy::Fast => run(xs, out, |x| shape.eval(x, MathPolicy::Fast)),
        }
    }

    /// Closed-form integral of the unnormalized density over `[lo, hi]`, if one is implemented.
    pub fn integral(&self, lo: f64, hi: f64) -> Option<f64> {
        match *self {
            Shape::Gaussian { mu, sigma } => {
                let s = sigma * std::f64::consts::SQRT_2;
                let (a, b) = ((lo - mu) / s, (hi - mu) / s);
                let diff = if a >= 0.0 {
                    libm::erfc(a) - libm::erfc(b)
                } else if b <= 0.0 {
                    libm::erfc(-b) - libm::erfc(-a)
                } else {
                    libm::erf(b) - libm::erf(a)
                };
                Some(sigma * (std::f64::consts::PI / 2.0).sqrt() * diff)
            }
            Shape::Exponential { c } => {
                if c.abs() < 1e-12 {
                    Some(hi - lo)
                } else {
                    Some((c * lo).exp() * (c * (hi - lo)).exp_m1() / c)
                }
            }
            Shape::ChiSquare { .. } | Shape::JohnsonSU { .. } => None,
        }
    }
}

#[inline(always)]
fn run(xs: &[f64], out: &mut [f64], f: impl Fn(f64) -> f64) {
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = f(x);
    }
}
