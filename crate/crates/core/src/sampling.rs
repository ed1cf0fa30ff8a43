//! Toy-data generation.
//!
//! The generator is ChaCha8 seeded from a `u64`, which yields the same stream on every
//! platform. Gaussian, Exponential and JohnsonSU densities have direct samplers; mixtures pick
//! a component by coefficient; everything else falls back to accept/reject under
//! [`max_hint`](crate::pdfs::max_hint).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{DataError, DataSet};
use crate::fastmath::MathPolicy;
use crate::graph::Observable;
use crate::pdfs::{max_hint, mixture_coefficients, ParamSource, PdfError, PdfKind, PdfSpec, Prepared, Shape};

pub type RngState = ChaCha8Rng;

/// Proposals after which a sampler whose acceptance is below [`MIN_EFFICIENCY`] gives up.
pub const WARMUP_PROPOSALS: u64 = 1_000_000;
pub const MIN_EFFICIENCY: f64 = 1e-6;

pub fn rng(seed: u64) -> RngState {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error(transparent)]
    Pdf(#[from] PdfError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("density `{pdf}` is zero on the whole range")]
    Degenerate { pdf: String },
    #[error("density {value} at x = {x} exceeds the envelope {bound}")]
    EnvelopeViolation { x: f64, value: f64, bound: f64 },
    #[error("pathological envelope: {accepted} of {proposed} proposals accepted")]
    Inefficient { accepted: u64, proposed: u64 },
    #[error("invalid sampling range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
}

/// Counters of one rejection loop.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub proposed: u64,
    pub accepted: u64,
}

impl Tally {
    pub fn efficiency(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) -> Result<(), SamplingError> {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        } else if self.proposed >= WARMUP_PROPOSALS && self.efficiency() < MIN_EFFICIENCY {
            return Err(SamplingError::Inefficient {
                accepted: self.accepted,
                proposed: self.proposed,
            });
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Generated {
    pub data: DataSet,
    /// Combined counters of the accept/reject samplers that were used, if any.
    pub accept_reject: Option<Tally>,
}

enum Gen {
    Normal {
        mu: f64,
        sigma: f64,
        tally: Tally,
    },
    Exponential {
        c: f64,
    },
    Johnson {
        mu: f64,
        lambda: f64,
        gamma: f64,
        delta: f64,
        tally: Tally,
    },
    Mixture {
        cumulative: Vec<f64>,
        components: Vec<Gen>,
    },
    AcceptReject {
        pdf: Prepared,
        bound: f64,
        tally: Tally,
    },
}

impl Gen {
    fn new(spec: &PdfSpec, range: (f64, f64), params: &dyn ParamSource) -> Result<Self, SamplingError> {
        let values: Vec<f64> = spec.parameters.iter().map(|&p| params.value(p)).collect();
        Ok(match (spec.shape_from(&values), &spec.kind) {
            (Some(Shape::Gaussian { mu, sigma }), _) => Gen::Normal {
                mu,
                sigma,
                tally: Tally::default(),
            },
            (Some(Shape::Exponential { c }), _) => Gen::Exponential { c },
            (
                Some(Shape::JohnsonSU {
                    mu,
                    lambda,
                    gamma,
                    delta,
                }),
                _,
            ) => Gen::Johnson {
                mu,
                lambda,
                gamma,
                delta,
                tally: Tally::default(),
            },
            (None, PdfKind::WeightedSum(components)) => {
                let mut acc = 0.0;
                let cumulative = mixture_coefficients(&values)
                    .iter()
                    .map(|c| {
                        acc += c;
                        acc
                    })
                    .collect();
                Gen::Mixture {
                    cumulative,
                    components: components
                        .iter()
                        .map(|c| Gen::new(c, range, params))
                        .collect::<Result<_, _>>()?,
                }
            }
            _ => Gen::accept_reject(spec, range, params)?,
        })
    }

    fn accept_reject(spec: &PdfSpec, range: (f64, f64), params: &dyn ParamSource) -> Result<Self, SamplingError> {
        let bound = max_hint(spec, range, params)?;
        if !(bound > 0.0) {
            return Err(SamplingError::Degenerate { pdf: spec.name.clone() });
        }
        Ok(Gen::AcceptReject {
            pdf: Prepared::new(spec, range, params)?,
            bound,
            tally: Tally::default(),
        })
    }

    fn draw(&mut self, rng: &mut RngState, (lo, hi): (f64, f64)) -> Result<f64, SamplingError> {
        match self {
            Gen::Normal { mu, sigma, tally } => loop {
                let x = *mu + *sigma * standard_normal(rng);
                let inside = (lo..=hi).contains(&x);
                tally.record(inside)?;
                if inside {
                    return Ok(x);
                }
            },
            Gen::Exponential { c } => Ok(truncated_exponential(*c, lo, hi, rng.gen())),
            Gen::Johnson {
                mu,
                lambda,
                gamma,
                delta,
                tally,
            } => loop {
                let z = standard_normal(rng);
                let x = *mu + *lambda * ((z - *gamma) / *delta).sinh();
                let inside = (lo..=hi).contains(&x);
                tally.record(inside)?;
                if inside {
                    return Ok(x);
                }
            },
            Gen::Mixture { cumulative, components } => {
                let u: f64 = rng.gen::<f64>() * cumulative.last().copied().unwrap_or(1.0);
                let i = cumulative.iter().position(|&c| u < c).unwrap_or(components.len() - 1);
                components[i].draw(rng, (lo, hi))
            }
            Gen::AcceptReject { pdf, bound, tally } => {
                draw_accept_reject(|x| pdf.eval(x, MathPolicy::Precise), (lo, hi), *bound, rng, tally)
            }
        }
    }

    fn tally(&self) -> Option<Tally> {
        match self {
            Gen::AcceptReject { tally, .. } => Some(*tally),
            Gen::Mixture { components, .. } => components.iter().filter_map(Gen::tally).reduce(|a, b| Tally {
                proposed: a.proposed + b.proposed,
                accepted: a.accepted + b.accepted,
            }),
            _ => None,
        }
    }
}

/// Standard normal deviate by the Box-Muller transform.
pub fn standard_normal(rng: &mut RngState) -> f64 {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Inverse CDF of `e^{cx}` truncated to `[lo, hi]`, sampled from the end where the density
/// is largest so `expm1` never overflows.
fn truncated_exponential(c: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let w = hi - lo;
    if c.abs() < 1e-12 {
        return lo + u * w;
    }
    let a = c.abs();
    let t = -(u * (-a * w).exp_m1()).ln_1p() / a;
    let x = if c < 0.0 { lo + t } else { hi - t };
    x.clamp(lo, hi)
}

fn draw_accept_reject(
    mut pdf: impl FnMut(f64) -> f64,
    (lo, hi): (f64, f64),
    bound: f64,
    rng: &mut RngState,
    tally: &mut Tally,
) -> Result<f64, SamplingError> {
    loop {
        let x = lo + (hi - lo) * rng.gen::<f64>();
        let value = pdf(x);
        if !(value <= bound) || value < 0.0 {
            return Err(SamplingError::EnvelopeViolation { x, value, bound });
        }
        let accepted = rng.gen::<f64>() * bound < value;
        tally.record(accepted)?;
        if accepted {
            return Ok(x);
        }
    }
}

/// Draws `n` values on `range` by accept/reject against the constant envelope `max_bound`.
pub fn accept_reject(
    pdf: impl FnMut(f64) -> f64,
    range: (f64, f64),
    n: usize,
    max_bound: f64,
    seed: u64,
) -> Result<(Vec<f64>, Tally), SamplingError> {
    check_range(range)?;
    if !(max_bound > 0.0 && max_bound.is_finite()) {
        return Err(SamplingError::Degenerate {
            pdf: "accept/reject density".into(),
        });
    }
    let mut rng = rng(seed);
    let mut tally = Tally::default();
    let mut pdf = pdf;
    let xs = (0..n)
        .map(|_| draw_accept_reject(&mut pdf, range, max_bound, &mut rng, &mut tally))
        .collect::<Result<_, _>>()?;
    Ok((xs, tally))
}

fn check_range((lo, hi): (f64, f64)) -> Result<(), SamplingError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(SamplingError::InvalidRange { lo, hi })
    }
}

/// Draws `n` events of `spec` over the range of `observable`.
pub fn sample(
    spec: &PdfSpec,
    observable: &Observable,
    params: &dyn ParamSource,
    n: usize,
    seed: u64,
) -> Result<Generated, SamplingError> {
    let range = (observable.lower, observable.upper);
    check_range(range)?;
    if let crate::pdfs::ParamCheck::Invalid(v) = crate::pdfs::check_params(spec, params) {
        return Err(PdfError::InvalidParams(crate::pdfs::ParamCheck::Invalid(v)).into());
    }
    let mut gen = Gen::new(spec, range, params)?;
    let mut rng = rng(seed);
    let xs = (0..n)
        .map(|_| gen.draw(&mut rng, range))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Generated {
        data: DataSet::from_columns(std::slice::from_ref(observable), vec![xs])?,
        accept_reject: gen.tally(),
    })
}
