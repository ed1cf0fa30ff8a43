//! Per-entry probability and NLL comparison of the evaluation modes against scalar evaluation.

use std::fmt::Write as _;

use ubfit::dataset::DataSet;
use ubfit::eval::{EvalError, EvalMode, Model};
use ubfit::fastmath::MathPolicy;

pub const PROB_TOLERANCE: f64 = 1e-14;
pub const NLL_TOLERANCE: f64 = 2e-14;
const WORST_SHOWN: usize = 5;

/// Relative deviation with a zero reference counting as exact only when both are zero.
pub fn relative(reference: f64, value: f64) -> f64 {
    if reference == value {
        0.0
    } else if reference == 0.0 || !reference.is_finite() || !value.is_finite() {
        f64::INFINITY
    } else {
        ((value - reference) / reference).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub index: usize,
    pub scalar: f64,
    pub batch: f64,
    pub relative: f64,
}

#[derive(Debug, Clone)]
pub struct ModeParity {
    pub mode: EvalMode,
    pub nll: f64,
    pub nll_relative: f64,
    pub max_prob_relative: f64,
    /// Largest per-entry deviations, worst first.
    pub worst: Vec<Deviation>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ParityReport {
    pub n_entries: usize,
    pub scalar_nll: f64,
    pub modes: Vec<ModeParity>,
}

impl ParityReport {
    pub fn passed(&self) -> bool {
        self.modes.iter().all(|m| m.passed)
    }

    pub fn mode(&self, mode: EvalMode) -> Option<&ModeParity> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "entries: {}  scalar NLL: {:?}", self.n_entries, self.scalar_nll);
        for m in &self.modes {
            let _ = writeln!(
                s,
                "{:<14} max |dp/p| = {:.3e}  |dNLL/NLL| = {:.3e}  {}",
                m.mode.label(),
                m.max_prob_relative,
                m.nll_relative,
                if m.passed { "PASS" } else { "FAIL" }
            );
            if !m.passed {
                for d in &m.worst {
                    let _ = writeln!(
                        s,
                        "    entry {}: scalar {:?} batch {:?} (rel {:.3e})",
                        d.index, d.scalar, d.batch, d.relative
                    );
                }
            }
        }
        s
    }
}

/// Compares Batch(Precise) (bitwise) and Batch(Fast) (within tolerance) against Scalar.
pub fn check(model: &mut Model, data: &DataSet) -> Result<ParityReport, EvalError> {
    let scalar_p = model.probabilities(data, EvalMode::Scalar)?;
    let scalar_nll = model.nll(data, EvalMode::Scalar)?.value;
    let mut modes = Vec::new();
    for policy in [MathPolicy::Precise, MathPolicy::Fast] {
        let mode = EvalMode::Batch(policy);
        let p = model.probabilities(data, mode)?;
        let nll = model.nll(data, mode)?.value;
        let mut devs: Vec<Deviation> = scalar_p
            .iter()
            .zip(&p)
            .enumerate()
            .map(|(index, (&s, &b))| Deviation {
                index,
                scalar: s,
                batch: b,
                relative: relative(s, b),
            })
            .filter(|d| d.relative > 0.0 || d.scalar.to_bits() != d.batch.to_bits())
            .collect();
        devs.sort_by(|a, b| b.relative.total_cmp(&a.relative).then(a.index.cmp(&b.index)));
        let max_prob_relative = devs.first().map_or(0.0, |d| d.relative);
        let nll_relative = relative(scalar_nll, nll);
        let passed = match policy {
            MathPolicy::Precise => devs.is_empty() && nll.to_bits() == scalar_nll.to_bits(),
            MathPolicy::Fast => max_prob_relative <= PROB_TOLERANCE && nll_relative <= NLL_TOLERANCE,
        };
        devs.truncate(WORST_SHOWN);
        modes.push(ModeParity {
            mode,
            nll,
            nll_relative,
            max_prob_relative,
            worst: devs,
            passed,
        });
    }
    Ok(ParityReport {
        n_entries: data.n_rows(),
        scalar_nll,
        modes,
    })
}
