//! Median-of-R NLL timings per evaluation mode.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use ubfit::dataset::DataSet;
use ubfit::eval::{EvalError, EvalMode, Model};
use ubfit::fastmath::MathPolicy;

pub const MODES: [EvalMode; 3] = [
    EvalMode::Scalar,
    EvalMode::Batch(MathPolicy::Precise),
    EvalMode::Batch(MathPolicy::Fast),
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model: String,
    pub n_events: usize,
    pub mode: EvalMode,
    pub wall_time: Duration,
    pub nll: f64,
    /// Scalar wall time over this mode's wall time.
    pub speedup: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const HEADER: &'static str = "model,n_events,mode,wall_time_s,nll_value,speedup";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.9},{:?},{:.3}",
                r.model,
                r.n_events,
                r.mode.label(),
                r.wall_time.as_secs_f64(),
                r.nll,
                r.speedup
            );
        }
        s
    }

    pub fn row(&self, mode: EvalMode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

pub fn median(mut times: Vec<Duration>) -> Duration {
    assert!(!times.is_empty(), "median of no measurements");
    times.sort();
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2
    }
}

/// Median wall time of `repeat` full NLL evaluations in `mode`, plus the NLL value.
pub fn time_nll(
    model: &mut Model,
    data: &DataSet,
    mode: EvalMode,
    repeat: usize,
) -> Result<(Duration, f64), EvalError> {
    // One untimed pass fills caches and buffers so every timed pass does the same work.
    let mut nll = model.nll(data, mode)?.value;
    let mut times = Vec::with_capacity(repeat);
    for _ in 0..repeat.max(1) {
        let t = Instant::now();
        nll = std::hint::black_box(model.nll(data, mode)?).value;
        times.push(t.elapsed());
    }
    Ok((median(times), nll))
}

pub fn run(model: &mut Model, name: &str, data: &DataSet, repeat: usize) -> Result<BenchReport, EvalError> {
    let mut rows = Vec::with_capacity(MODES.len());
    for mode in MODES {
        let (wall_time, nll) = time_nll(model, data, mode, repeat)?;
        rows.push(BenchRow {
            model: name.to_owned(),
            n_events: data.n_rows(),
            mode,
            wall_time,
            nll,
            speedup: 1.0,
        });
    }
    let scalar = rows[0].wall_time.as_secs_f64();
    for r in &mut rows {
        r.speedup = scalar / r.wall_time.as_secs_f64().max(f64::MIN_POSITIVE);
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        let ms = Duration::from_millis;
        assert_eq!(median(vec![ms(5), ms(1), ms(3)]), ms(3));
        assert_eq!(median(vec![ms(4), ms(1), ms(3), ms(2)]), Duration::from_micros(2500));
        assert_eq!(median(vec![ms(7)]), ms(7));
    }
}
