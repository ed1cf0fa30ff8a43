mod common;

use std::sync::{Arc, Mutex};

use common::{cases, generate, model, Setup};
use ubfit::dataset::DataSet;
use ubfit::eval::{EvalMode, Model};
use ubfit::fastmath::MathPolicy;
use ubfit::fit::{fit_to, FitOptions, FitResult};
use ubfit::pdfs::{PdfSpec, ScalarPdf};

const FAST: EvalMode = EvalMode::Batch(MathPolicy::Fast);

#[test]
fn fits_close_on_every_pdf() {
    for (i, case) in cases().iter().enumerate() {
        let data = generate(case, 20_000, 31 + i as u64);
        let mut m = model(case, true);
        let r = fit_to(&mut m, &data, &FitOptions::with_mode(FAST)).unwrap();
        assert!(r.converged && r.uncertainties_valid, "{}", case.name);
        for &(name, truth, ..) in &case.params {
            let p = r.parameter(name).unwrap();
            assert!(p.uncertainty > 0.0, "{} {name}", case.name);
            let pull = (p.value - truth) / p.uncertainty;
            assert!(
                pull.abs() < 5.0,
                "{} {name}: {} +- {} vs {truth}",
                case.name,
                p.value,
                p.uncertainty
            );
        }
    }
}

/// Mean of an exponential with slope `c` truncated to [lo, hi].
fn truncated_mean(c: f64, lo: f64, hi: f64) -> f64 {
    let (a, b) = ((c * lo).exp(), (c * hi).exp());
    (hi * b - lo * a) / (b - a) - 1.0 / c
}

#[test]
fn exponential_slope_matches_moment_equation() {
    // For an exponential family the MLE solves mean(data) = E_c[x]; solve that by bisection.
    let (lo, hi) = (0.0, 5.0);
    let xs = vec![0.1, 0.4, 0.45, 0.9, 1.3, 1.7, 2.2, 0.05, 0.3, 3.9, 0.75, 1.1];
    let target = common::mean(&xs);
    let (mut a, mut b) = (-10.0, -1e-6);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if truncated_mean(m, lo, hi) > target {
            b = m;
        } else {
            a = m;
        }
    }
    let oracle = 0.5 * (a + b);

    let mut s = Setup::new(lo, hi);
    let c = s.param("c", -0.1, -10.0, 10.0);
    let obs = s.obs.clone();
    let mut m = Model::new(s.graph, PdfSpec::exponential(s.x, c)).unwrap();
    let data = DataSet::from_columns(&[obs], vec![xs]).unwrap();
    for mode in [EvalMode::Scalar, FAST] {
        m.set_parameter(c, -0.1).unwrap();
        let opts = FitOptions {
            tolerance: 1e-13,
            ..FitOptions::with_mode(mode)
        };
        let r = fit_to(&mut m, &data, &opts).unwrap();
        let got = r.parameter("c").unwrap().value;
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }
}

/// Gaussian shape that records every parameter vector it is evaluated with.
struct Recorder {
    seen: Mutex<Vec<(f64, f64)>>,
}

impl ScalarPdf for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        self.seen.lock().unwrap().push((p[0], p[1]));
        let z = (x - p[0]) / p[1];
        (-0.5 * z * z).exp()
    }
}

#[test]
fn minimizer_never_leaves_parameter_bounds() {
    let rec = Arc::new(Recorder {
        seen: Mutex::new(Vec::new()),
    });
    let mut s = Setup::new(-4.0, 4.0);
    let mu = s.param("mu", 0.9, 0.8, 3.0);
    let sigma = s.param("sigma", 1.5, 0.5, 2.0);
    let obs = s.obs.clone();
    let mut m = Model::new(s.graph, PdfSpec::custom(rec.clone(), s.x, vec![mu, sigma])).unwrap();
    // The data prefer mu = 0, below the lower bound, so the fit presses against it.
    let xs: Vec<f64> = (0..400).map(|i| -3.0 + 6.0 * (i as f64 + 0.5) / 400.0).collect();
    let data = DataSet::from_columns(&[obs], vec![xs]).unwrap();
    let r = fit_to(&mut m, &data, &FitOptions::with_mode(FAST)).unwrap();
    let seen = rec.seen.lock().unwrap();
    assert!(seen.len() > 1000);
    for &(a, b) in seen.iter() {
        assert!((0.8..=3.0).contains(&a) && (0.5..=2.0).contains(&b), "({a}, {b})");
    }
    assert!(r.parameter("mu").unwrap().value - 0.8 < 1e-3);
}

fn relative_gap(a: &FitResult, b: &FitResult) -> f64 {
    a.parameters
        .iter()
        .zip(&b.parameters)
        .map(|(p, q)| (p.value - q.value).abs() / p.value.abs().max(p.uncertainty))
        .fold(0.0, f64::max)
}

#[test]
fn mixture_fit_agrees_between_scalar_and_fast_batch() {
    let case = &cases()[4];
    let data = generate(case, 50_000, 77);
    let run = |mode| {
        let mut m = model(case, true);
        fit_to(&mut m, &data, &FitOptions::with_mode(mode)).unwrap()
    };
    let scalar = run(EvalMode::Scalar);
    let fast = run(FAST);
    assert!(scalar.converged && fast.converged);
    let gap = relative_gap(&scalar, &fast);
    assert!(gap <= 1e-5, "{gap}");
    assert!((scalar.nll_min - fast.nll_min).abs() <= 1e-9 * scalar.nll_min.abs());
}
