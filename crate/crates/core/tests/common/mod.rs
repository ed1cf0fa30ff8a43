#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

use ubfit::dataset::DataSet;
use ubfit::eval::{adaptive_simpson, normalization, Model, SimpsonOptions};
use ubfit::graph::{Graph, NodeId, NodeSpec, Observable, Parameter};
use ubfit::pdfs::{eval_unnorm, ParamSource, PdfSpec};
use ubfit::sampling::sample;

pub struct Setup {
    pub graph: Graph,
    pub obs: Observable,
    pub x: NodeId,
}

impl Setup {
    pub fn new(lo: f64, hi: f64) -> Self {
        let mut graph = Graph::new();
        let obs = Observable::new("x", lo, hi);
        let x = graph.add_node(NodeSpec::Observable(obs.clone())).unwrap();
        Self { graph, obs, x }
    }

    pub fn param(&mut self, name: &str, value: f64, lo: f64, hi: f64) -> NodeId {
        self.graph
            .add_node(NodeSpec::Parameter(Parameter::new(name, value, lo, hi)))
            .unwrap()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.obs.lower, self.obs.upper)
    }
}

pub struct Case {
    pub name: &'static str,
    pub range: (f64, f64),
    /// (name, truth, start, lower, upper)
    pub params: Vec<(&'static str, f64, f64, f64, f64)>,
    pub build: fn(NodeId, &[NodeId]) -> PdfSpec,
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "gaussian",
            range: (-10.0, 10.0),
            params: vec![("mu", 0.7, 0.0, -5.0, 5.0), ("sigma", 1.4, 1.0, 0.1, 5.0)],
            build: |x, p| PdfSpec::gaussian(x, p[0], p[1]),
        },
        Case {
            name: "exponential",
            range: (0.0, 8.0),
            params: vec![("c", -0.8, -0.3, -5.0, 1.0)],
            build: |x, p| PdfSpec::exponential(x, p[0]),
        },
        Case {
            name: "chi-square",
            range: (0.0, 40.0),
            params: vec![("k", 5.0, 3.5, 0.5, 20.0)],
            build: |x, p| PdfSpec::chi_square(x, p[0]),
        },
        Case {
            name: "johnson",
            range: (-10.0, 10.0),
            params: vec![
                ("mu", 0.4, 0.0, -3.0, 3.0),
                ("lambda", 1.2, 1.0, 0.2, 5.0),
                ("gamma", -0.5, 0.0, -3.0, 3.0),
                ("delta", 1.6, 1.0, 0.3, 5.0),
            ],
            build: |x, p| PdfSpec::johnson_su(x, p[0], p[1], p[2], p[3]),
        },
        Case {
            name: "mixture",
            range: (-5.0, 5.0),
            params: vec![
                ("mu", 0.5, 0.2, -2.0, 2.0),
                ("sigma", 0.7, 1.0, 0.1, 3.0),
                ("c", -0.4, -0.2, -3.0, 0.0),
                ("f", 0.35, 0.5, 0.0, 1.0),
            ],
            build: |x, p| {
                PdfSpec::weighted_sum(
                    vec![PdfSpec::gaussian(x, p[0], p[1]), PdfSpec::exponential(x, p[2])],
                    vec![p[3]],
                )
                .unwrap()
            },
        },
    ]
}

pub fn model(case: &Case, start: bool) -> Model {
    let mut s = Setup::new(case.range.0, case.range.1);
    let ids: Vec<NodeId> = case
        .params
        .iter()
        .map(|&(n, truth, st, lo, hi)| s.param(n, if start { st } else { truth }, lo, hi))
        .collect();
    let spec = (case.build)(s.x, &ids);
    Model::new(s.graph, spec).unwrap()
}

pub fn generate(case: &Case, n: usize, seed: u64) -> DataSet {
    let truth = model(case, false);
    let obs = truth.graph().observable(truth.observable()).unwrap().clone();
    sample(truth.spec(), &obs, truth.graph(), n, seed).unwrap().data
}

/// Pearson chi-square p-value of `xs` against the normalized pdf in `bins` equal-width bins.
/// Neighbouring bins are merged until each expects at least 5 events.
pub fn gof_pvalue(spec: &PdfSpec, params: &dyn ParamSource, range: (f64, f64), xs: &[f64], bins: usize) -> f64 {
    let (lo, hi) = range;
    let width = (hi - lo) / bins as f64;
    let norm = normalization(spec, range, params).unwrap();
    let n = xs.len() as f64;
    let mut observed = vec![0.0; bins];
    for &x in xs {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        observed[i] += 1.0;
    }
    let expected: Vec<f64> = (0..bins)
        .map(|i| {
            let a = lo + i as f64 * width;
            let b = if i + 1 == bins { hi } else { a + width };
            let opts = SimpsonOptions {
                panels: 8,
                ..SimpsonOptions::default()
            };
            n * adaptive_simpson(|x| eval_unnorm(spec, x, range, params).unwrap(), a, b, opts).unwrap() / norm
        })
        .collect();
    let mut stat = 0.0;
    let mut cells = 0;
    let (mut o, mut e) = (0.0, 0.0);
    for i in 0..bins {
        o += observed[i];
        e += expected[i];
        if e >= 5.0 {
            stat += (o - e) * (o - e) / e;
            cells += 1;
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 {
        stat += (o - e) * (o - e) / e;
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    ks_p(d, na * nb / (na + nb))
}

pub fn ks_uniform(xs: &[f64], lo: f64, hi: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    ks_p(d, n)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn stddev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
