use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::Config;

use ubfit::dataset::DataSet;
use ubfit::eval::{adaptive_simpson, normalization, EvalMode, Model, SimpsonOptions};
use ubfit::expr::{compile, parse, BinaryOp, ExprAst, Func};
use ubfit::fastmath::{fast_exp, fast_log, MathPolicy};
use ubfit::fit::{bound_inverse, bound_transform};
use ubfit::graph::{Graph, NodeId, NodeSpec, Observable, Parameter};
use ubfit::pdfs::{analytic_integral, eval_batch, eval_unnorm, PdfSpec};
use ubfit::sampling::sample;

// ---------------------------------------------------------------- graph

#[derive(Debug, Clone, Copy)]
enum Op {
    Add,
    Mul,
    SinPlus,
    Sub,
}

impl Op {
    fn apply(self, v: &[f64]) -> f64 {
        match self {
            Op::Add => v.iter().sum(),
            Op::Mul => v.iter().product(),
            Op::SinPlus => v.iter().map(|x| x.sin()).sum::<f64>() + 1.0,
            Op::Sub => v[0] - v[1..].iter().sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone)]
struct Dag {
    n_params: usize,
    /// Function nodes: op and children indices into the combined node list.
    functions: Vec<(Op, Vec<usize>)>,
}

fn dag() -> impl Strategy<Value = Dag> {
    (2usize..5, 1usize..12).prop_flat_map(|(n_params, n_fn)| {
        let fns: Vec<_> = (0..n_fn)
            .map(|i| {
                let avail = n_params + i;
                (
                    prop_oneof![Just(Op::Add), Just(Op::Mul), Just(Op::SinPlus), Just(Op::Sub)],
                    proptest::collection::vec(0..avail, 1..4),
                )
            })
            .collect();
        (Just(n_params), fns).prop_map(|(n_params, functions)| Dag { n_params, functions })
    })
}

#[derive(Debug, Clone)]
enum Action {
    Set(usize, f64),
    Eval(usize),
}

fn actions() -> impl Strategy<Value = Vec<Action>> {
    proptest::collection::vec(
        prop_oneof![
            (0usize..64, -3.0f64..3.0).prop_map(|(i, v)| Action::Set(i, v)),
            (0usize..64).prop_map(Action::Eval),
        ],
        1..60,
    )
}

fn build(dag: &Dag) -> (Graph, Vec<NodeId>) {
    let mut g = Graph::new();
    let mut ids = Vec::new();
    for i in 0..dag.n_params {
        ids.push(
            g.add_node(NodeSpec::Parameter(Parameter::new(format!("p{i}"), 0.5, -3.0, 3.0)))
                .unwrap(),
        );
    }
    for (j, (op, children)) in dag.functions.iter().enumerate() {
        let op = *op;
        let kids = children.iter().map(|&c| ids[c]).collect();
        ids.push(
            g.add_node(NodeSpec::function(format!("f{j}"), kids, move |v: &[f64]| op.apply(v)))
                .unwrap(),
        );
    }
    (g, ids)
}

fn oracle(dag: &Dag, values: &[f64], node: usize) -> f64 {
    if node < dag.n_params {
        return values[node];
    }
    let (op, children) = &dag.functions[node - dag.n_params];
    let v: Vec<f64> = children.iter().map(|&c| oracle(dag, values, c)).collect();
    op.apply(&v)
}

fn oracle_clients(dag: &Dag, node: usize) -> HashSet<usize> {
    let mut out = HashSet::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        for (j, (_, children)) in dag.functions.iter().enumerate() {
            let id = dag.n_params + j;
            if children.contains(&n) && out.insert(id) {
                stack.push(id);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(Config::with_cases(256))]

    #[test]
    fn graph_cache_matches_cache_free_oracle(dag in dag(), acts in actions()) {
        let (mut g, ids) = build(&dag);
        let mut values = vec![0.5; dag.n_params];
        for a in acts {
            match a {
                Action::Set(i, v) => {
                    let i = i % dag.n_params;
                    g.set_value(ids[i], v).unwrap();
                    values[i] = v;
                }
                Action::Eval(i) => {
                    let i = i % ids.len();
                    let got = g.evaluate_single(ids[i]).unwrap();
                    let want = oracle(&dag, &values, i);
                    prop_assert!(got.to_bits() == want.to_bits() || (got.is_nan() && want.is_nan()),
                        "node {i}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn set_value_dirties_exactly_the_transitive_clients(dag in dag(), p in 0usize..8, v in -3.0f64..3.0) {
        let (mut g, ids) = build(&dag);
        for &id in &ids {
            g.evaluate_single(id).unwrap();
        }
        let p = p % dag.n_params;
        g.set_value(ids[p], v).unwrap();
        let dirty: HashSet<usize> = (0..ids.len()).filter(|&i| g.node(ids[i]).unwrap().is_dirty()).collect();
        prop_assert_eq!(dirty, oracle_clients(&dag, p));
    }
}

// ---------------------------------------------------------------- dataset

proptest! {
    #[test]
    fn csv_round_trip_is_bitwise(rows in proptest::collection::vec((-1e6f64..1e6, -1.0f64..1.0), 0..200)) {
        let schema = [Observable::new("x", -1e6, 1e6), Observable::new("y", -1.0, 1.0)];
        let cols = vec![rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect::<Vec<_>>()];
        let ds = DataSet::from_columns(&schema, cols).unwrap();
        let back = DataSet::from_csv_str(&ds.to_csv_string(), &schema).unwrap();
        prop_assert_eq!(back.n_rows(), ds.n_rows());
        for name in ["x", "y"] {
            let a: Vec<u64> = ds.column(name).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.column(name).unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
        for i in 0..ds.n_rows() {
            let row = ds.row(i).unwrap();
            prop_assert_eq!(row["x"].to_bits(), ds.column("x").unwrap()[i].to_bits());
            prop_assert_eq!(row["y"].to_bits(), ds.column("y").unwrap()[i].to_bits());
        }
    }
}

// ---------------------------------------------------------------- fastmath

proptest! {
    #[test]
    fn fast_exp_is_monotone_on_sorted_grids(mut xs in proptest::collection::vec(-745.0f64..709.0, 2..200)) {
        xs.sort_by(f64::total_cmp);
        for w in xs.windows(2) {
            prop_assert!(fast_exp(w[0]) <= fast_exp(w[1]), "{} {}", w[0], w[1]);
        }
    }

    #[test]
    fn fast_math_is_deterministic(x in -700.0f64..700.0, y in 1e-300f64..1e300) {
        prop_assert_eq!(fast_exp(x).to_bits(), fast_exp(x).to_bits());
        prop_assert_eq!(fast_log(y).to_bits(), fast_log(y).to_bits());
    }
}

// ---------------------------------------------------------------- pdfs

struct Pdfs {
    g: Graph,
    x: NodeId,
    range: (f64, f64),
}

impl Pdfs {
    fn new(lo: f64, hi: f64) -> Self {
        let mut g = Graph::new();
        let x = g.add_node(NodeSpec::Observable(Observable::new("x", lo, hi))).unwrap();
        Self { g, x, range: (lo, hi) }
    }

    fn p(&mut self, v: f64) -> NodeId {
        let name = format!("p{}", self.g.len());
        self.g
            .add_node(NodeSpec::Parameter(Parameter::new(name, v, -1e3, 1e3)))
            .unwrap()
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Gaussian(f64, f64),
    Exponential(f64),
    ChiSquare(f64),
    Johnson(f64, f64, f64, f64),
    Mixture(f64, f64, f64, f64),
}

fn kind() -> impl Strategy<Value = Kind> {
    kind_with_chi_square(1.0)
}

/// Densities accept/reject can sample: a chi-square with k < 2 is unbounded at 0.
fn sampleable() -> impl Strategy<Value = Kind> {
    kind_with_chi_square(2.0)
}

fn kind_with_chi_square(k_min: f64) -> impl Strategy<Value = Kind> {
    prop_oneof![
        (-3.0f64..3.0, 0.3f64..3.0).prop_map(|(m, s)| Kind::Gaussian(m, s)),
        (-2.0f64..2.0).prop_map(Kind::Exponential),
        (k_min..12.0).prop_map(Kind::ChiSquare),
        (-2.0f64..2.0, 0.5f64..2.0, -1.0f64..1.0, 0.5f64..2.5).prop_map(|(a, b, c, d)| Kind::Johnson(a, b, c, d)),
        (-2.0f64..2.0, 0.3f64..2.0, -1.0f64..-0.05, 0.05f64..0.95).prop_map(|(a, b, c, d)| Kind::Mixture(a, b, c, d)),
    ]
}

impl Kind {
    /// Builds the pdf over a range suited to its support.
    fn build(&self) -> (Pdfs, PdfSpec) {
        let (lo, hi) = match self {
            Kind::ChiSquare(_) => (0.0, 40.0),
            _ => (-6.0, 6.0),
        };
        let mut f = Pdfs::new(lo, hi);
        let x = f.x;
        let spec = match *self {
            Kind::Gaussian(m, s) => {
                let (m, s) = (f.p(m), f.p(s));
                PdfSpec::gaussian(x, m, s)
            }
            Kind::Exponential(c) => {
                let c = f.p(c);
                PdfSpec::exponential(x, c)
            }
            Kind::ChiSquare(k) => {
                let k = f.p(k);
                PdfSpec::chi_square(x, k)
            }
            Kind::Johnson(a, b, c, d) => {
                let ids = [f.p(a), f.p(b), f.p(c), f.p(d)];
                PdfSpec::johnson_su(x, ids[0], ids[1], ids[2], ids[3])
            }
            Kind::Mixture(m, s, c, frac) => {
                let (m, s, c, frac) = (f.p(m), f.p(s), f.p(c), f.p(frac));
                PdfSpec::weighted_sum(vec![PdfSpec::gaussian(x, m, s), PdfSpec::exponential(x, c)], vec![frac]).unwrap()
            }
        };
        (f, spec)
    }
}

fn grid(range: (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * (i as f64 + 0.37) / n as f64)
        .collect()
}

proptest! {
    #![proptest_config(Config::with_cases(64))]

    #[test]
    fn unnormalized_density_is_non_negative(k in kind()) {
        let (f, spec) = k.build();
        for x in grid(f.range, 300) {
            let v = eval_unnorm(&spec, x, f.range, &f.g).unwrap();
            prop_assert!(v >= 0.0, "{k:?} at {x}: {v}");
        }
    }

    #[test]
    fn analytic_integrals_match_simpson(k in kind(), lo in -5.0f64..0.0, width in 0.5f64..5.0) {
        let (f, spec) = k.build();
        let range = match k {
            Kind::ChiSquare(_) => (lo + 5.0, lo + 5.0 + width),
            _ => (lo, lo + width),
        };
        if let Some(exact) = analytic_integral(&spec, range, &f.g).unwrap() {
            if matches!(k, Kind::Mixture(..)) {
                // Mixtures are normalized by construction; integrate the normalized density.
                let norm = normalization(&spec, range, &f.g).unwrap();
                let numeric = adaptive_simpson(
                    |x| eval_unnorm(&spec, x, range, &f.g).unwrap() / norm,
                    range.0, range.1, SimpsonOptions::default()).unwrap();
                prop_assert!((numeric - 1.0).abs() < 1e-8, "{numeric}");
            } else {
                let numeric = adaptive_simpson(
                    |x| eval_unnorm(&spec, x, range, &f.g).unwrap(),
                    range.0, range.1, SimpsonOptions::default()).unwrap();
                // Far-tail ranges with a negligible integral stop at the absolute tolerance floor.
                let tol = 1e-8 * exact.abs() + 1e-9 * width;
                prop_assert!((numeric - exact).abs() <= tol, "{k:?}: {numeric} vs {exact}");
            }
        }
    }

    #[test]
    fn batch_equals_scalar(k in kind()) {
        let (f, spec) = k.build();
        let xs = grid(f.range, 257);
        let mut precise = vec![0.0; xs.len()];
        let mut fast = vec![0.0; xs.len()];
        eval_batch(&spec, &xs, f.range, &f.g, &mut precise, MathPolicy::Precise).unwrap();
        eval_batch(&spec, &xs, f.range, &f.g, &mut fast, MathPolicy::Fast).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let s = eval_unnorm(&spec, x, f.range, &f.g).unwrap();
            prop_assert_eq!(precise[i].to_bits(), s.to_bits());
            if s != 0.0 {
                // In far tails a last-bit difference in the exponent is amplified by |ln p|.
                let tol = 1e-14f64.max(1e-15 * s.ln().abs());
                prop_assert!(((fast[i] - s) / s).abs() <= tol, "{k:?} at {x}: {} vs {s}", fast[i]);
            } else {
                prop_assert_eq!(fast[i], 0.0);
            }
        }
    }
}

// ---------------------------------------------------------------- eval

fn dataset(range: (f64, f64), xs: &[f64]) -> DataSet {
    DataSet::from_columns(&[Observable::new("x", range.0, range.1)], vec![xs.to_vec()]).unwrap()
}

proptest! {
    #![proptest_config(Config::with_cases(48))]

    #[test]
    fn nll_mode_parity(k in sampleable(), seed in 0u64..1000, n in 0usize..3000) {
        let (f, spec) = k.build();
        let obs = f.g.observable(f.x).unwrap();
        let data = sample(&spec, &obs, &f.g, n, seed).unwrap().data;
        let mut model = Model::new(f.g, spec).unwrap();
        let s = model.nll(&data, EvalMode::Scalar).unwrap();
        let p = model.nll(&data, EvalMode::Batch(MathPolicy::Precise)).unwrap();
        let q = model.nll(&data, EvalMode::Batch(MathPolicy::Fast)).unwrap();
        prop_assert_eq!(s.value.to_bits(), p.value.to_bits());
        if n > 0 {
            prop_assert!(((q.value - s.value) / s.value).abs() <= 2e-14, "{} vs {}", q.value, s.value);
        } else {
            prop_assert_eq!(q.value, 0.0);
        }
        let ps = model.probabilities(&data, EvalMode::Scalar).unwrap();
        let pf = model.probabilities(&data, EvalMode::Batch(MathPolicy::Fast)).unwrap();
        for (a, b) in ps.iter().zip(&pf) {
            prop_assert!(((a - b) / a).abs() <= 1e-14);
        }
    }

    #[test]
    fn normalized_density_integrates_to_one(k in kind()) {
        let (f, spec) = k.build();
        let range = f.range;
        let mut model = Model::new(f.g, spec).unwrap();
        let xs = grid(range, 1);
        model.nll(&dataset(range, &xs), EvalMode::Scalar).unwrap();
        let spec = model.spec().clone();
        let norm = normalization(&spec, range, model.graph()).unwrap();
        let total = adaptive_simpson(
            |x| eval_unnorm(&spec, x, range, model.graph()).unwrap() / norm,
            range.0, range.1, SimpsonOptions::default()).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-8, "{total}");
    }
}

#[test]
fn call_accounting_scales_as_specified() {
    let build = || {
        let (f, spec) = Kind::Mixture(0.2, 1.0, -0.5, 0.6).build();
        let range = f.range;
        (Model::new(f.g, spec).unwrap(), range)
    };
    let (mut model, range) = build();
    let small = dataset(range, &grid(range, 1_000));
    let large = dataset(range, &grid(range, 10_000));
    let warm = model.nll(&small, EvalMode::Batch(MathPolicy::Fast)).unwrap();
    let b1 = model.nll(&small, EvalMode::Batch(MathPolicy::Fast)).unwrap();
    // The first call also computes one normalization per pdf.
    assert_eq!(warm.n_evaluations, b1.n_evaluations + model.norm_nodes().len() as u64);
    let b2 = model.nll(&large, EvalMode::Batch(MathPolicy::Fast)).unwrap();
    assert_eq!(b1.n_evaluations, b2.n_evaluations);
    let s1 = model.nll(&small, EvalMode::Scalar).unwrap();
    let s2 = model.nll(&large, EvalMode::Scalar).unwrap();
    let per_entry = model.observable_dependent_nodes().len() as u64;
    assert_eq!(s1.n_evaluations, 1_000 * per_entry);
    assert_eq!(s2.n_evaluations, 10_000 * per_entry);
    assert_eq!(model.normalization_evaluations(), model.norm_nodes().len() as u64);
}

// ---------------------------------------------------------------- expr

const VARS: [&str; 3] = ["x", "mu", "s"];

fn ast() -> impl Strategy<Value = ExprAst> {
    let leaf = prop_oneof![
        prop_oneof![
            Just(0.0),
            Just(1.0),
            Just(2.0),
            Just(3.0),
            Just(4.0),
            Just(0.5),
            Just(1e-7),
            Just(12345.678),
            0.0f64..10.0
        ]
        .prop_map(ExprAst::Number),
        (0usize..3).prop_map(|i| ExprAst::var(VARS[i])),
    ];
    leaf.prop_recursive(6, 64, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(ExprAst::neg),
            (
                prop_oneof![
                    Just(BinaryOp::Add),
                    Just(BinaryOp::Sub),
                    Just(BinaryOp::Mul),
                    Just(BinaryOp::Div),
                    Just(BinaryOp::Pow)
                ],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, l, r)| ExprAst::binary(op, l, r)),
            (0usize..8, inner.clone()).prop_map(|(i, a)| ExprAst::Call(Func::ALL[i], vec![a])),
            (inner.clone(), inner).prop_map(|(a, b)| ExprAst::Call(Func::Pow, vec![a, b])),
        ]
    })
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

proptest! {
    #![proptest_config(Config::with_cases(1000))]

    #[test]
    fn printed_expressions_reparse_identically(tree in ast()) {
        let text = tree.to_string();
        let back = parse(&text, &VARS).unwrap();
        prop_assert_eq!(back, tree);
    }

    #[test]
    fn compiled_program_equals_tree_walk(tree in ast(), x in -5.0f64..5.0, mu in -2.0f64..2.0, s in 0.1f64..3.0) {
        let program = compile(&tree);
        let values: HashMap<&str, f64> = [("x", x), ("mu", mu), ("s", s)].into_iter().collect();
        let want = tree.eval_tree(&|n| values[n]);
        let got = program.eval(&values, MathPolicy::Precise).unwrap();
        prop_assert!(same(got, want), "{tree}: {got} vs {want}");

        let cols: Vec<f64> = (0..9).map(|i| x + i as f64 * 0.25).collect();
        let mut inputs = HashMap::new();
        inputs.insert("x", ubfit::expr::Input::Column(&cols));
        inputs.insert("mu", ubfit::expr::Input::Scalar(mu));
        inputs.insert("s", ubfit::expr::Input::Scalar(s));
        let mut out = vec![0.0; cols.len()];
        program.eval_batch(&inputs, &mut out, MathPolicy::Precise).unwrap();
        for (i, &xi) in cols.iter().enumerate() {
            let w = tree.eval_tree(&|n| if n == "x" { xi } else { values[n] });
            prop_assert!(same(out[i], w), "{tree} at x={xi}: {} vs {w}", out[i]);
        }
    }
}

// ---------------------------------------------------------------- fit / sampling

proptest! {
    #[test]
    fn bound_transform_round_trip(lo in -100.0f64..100.0, width in 1e-3f64..100.0, t in 0.001f64..0.999) {
        let hi = lo + width;
        let p = lo + t * width;
        prop_assume!(lo < p && p < hi);
        let u = bound_inverse(p, lo, hi).unwrap();
        let back = bound_transform(u, lo, hi);
        prop_assert!((back - p).abs() <= 1e-12 * p.abs().max(1.0), "{p} -> {back}");
    }

    #[test]
    fn transform_stays_in_range(u in -100.0f64..100.0, lo in -10.0f64..10.0, width in 1e-6f64..20.0) {
        let p = bound_transform(u, lo, lo + width);
        prop_assert!(lo <= p && p <= lo + width);
    }
}

proptest! {
    #![proptest_config(Config::with_cases(16))]

    #[test]
    fn sampling_is_deterministic(k in sampleable(), seed in any::<u64>()) {
        let (f, spec) = k.build();
        let obs = f.g.observable(f.x).unwrap();
        let a = sample(&spec, &obs, &f.g, 300, seed).unwrap().data;
        let b = sample(&spec, &obs, &f.g, 300, seed).unwrap().data;
        prop_assert_eq!(a.to_csv_string(), b.to_csv_string());
        prop_assert!(a.column("x").unwrap().iter().all(|v| obs.contains(*v)));
    }
}

#[test]
fn custom_scalar_pdf_goes_through_the_fallback() {
    struct Triangle;
    impl ubfit::pdfs::ScalarPdf for Triangle {
        fn name(&self) -> &str {
            "triangle"
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            (p[0] - x.abs()).max(0.0)
        }
    }
    let mut f = Pdfs::new(-2.0, 2.0);
    let (x, a) = (f.x, f.p(1.5));
    let spec = PdfSpec::custom(Arc::new(Triangle), x, vec![a]);
    let mut model = Model::new(f.g, spec).unwrap();
    let data = dataset((-2.0, 2.0), &[0.0, 0.5, -1.0]);
    let s = model.nll(&data, EvalMode::Scalar).unwrap();
    let b = model.nll(&data, EvalMode::Batch(MathPolicy::Fast)).unwrap();
    assert_eq!(s.value.to_bits(), b.value.to_bits());
    // Integral of the triangle is a^2 = 2.25.
    let want: f64 = [1.5f64, 1.0, 0.5].iter().map(|v| -(v / 2.25).ln()).sum();
    assert!((s.value - want).abs() < 1e-9, "{} vs {want}", s.value);
}
