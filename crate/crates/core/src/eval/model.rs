//! A PDF bound into a computation graph, evaluable in scalar or batch mode.

use std::collections::HashSet;

use super::{normalization, EvalError, EvalMode, NllValue};
use crate::dataset::DataSet;
use crate::expr::Input;
use crate::fastmath::MathPolicy;
use crate::graph::{Graph, NodeId, NodeKind, NodeSpec};
use crate::pdfs::{self, mix_batch, mixture_coefficients, Bindings, ParamCheck, PdfKind, PdfSpec};

/// Graph nodes created for one PDF of the model tree, plus its batch output buffer.
struct Bound {
    spec: PdfSpec,
    unnorm: NodeId,
    norm: NodeId,
    norm_value: f64,
    components: Vec<Bound>,
    buffer: Vec<f64>,
}

/// A PDF over one observable, wired into a graph as
/// `prob = unnorm(x, params) / norm(params)`.
pub struct Model {
    graph: Graph,
    observable: NodeId,
    observable_name: String,
    range: (f64, f64),
    root: Bound,
    prob: NodeId,
    prob_buffer: Vec<f64>,
    log_buffer: Vec<f64>,
}

fn unique_name(graph: &Graph, base: String) -> String {
    if graph.find(&base).is_none() {
        return base;
    }
    (1..)
        .map(|i| format!("{base}#{i}"))
        .find(|n| graph.find(n).is_none())
        .expect("unbounded search")
}

/// Left-to-right mixture with coefficients derived from the fractions on the fly.
/// `pairs` holds `(unnorm, norm)` per component. Same arithmetic as [`mix_batch`] fed by
/// [`mixture_coefficients`].
fn mix_from_fractions(fractions: &[f64], pairs: &[f64]) -> f64 {
    let rest = fractions.iter().fold(1.0, |acc, f| acc - f);
    let coef = |j: usize| if j < fractions.len() { fractions[j] } else { rest };
    let mut acc = coef(0) * (pairs[0] / pairs[1]);
    for j in 1..pairs.len() / 2 {
        acc += coef(j) * (pairs[2 * j] / pairs[2 * j + 1]);
    }
    acc
}

fn bind(graph: &mut Graph, spec: &PdfSpec, range: (f64, f64), path: &str) -> Result<Bound, EvalError> {
    let params = spec.all_parameters();
    let norm_spec = spec.clone();
    let norm_ids = params.clone();
    let norm = graph.add_node(NodeSpec::function(
        unique_name(graph, format!("norm:{path}")),
        params,
        move |inputs: &[f64]| {
            let b = Bindings {
                ids: &norm_ids,
                values: inputs,
            };
            normalization(&norm_spec, range, &b).unwrap_or(f64::NAN)
        },
    ))?;

    let x = spec.observable;
    let mut components = Vec::new();
    let unnorm_name = unique_name(graph, format!("pdf:{path}"));
    let unnorm = match &spec.kind {
        PdfKind::Gaussian | PdfKind::Exponential | PdfKind::ChiSquare | PdfKind::JohnsonSU => {
            let s = spec.clone();
            let mut children = vec![x];
            children.extend_from_slice(&spec.parameters);
            graph.add_node(NodeSpec::pdf(unnorm_name, children, move |v: &[f64]| {
                s.shape_from(&v[1..])
                    .expect("built-in kind")
                    .eval(v[0], MathPolicy::Precise)
            }))?
        }
        PdfKind::Expression(e) => {
            let e = e.clone();
            graph.add_node(NodeSpec::pdf(unnorm_name, e.bindings.clone(), move |v: &[f64]| {
                e.program.eval_slots(v, MathPolicy::Precise)
            }))?
        }
        PdfKind::Custom(c) => {
            let c = c.clone();
            let mut children = vec![x];
            children.extend_from_slice(&spec.parameters);
            graph.add_node(NodeSpec::pdf(unnorm_name, children, move |v: &[f64]| {
                c.eval(v[0], &v[1..])
            }))?
        }
        PdfKind::WeightedSum(specs) => {
            let mut children = spec.parameters.clone();
            for (j, c) in specs.iter().enumerate() {
                let b = bind(graph, c, range, &format!("{path}.{j}:{}", c.name))?;
                children.push(b.unnorm);
                children.push(b.norm);
                components.push(b);
            }
            let nf = spec.parameters.len();
            graph.add_node(NodeSpec::pdf(unnorm_name, children, move |v: &[f64]| {
                mix_from_fractions(&v[..nf], &v[nf..])
            }))?
        }
    };
    Ok(Bound {
        spec: spec.clone(),
        unnorm,
        norm,
        norm_value: f64::NAN,
        components,
        buffer: Vec::new(),
    })
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("pdf", &self.root.spec.name)
            .field("observable", &self.observable_name)
            .field("range", &self.range)
            .field("nodes", &self.graph.len())
            .finish()
    }
}

impl Model {
    /// Adds the nodes for `spec` to `graph`. The spec's observable and parameters must already
    /// be nodes of `graph`.
    pub fn new(mut graph: Graph, spec: PdfSpec) -> Result<Self, EvalError> {
        spec.validate()?;
        let obs = graph.observable(spec.observable)?;
        for p in spec.all_parameters() {
            let kind = graph.node(p)?.kind();
            if kind != NodeKind::Parameter {
                return Err(EvalError::NotAParameter(graph.node(p)?.name().to_owned()));
            }
        }
        let range = (obs.lower, obs.upper);
        let root = bind(&mut graph, &spec, range, &spec.name.clone())?;
        let prob = graph.add_node(NodeSpec::function(
            unique_name(&graph, format!("prob:{}", spec.name)),
            vec![root.unnorm, root.norm],
            |v: &[f64]| v[0] / v[1],
        ))?;
        Ok(Self {
            graph,
            observable: spec.observable,
            observable_name: obs.name,
            range,
            root,
            prob,
            prob_buffer: Vec::new(),
            log_buffer: Vec::new(),
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn spec(&self) -> &PdfSpec {
        &self.root.spec
    }

    pub fn observable(&self) -> NodeId {
        self.observable
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn probability_node(&self) -> NodeId {
        self.prob
    }

    /// Normalization nodes of the model tree, root first.
    pub fn norm_nodes(&self) -> Vec<NodeId> {
        fn walk(b: &Bound, out: &mut Vec<NodeId>) {
            out.push(b.norm);
            b.components.iter().for_each(|c| walk(c, out));
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Total recomputations of all normalization nodes so far.
    pub fn normalization_evaluations(&self) -> u64 {
        self.norm_nodes()
            .into_iter()
            .map(|n| self.graph.node(n).map_or(0, |n| n.eval_count()))
            .sum()
    }

    /// Parameters the model reads, in first-use order.
    pub fn parameters(&self) -> Vec<NodeId> {
        self.root.spec.all_parameters()
    }

    pub fn set_parameter(&mut self, id: NodeId, value: f64) -> Result<(), EvalError> {
        Ok(self.graph.set_value(id, value)?)
    }

    pub fn set_error(&mut self, id: NodeId, error: f64) -> Result<(), EvalError> {
        Ok(self.graph.set_error(id, error)?)
    }

    pub fn set_constant(&mut self, id: NodeId, constant: bool) -> Result<(), EvalError> {
        Ok(self.graph.set_constant(id, constant)?)
    }

    pub fn check_params(&self) -> ParamCheck {
        pdfs::check_params(&self.root.spec, &self.graph)
    }

    /// Nodes whose value depends on the observable.
    pub fn observable_dependent_nodes(&self) -> Vec<NodeId> {
        let obs: HashSet<NodeId> = [self.observable].into_iter().collect();
        self.graph
            .ids()
            .filter(|&id| {
                self.graph.node(id).is_ok_and(|n| n.kind() != NodeKind::Observable)
                    && !self.graph.constant_branch(id, &obs)
            })
            .collect()
    }

    fn require_valid(&self) -> Result<(), EvalError> {
        match self.check_params() {
            ParamCheck::Ok => Ok(()),
            bad => Err(pdfs::PdfError::InvalidParams(bad).into()),
        }
    }

    /// Brings every normalization node up to date through the graph cache.
    fn refresh_norms(&mut self) -> Result<(), EvalError> {
        fn walk(graph: &mut Graph, b: &mut Bound, range: (f64, f64)) -> Result<(), EvalError> {
            let v = graph.evaluate_single(b.norm)?;
            if !(v.is_finite() && v > 0.0) {
                // Recompute directly to surface the underlying error.
                normalization(&b.spec, range, graph)?;
                return Err(EvalError::Normalization {
                    pdf: b.spec.name.clone(),
                    value: v,
                });
            }
            b.norm_value = v;
            for c in &mut b.components {
                walk(graph, c, range)?;
            }
            Ok(())
        }
        walk(&mut self.graph, &mut self.root, self.range)
    }

    fn column<'d>(&self, ds: &'d DataSet) -> Result<&'d [f64], EvalError> {
        Ok(ds.column(&self.observable_name)?)
    }

    /// Normalized probability of every entry.
    pub fn probabilities(&mut self, ds: &DataSet, mode: EvalMode) -> Result<Vec<f64>, EvalError> {
        match mode {
            EvalMode::Scalar => {
                self.require_valid()?;
                self.refresh_norms()?;
                let xs = self.column(ds)?;
                let mut out = Vec::with_capacity(xs.len());
                for &x in xs {
                    self.graph.set_observable(self.observable, x)?;
                    out.push(self.graph.evaluate_single(self.prob)?);
                }
                Ok(out)
            }
            EvalMode::Batch(policy) => {
                self.batch_probabilities(ds, policy)?;
                Ok(self.prob_buffer.clone())
            }
        }
    }

    /// Fills `prob_buffer`; returns the number of kernel invocations.
    fn batch_probabilities(&mut self, ds: &DataSet, policy: MathPolicy) -> Result<u64, EvalError> {
        self.require_valid()?;
        self.refresh_norms()?;
        let xs = ds.column(&self.observable_name)?;
        let mut kernels = run_bound(&mut self.root, &self.graph, xs, policy)?;
        let norm = self.root.norm_value;
        self.prob_buffer.resize(xs.len(), 0.0);
        for (p, &u) in self.prob_buffer.iter_mut().zip(&self.root.buffer) {
            *p = u / norm;
        }
        kernels += 1;
        Ok(kernels)
    }

    pub fn nll(&mut self, ds: &DataSet, mode: EvalMode) -> Result<NllValue, EvalError> {
        match mode {
            EvalMode::Scalar => self.nll_scalar(ds),
            EvalMode::Batch(policy) => self.nll_batch(ds, policy),
        }
    }

    /// Classic evaluation: every entry is written into the observable leaf and the probability
    /// node is re-evaluated through the graph.
    pub fn nll_scalar(&mut self, ds: &DataSet) -> Result<NllValue, EvalError> {
        self.require_valid()?;
        let before = self.graph.total_eval_count();
        self.refresh_norms()?;
        let xs = self.column(ds)?;
        let mut acc = 0.0f64;
        let mut first_invalid = None;
        for (i, &x) in xs.iter().enumerate() {
            self.graph.set_observable(self.observable, x)?;
            let p = self.graph.evaluate_single(self.prob)?;
            if first_invalid.is_none() && !(p > 0.0) {
                first_invalid = Some(i);
            }
            acc -= p.ln();
        }
        Ok(NllValue::new(
            acc,
            xs.len(),
            self.graph.total_eval_count() - before,
            first_invalid,
        ))
    }

    /// Batch evaluation: each PDF node computes all entries into its own buffer, then the
    /// logarithms are taken over the batch and summed left to right.
    pub fn nll_batch(&mut self, ds: &DataSet, policy: MathPolicy) -> Result<NllValue, EvalError> {
        let before = self.graph.total_eval_count();
        let kernels = self.batch_probabilities(ds, policy)?;
        let n = self.prob_buffer.len();
        self.log_buffer.resize(n, 0.0);
        match policy {
            MathPolicy::Precise => log_pass(&self.prob_buffer, &mut self.log_buffer, MathPolicy::Precise),
            MathPolicy::Fast => log_pass(&self.prob_buffer, &mut self.log_buffer, MathPolicy::Fast),
        }
        let mut acc = 0.0f64;
        for &l in &self.log_buffer {
            acc -= l;
        }
        let first_invalid = self.prob_buffer.iter().position(|p| !(*p > 0.0));
        Ok(NllValue::new(
            acc,
            n,
            kernels + 1 + (self.graph.total_eval_count() - before),
            first_invalid,
        ))
    }
}

#[inline(always)]
fn log_pass(probs: &[f64], out: &mut [f64], policy: MathPolicy) {
    for (o, &p) in out.iter_mut().zip(probs) {
        *o = policy.ln(p);
    }
}

/// Evaluates one model-tree node over `xs` into its buffer; returns kernel invocations.
fn run_bound(b: &mut Bound, graph: &Graph, xs: &[f64], policy: MathPolicy) -> Result<u64, EvalError> {
    b.buffer.resize(xs.len(), 0.0);
    let value = |id: NodeId| graph.node(id).map(|n| n.cached_value());
    let mut kernels = 1;
    match &b.spec.kind {
        PdfKind::Gaussian | PdfKind::Exponential | PdfKind::ChiSquare | PdfKind::JohnsonSU => {
            let values = b
                .spec
                .parameters
                .iter()
                .map(|&p| value(p))
                .collect::<Result<Vec<_>, _>>()?;
            let shape = b.spec.shape_from(&values).expect("built-in kind");
            shape.eval_batch(xs, &mut b.buffer, policy);
        }
        PdfKind::Expression(e) => {
            let inputs = e
                .bindings
                .iter()
                .enumerate()
                .map(|(slot, &id)| {
                    if Some(slot) == e.observable_slot {
                        Ok(Input::Column(xs))
                    } else {
                        value(id).map(Input::Scalar)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            e.program.eval_batch_slots(&inputs, &mut b.buffer, policy)?;
        }
        PdfKind::Custom(c) => {
            let params = b
                .spec
                .parameters
                .iter()
                .map(|&p| value(p))
                .collect::<Result<Vec<_>, _>>()?;
            c.eval_batch(xs, &params, &mut b.buffer)?;
        }
        PdfKind::WeightedSum(_) => {
            for c in &mut b.components {
                kernels += run_bound(c, graph, xs, policy)?;
            }
            let fractions = b
                .spec
                .parameters
                .iter()
                .map(|&p| value(p))
                .collect::<Result<Vec<_>, _>>()?;
            let coefs = mixture_coefficients(&fractions);
            let norms: Vec<f64> = b.components.iter().map(|c| c.norm_value).collect();
            let views: Vec<&[f64]> = b.components.iter().map(|c| c.buffer.as_slice()).collect();
            mix_batch(&coefs, &views, &norms, &mut b.buffer);
        }
    }
    Ok(kernels)
}
