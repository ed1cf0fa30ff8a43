//! Computation graph with per-node value caches.
//!
//! Nodes live in a flat table and refer to their inputs by [`NodeId`]. A node can only
//! reference nodes that already exist, so the graph is acyclic by construction. Every
//! node keeps the list of its clients (the nodes that read it) so that changing a leaf
//! can eagerly mark everything downstream as dirty.
//!
//! ```text
//!   x   mu  sigma        leaves (observable, parameters)
//!    \  |   /  \
//!    gauss    norm       norm only depends on parameters: a constant branch
//!        \    /
//!        prob
//! ```

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};

use thiserror::Error;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(0);

/// Handle of a node inside one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    graph: u32,
    index: u32,
}

impl NodeId {
    /// Dense position of the node in its graph's node table.
    pub fn index(self) -> usize {
        self.index as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Observable,
    Parameter,
    Function,
    Pdf,
}

/// Recomputes a node value from the current values of its children, in child order.
pub trait Compute: Send + Sync {
    fn compute(&self, inputs: &[f64]) -> f64;
}

impl<F> Compute for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn compute(&self, inputs: &[f64]) -> f64 {
        self(inputs)
    }
}

/// A measured quantity and the range its PDFs are normalized over.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Observable {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// A model quantity the minimizer may adjust within `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub constant: bool,
    /// Post-fit uncertainty; zero until a fit has run.
    pub error: f64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            constant: false,
            error: 0.0,
        }
    }

    pub fn constant(mut self) -> Self {
        self.constant = true;
        self
    }
}

/// Description of a node to insert with [`Graph::add_node`].
pub enum NodeSpec {
    Observable(Observable),
    Parameter(Parameter),
    Function {
        name: String,
        children: Vec<NodeId>,
        op: Box<dyn Compute>,
    },
    Pdf {
        name: String,
        children: Vec<NodeId>,
        op: Box<dyn Compute>,
    },
}

impl NodeSpec {
    pub fn function(name: impl Into<String>, children: Vec<NodeId>, op: impl Compute + 'static) -> Self {
        NodeSpec::Function {
            name: name.into(),
            children,
            op: Box::new(op),
        }
    }

    pub fn pdf(name: impl Into<String>, children: Vec<NodeId>, op: impl Compute + 'static) -> Self {
        NodeSpec::Pdf {
            name: name.into(),
            children,
            op: Box::new(op),
        }
    }

    fn name(&self) -> &str {
        match self {
            NodeSpec::Observable(o) => &o.name,
            NodeSpec::Parameter(p) => &p.name,
            NodeSpec::Function { name, .. } | NodeSpec::Pdf { name, .. } => name,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
    #[error("node {0} belongs to a different graph")]
    ForeignNode(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node `{0}` would depend on itself")]
    Cycle(String),
    #[error("value {value} of `{name}` is outside [{lower}, {upper}]")]
    OutOfRange {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid range [{lower}, {upper}] for `{name}`")]
    InvalidRange { name: String, lower: f64, upper: f64 },
    #[error("parameter `{0}` is constant")]
    ConstantParameter(String),
    #[error("node `{name}` is a {found:?}, expected {expected:?}")]
    WrongKind {
        name: String,
        expected: NodeKind,
        found: NodeKind,
    },
    #[error("leaf `{0}` has no value")]
    UnsetValue(String),
}

/// One entry of the node table.
pub struct Node {
    kind: NodeKind,
    name: String,
    children: Vec<NodeId>,
    clients: Vec<NodeId>,
    cached_value: f64,
    has_value: bool,
    dirty: bool,
    constant: bool,
    eval_count: u64,
    lower: f64,
    upper: f64,
    error: f64,
    op: Option<Box<dyn Compute>>,
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn clients(&self) -> &[NodeId] {
        &self.clients
    }

    pub fn cached_value(&self) -> f64 {
        self.cached_value
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// Number of recomputations of this node since it was created.
    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("children", &self.children)
            .field("cached_value", &self.cached_value)
            .field("dirty", &self.dirty)
            .field("eval_count", &self.eval_count)
            .finish()
    }
}

/// Single-owner directed acyclic computation graph.
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("id", &self.id)
            .field("nodes", &self.nodes)
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The id that the next successful [`Graph::add_node`] call will return.
    pub fn next_id(&self) -> NodeId {
        NodeId {
            graph: self.id,
            index: self.nodes.len() as u32,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(|index| NodeId { graph: self.id, index })
    }

    pub fn add_node(&mut self, spec: NodeSpec) -> Result<NodeId, GraphError> {
        let name = spec.name().to_owned();
        if self.find(&name).is_some() {
            return Err(GraphError::DuplicateName(name));
        }
        let id = self.next_id();
        let (kind, children, op, value, has_value, lower, upper, constant) = match spec {
            NodeSpec::Observable(o) => {
                check_range(&o.name, o.lower, o.upper, false)?;
                (NodeKind::Observable, vec![], None, 0.0, false, o.lower, o.upper, false)
            }
            NodeSpec::Parameter(p) => {
                check_range(&p.name, p.lower, p.upper, p.constant)?;
                if !(p.lower..=p.upper).contains(&p.value) {
                    return Err(GraphError::OutOfRange {
                        name: p.name,
                        value: p.value,
                        lower: p.lower,
                        upper: p.upper,
                    });
                }
                let (v, l, u, c) = (p.value, p.lower, p.upper, p.constant);
                (NodeKind::Parameter, vec![], None, v, true, l, u, c)
            }
            NodeSpec::Function { children, op, .. } => (
                NodeKind::Function,
                children,
                Some(op),
                0.0,
                false,
                f64::NAN,
                f64::NAN,
                false,
            ),
            NodeSpec::Pdf { children, op, .. } => {
                (NodeKind::Pdf, children, Some(op), 0.0, false, f64::NAN, f64::NAN, false)
            }
        };
        for &c in &children {
            if c == id {
                return Err(GraphError::Cycle(name));
            }
            self.check_id(c)?;
        }
        for &c in &children {
            let clients = &mut self.nodes[c.index()].clients;
            if !clients.contains(&id) {
                clients.push(id);
            }
        }
        self.nodes.push(Node {
            kind,
            name,
            children,
            clients: Vec::new(),
            cached_value: value,
            has_value,
            dirty: op.is_some(),
            constant,
            eval_count: 0,
            lower,
            upper,
            error: 0.0,
            op,
        });
        Ok(id)
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(|i| NodeId {
            graph: self.id,
            index: i as u32,
        })
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.check_id(id)?;
        Ok(&self.nodes[id.index()])
    }

    fn check_id(&self, id: NodeId) -> Result<(), GraphError> {
        if id.graph != self.id {
            Err(GraphError::ForeignNode(id))
        } else if id.index() >= self.nodes.len() {
            Err(GraphError::UnknownNode(id))
        } else {
            Ok(())
        }
    }

    fn expect_kind(&self, id: NodeId, expected: NodeKind) -> Result<&Node, GraphError> {
        let node = self.node(id)?;
        if node.kind != expected {
            return Err(GraphError::WrongKind {
                name: node.name.clone(),
                expected,
                found: node.kind,
            });
        }
        Ok(node)
    }

    /// Snapshot of a parameter node.
    pub fn parameter(&self, id: NodeId) -> Result<Parameter, GraphError> {
        let n = self.expect_kind(id, NodeKind::Parameter)?;
        Ok(Parameter {
            name: n.name.clone(),
            value: n.cached_value,
            lower: n.lower,
            upper: n.upper,
            constant: n.constant,
            error: n.error,
        })
    }

    pub fn observable(&self, id: NodeId) -> Result<Observable, GraphError> {
        let n = self.expect_kind(id, NodeKind::Observable)?;
        Ok(Observable::new(n.name.clone(), n.lower, n.upper))
    }

    /// All parameter nodes in insertion order.
    pub fn parameters(&self) -> Vec<NodeId> {
        self.ids()
            .filter(|id| self.nodes[id.index()].kind == NodeKind::Parameter)
            .collect()
    }

    /// Assigns a new value to a free parameter and dirties all of its transitive clients.
    ///
    /// Clients are dirtied even when `v` equals the current value.
    pub fn set_value(&mut self, id: NodeId, v: f64) -> Result<(), GraphError> {
        let node = self.expect_kind(id, NodeKind::Parameter)?;
        if node.constant {
            return Err(GraphError::ConstantParameter(node.name.clone()));
        }
        if !(v >= node.lower && v <= node.upper) {
            return Err(GraphError::OutOfRange {
                name: node.name.clone(),
                value: v,
                lower: node.lower,
                upper: node.upper,
            });
        }
        self.nodes[id.index()].cached_value = v;
        self.invalidate_clients(id.index());
        Ok(())
    }

    /// Loads a dataset value into an observable leaf. Observables carry no free/constant
    /// distinction; only their definition range is enforced.
    pub fn set_observable(&mut self, id: NodeId, v: f64) -> Result<(), GraphError> {
        let node = self.expect_kind(id, NodeKind::Observable)?;
        if !(v >= node.lower && v <= node.upper) {
            return Err(GraphError::OutOfRange {
                name: node.name.clone(),
                value: v,
                lower: node.lower,
                upper: node.upper,
            });
        }
        let node = &mut self.nodes[id.index()];
        node.cached_value = v;
        node.has_value = true;
        self.invalidate_clients(id.index());
        Ok(())
    }

    pub fn set_constant(&mut self, id: NodeId, constant: bool) -> Result<(), GraphError> {
        self.expect_kind(id, NodeKind::Parameter)?;
        self.nodes[id.index()].constant = constant;
        Ok(())
    }

    /// Stores a post-fit uncertainty on a parameter.
    pub fn set_error(&mut self, id: NodeId, error: f64) -> Result<(), GraphError> {
        self.expect_kind(id, NodeKind::Parameter)?;
        self.nodes[id.index()].error = error;
        Ok(())
    }

    fn invalidate_clients(&mut self, index: usize) {
        let mut stack: Vec<usize> = self.nodes[index].clients.iter().map(|c| c.index()).collect();
        while let Some(i) = stack.pop() {
            let node = &mut self.nodes[i];
            // A dirty node already has all of its clients dirty.
            if node.dirty {
                continue;
            }
            node.dirty = true;
            stack.extend(node.clients.iter().map(|c| c.index()));
        }
    }

    /// Current value of a node, recomputing dirty nodes in its subtree.
    pub fn evaluate_single(&mut self, id: NodeId) -> Result<f64, GraphError> {
        self.check_id(id)?;
        self.eval_index(id.index())
    }

    fn eval_index(&mut self, i: usize) -> Result<f64, GraphError> {
        let node = &self.nodes[i];
        if node.op.is_none() {
            return if node.has_value {
                Ok(node.cached_value)
            } else {
                Err(GraphError::UnsetValue(node.name.clone()))
            };
        }
        if !node.dirty {
            return Ok(node.cached_value);
        }
        let n = node.children.len();
        let mut inline = [0.0f64; 8];
        let mut spill = Vec::new();
        if n > inline.len() {
            spill.resize(n, 0.0);
        }
        for k in 0..n {
            let child = self.nodes[i].children[k].index();
            let v = self.eval_index(child)?;
            if n > inline.len() {
                spill[k] = v;
            } else {
                inline[k] = v;
            }
        }
        let inputs = if n > inline.len() { &spill[..] } else { &inline[..n] };
        let node = &mut self.nodes[i];
        let v = node.op.as_ref().expect("computed node").compute(inputs);
        node.cached_value = v;
        node.has_value = true;
        node.dirty = false;
        node.eval_count += 1;
        Ok(v)
    }

    /// Whether the subtree rooted at `id` avoids every node in `observables`.
    pub fn constant_branch(&self, id: NodeId, observables: &HashSet<NodeId>) -> bool {
        if self.check_id(id).is_err() {
            return false;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if observables.contains(&n) {
                return false;
            }
            if std::mem::replace(&mut seen[n.index()], true) {
                continue;
            }
            stack.extend_from_slice(&self.nodes[n.index()].children);
        }
        true
    }

    /// Every node reachable from `id` by following client edges, excluding `id`.
    pub fn transitive_clients(&self, id: NodeId) -> HashSet<NodeId> {
        let mut out = HashSet::new();
        let mut stack = self.nodes[id.index()].clients.clone();
        while let Some(c) = stack.pop() {
            if out.insert(c) {
                stack.extend_from_slice(&self.nodes[c.index()].clients);
            }
        }
        out
    }

    /// Sum of all per-node recomputation counters.
    pub fn total_eval_count(&self) -> u64 {
        self.nodes.iter().map(|n| n.eval_count).sum()
    }
}

fn check_range(name: &str, lower: f64, upper: f64, allow_equal: bool) -> Result<(), GraphError> {
    let ok = lower.is_finite() && upper.is_finite() && (lower < upper || (allow_equal && lower == upper));
    if ok {
        Ok(())
    } else {
        Err(GraphError::InvalidRange {
            name: name.to_owned(),
            lower,
            upper,
        })
    }
}
