//! Interaction graphs between neuronal states.
//!
//! A topology is a list of states (index 0 is the clamped input, the last one the
//! readout) and a list of edges, each carrying one weight tensor that is shared by
//! both directions of the interaction. Energy and updates are derived generically
//! from this description.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    ReluAlpha { alpha: f64 },
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub index: usize,
    #[serde(default)]
    pub name: String,
    /// `[channels, height, width]`, or `[dim]` for dense states.
    pub shape: Vec<usize>,
    pub activation: Activation,
}

impl StateSpec {
    /// Shape normalized to `(channels, height, width)`.
    pub fn chw(&self) -> [usize; 3] {
        match self.shape.as_slice() {
            [d] => [*d, 1, 1],
            [c, h, w] => [*c, *h, *w],
            _ => [0, 0, 0],
        }
    }

    pub fn numel(&self) -> usize {
        self.chw().iter().product()
    }

    /// Full state tensor shape for a batch.
    pub fn batch_shape(&self, batch: usize) -> [usize; 4] {
        let [c, h, w] = self.chw();
        [batch, c, h, w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOp {
    Conv3x3,
    Conv1x1Skip,
    Dense,
    /// Parameter-free skip interaction (channels must match).
    IdentitySkip,
}

impl EdgeOp {
    pub fn is_skip(self) -> bool {
        matches!(self, EdgeOp::Conv1x1Skip | EdgeOp::IdentitySkip)
    }

    pub fn is_trainable(self) -> bool {
        !matches!(self, EdgeOp::IdentitySkip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from_state: usize,
    pub to_state: usize,
    pub op: EdgeOp,
    #[serde(default)]
    pub pooled: bool,
    #[serde(default)]
    pub param_id: Option<String>,
}

/// Every way a topology can be malformed.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    StateIndex { position: usize, index: usize },
    StateShape { state: usize, shape: Vec<usize> },
    BadAlpha { state: usize, alpha: f64 },
    TooFewStates,
    EdgeRange { edge: usize },
    Ordering { edge: usize, from: usize, to: usize },
    Shape { edge: usize, detail: String },
    Param { edge: usize, detail: String },
    NoIncoming { state: usize },
    Disconnected { state: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StateIndex { position, index } => {
                write!(f, "state at position {position} has index {index}")
            }
            Violation::StateShape { state, shape } => {
                write!(f, "state {state} has unusable shape {shape:?}")
            }
            Violation::BadAlpha { state, alpha } => {
                write!(f, "state {state} has non-positive alpha {alpha}")
            }
            Violation::TooFewStates => write!(f, "need at least an input and an output state"),
            Violation::EdgeRange { edge } => write!(f, "edge {edge} references a missing state"),
            Violation::Ordering { edge, from, to } => {
                write!(f, "edge {edge} ordering violation: from {from} must be < to {to}")
            }
            Violation::Shape { edge, detail } => {
                write!(f, "edge {edge} shape violation: {detail}")
            }
            Violation::Param { edge, detail } => write!(f, "edge {edge} parameter: {detail}"),
            Violation::NoIncoming { state } => {
                write!(f, "state {state} has no incoming edge from a lower index")
            }
            Violation::Disconnected { state } => write!(f, "state {state} is not connected"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyParts {
    states: Vec<StateSpec>,
    edges: Vec<EdgeSpec>,
    #[serde(default)]
    biases: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyParts", into = "TopologyParts")]
pub struct NetworkTopology {
    states: Vec<StateSpec>,
    edges: Vec<EdgeSpec>,
    biases: bool,
    pre: Vec<Vec<usize>>,
    post: Vec<Vec<usize>>,
}

impl TryFrom<TopologyParts> for NetworkTopology {
    type Error = Error;

    fn try_from(p: TopologyParts) -> Result<Self> {
        NetworkTopology::new(p.states, p.edges, p.biases)
    }
}

impl From<NetworkTopology> for TopologyParts {
    fn from(t: NetworkTopology) -> Self {
        TopologyParts {
            states: t.states,
            edges: t.edges,
            biases: t.biases,
        }
    }
}

impl NetworkTopology {
    /// Build and validate.
    pub fn new(states: Vec<StateSpec>, edges: Vec<EdgeSpec>, biases: bool) -> Result<Self> {
        let t = Self::new_unchecked(states, edges, biases);
        validate_topology(&t)
            .map_err(|v| Error::Topology(v.iter().map(ToString::to_string).collect()))?;
        Ok(t)
    }

    /// Derive adjacency without validating; pair with [`validate_topology`].
    pub fn new_unchecked(states: Vec<StateSpec>, edges: Vec<EdgeSpec>, biases: bool) -> Self {
        let mut pre = vec![Vec::new(); states.len()];
        let mut post = vec![Vec::new(); states.len()];
        for (i, e) in edges.iter().enumerate() {
            if let Some(p) = pre.get_mut(e.to_state) {
                p.push(i);
            }
            if let Some(p) = post.get_mut(e.from_state) {
                p.push(i);
            }
        }
        Self {
            states,
            edges,
            biases,
            pre,
            post,
        }
    }

    pub fn states(&self) -> &[StateSpec] {
        &self.states
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &EdgeSpec {
        &self.edges[i]
    }

    pub fn state(&self, n: usize) -> &StateSpec {
        &self.states[n]
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn output_index(&self) -> usize {
        self.states.len() - 1
    }

    /// Indices of all states the dynamics update (everything but the input).
    pub fn updatable(&self) -> std::ops::Range<usize> {
        1..self.states.len()
    }

    pub fn has_biases(&self) -> bool {
        self.biases
    }

    /// Edge indices entering state `n`.
    pub fn pre(&self, n: usize) -> &[usize] {
        &self.pre[n]
    }

    /// Edge indices leaving state `n`.
    pub fn post(&self, n: usize) -> &[usize] {
        &self.post[n]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.states[0].chw()
    }

    pub fn num_classes(&self) -> usize {
        self.states[self.output_index()].numel()
    }

    /// Weight shape for a trainable edge.
    pub fn param_shape(&self, edge: &EdgeSpec) -> Option<Vec<usize>> {
        let [fc, fh, fw] = self.states[edge.from_state].chw();
        let [tc, _, _] = self.states[edge.to_state].chw();
        match edge.op {
            EdgeOp::Conv3x3 => Some(vec![tc, fc, 3, 3]),
            EdgeOp::Conv1x1Skip => Some(vec![tc, fc, 1, 1]),
            EdgeOp::Dense => Some(vec![self.states[edge.to_state].numel(), fc * fh * fw]),
            EdgeOp::IdentitySkip => None,
        }
    }

    /// Fan-in of a trainable edge, used for initialization scales.
    pub fn fan_in(&self, edge: &EdgeSpec) -> usize {
        self.param_shape(edge)
            .map(|s| s.iter().skip(1).product())
            .unwrap_or(1)
    }

    /// Trainable parameter ids in a stable order (edge order, then biases by state).
    pub fn param_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.edges.iter().filter_map(|e| e.param_id.clone()).collect();
        if self.biases {
            ids.extend(self.updatable().map(bias_id));
        }
        ids
    }

    /// Number of scalar trainable parameters.
    pub fn param_count(&self) -> usize {
        let w: usize = self
            .edges
            .iter()
            .filter_map(|e| self.param_shape(e))
            .map(|s| s.iter().product::<usize>())
            .sum();
        let b: usize = if self.biases {
            self.updatable().map(|n| self.states[n].chw()[0]).sum()
        } else {
            0
        };
        w + b
    }

    /// Depth used for per-group learning rates: edges are grouped by the state they feed.
    pub fn param_depth(&self, id: &str) -> Option<usize> {
        if let Some(e) = self.edges.iter().find(|e| e.param_id.as_deref() == Some(id)) {
            return Some(e.to_state - 1);
        }
        (1..self.states.len())
            .find(|&n| bias_id(n) == id)
            .map(|n| n - 1)
    }

    /// Same graph with every skip edge removed.
    pub fn without_skip_edges(&self) -> Result<Self> {
        let edges = self.edges.iter().filter(|e| !e.op.is_skip()).cloned().collect();
        Self::new(self.states.clone(), edges, self.biases)
    }
}

pub fn bias_id(state: usize) -> String {
    format!("b{state}")
}

fn edge_output_shape(t: &NetworkTopology, e: &EdgeSpec) -> std::result::Result<[usize; 3], String> {
    let from = &t.states[e.from_state];
    let to = &t.states[e.to_state];
    let [fc, fh, fw] = from.chw();
    let [tc, _, _] = to.chw();
    let (c, h, w) = match e.op {
        EdgeOp::Conv3x3 | EdgeOp::Conv1x1Skip => (tc, fh, fw),
        EdgeOp::IdentitySkip => (fc, fh, fw),
        EdgeOp::Dense => {
            if e.pooled {
                return Err("dense edges cannot be pooled".into());
            }
            return Ok([to.numel(), 1, 1]);
        }
    };
    if e.pooled {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(format!("cannot pool odd spatial size {h}x{w}"));
        }
        Ok([c, h / 2, w / 2])
    } else {
        Ok([c, h, w])
    }
}

/// Check every structural invariant; returns all violations found.
pub fn validate_topology(t: &NetworkTopology) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let n = t.states.len();
    if n < 2 {
        v.push(Violation::TooFewStates);
    }
    for (pos, s) in t.states.iter().enumerate() {
        if s.index != pos {
            v.push(Violation::StateIndex {
                position: pos,
                index: s.index,
            });
        }
        if !(s.shape.len() == 1 || s.shape.len() == 3) || s.shape.contains(&0) {
            v.push(Violation::StateShape {
                state: pos,
                shape: s.shape.clone(),
            });
        }
        if let Activation::ReluAlpha { alpha } = s.activation {
            if !(alpha > 0.0) {
                v.push(Violation::BadAlpha { state: pos, alpha });
            }
        }
    }
    let mut ids = BTreeSet::new();
    for (i, e) in t.edges.iter().enumerate() {
        if e.from_state >= n || e.to_state >= n {
            v.push(Violation::EdgeRange { edge: i });
            continue;
        }
        if e.from_state >= e.to_state {
            v.push(Violation::Ordering {
                edge: i,
                from: e.from_state,
                to: e.to_state,
            });
        }
        match edge_output_shape(t, e) {
            Ok(out) if out != t.states[e.to_state].chw() => v.push(Violation::Shape {
                edge: i,
                detail: format!(
                    "forward op yields {out:?}, state {} is {:?}",
                    e.to_state,
                    t.states[e.to_state].chw()
                ),
            }),
            Ok(_) => {}
            Err(detail) => v.push(Violation::Shape { edge: i, detail }),
        }
        match (&e.param_id, e.op.is_trainable()) {
            (Some(id), true) => {
                if !ids.insert(id.clone()) {
                    v.push(Violation::Param {
                        edge: i,
                        detail: format!("duplicate param id {id}"),
                    });
                }
            }
            (None, true) => v.push(Violation::Param {
                edge: i,
                detail: "trainable edge without param id".into(),
            }),
            (Some(id), false) => v.push(Violation::Param {
                edge: i,
                detail: format!("identity edge cannot own param {id}"),
            }),
            (None, false) => {}
        }
    }
    for s in 1..n {
        if t.pre[s].is_empty() {
            v.push(Violation::NoIncoming { state: s });
        }
    }
    if n >= 2 && v.is_empty() {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(s) = queue.pop_front() {
            for &ei in t.pre[s].iter().chain(&t.post[s]) {
                let e = &t.edges[ei];
                for o in [e.from_state, e.to_state] {
                    if !seen[o] {
                        seen[o] = true;
                        queue.push_back(o);
                    }
                }
            }
        }
        v.extend(
            seen.iter()
                .enumerate()
                .filter(|(_, &ok)| !ok)
                .map(|(state, _)| Violation::Disconnected { state }),
        );
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub alpha: f64,
    pub biases: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            alpha: 6.0,
            biases: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipKind {
    #[default]
    Conv1x1,
    Identity,
    None,
}

fn hidden(index: usize, name: String, shape: Vec<usize>, alpha: f64) -> StateSpec {
    StateSpec {
        index,
        name,
        shape,
        activation: Activation::ReluAlpha { alpha },
    }
}

fn param(from: usize, to: usize) -> Option<String> {
    Some(format!("w{from}_{to}"))
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::InvalidArgument("num_classes must be positive".into()));
    }
    Ok(())
}

fn input_state(in_shape: [usize; 3]) -> StateSpec {
    StateSpec {
        index: 0,
        name: "x".into(),
        shape: in_shape.to_vec(),
        activation: Activation::Identity,
    }
}

fn output_state(index: usize, classes: usize) -> StateSpec {
    StateSpec {
        index,
        name: "out".into(),
        shape: vec![classes],
        activation: Activation::Identity,
    }
}

fn halve(h: usize, w: usize, what: &str) -> Result<(usize, usize)> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{what}: spatial size {h}x{w} is not divisible by the pooling factor"
        )));
    }
    Ok((h / 2, w / 2))
}

/// Four 3×3 conv interactions and a dense readout.
pub fn build_vgg5(
    in_shape: [usize; 3],
    channels: [usize; 4],
    pools: [bool; 4],
    num_classes: usize,
    opts: BuildOptions,
) -> Result<NetworkTopology> {
    check_classes(num_classes)?;
    let mut states = vec![input_state(in_shape)];
    let mut edges = Vec::new();
    let (mut h, mut w) = (in_shape[1], in_shape[2]);
    for (k, (&c, &pool)) in channels.iter().zip(&pools).enumerate() {
        if pool {
            (h, w) = halve(h, w, "build_vgg5")?;
        }
        states.push(hidden(k + 1, format!("s{}", k + 1), vec![c, h, w], opts.alpha));
        edges.push(EdgeSpec {
            from_state: k,
            to_state: k + 1,
            op: EdgeOp::Conv3x3,
            pooled: pool,
            param_id: param(k, k + 1),
        });
    }
    states.push(output_state(5, num_classes));
    edges.push(EdgeSpec {
        from_state: 4,
        to_state: 5,
        op: EdgeOp::Dense,
        pooled: false,
        param_id: param(4, 5),
    });
    NetworkTopology::new(states, edges, opts.biases)
}

/// Hopfield-Resnet with one block per entry of `channels`.
///
/// Block `k` adds a mid state `a_k` and an output state `b_k` with interactions
/// `b_{k-1} -3x3-> a_k`, `a_k -3x3,pool-> b_k` and the skip `b_{k-1} -1x1,pool-> b_k`;
/// `b_0` is the input. A dense edge reads out the last block.
pub fn build_hopfield_resnet(
    in_shape: [usize; 3],
    channels: &[usize],
    num_classes: usize,
    skip: SkipKind,
    opts: BuildOptions,
) -> Result<NetworkTopology> {
    check_classes(num_classes)?;
    if channels.is_empty() {
        return Err(Error::InvalidArgument("at least one block required".into()));
    }
    let mut states = vec![input_state(in_shape)];
    let mut edges = Vec::new();
    let (mut h, mut w) = (in_shape[1], in_shape[2]);
    let mut prev_b = 0;
    for (k, &c) in channels.iter().enumerate() {
        let a = states.len();
        let b = a + 1;
        states.push(hidden(a, format!("a{}", k + 1), vec![c, h, w], opts.alpha));
        (h, w) = halve(h, w, "build_hopfield_resnet")?;
        states.push(hidden(b, format!("b{}", k + 1), vec![c, h, w], opts.alpha));
        edges.push(EdgeSpec {
            from_state: prev_b,
            to_state: a,
            op: EdgeOp::Conv3x3,
            pooled: false,
            param_id: param(prev_b, a),
        });
        edges.push(EdgeSpec {
            from_state: a,
            to_state: b,
            op: EdgeOp::Conv3x3,
            pooled: true,
            param_id: param(a, b),
        });
        match skip {
            SkipKind::Conv1x1 => edges.push(EdgeSpec {
                from_state: prev_b,
                to_state: b,
                op: EdgeOp::Conv1x1Skip,
                pooled: true,
                param_id: param(prev_b, b),
            }),
            SkipKind::Identity => edges.push(EdgeSpec {
                from_state: prev_b,
                to_state: b,
                op: EdgeOp::IdentitySkip,
                pooled: true,
                param_id: None,
            }),
            SkipKind::None => {}
        }
        prev_b = b;
    }
    let out = states.len();
    states.push(output_state(out, num_classes));
    edges.push(EdgeSpec {
        from_state: prev_b,
        to_state: out,
        op: EdgeOp::Dense,
        pooled: false,
        param_id: param(prev_b, out),
    });
    NetworkTopology::new(states, edges, opts.biases)
}

/// The four-block network: 12 conv interactions plus the dense readout.
pub fn build_hopfield_resnet13(
    in_shape: [usize; 3],
    channels: [usize; 4],
    num_classes: usize,
    opts: BuildOptions,
) -> Result<NetworkTopology> {
    build_hopfield_resnet(in_shape, &channels, num_classes, SkipKind::Conv1x1, opts)
}

/// Fully connected layered Hopfield net; `sizes` lists input, hidden..., output widths.
pub fn build_dense(sizes: &[usize], opts: BuildOptions) -> Result<NetworkTopology> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "dense net needs >= 2 positive layer sizes, got {sizes:?}"
        )));
    }
    let last = sizes.len() - 1;
    let states = sizes
        .iter()
        .enumerate()
        .map(|(i, &d)| match i {
            0 => input_state([d, 1, 1]),
            i if i == last => output_state(i, d),
            i => hidden(i, format!("h{i}"), vec![d], opts.alpha),
        })
        .collect();
    let edges = (0..last)
        .map(|i| EdgeSpec {
            from_state: i,
            to_state: i + 1,
            op: EdgeOp::Dense,
            pooled: false,
            param_id: param(i, i + 1),
        })
        .collect();
    NetworkTopology::new(states, edges, opts.biases)
}
