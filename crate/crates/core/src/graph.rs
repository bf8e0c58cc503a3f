//! Lag-windowed time-series graphs.
//!
//! A [`TsGraph`] stores each edge once, in a canonical window form where the
//! later end sits at lag 0. Causal stationarity means every stored edge
//! implicitly repeats at every time shift, so queries about any pair of
//! window nodes are answered by shifting the pair onto its canonical copy.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("mark {mark:?} is not allowed in a {kind} graph (edge {edge})")]
    IllegalMark {
        kind: GraphKind,
        mark: Edgemark,
        edge: String,
    },
    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(TsNode, TsNode),
    #[error("lag {lag} exceeds tau_max {tau_max}")]
    LagOutOfRange { lag: usize, tau_max: usize },
    #[error("variable {var} out of range for a graph with {n_vars} variables")]
    VarOutOfRange { var: usize, n_vars: usize },
    #[error("self loop on {0}")]
    SelfLoop(TsNode),
    #[error("directed cycle in DAG")]
    Cyclic,
    #[error("horizon of {steps} steps is too short for tau_max {tau_max}")]
    HorizonTooShort { steps: usize, tau_max: usize },
    #[error("graph is not a DAG")]
    NotADag,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Symbol at one end of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Edgemark {
    Tail,
    Head,
    Circle,
    /// Orientation rules proposed both a tail and a head for this end.
    Conflict,
}

impl Edgemark {
    /// Text symbol; heads are written `<` at the first end and `>` at the second.
    pub fn symbol(self, second_end: bool) -> char {
        match self {
            Edgemark::Tail => '-',
            Edgemark::Head if second_end => '>',
            Edgemark::Head => '<',
            Edgemark::Circle => 'o',
            Edgemark::Conflict => 'x',
        }
    }

    fn parse(s: &str, second_end: bool) -> Option<Edgemark> {
        match (s, second_end) {
            ("-", _) => Some(Edgemark::Tail),
            ("<", false) | (">", true) => Some(Edgemark::Head),
            ("o", _) => Some(Edgemark::Circle),
            ("x", _) => Some(Edgemark::Conflict),
            _ => None,
        }
    }

    fn dot_arrow(self) -> &'static str {
        match self {
            Edgemark::Tail => "none",
            Edgemark::Head => "normal",
            Edgemark::Circle => "odot",
            Edgemark::Conflict => "box",
        }
    }
}

/// A variable at a non-negative time lag relative to the present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TsNode {
    pub var: usize,
    pub lag: usize,
}

impl TsNode {
    pub const fn new(var: usize, lag: usize) -> Self {
        TsNode { var, lag }
    }
}

impl fmt::Display for TsNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, -{})", self.var, self.lag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TsEdge {
    pub a: TsNode,
    pub b: TsNode,
    pub mark_at_a: Edgemark,
    pub mark_at_b: Edgemark,
}

impl TsEdge {
    pub fn new(a: TsNode, mark_at_a: Edgemark, mark_at_b: Edgemark, b: TsNode) -> Self {
        TsEdge {
            a,
            b,
            mark_at_a,
            mark_at_b,
        }
    }

    /// `a -> b`
    pub fn directed(a: TsNode, b: TsNode) -> Self {
        Self::new(a, Edgemark::Tail, Edgemark::Head, b)
    }

    /// `a <-> b`
    pub fn bidirected(a: TsNode, b: TsNode) -> Self {
        Self::new(a, Edgemark::Head, Edgemark::Head, b)
    }

    pub fn swapped(self) -> Self {
        TsEdge {
            a: self.b,
            b: self.a,
            mark_at_a: self.mark_at_b,
            mark_at_b: self.mark_at_a,
        }
    }

    /// Largest lag difference between the two ends.
    pub fn lag(&self) -> usize {
        self.a.lag.abs_diff(self.b.lag)
    }
}

impl fmt::Display for TsEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}-{} {}",
            self.a,
            self.mark_at_a.symbol(false),
            self.mark_at_b.symbol(true),
            self.b
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum GraphKind {
    DAG,
    MAG,
    PAG,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GraphKind::DAG => "DAG",
            GraphKind::MAG => "MAG",
            GraphKind::PAG => "PAG",
        };
        f.write_str(s)
    }
}

impl FromStr for GraphKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DAG" => Ok(GraphKind::DAG),
            "MAG" => Ok(GraphKind::MAG),
            "PAG" => Ok(GraphKind::PAG),
            other => Err(format!("unknown graph kind {other:?}")),
        }
    }
}

/// Key of a canonical edge: `(a, b)` with `b.lag == 0` and, for
/// contemporaneous pairs, `a.var < b.var`.
pub type EdgeKey = (TsNode, TsNode);

/// Shift the pair `(u, v)` so the later node sits at lag 0 and order it
/// canonically. Returns the key, the shift that was subtracted, and whether
/// the ends were swapped.
pub fn canonical_pair(u: TsNode, v: TsNode) -> (EdgeKey, usize, bool) {
    let shift = u.lag.min(v.lag);
    let u0 = TsNode::new(u.var, u.lag - shift);
    let v0 = TsNode::new(v.var, v.lag - shift);
    let swap = if u0.lag != v0.lag {
        u0.lag < v0.lag
    } else {
        u0.var > v0.var
    };
    if swap {
        ((v0, u0), shift, true)
    } else {
        ((u0, v0), shift, false)
    }
}

/// Lag-windowed graph over `(variable, lag)` nodes with per-end edgemarks.
///
/// Immutable once built; all constructors validate marks against `kind`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsGraph {
    n_vars: usize,
    tau_max: usize,
    kind: GraphKind,
    edges: BTreeMap<EdgeKey, (Edgemark, Edgemark)>,
}

impl TsGraph {
    /// Validate and canonicalize an edge list.
    pub fn build(
        n_vars: usize,
        tau_max: usize,
        kind: GraphKind,
        edges: impl IntoIterator<Item = TsEdge>,
    ) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for e in edges {
            for n in [e.a, e.b] {
                if n.var >= n_vars {
                    return Err(GraphError::VarOutOfRange { var: n.var, n_vars });
                }
                if n.lag > tau_max {
                    return Err(GraphError::LagOutOfRange { lag: n.lag, tau_max });
                }
            }
            if e.a == e.b {
                return Err(GraphError::SelfLoop(e.a));
            }
            let (key, _, swapped) = canonical_pair(e.a, e.b);
            let marks = if swapped {
                (e.mark_at_b, e.mark_at_a)
            } else {
                (e.mark_at_a, e.mark_at_b)
            };
            check_marks(kind, key, marks)?;
            if map.insert(key, marks).is_some() {
                return Err(GraphError::DuplicateEdge(key.0, key.1));
            }
        }
        let g = TsGraph {
            n_vars,
            tau_max,
            kind,
            edges: map,
        };
        if kind == GraphKind::DAG && g.unroll(2 * (tau_max + 1))?.has_cycle() {
            return Err(GraphError::Cyclic);
        }
        Ok(g)
    }

    pub fn empty(n_vars: usize, tau_max: usize, kind: GraphKind) -> Self {
        TsGraph {
            n_vars,
            tau_max,
            kind,
            edges: BTreeMap::new(),
        }
    }

    /// Build from already-canonical entries. Callers guarantee validity.
    pub(crate) fn from_canonical(
        n_vars: usize,
        tau_max: usize,
        kind: GraphKind,
        edges: BTreeMap<EdgeKey, (Edgemark, Edgemark)>,
    ) -> Self {
        TsGraph {
            n_vars,
            tau_max,
            kind,
            edges,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Canonical edges in deterministic order.
    pub fn edges(&self) -> impl Iterator<Item = TsEdge> + '_ {
        self.edges.iter().map(|(&(a, b), &(ma, mb))| TsEdge {
            a,
            b,
            mark_at_a: ma,
            mark_at_b: mb,
        })
    }

    pub(crate) fn edge_map(&self) -> &BTreeMap<EdgeKey, (Edgemark, Edgemark)> {
        &self.edges
    }

    /// Same edges, different window width. Fails if an edge no longer fits.
    pub fn with_tau_max(&self, tau_max: usize) -> Result<Self, GraphError> {
        TsGraph::build(self.n_vars, tau_max, self.kind, self.edges())
    }

    /// Same edges and marks under a different kind label.
    pub fn relabel_kind(&self, kind: GraphKind) -> Result<Self, GraphError> {
        TsGraph::build(self.n_vars, self.tau_max, kind, self.edges())
    }

    /// Returns the edge between `u` and `v` oriented as `(u, v)`, looking
    /// through every stationary time shift.
    pub fn edge_between(&self, u: TsNode, v: TsNode) -> Option<TsEdge> {
        if u == v || u.lag.abs_diff(v.lag) > self.tau_max {
            return None;
        }
        let (key, _, swapped) = canonical_pair(u, v);
        let &(ma, mb) = self.edges.get(&key)?;
        let (mu, mv) = if swapped { (mb, ma) } else { (ma, mb) };
        Some(TsEdge {
            a: u,
            b: v,
            mark_at_a: mu,
            mark_at_b: mv,
        })
    }

    pub fn adjacent(&self, u: TsNode, v: TsNode) -> bool {
        self.edge_between(u, v).is_some()
    }

    /// All nodes inside the window `0..=tau_max` adjacent to `u`.
    pub fn neighbors(&self, u: TsNode) -> Vec<TsNode> {
        self.window_nodes()
            .filter(|&w| w != u && self.adjacent(u, w))
            .collect()
    }

    /// Window nodes ordered by lag, then variable.
    pub fn window_nodes(&self) -> impl Iterator<Item = TsNode> {
        let n = self.n_vars;
        (0..=self.tau_max).flat_map(move |lag| (0..n).map(move |var| TsNode::new(var, lag)))
    }

    /// Replicate every edge across a horizon of `steps` time points.
    pub fn unroll(&self, steps: usize) -> Result<StaticGraph, GraphError> {
        if steps < self.tau_max + 1 {
            return Err(GraphError::HorizonTooShort {
                steps,
                tau_max: self.tau_max,
            });
        }
        let mut g = StaticGraph::new(self.n_vars, steps);
        for e in self.edges() {
            let (from, to) = match (e.mark_at_a, e.mark_at_b) {
                (Edgemark::Tail, Edgemark::Head) => (e.a, e.b),
                (Edgemark::Head, Edgemark::Tail) => (e.b, e.a),
                _ => return Err(GraphError::NotADag),
            };
            let span = e.a.lag.max(e.b.lag);
            for t in span..steps {
                let u = g.node_id(from.var, t - from.lag);
                let v = g.node_id(to.var, t - to.lag);
                g.add_edge(u, v);
            }
        }
        Ok(g)
    }

    /// Line-oriented text record; see [`TsGraph::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "tsgraph v1 kind={} n={} taumax={}\n",
            self.kind, self.n_vars, self.tau_max
        );
        for e in self.edges() {
            s.push_str(&format!(
                "{} {} {} {} {} {}\n",
                e.a.var,
                e.a.lag,
                e.mark_at_a.symbol(false),
                e.b.var,
                e.b.lag,
                e.mark_at_b.symbol(true)
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(GraphError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let perr = |line: usize, msg: String| GraphError::Parse { line, msg };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "tsgraph" || fields[1] != "v1" {
            return Err(perr(1, format!("bad header {header:?}")));
        }
        let value = |field: &str, key: &str| -> Result<String, GraphError> {
            field
                .strip_prefix(key)
                .map(str::to_string)
                .ok_or_else(|| perr(1, format!("expected {key}")))
        };
        let kind: GraphKind = value(fields[2], "kind=")?
            .parse()
            .map_err(|m| perr(1, m))?;
        let n_vars: usize = value(fields[3], "n=")?
            .parse()
            .map_err(|_| perr(1, "bad n".into()))?;
        let tau_max: usize = value(fields[4], "taumax=")?
            .parse()
            .map_err(|_| perr(1, "bad taumax".into()))?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(perr(lineno, "expected 6 fields".into()));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| perr(lineno, format!("bad number {s:?}")));
            let ma = Edgemark::parse(f[2], false).ok_or_else(|| perr(lineno, format!("bad mark {:?}", f[2])))?;
            let mb = Edgemark::parse(f[5], true).ok_or_else(|| perr(lineno, format!("bad mark {:?}", f[5])))?;
            edges.push(TsEdge::new(
                TsNode::new(num(f[0])?, num(f[1])?),
                ma,
                mb,
                TsNode::new(num(f[3])?, num(f[4])?),
            ));
        }
        TsGraph::build(n_vars, tau_max, kind, edges)
    }

    /// Graphviz rendering with one node per variable. Variable names default
    /// to their indices.
    pub fn to_dot(&self) -> String {
        let names: Vec<String> = (0..self.n_vars).map(|i| i.to_string()).collect();
        self.to_dot_named(&names)
    }

    pub fn to_dot_named(&self, names: &[String]) -> String {
        let name = |v: usize| names.get(v).cloned().unwrap_or_else(|| v.to_string());
        let mut s = String::from("digraph tsgraph {\n");
        s.push_str(&format!("  // kind={} taumax={}\n", self.kind, self.tau_max));
        for v in 0..self.n_vars {
            s.push_str(&format!("  \"{}\";\n", name(v)));
        }
        for e in self.edges() {
            // arrow drawn from the earlier (lagged) end to the lag-0 end
            s.push_str(&format!(
                "  \"{}\" -> \"{}\" [dir=both, arrowtail={}, arrowhead={}",
                name(e.a.var),
                name(e.b.var),
                e.mark_at_a.dot_arrow(),
                e.mark_at_b.dot_arrow()
            ));
            if e.lag() > 0 {
                s.push_str(&format!(", label=\"{}\"", e.lag()));
            }
            s.push_str("];\n");
        }
        s.push_str("}\n");
        s
    }
}

fn check_marks(kind: GraphKind, key: EdgeKey, marks: (Edgemark, Edgemark)) -> Result<(), GraphError> {
    use Edgemark::*;
    let illegal = |mark: Edgemark| GraphError::IllegalMark {
        kind,
        mark,
        edge: format!("{} {}", key.0, key.1),
    };
    let lagged = key.0.lag > 0;
    match kind {
        GraphKind::PAG => Ok(()),
        GraphKind::DAG | GraphKind::MAG => {
            for m in [marks.0, marks.1] {
                if matches!(m, Circle | Conflict) {
                    return Err(illegal(m));
                }
            }
            match marks {
                (Tail, Tail) => Err(illegal(Tail)),
                (Head, Head) if kind == GraphKind::DAG => Err(illegal(Head)),
                // the later end of a lagged edge can never be an ancestor of the earlier one
                (Head, Tail) if lagged => Err(illegal(Tail)),
                _ => Ok(()),
            }
        }
    }
}

/// Finite unrolled directed graph. Node ids are `time * n_vars + var` with
/// `time` running from 0 (earliest) to `steps - 1` (present).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticGraph {
    n_vars: usize,
    steps: usize,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl StaticGraph {
    pub fn new(n_vars: usize, steps: usize) -> Self {
        let n = n_vars * steps;
        StaticGraph {
            n_vars,
            steps,
            parents: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
        }
    }

    /// A plain DAG over `n` nodes (a single time slice).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = StaticGraph::new(n, 1);
        for &(u, v) in edges {
            g.add_edge(u, v);
        }
        g
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        if !self.children[u].contains(&v) {
            self.children[u].push(v);
            self.parents[v].push(u);
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.parents.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn node_id(&self, var: usize, time: usize) -> usize {
        time * self.n_vars + var
    }

    /// `(var, time)` of a node id.
    pub fn node(&self, id: usize) -> (usize, usize) {
        (id % self.n_vars, id / self.n_vars)
    }

    /// Id of the window node `n` when the window's present is the last step.
    pub fn anchored(&self, n: TsNode) -> Option<usize> {
        if n.var >= self.n_vars || n.lag >= self.steps {
            return None;
        }
        Some(self.node_id(n.var, self.steps - 1 - n.lag))
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn n_edges(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .children
            .iter()
            .enumerate()
            .flat_map(|(u, cs)| cs.iter().map(move |&v| (u, v)))
            .collect();
        out.sort_unstable();
        out
    }

    /// Ancestors of the seed set, seeds included.
    pub fn ancestors_mask(&self, seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut mask = vec![false; self.n_nodes()];
        let mut stack: Vec<usize> = Vec::new();
        for s in seeds {
            if !mask[s] {
                mask[s] = true;
                stack.push(s);
            }
        }
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if !mask[p] {
                    mask[p] = true;
                    stack.push(p);
                }
            }
        }
        mask
    }

    pub fn has_cycle(&self) -> bool {
        let n = self.n_nodes();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        seen != n
    }

    /// Project unrolled edges back onto canonical window edges (DAG marks).
    pub fn window_edges(&self) -> Vec<TsEdge> {
        let mut seen = std::collections::BTreeSet::new();
        for (u, v) in self.edge_list() {
            let ((uv, ut), (vv, vt)) = (self.node(u), self.node(v));
            let late = ut.max(vt);
            let from = TsNode::new(uv, late - ut);
            let to = TsNode::new(vv, late - vt);
            let (key, _, swapped) = canonical_pair(from, to);
            seen.insert((key, swapped));
        }
        seen.into_iter()
            .map(|((a, b), swapped)| {
                if swapped {
                    TsEdge::new(a, Edgemark::Head, Edgemark::Tail, b)
                } else {
                    TsEdge::directed(a, b)
                }
            })
            .collect()
    }
}
