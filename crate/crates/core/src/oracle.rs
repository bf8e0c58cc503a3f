//! Ground truth: d-separation on unrolled DAGs, latent projection onto a
//! window MAG, and the oracle PAG.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::discovery::{candidate_keys, orient_skeleton, Sepset};
use crate::graph::{EdgeKey, Edgemark, GraphError, GraphKind, StaticGraph, TsGraph, TsNode};

/// Extra time steps unrolled before the window.
pub const DEFAULT_PADDING: usize = 10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("node {0} not in graph")]
    NodeNotFound(usize),
    #[error("invalid separation query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeparationQuery {
    pub x: TsNode,
    pub y: TsNode,
    pub cond: Vec<TsNode>,
}

impl SeparationQuery {
    pub fn new(x: TsNode, y: TsNode, cond: impl IntoIterator<Item = TsNode>) -> Self {
        SeparationQuery {
            x,
            y,
            cond: cond.into_iter().collect(),
        }
    }
}

/// Reachability ("Bayes ball") test of whether every path between `x` and
/// `y` is blocked by `cond`.
pub fn d_separated(g: &StaticGraph, x: usize, y: usize, cond: &[usize]) -> Result<bool, OracleError> {
    let n = g.n_nodes();
    for &v in [x, y].iter().chain(cond) {
        if v >= n {
            return Err(OracleError::NodeNotFound(v));
        }
    }
    if x == y {
        return Err(OracleError::InvalidQuery("x and y coincide".into()));
    }
    if cond.contains(&x) || cond.contains(&y) {
        return Err(OracleError::InvalidQuery("x or y is in the conditioning set".into()));
    }
    let mut in_cond = vec![false; n];
    for &c in cond {
        in_cond[c] = true;
    }
    let opens_collider = g.ancestors_mask(cond.iter().copied());

    // state: (node, arrived from a child = going up)
    let mut seen = vec![[false; 2]; n];
    let mut queue = VecDeque::from([(x, true)]);
    while let Some((v, up)) = queue.pop_front() {
        if seen[v][up as usize] {
            continue;
        }
        seen[v][up as usize] = true;
        if v == y {
            return Ok(false);
        }
        if up {
            if !in_cond[v] {
                queue.extend(g.parents(v).iter().map(|&p| (p, true)));
                queue.extend(g.children(v).iter().map(|&c| (c, false)));
            }
        } else {
            if !in_cond[v] {
                queue.extend(g.children(v).iter().map(|&c| (c, false)));
            }
            if opens_collider[v] {
                queue.extend(g.parents(v).iter().map(|&p| (p, true)));
            }
        }
    }
    Ok(true)
}

/// Separation queries on the stationary unrolling of a window DAG, with
/// queries anchored at the last time step.
#[derive(Debug, Clone)]
pub struct SeparationOracle {
    unrolled: StaticGraph,
    tau_max: usize,
}

impl SeparationOracle {
    pub fn new(window_dag: &TsGraph, padding: usize) -> Result<Self, OracleError> {
        if window_dag.kind() != GraphKind::DAG {
            return Err(OracleError::Graph(GraphError::NotADag));
        }
        let tau_max = window_dag.tau_max();
        Ok(SeparationOracle {
            unrolled: window_dag.unroll(tau_max + 1 + padding)?,
            tau_max,
        })
    }

    pub fn unrolled(&self) -> &StaticGraph {
        &self.unrolled
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max
    }

    fn id(&self, n: TsNode) -> Result<usize, OracleError> {
        if n.lag > self.tau_max {
            return Err(OracleError::Graph(GraphError::LagOutOfRange {
                lag: n.lag,
                tau_max: self.tau_max,
            }));
        }
        self.unrolled
            .anchored(n)
            .ok_or(OracleError::InvalidQuery(format!("node {n} outside graph")))
    }

    pub fn separated(&self, q: &SeparationQuery) -> Result<bool, OracleError> {
        let x = self.id(q.x)?;
        let y = self.id(q.y)?;
        let cond = q.cond.iter().map(|&c| self.id(c)).collect::<Result<Vec<_>, _>>()?;
        d_separated(&self.unrolled, x, y, &cond)
    }

    /// Whether `a` is an ancestor of `b` in the unrolled graph.
    pub fn is_ancestor(&self, a: TsNode, b: TsNode) -> Result<bool, OracleError> {
        let (ia, ib) = (self.id(a)?, self.id(b)?);
        Ok(self.unrolled.ancestors_mask([ib])[ia])
    }
}

pub fn ts_d_separated(window_dag: &TsGraph, q: &SeparationQuery, padding: usize) -> Result<bool, OracleError> {
    SeparationOracle::new(window_dag, padding)?.separated(q)
}

/// How adjacencies of the projected MAG are decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencySearch {
    /// One query conditioning on the observed ancestors of the pair.
    AncestralSet,
    /// Every subset of observed window nodes up to the given size.
    Exhaustive { max_size: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub padding: usize,
    pub search: AdjacencySearch,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            padding: DEFAULT_PADDING,
            search: AdjacencySearch::AncestralSet,
        }
    }
}

/// Project a window DAG onto its observed variables. The result is relabeled
/// so that observed variable `observed[k]` becomes variable `k`.
pub fn latent_project(dag: &TsGraph, observed: &[usize]) -> Result<TsGraph, OracleError> {
    latent_project_with(dag, observed, ProjectionOptions::default())
}

pub fn latent_project_with(
    dag: &TsGraph,
    observed: &[usize],
    opts: ProjectionOptions,
) -> Result<TsGraph, OracleError> {
    let pairs = project_pairs(dag, observed, opts)?;
    let edges = pairs
        .into_iter()
        .filter_map(|(key, p)| match p {
            PairStatus::Adjacent(marks) => Some((key, marks)),
            PairStatus::Separated(_) => None,
        })
        .collect();
    Ok(TsGraph::from_canonical(observed.len(), dag.tau_max(), GraphKind::MAG, edges))
}

enum PairStatus {
    Adjacent((Edgemark, Edgemark)),
    /// Separating set in the canonical frame, relabeled to observed indices.
    Separated(Vec<TsNode>),
}

/// Decide every canonical pair of observed window nodes, relabeled so that
/// `observed[k]` becomes variable `k`.
fn project_pairs(
    dag: &TsGraph,
    observed: &[usize],
    opts: ProjectionOptions,
) -> Result<BTreeMap<EdgeKey, PairStatus>, OracleError> {
    if let Some(&bad) = observed.iter().find(|&&v| v >= dag.n_vars()) {
        return Err(OracleError::NodeNotFound(bad));
    }
    let oracle = SeparationOracle::new(dag, opts.padding)?;
    let g = oracle.unrolled();
    let tau_max = dag.tau_max();
    // window node ids and their relabeled names
    let window: Vec<(usize, TsNode)> = (0..=tau_max)
        .flat_map(|lag| observed.iter().enumerate().map(move |(k, &v)| (TsNode::new(v, lag), TsNode::new(k, lag))))
        .map(|(orig, relabeled)| (g.anchored(orig).expect("in horizon"), relabeled))
        .collect();
    let id_of = |n: TsNode| window.iter().find(|(_, r)| *r == n).expect("window node").0;
    let name_of = |id: usize| window.iter().find(|(w, _)| *w == id).expect("window node").1;

    let mut out = BTreeMap::new();
    for key in candidate_keys(observed.len(), tau_max) {
        let (a_id, b_id) = (id_of(key.0), id_of(key.1));
        let anc_a = g.ancestors_mask([a_id]);
        let anc_b = g.ancestors_mask([b_id]);
        let others: Vec<usize> = window
            .iter()
            .map(|&(w, _)| w)
            .filter(|&w| w != a_id && w != b_id)
            .collect();
        let sepset = match opts.search {
            AdjacencySearch::AncestralSet => {
                let cond: Vec<usize> = others.iter().copied().filter(|&w| anc_a[w] || anc_b[w]).collect();
                d_separated(g, a_id, b_id, &cond)?.then_some(cond)
            }
            AdjacencySearch::Exhaustive { max_size } => separating_subset(g, a_id, b_id, &others, max_size)?,
        };
        let status = match sepset {
            Some(cond) => {
                let mut s: Vec<TsNode> = cond.into_iter().map(name_of).collect();
                s.sort_unstable();
                PairStatus::Separated(s)
            }
            None => {
                let mark_a = if anc_b[a_id] { Edgemark::Tail } else { Edgemark::Head };
                let mark_b = if anc_a[b_id] { Edgemark::Tail } else { Edgemark::Head };
                PairStatus::Adjacent((mark_a, mark_b))
            }
        };
        out.insert(key, status);
    }
    Ok(out)
}

fn separating_subset(
    g: &StaticGraph,
    x: usize,
    y: usize,
    pool: &[usize],
    max_size: usize,
) -> Result<Option<Vec<usize>>, OracleError> {
    let k = pool.len();
    if k >= 32 {
        return Err(OracleError::InvalidQuery("pool too large for exhaustive search".into()));
    }
    let limit = max_size.min(k);
    for size in 0..=limit {
        for mask in 0u32..(1u32 << k) {
            if mask.count_ones() as usize != size {
                continue;
            }
            let cond: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).map(|i| pool[i]).collect();
            if d_separated(g, x, y, &cond)? {
                return Ok(Some(cond));
            }
        }
    }
    Ok(None)
}

/// Oracle PAG over the observed variables (relabeled to
/// `0..observed.len()`): the projected skeleton, separating sets made of
/// observed ancestors, then time order, colliders and the completion rules.
pub fn oracle_pag(window_dag: &TsGraph, observed: &[usize], tau_max: usize) -> Result<TsGraph, OracleError> {
    let dag = if window_dag.tau_max() == tau_max {
        window_dag.clone()
    } else {
        window_dag.with_tau_max(tau_max)?
    };
    let pairs = project_pairs(&dag, observed, ProjectionOptions::default())?;
    let mut skeleton = BTreeSet::new();
    let mut sepsets = BTreeMap::new();
    for (key, status) in pairs {
        match status {
            PairStatus::Adjacent(_) => {
                skeleton.insert(key);
            }
            PairStatus::Separated(s) => {
                sepsets.insert(key, Sepset::Set(s));
            }
        }
    }
    Ok(orient_skeleton(observed.len(), tau_max, &skeleton, &sepsets))
}
