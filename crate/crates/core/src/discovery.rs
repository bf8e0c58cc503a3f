//! LPCMCI-style constraint-based discovery over a CI backend, the random
//! baseline, and weak-link pruning.
//!
//! All state is kept in canonical edge form; a window edge `(x, y)` at any
//! time shift reads and writes the entry of its canonical pair.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci::{ci_decide, CiBackend, CiDecision, CiError, CiOutcome, CiQuery};
use crate::graph::{canonical_pair, EdgeKey, Edgemark, GraphKind, TsGraph, TsNode};

/// Upper bound on repeated passes inside one phase.
const MAX_PASSES: usize = 8;
/// Upper bound on rule rounds in one orientation pass.
const MAX_RULE_ROUNDS: usize = 100;
/// Longest path (in nodes) searched by the uncovered-path rule.
const MAX_R9_PATH: usize = 8;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid background knowledge: {0}")]
    InvalidBackground(String),
    #[error(transparent)]
    Ci(#[from] CiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub alpha: f64,
    pub tau_max: usize,
    /// Cap on conditioning-set size, not counting forced parents.
    pub max_cond_size: usize,
    /// Ancestral phases (each followed by a re-initialization) before the
    /// last ancestral phase and the confounder phase.
    pub n_preliminary_phases: usize,
    /// Longest path explored when collecting confounder-phase candidates.
    pub pds_path_len: usize,
    pub collider_rule: ColliderRule,
    /// Keep a log of every CI test.
    pub record_trace: bool,
}

/// How unshielded triples `a - b - c` are judged to be colliders.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColliderRule {
    /// `b` is a collider iff it is absent from the recorded sepset of `a, c`.
    Sepset,
    /// Test every neighbor subset of the recorded sepset's size; `b` is a
    /// collider iff it appears in fewer than half of the separating sets
    /// found, a non-collider if in more, and undecided on a tie.
    #[default]
    Majority,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            alpha: 0.26,
            tau_max: 1,
            max_cond_size: 3,
            n_preliminary_phases: 1,
            pds_path_len: 3,
            collider_rule: ColliderRule::Majority,
            record_trace: false,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DiscoveryError::InvalidConfig(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// A mark imposed on the end at `node` of the edge `node - other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedMark {
    pub node: TsNode,
    pub other: TsNode,
    pub mark: Edgemark,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundKnowledge {
    pub forbidden_adjacencies: Vec<(TsNode, TsNode)>,
    pub forced_marks: Vec<ForcedMark>,
}

type EndKey = (EdgeKey, bool);

fn end_key(x: TsNode, y: TsNode) -> EndKey {
    let (key, _, swapped) = canonical_pair(x, y);
    (key, swapped)
}

#[derive(Debug, Clone, Default, PartialEq)]
struct NormalizedBk {
    forbidden: BTreeSet<EdgeKey>,
    forced: BTreeMap<EndKey, Edgemark>,
}

impl BackgroundKnowledge {
    fn normalize(&self, n_vars: usize, tau_max: usize) -> Result<NormalizedBk, DiscoveryError> {
        let check = |x: TsNode, y: TsNode| -> Result<(), DiscoveryError> {
            if x == y || x.var >= n_vars || y.var >= n_vars || x.lag.abs_diff(y.lag) > tau_max {
                return Err(DiscoveryError::InvalidBackground(format!("no candidate edge between {x} and {y}")));
            }
            Ok(())
        };
        let mut out = NormalizedBk::default();
        for &(x, y) in &self.forbidden_adjacencies {
            check(x, y)?;
            out.forbidden.insert(canonical_pair(x, y).0);
        }
        for f in &self.forced_marks {
            check(f.node, f.other)?;
            if !matches!(f.mark, Edgemark::Tail | Edgemark::Head) {
                return Err(DiscoveryError::InvalidBackground(format!(
                    "forced mark at {} must be a tail or a head",
                    f.node
                )));
            }
            if f.node.lag < f.other.lag && f.mark == Edgemark::Tail {
                return Err(DiscoveryError::InvalidBackground(format!(
                    "{} cannot be an ancestor of the earlier {}",
                    f.node, f.other
                )));
            }
            let k = end_key(f.node, f.other);
            if out.forced.insert(k, f.mark).is_some_and(|m| m != f.mark) {
                return Err(DiscoveryError::InvalidBackground(format!("contradictory marks at {}", f.node)));
            }
        }
        Ok(out)
    }
}

/// Why a pair is not adjacent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sepset {
    /// Conditioning set, expressed in the canonical frame of the pair.
    Set(Vec<TsNode>),
    /// Removed by background knowledge.
    Forbidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub phase: usize,
    pub x: TsNode,
    pub y: TsNode,
    pub cond: Vec<TsNode>,
    pub statistic: f64,
    pub pvalue: f64,
    pub independent: bool,
}

/// Mutable state of one discovery run.
#[derive(Debug, Clone)]
pub struct DiscoveryState {
    n_vars: usize,
    tau_max: usize,
    /// Working PAG in canonical form.
    pub marks: BTreeMap<EdgeKey, (Edgemark, Edgemark)>,
    /// Known `(parent, child)` relations, shifted so the later node has lag 0.
    pub parents: BTreeSet<(TsNode, TsNode)>,
    /// Known `(x, y)` with `x` not an ancestor of `y`, same normalization.
    pub non_ancestors: BTreeSet<(TsNode, TsNode)>,
    pub strengths: BTreeMap<EdgeKey, f64>,
    /// Signed statistic of the weakest test each retained edge survived.
    pub statistics: BTreeMap<EdgeKey, f64>,
    pub sepsets: BTreeMap<EdgeKey, Sepset>,
    pub trace: Vec<TestRecord>,
    /// Collider decisions of the majority rule, keyed by the canonical outer
    /// pair and the middle node in that pair's frame; `None` is a tie.
    collider_votes: BTreeMap<(EdgeKey, TsNode), Option<bool>>,
    /// Number of non-forced members of each recorded sepset.
    sep_sizes: BTreeMap<EdgeKey, usize>,
    bk: NormalizedBk,
    phase: usize,
    n_tests: usize,
}

/// Result of [`lpcmci_discover`].
#[derive(Debug, Clone)]
pub struct DiscoveryOutput {
    pub pag: TsGraph,
    pub strengths: BTreeMap<EdgeKey, f64>,
    pub statistics: BTreeMap<EdgeKey, f64>,
    pub sepsets: BTreeMap<EdgeKey, Sepset>,
    pub trace: Vec<TestRecord>,
    /// Number of CI tests sent to the backend.
    pub n_tests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthEntry {
    pub a: TsNode,
    pub b: TsNode,
    pub strength: f64,
    pub statistic: f64,
}

impl DiscoveryOutput {
    /// Flat per-edge strength table, in canonical edge order.
    pub fn strength_table(&self) -> Vec<StrengthEntry> {
        self.pag
            .edges()
            .map(|e| StrengthEntry {
                a: e.a,
                b: e.b,
                strength: self.strengths.get(&(e.a, e.b)).copied().unwrap_or(0.0),
                statistic: self.statistics.get(&(e.a, e.b)).copied().unwrap_or(0.0),
            })
            .collect()
    }
}

/// Every canonical candidate pair over `n_vars` variables up to `tau_max`.
pub fn candidate_keys(n_vars: usize, tau_max: usize) -> Vec<EdgeKey> {
    let mut keys = Vec::new();
    for lag in 0..=tau_max {
        for a in 0..n_vars {
            for b in 0..n_vars {
                if lag == 0 && a >= b {
                    continue;
                }
                keys.push((TsNode::new(a, lag), TsNode::new(b, 0)));
            }
        }
    }
    keys.sort_unstable();
    keys
}

/// Directional relation shifted so its later node sits at lag 0.
fn rel(x: TsNode, y: TsNode) -> (TsNode, TsNode) {
    let s = x.lag.min(y.lag);
    (TsNode::new(x.var, x.lag - s), TsNode::new(y.var, y.lag - s))
}

fn shift(n: TsNode, by: usize) -> TsNode {
    TsNode::new(n.var, n.lag + by)
}

impl DiscoveryState {
    pub fn new(n_vars: usize, tau_max: usize, bk: Option<&BackgroundKnowledge>) -> Result<Self, DiscoveryError> {
        let bk = match bk {
            Some(bk) => bk.normalize(n_vars, tau_max)?,
            None => NormalizedBk::default(),
        };
        let mut st = DiscoveryState {
            n_vars,
            tau_max,
            marks: BTreeMap::new(),
            parents: BTreeSet::new(),
            non_ancestors: BTreeSet::new(),
            strengths: BTreeMap::new(),
            statistics: BTreeMap::new(),
            sepsets: BTreeMap::new(),
            trace: Vec::new(),
            collider_votes: BTreeMap::new(),
            sep_sizes: BTreeMap::new(),
            bk,
            phase: 0,
            n_tests: 0,
        };
        st.reset_graph();
        Ok(st)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max
    }

    fn reset_graph(&mut self) {
        self.marks.clear();
        self.sepsets.clear();
        self.sep_sizes.clear();
        self.collider_votes.clear();
        for key in candidate_keys(self.n_vars, self.tau_max) {
            if self.bk.forbidden.contains(&key) {
                self.sepsets.insert(key, Sepset::Forbidden);
            } else {
                self.marks.insert(key, (Edgemark::Circle, Edgemark::Circle));
            }
        }
    }

    pub fn pag(&self) -> TsGraph {
        TsGraph::from_canonical(self.n_vars, self.tau_max, GraphKind::PAG, self.marks.clone())
    }

    fn window(&self) -> Vec<TsNode> {
        (0..=self.tau_max)
            .flat_map(|lag| (0..self.n_vars).map(move |v| TsNode::new(v, lag)))
            .collect()
    }

    fn in_window(&self, n: TsNode) -> bool {
        n.lag <= self.tau_max
    }

    pub fn adjacent(&self, x: TsNode, y: TsNode) -> bool {
        x != y && self.marks.contains_key(&canonical_pair(x, y).0)
    }

    fn neighbors(&self, x: TsNode) -> Vec<TsNode> {
        self.window().into_iter().filter(|&w| self.adjacent(x, w)).collect()
    }

    pub fn is_parent(&self, p: TsNode, c: TsNode) -> bool {
        self.parents.contains(&rel(p, c))
    }

    /// Known non-ancestorship, including what time order implies.
    pub fn is_non_ancestor(&self, x: TsNode, y: TsNode) -> bool {
        x.lag < y.lag || self.non_ancestors.contains(&rel(x, y))
    }

    fn known_parents(&self, y: TsNode) -> Vec<TsNode> {
        self.neighbors(y)
            .into_iter()
            .filter(|&p| self.is_parent(p, y))
            .collect()
    }

    /// Reset the working graph to complete-with-circles, keeping parents,
    /// non-ancestors and strengths.
    pub fn reinitialize_keep_parents(&mut self) {
        self.reset_graph();
    }

    fn record(&mut self, x: TsNode, y: TsNode, cond: &[TsNode], out: &CiOutcome, independent: bool, cfg: &DiscoveryConfig) {
        if cfg.record_trace {
            self.trace.push(TestRecord {
                phase: self.phase,
                x,
                y,
                cond: cond.to_vec(),
                statistic: out.statistic,
                pvalue: out.pvalue,
                independent,
            });
        }
    }

    fn note_strength(&mut self, key: EdgeKey, out: &CiOutcome) {
        let s = out.statistic.abs().min(1.0);
        let weaker = self.strengths.get(&key).is_none_or(|&cur| s < cur);
        if weaker {
            self.strengths.insert(key, s);
            self.statistics.insert(key, out.statistic);
        }
    }

    /// Forced members of every conditioning set for the pair: their known
    /// parents inside the window.
    fn forced_set(&self, a: TsNode, b: TsNode) -> Vec<TsNode> {
        let mut set: BTreeSet<TsNode> = BTreeSet::new();
        for y in [a, b] {
            for p in self.known_parents(y) {
                if p != a && p != b {
                    set.insert(p);
                }
            }
        }
        set.into_iter().collect()
    }

    fn useful_candidate(&self, z: TsNode, a: TsNode, b: TsNode) -> bool {
        z != a && z != b && !(self.is_non_ancestor(z, a) && self.is_non_ancestor(z, b))
    }

    /// Nodes reachable from `x` by paths whose inner nodes are colliders or
    /// sit in triangles, up to `max_len` edges.
    fn possible_dsep(&self, x: TsNode, max_len: usize) -> BTreeSet<TsNode> {
        let mut out = BTreeSet::new();
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        for n in self.neighbors(x) {
            out.insert(n);
            if seen.insert((x, n)) {
                queue.push_back((x, n, 1usize));
            }
        }
        while let Some((prev, cur, depth)) = queue.pop_front() {
            if depth >= max_len {
                continue;
            }
            for next in self.neighbors(cur) {
                if next == prev || next == x {
                    continue;
                }
                let collider = self.mark_at(cur, prev) == Some(Edgemark::Head)
                    && self.mark_at(cur, next) == Some(Edgemark::Head);
                if (collider || self.adjacent(prev, next)) && seen.insert((cur, next)) {
                    out.insert(next);
                    queue.push_back((cur, next, depth + 1));
                }
            }
        }
        out.remove(&x);
        out
    }

    /// Window nodes with a possibly directed path into `x` or `y`.
    fn possible_ancestors(&self, targets: &[TsNode]) -> BTreeSet<TsNode> {
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<TsNode> = targets.iter().copied().collect();
        let mut seen: BTreeSet<TsNode> = targets.iter().copied().collect();
        while let Some(w) = queue.pop_front() {
            for z in self.neighbors(w) {
                let into = self.mark_at(z, w) != Some(Edgemark::Head) && self.mark_at(w, z) != Some(Edgemark::Tail);
                if into && z.lag >= w.lag && seen.insert(z) {
                    out.insert(z);
                    queue.push_back(z);
                }
            }
        }
        for t in targets {
            out.remove(t);
        }
        out
    }

    /// Mark at the `x` end of the window edge `x - y`.
    pub fn mark_at(&self, x: TsNode, y: TsNode) -> Option<Edgemark> {
        if x == y {
            return None;
        }
        let (key, _, swapped) = canonical_pair(x, y);
        self.marks
            .get(&key)
            .map(|&(ma, mb)| if swapped { mb } else { ma })
    }

    fn cached_test<B: CiBackend + ?Sized>(
        &mut self,
        backend: &B,
        cache: &mut TestCache,
        key: EdgeKey,
        cond: &[TsNode],
        cfg: &DiscoveryConfig,
    ) -> Result<(CiOutcome, bool), DiscoveryError> {
        let (a, b) = key;
        let ck = (key, cond.to_vec());
        let out = match cache.get(&ck) {
            Some(o) => *o,
            None => {
                let o = backend.test(&CiQuery::new(a, b, cond.iter().copied()))?;
                self.n_tests += 1;
                cache.insert(ck, o);
                o
            }
        };
        let independent = ci_decide(&out, cfg.alpha) == CiDecision::Independent;
        self.record(a, b, cond, &out, independent, cfg);
        Ok((out, independent))
    }

    fn run_test<B: CiBackend + ?Sized>(
        &mut self,
        backend: &B,
        cache: &mut TestCache,
        key: EdgeKey,
        cond: Vec<TsNode>,
        n_free: usize,
        cfg: &DiscoveryConfig,
    ) -> Result<bool, DiscoveryError> {
        let (out, independent) = self.cached_test(backend, cache, key, &cond, cfg)?;
        if independent {
            self.sepsets.insert(key, Sepset::Set(cond));
            self.sep_sizes.insert(key, n_free);
        } else {
            self.note_strength(key, &out);
        }
        Ok(independent)
    }

    /// One PC-stable sweep at conditioning size `p`. Returns the removed
    /// keys and whether any edge still had `p` candidates.
    fn sweep<B: CiBackend + ?Sized>(
        &mut self,
        backend: &B,
        cfg: &DiscoveryConfig,
        cache: &mut TestCache,
        p: usize,
        extended: bool,
    ) -> Result<(Vec<EdgeKey>, bool), DiscoveryError> {
        let snapshot = self.clone_without_trace();
        let keys: Vec<EdgeKey> = snapshot.marks.keys().copied().collect();
        let mut removed = Vec::new();
        let mut any = false;
        for key in keys {
            let (a, b) = key;
            let forced = snapshot.forced_set(a, b);
            let pools: Vec<Vec<TsNode>> = if extended {
                let mut pool: BTreeSet<TsNode> = BTreeSet::new();
                for x in [a, b] {
                    pool.extend(snapshot.neighbors(x));
                    pool.extend(snapshot.possible_dsep(x, cfg.pds_path_len));
                }
                vec![pool
                    .into_iter()
                    .filter(|&z| snapshot.useful_candidate(z, a, b) && !forced.contains(&z))
                    .collect()]
            } else {
                [(a, b), (b, a)]
                    .into_iter()
                    .map(|(x, _)| {
                        snapshot
                            .neighbors(x)
                            .into_iter()
                            .filter(|&z| snapshot.useful_candidate(z, a, b) && !forced.contains(&z))
                            .collect()
                    })
                    .collect()
            };
            let mut independent = false;
            'pools: for pool in &pools {
                if pool.len() < p {
                    continue;
                }
                any = true;
                for combo in Combinations::new(pool.len(), p) {
                    let mut cond: Vec<TsNode> = combo.iter().map(|&i| pool[i]).chain(forced.iter().copied()).collect();
                    cond.sort_unstable();
                    if self.run_test(backend, cache, key, cond, p, cfg)? {
                        independent = true;
                        break 'pools;
                    }
                }
            }
            if !independent && extended && p == 0 {
                // one more test conditioning on every possible ancestor
                let mut cond: BTreeSet<TsNode> = snapshot
                    .possible_ancestors(&[a, b])
                    .into_iter()
                    .filter(|&z| snapshot.in_window(z))
                    .collect();
                cond.extend(forced.iter().copied());
                if !cond.is_empty() {
                    let n_free = cond.len() - forced.len();
                    independent = self.run_test(backend, cache, key, cond.into_iter().collect(), n_free, cfg)?;
                }
            }
            if independent {
                removed.push(key);
            }
        }
        for key in &removed {
            self.marks.remove(key);
            self.strengths.remove(key);
            self.statistics.remove(key);
        }
        Ok((removed, any))
    }

    fn clone_without_trace(&self) -> DiscoveryState {
        DiscoveryState {
            n_vars: self.n_vars,
            tau_max: self.tau_max,
            marks: self.marks.clone(),
            parents: self.parents.clone(),
            non_ancestors: self.non_ancestors.clone(),
            strengths: BTreeMap::new(),
            statistics: BTreeMap::new(),
            sepsets: BTreeMap::new(),
            trace: Vec::new(),
            collider_votes: BTreeMap::new(),
            sep_sizes: BTreeMap::new(),
            bk: self.bk.clone(),
            phase: self.phase,
            n_tests: 0,
        }
    }

    fn run_phase<B: CiBackend + ?Sized>(
        &mut self,
        backend: &B,
        cfg: &DiscoveryConfig,
        cache: &mut TestCache,
        extended: bool,
    ) -> Result<(), DiscoveryError> {
        for _ in 0..MAX_PASSES {
            let mut changed = false;
            for p in 0..=cfg.max_cond_size {
                let (removed, any) = self.sweep(backend, cfg, cache, p, extended)?;
                if !removed.is_empty() {
                    changed = true;
                }
                if cfg.collider_rule == ColliderRule::Majority {
                    self.collider_votes(backend, cfg, cache)?;
                }
                self.orient();
                changed |= self.update_knowledge();
                if !any {
                    break;
                }
            }
            if !changed {
                break;
            }
        }
        self.phase += 1;
        Ok(())
    }

    /// Size sweeps over adjacency-based conditioning sets with interleaved
    /// orientation, repeated until nothing changes.
    pub fn ancestral_phase<B: CiBackend + ?Sized>(
        &mut self,
        backend: &B,
        cfg: &DiscoveryConfig,
    ) -> Result<(), DiscoveryError> {
        let mut cache = HashMap::new();
        self.run_phase(backend, cfg, &mut cache, false)
    }

    /// Retest with candidates extended by path-based nodes and the set of
    /// possible ancestors of the pair.
    pub fn confounder_phase<B: CiBackend + ?Sized>(
        &mut self,
        backend: &B,
        cfg: &DiscoveryConfig,
    ) -> Result<(), DiscoveryError> {
        let mut cache = HashMap::new();
        self.run_phase(backend, cfg, &mut cache, true)
    }

    /// Refresh parent and non-ancestor knowledge from the current marks.
    /// Returns whether anything changed.
    pub fn update_knowledge(&mut self) -> bool {
        let old_parents = self.parents.clone();
        let old_non = self.non_ancestors.clone();
        let marks = self.marks.clone();
        self.parents.retain(|&(p, c)| marks.contains_key(&canonical_pair(p, c).0));
        self.non_ancestors.clear();
        for (&(a, b), &(ma, mb)) in &marks {
            for (x, mx, y, my) in [(a, ma, b, mb), (b, mb, a, ma)] {
                if mx == Edgemark::Head {
                    self.non_ancestors.insert(rel(x, y));
                    self.parents.remove(&rel(x, y));
                } else if mx == Edgemark::Tail && my == Edgemark::Head {
                    self.parents.insert(rel(x, y));
                }
            }
        }
        old_parents != self.parents || old_non != self.non_ancestors
    }

    /// Re-derive every mark from the skeleton, sepsets and background
    /// knowledge.
    pub fn orient(&mut self) {
        for m in self.marks.values_mut() {
            *m = (Edgemark::Circle, Edgemark::Circle);
        }
        let forced: Vec<(EndKey, Edgemark)> = self.bk.forced.iter().map(|(k, m)| (*k, *m)).collect();
        for ((key, at_b), mark) in forced {
            if let Some(m) = self.marks.get_mut(&key) {
                if at_b {
                    m.1 = mark;
                } else {
                    m.0 = mark;
                }
            }
        }
        self.apply_time_order();
        self.orient_colliders();
        self.orientation_rules();
    }

    /// The later end of a lagged edge cannot be an ancestor of the earlier
    /// end, so it gets a head.
    pub fn apply_time_order(&mut self) {
        let forced = &self.bk.forced;
        for (&key, m) in self.marks.iter_mut() {
            if key.0.lag > 0 && !forced.contains_key(&(key, true)) && m.1 != Edgemark::Conflict {
                m.1 = Edgemark::Head;
            }
        }
    }

    fn in_sepset(&self, x: TsNode, mid: TsNode, y: TsNode) -> Option<bool> {
        let (key, s, _) = canonical_pair(x, y);
        match self.sepsets.get(&key)? {
            Sepset::Forbidden => None,
            Sepset::Set(set) => Some(mid.lag >= s && set.contains(&TsNode::new(mid.var, mid.lag - s))),
        }
    }

    /// Majority-rule collider decisions for every unshielded triple.
    fn collider_votes<B: CiBackend + ?Sized>(
        &mut self,
        backend: &B,
        cfg: &DiscoveryConfig,
        cache: &mut TestCache,
    ) -> Result<(), DiscoveryError> {
        self.collider_votes.clear();
        for (a, b, c) in self.unshielded_triples() {
            let (key, s, _) = canonical_pair(a, c);
            if b.lag < s {
                continue;
            }
            let mid = TsNode::new(b.var, b.lag - s);
            if self.collider_votes.contains_key(&(key, mid)) {
                continue;
            }
            let Some(Sepset::Set(recorded)) = self.sepsets.get(&key).cloned() else {
                continue;
            };
            let p = self.sep_sizes.get(&key).copied().unwrap_or(recorded.len());
            let (ka, kc) = key;
            let forced = self.forced_set(ka, kc);
            let mut conds: BTreeSet<Vec<TsNode>> = BTreeSet::from([recorded]);
            for side in [ka, kc] {
                let pool: Vec<TsNode> = self
                    .neighbors(side)
                    .into_iter()
                    .filter(|&z| self.useful_candidate(z, ka, kc) && !forced.contains(&z))
                    .collect();
                for combo in Combinations::new(pool.len(), p) {
                    let mut cond: Vec<TsNode> = combo.iter().map(|&i| pool[i]).chain(forced.iter().copied()).collect();
                    cond.sort_unstable();
                    conds.insert(cond);
                }
            }
            let (mut with_mid, mut total) = (0usize, 0usize);
            for cond in conds {
                if self.cached_test(backend, cache, key, &cond, cfg)?.1 {
                    total += 1;
                    with_mid += cond.contains(&mid) as usize;
                }
            }
            let vote = match (2 * with_mid).cmp(&total) {
                std::cmp::Ordering::Less => Some(true),
                std::cmp::Ordering::Greater => Some(false),
                std::cmp::Ordering::Equal => None,
            };
            self.collider_votes.insert((key, mid), vote);
        }
        Ok(())
    }

    /// Window triples `(a, b, c)` with `a - b - c` and `a`, `c` non-adjacent,
    /// each listed once.
    fn unshielded_triples(&self) -> Vec<(TsNode, TsNode, TsNode)> {
        let view = View::new(self);
        let mut out = Vec::new();
        for bi in 0..view.nw {
            let nb = &view.nbrs[bi];
            for (i, &ai) in nb.iter().enumerate() {
                for &ci in &nb[i + 1..] {
                    if !view.adj(ai, ci) {
                        out.push((view.nodes[ai], view.nodes[bi], view.nodes[ci]));
                    }
                }
            }
        }
        out
    }

    /// Whether `b` is a collider between `a` and `c`: the majority vote when
    /// one was taken, sepset membership otherwise.
    fn is_collider(&self, a: TsNode, b: TsNode, c: TsNode) -> Option<bool> {
        let (key, s, _) = canonical_pair(a, c);
        if b.lag >= s {
            if let Some(&vote) = self.collider_votes.get(&(key, TsNode::new(b.var, b.lag - s))) {
                return vote;
            }
        }
        self.in_sepset(a, b, c).map(|inside| !inside)
    }

    /// Heads into `b` on every unshielded triple `a - b - c` judged a
    /// collider.
    pub fn orient_colliders(&mut self) {
        let mut props = Proposals::default();
        for (a, b, c) in self.unshielded_triples() {
            if self.is_collider(a, b, c) == Some(true) {
                props.add(b, a, Edgemark::Head);
                props.add(b, c, Edgemark::Head);
            }
        }
        self.apply(props);
    }

    /// Completion rules R1, R2, R3, R8 and R9 plus tail-implies-head, run
    /// in simultaneous rounds until no mark changes.
    pub fn orientation_rules(&mut self) {
        for _ in 0..MAX_RULE_ROUNDS {
            let view = View::new(self);
            let props = rule_proposals(&view, &|a, b, c| self.is_collider(a, b, c) == Some(false));
            if !self.apply(props) {
                break;
            }
        }
    }

    /// Apply a round of proposals. Returns whether any mark changed.
    fn apply(&mut self, props: Proposals) -> bool {
        let mut changed = false;
        for ((key, at_b), (head, tail)) in props.0 {
            if self.bk.forced.contains_key(&(key, at_b)) {
                continue;
            }
            let Some(m) = self.marks.get_mut(&key) else { continue };
            let cur = if at_b { m.1 } else { m.0 };
            let lagged_early_end = key.0.lag > 0 && !at_b;
            let new = match (cur, head, tail) {
                (Edgemark::Conflict, _, _) => continue,
                (Edgemark::Circle, true, true) if lagged_early_end => continue,
                (_, true, true) => Edgemark::Conflict,
                (Edgemark::Circle, true, false) => Edgemark::Head,
                (Edgemark::Circle, false, true) => Edgemark::Tail,
                (Edgemark::Head, true, false) | (Edgemark::Tail, false, true) => continue,
                (_, false, false) => continue,
                _ => Edgemark::Conflict,
            };
            if new != cur {
                if at_b {
                    m.1 = new;
                } else {
                    m.0 = new;
                }
                changed = true;
            }
        }
        changed
    }
}

type TestCache = HashMap<(EdgeKey, Vec<TsNode>), CiOutcome>;

/// Dense snapshot of the window marks for rule evaluation.
struct View {
    nw: usize,
    nodes: Vec<TsNode>,
    /// `m[x * nw + y]` is the mark at `x` on the edge `x - y`.
    m: Vec<Option<Edgemark>>,
    nbrs: Vec<Vec<usize>>,
}

impl View {
    fn new(st: &DiscoveryState) -> View {
        let n = st.n_vars;
        let nodes = st.window();
        let nw = nodes.len();
        let idx = |t: TsNode| t.lag * n + t.var;
        let mut m = vec![None; nw * nw];
        for (&(a, b), &(ma, mb)) in &st.marks {
            for s in 0..=(st.tau_max - a.lag) {
                let (x, y) = (idx(shift(a, s)), idx(shift(b, s)));
                m[x * nw + y] = Some(ma);
                m[y * nw + x] = Some(mb);
            }
        }
        let nbrs = (0..nw)
            .map(|x| (0..nw).filter(|&y| m[x * nw + y].is_some()).collect())
            .collect();
        View { nw, nodes, m, nbrs }
    }

    fn mark(&self, x: usize, y: usize) -> Option<Edgemark> {
        self.m[x * self.nw + y]
    }

    fn is(&self, x: usize, y: usize, mark: Edgemark) -> bool {
        self.mark(x, y) == Some(mark)
    }

    fn adj(&self, x: usize, y: usize) -> bool {
        self.m[x * self.nw + y].is_some()
    }

    /// `x` may be an ancestor of `y` along this edge.
    fn possibly_into(&self, x: usize, y: usize) -> bool {
        self.adj(x, y) && !self.is(x, y, Edgemark::Head) && !self.is(y, x, Edgemark::Tail)
    }
}

/// Per end: (head proposed, tail proposed).
#[derive(Default)]
struct Proposals(BTreeMap<EndKey, (bool, bool)>);

impl Proposals {
    /// Propose `mark` at the `x` end of `x - y`.
    fn add(&mut self, x: TsNode, y: TsNode, mark: Edgemark) {
        let e = self.0.entry(end_key(x, y)).or_default();
        match mark {
            Edgemark::Head => e.0 = true,
            Edgemark::Tail => e.1 = true,
            _ => {}
        }
    }
}

/// `non_collider(a, b, c)` tells whether the unshielded triple `a - b - c`
/// is a definite non-collider.
fn rule_proposals(v: &View, non_collider: &dyn Fn(TsNode, TsNode, TsNode) -> bool) -> Proposals {
    use Edgemark::{Circle, Head, Tail};
    let mut props = Proposals::default();
    let node = |i: usize| v.nodes[i];
    for x in 0..v.nw {
        for &y in &v.nbrs[x] {
            if v.is(x, y, Tail) && v.is(y, x, Circle) {
                props.add(node(y), node(x), Head);
            }
        }
    }
    for b in 0..v.nw {
        let nb = &v.nbrs[b];
        for &a in nb {
            for &c in nb {
                if a == c {
                    continue;
                }
                // R1
                if v.is(b, a, Head) && v.is(b, c, Circle) && !v.adj(a, c) && non_collider(node(a), node(b), node(c)) {
                    props.add(node(b), node(c), Tail);
                    props.add(node(c), node(b), Head);
                }
                if v.adj(a, c) {
                    // R2
                    if v.is(c, a, Circle)
                        && ((v.is(a, b, Tail) && v.is(b, a, Head) && v.is(c, b, Head))
                            || (v.is(b, a, Head) && v.is(b, c, Tail) && v.is(c, b, Head)))
                    {
                        props.add(node(c), node(a), Head);
                    }
                    // R8
                    if v.is(a, c, Circle)
                        && v.is(c, a, Head)
                        && v.is(a, b, Tail)
                        && (v.is(b, a, Head) || v.is(b, a, Circle))
                        && v.is(b, c, Tail)
                        && v.is(c, b, Head)
                    {
                        props.add(node(a), node(c), Tail);
                    }
                }
                // R3
                if a < c && v.is(b, a, Head) && v.is(b, c, Head) && !v.adj(a, c) {
                    for &d in nb {
                        if d != a
                            && d != c
                            && v.is(d, a, Circle)
                            && v.is(d, c, Circle)
                            && v.is(b, d, Circle)
                            && v.adj(d, a)
                            && v.adj(d, c)
                            && non_collider(node(a), node(d), node(c))
                        {
                            props.add(node(b), node(d), Head);
                        }
                    }
                }
            }
        }
    }
    // R9: a o-> c with an uncovered possibly directed path a, b, ..., c
    // where b and c are not adjacent
    for a in 0..v.nw {
        for &c in &v.nbrs[a] {
            if !(v.is(a, c, Circle) && v.is(c, a, Head)) {
                continue;
            }
            let found = v.nbrs[a]
                .iter()
                .any(|&b| b != c && !v.adj(b, c) && v.possibly_into(a, b) && uncovered_pd_path(v, a, b, c));
            if found {
                props.add(node(a), node(c), Tail);
            }
        }
    }
    props
}

/// Depth-first search for an uncovered possibly directed path
/// `prev, cur, ..., target` avoiding revisits.
fn uncovered_pd_path(v: &View, prev: usize, cur: usize, target: usize) -> bool {
    let mut on_path = vec![false; v.nw];
    on_path[prev] = true;
    on_path[cur] = true;
    fn go(v: &View, prev: usize, cur: usize, target: usize, on_path: &mut Vec<bool>, len: usize) -> bool {
        if len >= MAX_R9_PATH {
            return false;
        }
        for &next in &v.nbrs[cur] {
            if on_path[next] || v.adj(prev, next) || !v.possibly_into(cur, next) {
                continue;
            }
            if next == target {
                return true;
            }
            on_path[next] = true;
            let hit = go(v, cur, next, target, on_path, len + 1);
            on_path[next] = false;
            if hit {
                return true;
            }
        }
        false
    }
    go(v, prev, cur, target, &mut on_path, 2)
}

/// Lexicographic `k`-subsets of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Run discovery: preliminary ancestral phases with re-initialization, one
/// more ancestral phase, then the confounder phase.
pub fn lpcmci_discover<B: CiBackend + ?Sized>(
    backend: &B,
    cfg: &DiscoveryConfig,
    bk: Option<&BackgroundKnowledge>,
) -> Result<DiscoveryOutput, DiscoveryError> {
    cfg.validate()?;
    let mut st = DiscoveryState::new(backend.n_vars(), cfg.tau_max, bk)?;
    for _ in 0..cfg.n_preliminary_phases {
        st.ancestral_phase(backend, cfg)?;
        st.reinitialize_keep_parents();
    }
    st.ancestral_phase(backend, cfg)?;
    st.confounder_phase(backend, cfg)?;
    st.orient();
    Ok(DiscoveryOutput {
        pag: st.pag(),
        strengths: st.strengths.clone(),
        statistics: st.statistics.clone(),
        sepsets: st.sepsets.clone(),
        n_tests: st.n_tests,
        trace: std::mem::take(&mut st.trace),
    })
}

/// Orient a fixed skeleton from its sepsets: time order, colliders, then the
/// completion rules. Pairs absent from `skeleton` must have a sepset.
pub fn orient_skeleton(
    n_vars: usize,
    tau_max: usize,
    skeleton: &BTreeSet<EdgeKey>,
    sepsets: &BTreeMap<EdgeKey, Sepset>,
) -> TsGraph {
    let mut st = DiscoveryState::new(n_vars, tau_max, None).expect("no background knowledge");
    st.marks.retain(|k, _| skeleton.contains(k));
    st.sepsets = sepsets.clone();
    st.orient();
    st.pag()
}

/// Drop edges whose strength is below `threshold`; missing strengths count
/// as zero.
pub fn prune_weak_links(pag: &TsGraph, strengths: &BTreeMap<EdgeKey, f64>, threshold: f64) -> TsGraph {
    let kept = pag
        .edge_map()
        .iter()
        .filter(|(k, _)| strengths.get(k).copied().unwrap_or(0.0) >= threshold)
        .map(|(k, m)| (*k, *m))
        .collect();
    TsGraph::from_canonical(pag.n_vars(), pag.tau_max(), pag.kind(), kept)
}

/// Random guess: each candidate adjacency with probability 1/2, typed
/// uniformly as one of `->`, `<-`, `<->`, `o->`, `<-o`.
pub fn random_baseline(n_vars: usize, tau_max: usize, seed: u64, auto_edges_universe: bool) -> TsGraph {
    use Edgemark::{Circle, Head, Tail};
    const CLASSES: [(Edgemark, Edgemark); 5] = [(Tail, Head), (Head, Tail), (Head, Head), (Circle, Head), (Head, Circle)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = BTreeMap::new();
    for key in candidate_keys(n_vars, tau_max) {
        if !auto_edges_universe && key.0.var == key.1.var {
            continue;
        }
        if rng.gen_bool(0.5) {
            edges.insert(key, CLASSES[rng.gen_range(0..CLASSES.len())]);
        }
    }
    TsGraph::from_canonical(n_vars, tau_max, GraphKind::PAG, edges)
}
