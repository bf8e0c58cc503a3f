//! Conditional-independence backends.
//!
//! [`PartialCorrelation`] runs a Fisher-z test on lag-aligned data;
//! [`OracleCi`] answers from d-separation on the true graph.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::graph::{TsGraph, TsNode};
use crate::oracle::{OracleError, SeparationOracle, SeparationQuery};
use crate::scm::ObservedDataset;

/// Relative ridge added to the normal equations.
const RIDGE: f64 = 1e-10;
/// Smallest admissible pivot of the regularized normal equations,
/// relative to the largest one.
const MIN_PIVOT: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CiError {
    #[error("{available} samples are too few for a conditioning set of size {cond_size}")]
    InsufficientSamples { available: usize, cond_size: usize },
    #[error("conditioning variables are collinear")]
    SingularRegression,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CiQuery {
    pub i: TsNode,
    pub j: TsNode,
    pub cond: Vec<TsNode>,
}

impl CiQuery {
    pub fn new(i: TsNode, j: TsNode, cond: impl IntoIterator<Item = TsNode>) -> Self {
        let mut cond: Vec<TsNode> = cond.into_iter().collect();
        cond.sort_unstable();
        cond.dedup();
        CiQuery { i, j, cond }
    }

    fn validate(&self) -> Result<(), CiError> {
        if self.i == self.j {
            return Err(CiError::InvalidQuery("i and j coincide".into()));
        }
        if self.cond.contains(&self.i) || self.cond.contains(&self.j) {
            return Err(CiError::InvalidQuery("i or j in conditioning set".into()));
        }
        Ok(())
    }

    pub fn max_lag(&self) -> usize {
        self.cond
            .iter()
            .chain([&self.i, &self.j])
            .map(|n| n.lag)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiOutcome {
    /// Signed partial correlation.
    pub statistic: f64,
    pub pvalue: f64,
    pub effective_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiDecision {
    Independent,
    Dependent,
}

/// Independent iff `pvalue > alpha`; a p-value equal to alpha keeps the
/// dependence.
pub fn ci_decide(outcome: &CiOutcome, alpha: f64) -> CiDecision {
    if outcome.pvalue > alpha {
        CiDecision::Independent
    } else {
        CiDecision::Dependent
    }
}

pub trait CiBackend {
    /// Number of variables the backend answers queries about.
    fn n_vars(&self) -> usize;

    fn test(&self, query: &CiQuery) -> Result<CiOutcome, CiError>;
}

/// Linear partial-correlation test with a Fisher-z p-value.
pub struct PartialCorrelation<'a> {
    data: &'a ObservedDataset,
}

impl<'a> PartialCorrelation<'a> {
    pub fn new(data: &'a ObservedDataset) -> Self {
        PartialCorrelation { data }
    }
}

impl CiBackend for PartialCorrelation<'_> {
    fn n_vars(&self) -> usize {
        self.data.n_vars()
    }

    fn test(&self, q: &CiQuery) -> Result<CiOutcome, CiError> {
        partial_correlation(self.data, q)
    }
}

/// Residual correlation of lag-aligned `i` and `j` after least-squares
/// regression on the conditioning series.
pub fn partial_correlation(data: &ObservedDataset, q: &CiQuery) -> Result<CiOutcome, CiError> {
    q.validate()?;
    let n_vars = data.n_vars();
    for node in q.cond.iter().chain([&q.i, &q.j]) {
        if node.var >= n_vars {
            return Err(CiError::InvalidQuery(format!("variable {} out of range", node.var)));
        }
    }
    let t_len = data.t_len();
    let max_lag = q.max_lag();
    let k = q.cond.len();
    let n = t_len.saturating_sub(max_lag);
    if n <= k + 3 {
        return Err(CiError::InsufficientSamples {
            available: n,
            cond_size: k,
        });
    }

    // column 0 = i, 1 = j, then the conditioning nodes
    let nodes: Vec<TsNode> = [q.i, q.j].into_iter().chain(q.cond.iter().copied()).collect();
    let m = nodes.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    for node in &nodes {
        let col = data.values.column(node.var);
        let start = max_lag - node.lag;
        let series = &col.as_slice()[start..start + n];
        let mean = series.iter().sum::<f64>() / n as f64;
        cols.push(series.iter().map(|x| x - mean).collect());
    }
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let s: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
    }

    let (sxx, syy, sxy) = if k == 0 {
        (gram[(0, 0)], gram[(1, 1)], gram[(0, 1)])
    } else {
        let mut zz = gram.view((2, 2), (k, k)).into_owned();
        let scale = (0..k).map(|d| zz[(d, d)]).sum::<f64>() / k as f64;
        if scale <= 0.0 {
            return Err(CiError::SingularRegression);
        }
        for d in 0..k {
            zz[(d, d)] += RIDGE * scale;
        }
        let chol = zz.cholesky().ok_or(CiError::SingularRegression)?;
        let l = chol.l();
        let pivots: Vec<f64> = (0..k).map(|d| l[(d, d)] * l[(d, d)]).collect();
        let max_p = pivots.iter().cloned().fold(0.0, f64::max);
        if pivots.iter().any(|&p| p < MIN_PIVOT * max_p) {
            return Err(CiError::SingularRegression);
        }
        let zx: DVector<f64> = gram.view((2, 0), (k, 1)).column(0).into_owned();
        let zy: DVector<f64> = gram.view((2, 1), (k, 1)).column(0).into_owned();
        let bx = chol.solve(&zx);
        let by = chol.solve(&zy);
        // residual inner products from the normal equations
        let sxx = gram[(0, 0)] - 2.0 * zx.dot(&bx) + bx.dot(&(gram.view((2, 2), (k, k)) * &bx));
        let syy = gram[(1, 1)] - 2.0 * zy.dot(&by) + by.dot(&(gram.view((2, 2), (k, k)) * &by));
        let sxy = gram[(0, 1)] - zx.dot(&by) - zy.dot(&bx) + bx.dot(&(gram.view((2, 2), (k, k)) * &by));
        (sxx, syy, sxy)
    };
    let tiny = 1e-12;
    if sxx <= tiny * gram[(0, 0)].max(f64::MIN_POSITIVE) || syy <= tiny * gram[(1, 1)].max(f64::MIN_POSITIVE) {
        return Err(CiError::SingularRegression);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(CiOutcome {
        statistic: r,
        pvalue: fisher_z_pvalue(r, n, k),
        effective_n: n,
    })
}

/// Two-sided p-value of a (partial) correlation from `n` samples with `k`
/// conditioning variables.
pub fn fisher_z_pvalue(r: f64, n: usize, k: usize) -> f64 {
    let dof = n as f64 - k as f64 - 3.0;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let z = r.atanh() * dof.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z.abs())).clamp(0.0, 1.0)
}

/// Perfect CI information: independence exactly when d-separated in the
/// stationary unrolling of the true window DAG. Queries use observed variable
/// indices, which are mapped back to the DAG's variables.
pub struct OracleCi {
    oracle: SeparationOracle,
    observed: Vec<usize>,
    cache: RefCell<HashMap<CiQuery, bool>>,
}

impl OracleCi {
    pub fn new(window_dag: &TsGraph, observed: &[usize], padding: usize) -> Result<Self, CiError> {
        if let Some(&bad) = observed.iter().find(|&&v| v >= window_dag.n_vars()) {
            return Err(CiError::InvalidQuery(format!("observed variable {bad} out of range")));
        }
        Ok(OracleCi {
            oracle: SeparationOracle::new(window_dag, padding)?,
            observed: observed.to_vec(),
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn separation_oracle(&self) -> &SeparationOracle {
        &self.oracle
    }

    pub fn to_dag_node(&self, n: TsNode) -> Result<TsNode, CiError> {
        self.observed
            .get(n.var)
            .map(|&v| TsNode::new(v, n.lag))
            .ok_or_else(|| CiError::InvalidQuery(format!("variable {} out of range", n.var)))
    }

    pub fn separated(&self, q: &CiQuery) -> Result<bool, CiError> {
        q.validate()?;
        if let Some(&hit) = self.cache.borrow().get(q) {
            return Ok(hit);
        }
        let sq = SeparationQuery {
            x: self.to_dag_node(q.i)?,
            y: self.to_dag_node(q.j)?,
            cond: q.cond.iter().map(|&c| self.to_dag_node(c)).collect::<Result<_, _>>()?,
        };
        let sep = self.oracle.separated(&sq)?;
        self.cache.borrow_mut().insert(q.clone(), sep);
        Ok(sep)
    }
}

impl CiBackend for OracleCi {
    fn n_vars(&self) -> usize {
        self.observed.len()
    }

    fn test(&self, q: &CiQuery) -> Result<CiOutcome, CiError> {
        let sep = self.separated(q)?;
        Ok(CiOutcome {
            statistic: if sep { 0.0 } else { 1.0 },
            pvalue: if sep { 1.0 } else { 0.0 },
            effective_n: 0,
        })
    }
}

/// `oracle_ci` as a free function over a window DAG with every variable observed.
pub fn oracle_ci(window_dag: &TsGraph, q: &CiQuery) -> Result<CiOutcome, CiError> {
    let all: Vec<usize> = (0..window_dag.n_vars()).collect();
    OracleCi::new(window_dag, &all, crate::oracle::DEFAULT_PADDING)?.test(q)
}
