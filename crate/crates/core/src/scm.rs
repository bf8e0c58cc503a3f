//! Random linear structural causal models with autocorrelation and latent
//! variables, and their simulation.
//!
//! Every variable follows
//! `V_t^j = a_j V_{t-1}^j + sum_i c_i V_{t-tau_i}^i + eta_t^j`
//! with Gaussian noise of a per-variable scale.

use std::collections::BTreeSet;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, GraphKind, TsEdge, TsGraph, TsNode};

/// Steps simulated and discarded before recording.
pub const BURN_IN: usize = 200;
/// Any simulated magnitude above this counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("no stationary model found in {0} draws")]
    RetriesExhausted(usize),
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("latent index {index} out of range for {n_vars} variables")]
    BadLatentIndex { index: usize, n_vars: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// How the second parameter of the noise distribution is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseParam {
    #[default]
    StdDev,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_vars_total: usize,
    pub cross_links: usize,
    pub latent_count: usize,
    pub contemporaneous_fraction: f64,
    pub auto_range: (f64, f64),
    pub cross_range: (f64, f64),
    pub noise_range: (f64, f64),
    pub noise_param: NoiseParam,
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_vars_total: 11,
            cross_links: 11,
            latent_count: 3,
            contemporaneous_fraction: 0.6,
            auto_range: (0.3, 0.6),
            cross_range: (0.2, 0.5),
            noise_range: (0.5, 2.0),
            noise_param: NoiseParam::StdDev,
            max_retries: 100,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), ScmError> {
        let bad = |m: &str| Err(ScmError::InvalidConfig(m.to_string()));
        if self.n_vars_total == 0 {
            return bad("n_vars_total must be positive");
        }
        if self.latent_count > self.n_vars_total {
            return bad("latent_count exceeds n_vars_total");
        }
        for (name, (lo, hi)) in [
            ("auto_range", self.auto_range),
            ("cross_range", self.cross_range),
            ("noise_range", self.noise_range),
        ] {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(ScmError::InvalidConfig(format!("{name} is not ordered")));
            }
        }
        if self.noise_range.0 <= 0.0 {
            return bad("noise_range must be positive");
        }
        if !(0.0..=1.0).contains(&self.contemporaneous_fraction) {
            return bad("contemporaneous_fraction must lie in [0, 1]");
        }
        let n = self.n_vars_total;
        if self.cross_links > n * (n - 1) + n * (n - 1) / 2 {
            return bad("more cross links than available slots");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossLink {
    pub cause: usize,
    pub effect: usize,
    pub lag: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub n_vars_total: usize,
    pub auto_coeffs: Vec<f64>,
    pub cross_links: Vec<CrossLink>,
    /// Standard deviation of each variable's noise.
    pub noise_scales: Vec<f64>,
    pub latent_set: Vec<usize>,
    pub p_ts: usize,
}

/// Spec plus the seed that produced it, for run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub seed: u64,
    pub spec: ScmSpec,
}

impl ScmSpec {
    pub fn validate(&self) -> Result<(), ScmError> {
        let n = self.n_vars_total;
        let bad = |m: String| Err(ScmError::InvalidSpec(m));
        if self.auto_coeffs.len() != n || self.noise_scales.len() != n {
            return bad("per-variable vectors have the wrong length".into());
        }
        for l in &self.cross_links {
            if l.cause >= n || l.effect >= n {
                return bad(format!("link {l:?} out of range"));
            }
            if l.cause == l.effect {
                return bad(format!("cross link {l:?} is a self link"));
            }
            if l.lag > self.p_ts {
                return bad(format!("link {l:?} exceeds p_ts"));
            }
        }
        for &h in &self.latent_set {
            if h >= n {
                return Err(ScmError::BadLatentIndex { index: h, n_vars: n });
            }
        }
        if self.contemporaneous_order().is_none() {
            return bad("contemporaneous links are cyclic".into());
        }
        Ok(())
    }

    /// Topological order of the contemporaneous links, if acyclic.
    pub fn contemporaneous_order(&self) -> Option<Vec<usize>> {
        let n = self.n_vars_total;
        let mut indeg = vec![0usize; n];
        for l in self.cross_links.iter().filter(|l| l.lag == 0) {
            indeg[l.effect] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        ready.reverse();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for l in self.cross_links.iter().filter(|l| l.lag == 0 && l.cause == v) {
                indeg[l.effect] -= 1;
                if indeg[l.effect] == 0 {
                    ready.push(l.effect);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn observed_vars(&self) -> Vec<usize> {
        (0..self.n_vars_total)
            .filter(|v| !self.latent_set.contains(v))
            .collect()
    }

    /// Coefficient matrices `A_tau` with `A_tau[(effect, cause)]`.
    fn lag_matrices(&self) -> Vec<DMatrix<f64>> {
        let n = self.n_vars_total;
        let mut mats = vec![DMatrix::zeros(n, n); self.p_ts.max(1) + 1];
        for (j, &a) in self.auto_coeffs.iter().enumerate() {
            mats[1][(j, j)] += a;
        }
        for l in &self.cross_links {
            mats[l.lag][(l.effect, l.cause)] += l.coeff;
        }
        mats
    }
}

/// Spectral radius of the reduced-form companion matrix is below one.
pub fn is_stationary(spec: &ScmSpec) -> bool {
    let n = spec.n_vars_total;
    if n == 0 {
        return true;
    }
    let mats = spec.lag_matrices();
    let p = mats.len() - 1;
    let lhs = DMatrix::identity(n, n) - &mats[0];
    let Some(inv) = lhs.try_inverse() else {
        return false;
    };
    let mut companion = DMatrix::zeros(n * p, n * p);
    for (k, m) in mats.iter().enumerate().skip(1) {
        let block = &inv * m;
        companion
            .view_mut((0, (k - 1) * n), (n, n))
            .copy_from(&block);
    }
    for k in 1..p {
        companion
            .view_mut((k * n, (k - 1) * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
    }
    let radius = companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    radius < 1.0
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn draw_spec(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> ScmSpec {
    let n = cfg.n_vars_total;
    let auto_coeffs: Vec<f64> = (0..n).map(|_| uniform(rng, cfg.auto_range)).collect();

    // contemporaneous links only run forward in this order
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut rank = vec![0; n];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }

    let mut used: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut cross_links = Vec::with_capacity(cfg.cross_links);
    for _ in 0..cfg.cross_links {
        let want_contemporaneous = rng.gen_bool(cfg.contemporaneous_fraction);
        let slots = |lag: usize, used: &BTreeSet<(usize, usize, usize)>| -> Vec<(usize, usize, usize)> {
            let mut out = Vec::new();
            for cause in 0..n {
                for effect in 0..n {
                    if cause == effect || used.contains(&(cause, effect, lag)) {
                        continue;
                    }
                    if lag == 0 && rank[cause] > rank[effect] {
                        continue;
                    }
                    out.push((cause, effect, lag));
                }
            }
            out
        };
        let first = if want_contemporaneous { 0 } else { 1 };
        let mut avail = slots(first, &used);
        if avail.is_empty() {
            avail = slots(1 - first, &used);
        }
        let &(cause, effect, lag) = avail.choose(rng).expect("validated slot count");
        used.insert((cause, effect, lag));
        let magnitude = uniform(rng, cfg.cross_range);
        let coeff = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        cross_links.push(CrossLink {
            cause,
            effect,
            lag,
            coeff,
        });
    }

    let noise_scales: Vec<f64> = (0..n)
        .map(|_| {
            let draw = uniform(rng, cfg.noise_range);
            match cfg.noise_param {
                NoiseParam::StdDev => draw,
                NoiseParam::Variance => draw.sqrt(),
            }
        })
        .collect();

    let mut vars: Vec<usize> = (0..n).collect();
    vars.shuffle(rng);
    let mut latent_set: Vec<usize> = vars[..cfg.latent_count].to_vec();
    latent_set.sort_unstable();

    ScmSpec {
        n_vars_total: n,
        auto_coeffs,
        cross_links,
        noise_scales,
        latent_set,
        p_ts: 1,
    }
}

/// Draw a random stationary model; non-stationary draws are redrawn up to
/// `cfg.max_retries` times.
pub fn sample_scm(cfg: &GenConfig, seed: u64) -> Result<ScmSpec, ScmError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_retries.max(1) {
        let spec = draw_spec(cfg, &mut rng);
        if is_stationary(&spec) {
            return Ok(spec);
        }
    }
    Err(ScmError::RetriesExhausted(cfg.max_retries))
}

/// Full multivariate series, `values[(t, var)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub values: DMatrix<f64>,
    pub var_names: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }
}

/// Measured columns only. `observed_index_map[k]` is the original variable
/// behind column `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset {
    pub values: DMatrix<f64>,
    pub var_names: Vec<String>,
    pub observed_index_map: Vec<usize>,
}

impl ObservedDataset {
    /// Wrap a matrix whose columns are all observed.
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let n = values.ncols();
        ObservedDataset {
            values,
            var_names: default_names(n),
            observed_index_map: (0..n).collect(),
        }
    }

    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ScmError> {
        write_matrix_csv(path, &self.var_names, &self.values)
    }

    pub fn read_csv(path: &Path) -> Result<Self, ScmError> {
        let (names, values) = read_matrix_csv(path)?;
        let n = names.len();
        Ok(ObservedDataset {
            values,
            var_names: names,
            observed_index_map: (0..n).collect(),
        })
    }

    /// Reorder columns: new column `k` is old column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let values = DMatrix::from_fn(self.t_len(), perm.len(), |t, k| self.values[(t, perm[k])]);
        ObservedDataset {
            values,
            var_names: perm.iter().map(|&k| self.var_names[k].clone()).collect(),
            observed_index_map: perm.iter().map(|&k| self.observed_index_map[k]).collect(),
        }
    }
}

pub fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("V{i}")).collect()
}

/// Simulate `t_len` steps after a discarded burn-in.
pub fn simulate(spec: &ScmSpec, t_len: usize, seed: u64) -> Result<TimeSeriesDataset, ScmError> {
    spec.validate()?;
    if t_len == 0 {
        return Err(ScmError::InvalidConfig("t_len must be at least 1".into()));
    }
    let n = spec.n_vars_total;
    let order = spec.contemporaneous_order().expect("validated");
    let p = spec.p_ts.max(1);
    let total = BURN_IN + t_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noises: Vec<Normal<f64>> = spec
        .noise_scales
        .iter()
        .map(|&s| Normal::new(0.0, s).map_err(|e| ScmError::InvalidSpec(e.to_string())))
        .collect::<Result<_, _>>()?;

    // incoming links grouped by effect
    let mut incoming: Vec<Vec<CrossLink>> = vec![Vec::new(); n];
    for l in &spec.cross_links {
        incoming[l.effect].push(*l);
    }

    // history[k] holds the state k steps ago; history[0] is being filled
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; n]; p + 1];
    let mut out = DMatrix::zeros(t_len, n);
    for step in 0..total {
        rows.rotate_right(1);
        let eta: Vec<f64> = noises.iter().map(|d| d.sample(&mut rng)).collect();
        rows[0].iter_mut().for_each(|x| *x = 0.0);
        for &j in &order {
            let mut v = spec.auto_coeffs[j] * rows[1][j] + eta[j];
            for l in &incoming[j] {
                v += l.coeff * rows[l.lag][l.cause];
            }
            if !v.is_finite() || v.abs() > DIVERGENCE_BOUND {
                return Err(ScmError::Diverged { step });
            }
            rows[0][j] = v;
        }
        if step >= BURN_IN {
            let t = step - BURN_IN;
            for j in 0..n {
                out[(t, j)] = rows[0][j];
            }
        }
    }
    Ok(TimeSeriesDataset {
        values: out,
        var_names: default_names(n),
    })
}

/// Drop latent columns, keeping the original column order.
pub fn observe(data: &TimeSeriesDataset, latent_set: &[usize]) -> Result<ObservedDataset, ScmError> {
    let n = data.n_vars();
    if let Some(&bad) = latent_set.iter().find(|&&h| h >= n) {
        return Err(ScmError::BadLatentIndex { index: bad, n_vars: n });
    }
    let keep: Vec<usize> = (0..n).filter(|v| !latent_set.contains(v)).collect();
    let values = DMatrix::from_fn(data.t_len(), keep.len(), |t, k| data.values[(t, keep[k])]);
    Ok(ObservedDataset {
        values,
        var_names: keep.iter().map(|&k| data.var_names[k].clone()).collect(),
        observed_index_map: keep,
    })
}

/// True window DAG over all variables, latent ones included.
pub fn true_window_dag(spec: &ScmSpec, tau_max: usize) -> Result<TsGraph, ScmError> {
    if tau_max < spec.p_ts {
        return Err(ScmError::InvalidConfig(format!(
            "tau_max {tau_max} is below the model's maximal lag {}",
            spec.p_ts
        )));
    }
    let mut edges: Vec<TsEdge> = (0..spec.n_vars_total)
        .filter(|&j| spec.auto_coeffs[j] != 0.0)
        .map(|j| TsEdge::directed(TsNode::new(j, 1), TsNode::new(j, 0)))
        .collect();
    edges.extend(
        spec.cross_links
            .iter()
            .map(|l| TsEdge::directed(TsNode::new(l.cause, l.lag), TsNode::new(l.effect, 0))),
    );
    Ok(TsGraph::build(spec.n_vars_total, tau_max, GraphKind::DAG, edges)?)
}

pub fn write_matrix_csv(path: &Path, names: &[String], values: &DMatrix<f64>) -> Result<(), ScmError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for t in 0..values.nrows() {
        w.write_record((0..values.ncols()).map(|j| format!("{}", values[(t, j)])))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), ScmError> {
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut flat = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for f in rec.iter() {
            let x: f64 = f
                .trim()
                .parse()
                .map_err(|_| ScmError::InvalidSpec(format!("non-numeric value {f:?}")))?;
            flat.push(x);
        }
        rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &flat)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(a: f64) -> ScmSpec {
        ScmSpec {
            n_vars_total: 1,
            auto_coeffs: vec![a],
            cross_links: vec![],
            noise_scales: vec![1.0],
            latent_set: vec![],
            p_ts: 1,
        }
    }

    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = (lag..n).map(|t| (x[t] - m) * (x[t - lag] - m)).sum();
        cov / var
    }

    #[test]
    fn default_spec_invariants() {
        let cfg = GenConfig::default();
        let spec = sample_scm(&cfg, 7).unwrap();
        assert_eq!(spec.n_vars_total, 11);
        assert_eq!(spec.cross_links.len(), 11);
        assert_eq!(spec.latent_set.len(), 3);
        assert!(spec.auto_coeffs.iter().all(|a| (0.3..=0.6).contains(a)));
        for l in &spec.cross_links {
            assert!((0.2..=0.5).contains(&l.coeff.abs()));
            assert_ne!(l.cause, l.effect);
            assert!(l.lag <= 1);
        }
        assert!(spec.noise_scales.iter().all(|s| (0.5..=2.0).contains(s)));
        assert!(spec.contemporaneous_order().is_some());
        assert!(is_stationary(&spec));
        let slots: BTreeSet<_> = spec.cross_links.iter().map(|l| (l.cause, l.effect, l.lag)).collect();
        assert_eq!(slots.len(), 11);
    }

    #[test]
    fn auto_only_config() {
        let cfg = GenConfig {
            cross_links: 0,
            latent_count: 0,
            ..GenConfig::default()
        };
        let spec = sample_scm(&cfg, 3).unwrap();
        assert!(spec.cross_links.is_empty());
        assert!(spec.latent_set.is_empty());
        assert_eq!(true_window_dag(&spec, 1).unwrap().n_edges(), 11);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = GenConfig::default();
        assert_eq!(sample_scm(&cfg, 42).unwrap(), sample_scm(&cfg, 42).unwrap());
        assert_ne!(sample_scm(&cfg, 42).unwrap(), sample_scm(&cfg, 43).unwrap());
    }

    #[test]
    fn contemporaneous_share_is_near_sixty_percent() {
        let cfg = GenConfig::default();
        let (mut zero, mut total) = (0usize, 0usize);
        for seed in 0..300 {
            let spec = sample_scm(&cfg, seed).unwrap();
            zero += spec.cross_links.iter().filter(|l| l.lag == 0).count();
            total += spec.cross_links.len();
        }
        let frac = zero as f64 / total as f64;
        assert!((frac - 0.6).abs() < 0.04, "{frac}");
    }

    #[test]
    fn white_noise_has_no_autocorrelation() {
        let spec = single(0.0);
        let d = simulate(&spec, 500, 1).unwrap();
        let x: Vec<f64> = d.values.column(0).iter().copied().collect();
        let mean = x.iter().sum::<f64>() / 500.0;
        assert!(mean.abs() < 0.15);
        assert!(autocorr(&x, 1).abs() < 0.1);
    }

    #[test]
    fn ar1_autocorrelation_matches_coefficient() {
        // AR(1) theory: lag-1 autocorrelation equals a
        let d = simulate(&single(0.5), 10_000, 2).unwrap();
        let x: Vec<f64> = d.values.column(0).iter().copied().collect();
        assert!((autocorr(&x, 1) - 0.5).abs() < 0.05);
    }

    #[test]
    fn stationarity_single_variable() {
        assert!(is_stationary(&single(0.5)));
        assert!(!is_stationary(&single(1.1)));
    }

    #[test]
    fn stationarity_agrees_with_long_simulation() {
        let two = |c: f64| ScmSpec {
            n_vars_total: 2,
            auto_coeffs: vec![0.6, 0.6],
            cross_links: vec![
                CrossLink { cause: 0, effect: 1, lag: 1, coeff: c },
                CrossLink { cause: 1, effect: 0, lag: 1, coeff: c },
            ],
            noise_scales: vec![1.0, 1.0],
            latent_set: vec![],
            p_ts: 1,
        };
        // eigenvalues 0.6 +- c
        let explosive = two(0.5);
        assert!(!is_stationary(&explosive));
        assert!(matches!(simulate(&explosive, 5000, 1), Err(ScmError::Diverged { .. })));
        let calm = two(0.3);
        assert!(is_stationary(&calm));
        let d = simulate(&calm, 5000, 1).unwrap();
        assert!(d.values.iter().all(|v| v.abs() < 100.0));
    }

    #[test]
    fn contemporaneous_effects_enter_reduced_form() {
        // x_t = 0.9 x_{t-1} + ..., y_t = 0.9 y_{t-1} + 2 x_t; x_{t} = ... + 0.5 y_{t-1}
        let spec = ScmSpec {
            n_vars_total: 2,
            auto_coeffs: vec![0.5, 0.5],
            cross_links: vec![
                CrossLink { cause: 0, effect: 1, lag: 0, coeff: 2.0 },
                CrossLink { cause: 1, effect: 0, lag: 1, coeff: 0.5 },
            ],
            noise_scales: vec![1.0, 1.0],
            latent_set: vec![],
            p_ts: 1,
        };
        // reduced form [[0.5, 0.5], [1.0, 1.5]] has spectral radius > 1
        assert!(!is_stationary(&spec));
    }

    #[test]
    fn observe_masks_latents() {
        let cfg = GenConfig::default();
        let spec = sample_scm(&cfg, 5).unwrap();
        let d = simulate(&spec, 500, 9).unwrap();
        assert_eq!((d.t_len(), d.n_vars()), (500, 11));
        assert!(d.values.iter().all(|v| v.is_finite()));

        let all = observe(&d, &[]).unwrap();
        assert_eq!(all.values, d.values);

        let o = observe(&d, &[0, 3, 5]).unwrap();
        assert_eq!(o.n_vars(), 8);
        assert_eq!(o.observed_index_map, vec![1, 2, 4, 6, 7, 8, 9, 10]);
        for (k, &orig) in o.observed_index_map.iter().enumerate() {
            assert_eq!(o.values.column(k), d.values.column(orig));
        }
        assert!(matches!(observe(&d, &[11]), Err(ScmError::BadLatentIndex { .. })));
    }

    #[test]
    fn window_dag_round_trips_links() {
        let spec = sample_scm(&GenConfig::default(), 11).unwrap();
        let g = true_window_dag(&spec, 1).unwrap();
        assert_eq!(g.n_edges(), 22);
        for l in &spec.cross_links {
            let e = g
                .edge_between(TsNode::new(l.cause, l.lag), TsNode::new(l.effect, 0))
                .unwrap();
            assert_eq!(e, TsEdge::directed(TsNode::new(l.cause, l.lag), TsNode::new(l.effect, 0)));
        }
        let two = ScmSpec {
            n_vars_total: 2,
            auto_coeffs: vec![0.4, 0.4],
            cross_links: vec![],
            noise_scales: vec![1.0, 1.0],
            latent_set: vec![],
            p_ts: 1,
        };
        assert_eq!(true_window_dag(&two, 1).unwrap().n_edges(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let o = ObservedDataset::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.5, -3.0, 0.125]));
        o.write_csv(&path).unwrap();
        let back = ObservedDataset::read_csv(&path).unwrap();
        assert_eq!(back.values, o.values);
        assert_eq!(back.var_names, vec!["V0", "V1"]);
    }
}
