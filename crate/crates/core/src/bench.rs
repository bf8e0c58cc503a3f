//! Benchmark harness: seeded replicates, scoring against oracle PAGs,
//! alpha tuning and shipped example fixtures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci::PartialCorrelation;
use crate::discovery::{lpcmci_discover, prune_weak_links, random_baseline, ColliderRule, DiscoveryConfig, DiscoveryError};
use crate::eval::{aggregate, compare_counts, format_table, Averaging, EvalCounts, EvalError, EvalReport};
use crate::graph::{GraphError, TsGraph, TsNode};
use crate::oracle::{oracle_pag, OracleError};
use crate::scm::{default_names, observe, sample_scm, simulate, true_window_dag, GenConfig, NoiseParam, ScmError};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("unknown example fixture {0:?}")]
    UnknownFixture(String),
    #[error("manifest does not match its configuration: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub n_vars_total: usize,
    pub latent_count: usize,
    pub cross_links: usize,
    pub contemporaneous_fraction: f64,
    pub auto_range: (f64, f64),
    pub cross_range: (f64, f64),
    pub noise_range: (f64, f64),
    pub noise_param: NoiseParam,
    pub t_len: usize,
    pub replicates: usize,
    pub tau_max: usize,
    pub alpha: f64,
    pub max_cond_size: usize,
    pub n_preliminary_phases: usize,
    pub pds_path_len: usize,
    pub collider_rule: ColliderRule,
    pub averaging: Averaging,
    pub master_seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let gen = GenConfig::default();
        let disc = DiscoveryConfig::default();
        BenchConfig {
            n_vars_total: gen.n_vars_total,
            latent_count: gen.latent_count,
            cross_links: gen.cross_links,
            contemporaneous_fraction: gen.contemporaneous_fraction,
            auto_range: gen.auto_range,
            cross_range: gen.cross_range,
            noise_range: gen.noise_range,
            noise_param: gen.noise_param,
            t_len: 500,
            replicates: 200,
            tau_max: disc.tau_max,
            alpha: disc.alpha,
            max_cond_size: disc.max_cond_size,
            n_preliminary_phases: disc.n_preliminary_phases,
            pds_path_len: disc.pds_path_len,
            collider_rule: disc.collider_rule,
            averaging: Averaging::Micro,
            master_seed: 0,
            jobs: 0,
        }
    }
}

impl BenchConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n_vars_total: self.n_vars_total,
            cross_links: self.cross_links,
            latent_count: self.latent_count,
            contemporaneous_fraction: self.contemporaneous_fraction,
            auto_range: self.auto_range,
            cross_range: self.cross_range,
            noise_range: self.noise_range,
            noise_param: self.noise_param,
            ..GenConfig::default()
        }
    }

    pub fn discovery_config(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            alpha: self.alpha,
            tau_max: self.tau_max,
            max_cond_size: self.max_cond_size,
            n_preliminary_phases: self.n_preliminary_phases,
            pds_path_len: self.pds_path_len,
            collider_rule: self.collider_rule,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.replicates == 0 {
            return Err(BenchError::InvalidConfig("replicates must be at least 1".into()));
        }
        self.gen_config().validate()?;
        self.discovery_config().validate()?;
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `index`, independent of scheduling.
pub fn replicate_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ index)
}

/// Independent sub-seed for one stage of a replicate.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stage.wrapping_add(0x5eed)))
}

const STAGE_SIMULATE: u64 = 1;
const STAGE_BASELINE: u64 = 2;

/// Seed handed to [`simulate`] by the replicate with seed `seed`.
pub fn simulation_seed(seed: u64) -> u64 {
    stage_seed(seed, STAGE_SIMULATE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateScores {
    pub lpcmci: EvalCounts,
    pub baseline: EvalCounts,
    pub n_oracle_edges: usize,
    pub n_predicted_edges: usize,
    pub n_tests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub outcome: Result<ReplicateScores, String>,
}

/// Everything produced for one replicate, for inspection in tests and
/// example export.
#[derive(Debug, Clone)]
pub struct ReplicateArtifacts {
    pub true_dag: TsGraph,
    pub observed: Vec<usize>,
    pub oracle: TsGraph,
    pub predicted: TsGraph,
    pub strengths: BTreeMap<(TsNode, TsNode), f64>,
    pub baseline: TsGraph,
    pub data: crate::scm::ObservedDataset,
    pub n_tests: usize,
}

/// Generate, discover and score one replicate from its seed.
pub fn run_replicate(cfg: &BenchConfig, seed: u64) -> Result<ReplicateArtifacts, BenchError> {
    let spec = sample_scm(&cfg.gen_config(), seed)?;
    let data = simulate(&spec, cfg.t_len, simulation_seed(seed))?;
    let observed_data = observe(&data, &spec.latent_set)?;
    let true_dag = true_window_dag(&spec, cfg.tau_max)?;
    let observed = spec.observed_vars();
    let oracle = oracle_pag(&true_dag, &observed, cfg.tau_max)?;
    let backend = PartialCorrelation::new(&observed_data);
    let out = lpcmci_discover(&backend, &cfg.discovery_config(), None)?;
    let baseline = random_baseline(observed.len(), cfg.tau_max, stage_seed(seed, STAGE_BASELINE), true);
    Ok(ReplicateArtifacts {
        true_dag,
        observed,
        oracle,
        predicted: out.pag,
        strengths: out.strengths,
        baseline,
        data: observed_data,
        n_tests: out.n_tests,
    })
}

fn score_replicate(cfg: &BenchConfig, seed: u64) -> Result<ReplicateScores, BenchError> {
    let art = run_replicate(cfg, seed)?;
    Ok(ReplicateScores {
        lpcmci: compare_counts(&art.predicted, &art.oracle)?,
        baseline: compare_counts(&art.baseline, &art.oracle)?,
        n_oracle_edges: art.oracle.n_edges(),
        n_predicted_edges: art.predicted.n_edges(),
        n_tests: art.n_tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub manifest: PathBuf,
    pub replicates_csv: PathBuf,
    pub aggregate_json: PathBuf,
    pub table_txt: PathBuf,
}

impl Artifacts {
    fn in_dir(dir: &Path) -> Artifacts {
        Artifacts {
            manifest: dir.join("manifest.json"),
            replicates_csv: dir.join("replicates.csv"),
            aggregate_json: dir.join("aggregate.json"),
            table_txt: dir.join("table.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub per_replicate_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: BenchConfig,
    pub replicate_seeds: Vec<u64>,
    pub artifacts: Option<Artifacts>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest, BenchError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Check that the recorded seeds follow from the recorded config.
    pub fn verify(&self) -> Result<(), BenchError> {
        let expected: Vec<u64> = (0..self.config.replicates as u64)
            .map(|i| replicate_seed(self.config.master_seed, i))
            .collect();
        if expected != self.replicate_seeds {
            return Err(BenchError::ManifestMismatch("replicate seeds differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub lpcmci: EvalReport,
    pub baseline: EvalReport,
    pub n_ok: usize,
    pub n_failed: usize,
    pub failure_reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub summary: AggregateSummary,
    pub replicates: Vec<ReplicateResult>,
    pub manifest: RunManifest,
}

impl BenchOutcome {
    pub fn lpcmci(&self) -> &EvalReport {
        &self.summary.lpcmci
    }

    pub fn baseline(&self) -> &EvalReport {
        &self.summary.baseline
    }

    /// Error if more than [`MAX_FAILURE_RATE`] of the replicates failed.
    pub fn failure_gate(&self) -> Result<(), BenchError> {
        let total = self.replicates.len();
        let failed = self.summary.n_failed;
        if failed as f64 > MAX_FAILURE_RATE * total as f64 {
            return Err(BenchError::TooManyFailures { failed, total });
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = format_table(&self.summary.lpcmci, Some(&self.summary.baseline));
        if self.summary.n_failed > 0 {
            s.push_str(&format!("failed replicates: {}\n", self.summary.n_failed));
        }
        s
    }

    /// Per-replicate CSV; contains no timings so reruns compare byte for byte.
    pub fn replicates_csv(&self) -> Result<Vec<u8>, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["replicate", "seed", "status", "error"].map(String::from).to_vec();
        header.extend(EvalCounts::csv_header("lpcmci_"));
        header.extend(EvalCounts::csv_header("baseline_"));
        header.extend(["lpcmci_harmonic", "baseline_harmonic", "oracle_edges", "predicted_edges", "ci_tests"].map(String::from));
        w.write_record(&header)?;
        for r in &self.replicates {
            let mut row = vec![r.index.to_string(), r.seed.to_string()];
            match &r.outcome {
                Ok(s) => {
                    row.extend(["ok".to_string(), String::new()]);
                    row.extend(s.lpcmci.csv_fields());
                    row.extend(s.baseline.csv_fields());
                    row.push(format!("{:.6}", s.lpcmci.report().harmonic_score));
                    row.push(format!("{:.6}", s.baseline.report().harmonic_score));
                    row.extend([s.n_oracle_edges, s.n_predicted_edges, s.n_tests].map(|v| v.to_string()));
                }
                Err(e) => {
                    row.extend(["failed".to_string(), e.clone()]);
                    row.resize(header.len(), String::new());
                }
            }
            w.write_record(&row)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    /// Write manifest, per-replicate CSV, aggregate JSON and the table.
    pub fn write_outputs(&mut self, dir: &Path) -> Result<Artifacts, BenchError> {
        fs::create_dir_all(dir)?;
        let art = Artifacts::in_dir(dir);
        self.manifest.artifacts = Some(art.clone());
        fs::write(&art.replicates_csv, self.replicates_csv()?)?;
        fs::write(&art.aggregate_json, serde_json::to_string_pretty(&self.summary)?)?;
        fs::write(&art.table_txt, self.table())?;
        fs::write(&art.manifest, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(art)
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

/// Run every replicate of `cfg` and aggregate. Failed replicates are kept in
/// the result with their reason; see [`BenchOutcome::failure_gate`].
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutcome, BenchError> {
    cfg.validate()?;
    let start = Instant::now();
    let seeds: Vec<u64> = (0..cfg.replicates as u64).map(|i| replicate_seed(cfg.master_seed, i)).collect();
    let timed: Vec<(ReplicateResult, f64)> = with_pool(cfg.jobs, || {
        seeds
            .par_iter()
            .enumerate()
            .map(|(index, &seed)| {
                let t0 = Instant::now();
                let outcome = score_replicate(cfg, seed).map_err(|e| e.to_string());
                if let Err(e) = &outcome {
                    log::warn!("replicate {index} (seed {seed}) failed: {e}");
                }
                (ReplicateResult { index, seed, outcome }, t0.elapsed().as_secs_f64())
            })
            .collect()
    })?;
    let (replicates, per_replicate_seconds): (Vec<_>, Vec<_>) = timed.into_iter().unzip();

    let mut failure_reasons = BTreeMap::new();
    let mut lp = Vec::new();
    let mut bl = Vec::new();
    for r in &replicates {
        match &r.outcome {
            Ok(s) => {
                lp.push(s.lpcmci);
                bl.push(s.baseline);
            }
            Err(e) => {
                let reason = e.split(':').next().unwrap_or(e).to_string();
                *failure_reasons.entry(reason).or_insert(0) += 1;
            }
        }
    }
    let n_failed = replicates.len() - lp.len();
    if lp.is_empty() {
        return Err(BenchError::TooManyFailures {
            failed: n_failed,
            total: replicates.len(),
        });
    }
    let summary = AggregateSummary {
        lpcmci: aggregate(&lp, cfg.averaging)?,
        baseline: aggregate(&bl, cfg.averaging)?,
        n_ok: lp.len(),
        n_failed,
        failure_reasons,
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        replicate_seeds: seeds,
        artifacts: None,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            per_replicate_seconds,
        },
    };
    Ok(BenchOutcome {
        summary,
        replicates,
        manifest,
    })
}

/// Rerun the benchmark recorded in a manifest.
pub fn rerun_from_manifest(path: &Path) -> Result<BenchOutcome, BenchError> {
    let manifest = RunManifest::load(path)?;
    manifest.verify()?;
    run_benchmark(&manifest.config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub alpha: f64,
    pub harmonic_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_alpha: f64,
    pub best_score: f64,
    pub curve: Vec<TunePoint>,
}

impl TuneResult {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("alpha,harmonic_score\n");
        for p in &self.curve {
            s.push_str(&format!("{},{:.6}\n", p.alpha, p.harmonic_score));
        }
        s
    }
}

/// Benchmark each alpha of `grid` on `tune_replicates` replicates and pick
/// the one with the best harmonic score (the first on ties).
pub fn tune_alpha(cfg: &BenchConfig, alpha_grid: &[f64], tune_replicates: usize) -> Result<TuneResult, BenchError> {
    if alpha_grid.is_empty() {
        return Err(BenchError::InvalidConfig("alpha grid is empty".into()));
    }
    let mut curve = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let run_cfg = BenchConfig {
            alpha,
            replicates: tune_replicates,
            ..cfg.clone()
        };
        let out = run_benchmark(&run_cfg)?;
        curve.push(TunePoint {
            alpha,
            harmonic_score: out.summary.lpcmci.harmonic_score,
        });
    }
    let best = curve
        .iter()
        .fold(&curve[0], |b, p| if p.harmonic_score > b.harmonic_score { p } else { b });
    Ok(TuneResult {
        best_alpha: best.alpha,
        best_score: best.harmonic_score,
        curve,
    })
}

/// A shipped, seeded example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub seed: u64,
    /// Pruning threshold applied to the predicted PAG, if any.
    pub prune_below: Option<f64>,
}

/// Replicate seed of the shipped example under the default configuration:
/// variables 0, 3 and 5 are latent, and pruning the predicted PAG at 0.10
/// removes only links absent from the oracle PAG.
pub const EXAMPLE_SEED: u64 = 27;

pub const FIXTURES: [Fixture; 2] = [
    Fixture {
        name: "fig2",
        seed: EXAMPLE_SEED,
        prune_below: None,
    },
    Fixture {
        name: "fig3-pruned",
        seed: EXAMPLE_SEED,
        prune_below: Some(0.10),
    },
];

pub fn fixture(name: &str) -> Result<Fixture, BenchError> {
    FIXTURES
        .iter()
        .find(|f| f.name == name)
        .copied()
        .ok_or_else(|| BenchError::UnknownFixture(name.to_string()))
}

/// Write DOT files for the true DAG, oracle PAG and predicted PAG of a
/// fixture, plus its observed data. Returns the written paths.
pub fn export_example(fixture_name: &str, out_dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let fx = fixture(fixture_name)?;
    let cfg = BenchConfig::default();
    let art = run_replicate(&cfg, fx.seed)?;
    fs::create_dir_all(out_dir)?;
    let obs_names: Vec<String> = art.observed.iter().map(|v| format!("V{v}")).collect();
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), BenchError> {
        let p = out_dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("true_dag.dot", art.true_dag.to_dot_named(&default_names(cfg.n_vars_total)))?;
    put("oracle_pag.dot", art.oracle.to_dot_named(&obs_names))?;
    put("predicted_pag.dot", art.predicted.to_dot_named(&obs_names))?;
    if let Some(threshold) = fx.prune_below {
        let pruned = prune_weak_links(&art.predicted, &art.strengths, threshold);
        put("predicted_pag_pruned.dot", pruned.to_dot_named(&obs_names))?;
    }
    let strengths: Vec<_> = art
        .strengths
        .iter()
        .map(|((a, b), s)| serde_json::json!({"a": a, "b": b, "strength": s}))
        .collect();
    put("strengths.json", serde_json::to_string_pretty(&strengths)?)?;
    let data_path = out_dir.join("data.csv");
    let mut named = art.data.clone();
    named.var_names = obs_names;
    named.write_csv(&data_path)?;
    written.push(data_path);
    Ok(written)
}
