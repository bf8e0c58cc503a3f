use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lpcmci::bench::{export_example, rerun_from_manifest, run_benchmark, simulation_seed, tune_alpha, BenchConfig, BenchOutcome};
use lpcmci::ci::{ci_decide, partial_correlation, CiDecision, CiQuery};
use lpcmci::discovery::{lpcmci_discover, prune_weak_links, BackgroundKnowledge};
use lpcmci::eval::{compare, format_table};
use lpcmci::graph::{TsGraph, TsNode};
use lpcmci::oracle::{latent_project, oracle_pag};
use lpcmci::scm::{default_names, observe, sample_scm, simulate, true_window_dag, ObservedDataset, ScmSpec, SpecRecord};
use serde::Serialize;

/// Latent-confounder causal discovery for time series, with a seeded
/// benchmark harness.
#[derive(Parser, Debug)]
#[command(name = "lpcmci", version)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Benchmark configuration (JSON). Missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "lpcmci-out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample an SCM, simulate it and write the observed data. The seed is
    /// used as a replicate seed, so `--seed 27` gives the shipped example.
    Generate {
        /// Series length; defaults to the config value.
        #[arg(long)]
        t_len: Option<usize>,
    },
    /// Latent projection and oracle PAG of a generated SCM.
    Oracle {
        /// `spec.json` written by `generate`.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run discovery on a CSV dataset.
    Discover(DiscoverArgs),
    /// One partial-correlation CI test on a CSV dataset.
    Citest {
        #[arg(long)]
        data: PathBuf,
        /// Node as `VAR:LAG`.
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Comma-separated `VAR:LAG` list.
        #[arg(long, default_value = "")]
        cond: String,
        #[arg(long, default_value_t = 0.26)]
        alpha: f64,
    },
    /// Score a predicted PAG against an oracle PAG (text graph files).
    Evaluate {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
    },
    /// Run the replicate benchmark.
    Bench {
        #[arg(long)]
        replicates: Option<usize>,
        /// Rerun the benchmark recorded in this manifest instead.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Sweep alpha and report the harmonic-score curve.
    TuneAlpha {
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.2,0.26,0.4")]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        tune_replicates: usize,
    },
    /// Export a shipped example (`fig2` or `fig3-pruned`).
    Example { name: String },
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau_max: Option<usize>,
    #[arg(long)]
    max_cond_size: Option<usize>,
    /// Number of preliminary ancestral phases.
    #[arg(long)]
    phases: Option<usize>,
    /// Remove edges whose strength is below this value.
    #[arg(long)]
    prune_below: Option<f64>,
    /// Background knowledge (JSON).
    #[arg(long)]
    background: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<BenchConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BenchConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn parse_node(s: &str) -> Result<TsNode> {
    let (v, l) = s
        .trim()
        .split_once(':')
        .with_context(|| format!("node {s:?} is not VAR:LAG"))?;
    Ok(TsNode::new(v.trim().parse()?, l.trim().parse()?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn generate(cfg: &BenchConfig, t_len: usize, out: &Path) -> Result<()> {
    let seed = cfg.master_seed;
    let spec = sample_scm(&cfg.gen_config(), seed)?;
    let data = simulate(&spec, t_len, simulation_seed(seed))?;
    let observed = observe(&data, &spec.latent_set)?;
    let dag = true_window_dag(&spec, cfg.tau_max)?;
    write_json(&out.join("spec.json"), &SpecRecord { seed, spec: spec.clone() })?;
    observed.write_csv(&out.join("data.csv"))?;
    fs::write(out.join("true_dag.txt"), dag.to_text())?;
    fs::write(out.join("true_dag.dot"), dag.to_dot_named(&default_names(spec.n_vars_total)))?;
    println!("latent variables: {:?}", spec.latent_set);
    println!("wrote spec.json, data.csv, true_dag.txt, true_dag.dot to {}", out.display());
    Ok(())
}

fn oracle(cfg: &BenchConfig, spec_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path)?;
    let spec: ScmSpec = match serde_json::from_str::<SpecRecord>(&text) {
        Ok(r) => r.spec,
        Err(_) => serde_json::from_str(&text).context("expected a spec record or a bare spec")?,
    };
    spec.validate()?;
    let dag = true_window_dag(&spec, cfg.tau_max)?;
    let observed = spec.observed_vars();
    let mag = latent_project(&dag, &observed)?;
    let pag = oracle_pag(&dag, &observed, cfg.tau_max)?;
    fs::write(out.join("mag.txt"), mag.to_text())?;
    fs::write(out.join("oracle_pag.txt"), pag.to_text())?;
    fs::write(out.join("oracle_pag.dot"), pag.to_dot())?;
    print!("{}", pag.to_text());
    Ok(())
}

fn discover(cfg: &BenchConfig, args: &DiscoverArgs, out: &Path) -> Result<()> {
    let data = ObservedDataset::read_csv(&args.data)?;
    let mut dcfg = cfg.discovery_config();
    if let Some(a) = args.alpha {
        dcfg.alpha = a;
    }
    if let Some(t) = args.tau_max {
        dcfg.tau_max = t;
    }
    if let Some(m) = args.max_cond_size {
        dcfg.max_cond_size = m;
    }
    if let Some(p) = args.phases {
        dcfg.n_preliminary_phases = p;
    }
    let bk: Option<BackgroundKnowledge> = match &args.background {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?).context("parsing background knowledge")?),
        None => None,
    };
    let backend = lpcmci::ci::PartialCorrelation::new(&data);
    let result = lpcmci_discover(&backend, &dcfg, bk.as_ref())?;
    write_json(&out.join("strengths.json"), &result.strength_table())?;
    let mut pag = result.pag.clone();
    if let Some(th) = args.prune_below {
        pag = prune_weak_links(&pag, &result.strengths, th);
    }
    fs::write(out.join("pag.txt"), pag.to_text())?;
    fs::write(out.join("pag.dot"), pag.to_dot_named(&data.var_names))?;
    print!("{}", pag.to_text());
    log::info!("{} CI tests", result.n_tests);
    Ok(())
}

#[derive(Serialize)]
struct CiReport {
    statistic: f64,
    pvalue: f64,
    effective_n: usize,
    alpha: f64,
    independent: bool,
}

fn citest(data: &Path, x: &str, y: &str, cond: &str, alpha: f64) -> Result<()> {
    let data = ObservedDataset::read_csv(data)?;
    let cond: Vec<TsNode> = cond
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_node)
        .collect::<Result<_>>()?;
    let q = CiQuery::new(parse_node(x)?, parse_node(y)?, cond);
    let o = partial_correlation(&data, &q)?;
    let report = CiReport {
        statistic: o.statistic,
        pvalue: o.pvalue,
        effective_n: o.effective_n,
        alpha,
        independent: ci_decide(&o, alpha) == CiDecision::Independent,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn evaluate(predicted: &Path, oracle: &Path, out: &Path) -> Result<()> {
    let pred = TsGraph::parse(&fs::read_to_string(predicted)?)?;
    let truth = TsGraph::parse(&fs::read_to_string(oracle)?)?;
    let report = compare(&pred, &truth)?;
    fs::write(out.join("evaluation.json"), report.to_json())?;
    print!("{}", format_table(&report, None));
    Ok(())
}

fn finish_bench(mut outcome: BenchOutcome, out: &Path) -> Result<ExitCode> {
    let art = outcome.write_outputs(out)?;
    print!("{}", outcome.table());
    println!("wrote {}", art.manifest.display());
    if let Err(e) = outcome.failure_gate() {
        eprintln!("error: {e}");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.cmd {
        Command::Generate { t_len } => generate(&cfg, t_len.unwrap_or(cfg.t_len), out)?,
        Command::Oracle { spec } => oracle(&cfg, spec, out)?,
        Command::Discover(args) => discover(&cfg, args, out)?,
        Command::Citest { data, x, y, cond, alpha } => citest(data, x, y, cond, *alpha)?,
        Command::Evaluate { predicted, oracle } => evaluate(predicted, oracle, out)?,
        Command::Bench { replicates, manifest } => {
            let outcome = match manifest {
                Some(m) => {
                    if replicates.is_some() {
                        bail!("--replicates cannot be combined with --manifest");
                    }
                    rerun_from_manifest(m)?
                }
                None => {
                    let cfg = BenchConfig {
                        replicates: replicates.unwrap_or(cfg.replicates),
                        ..cfg
                    };
                    run_benchmark(&cfg)?
                }
            };
            return finish_bench(outcome, out);
        }
        Command::TuneAlpha { grid, tune_replicates } => {
            let res = tune_alpha(&cfg, grid, *tune_replicates)?;
            fs::write(out.join("alpha_curve.csv"), res.curve_csv())?;
            print!("{}", res.curve_csv());
            println!("best alpha {} (harmonic score {:.3})", res.best_alpha, res.best_score);
        }
        Command::Example { name } => {
            for p in export_example(name, out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
