use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use flowsched::analysis::mixing::{csma_mixing_experiment, MixingConfig, MixingVerdict, Sampler};
use flowsched::analysis::stats::{
    residual_moment_test_from_moments, stability_verdict, MomentBound, ResidualReport, StabilityOptions, StabilityVerdict,
};
use flowsched::config::{ConfigError, ExperimentConfig, SweepGrid};
use flowsched::engine::{Check, EngineError, SchedulerKind, SimConfig, Simulator, CSV_HEADER};
use flowsched::verify::{run_suite, Suite};

const SUMMARY_VERSION: u32 = 1;
const FLUSH_EVERY: u64 = 4096;

#[derive(Parser)]
#[command(name = "flowsched", version, about = "Flow-level wireless scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics.csv and summary.json.
    Run(RunArgs),
    /// Run a built-in verification suite.
    Verify {
        /// oracles, csma_mixing, bounds, stability or all.
        #[arg(value_name = "SUITE")]
        positional: Option<String>,
        #[arg(long)]
        suite: Option<String>,
        /// Also write report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per point of a parameter grid and write sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// JSON grid with optional lists theta, w_cong, scheduler, epsilon.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Run a frozen-weight CSMA sampler and compare it with the exact Gibbs law.
    SampleCsma(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    replicas: Option<u32>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Assertion(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Assertion(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::AssertionFailure { .. } => Failure::Assertion(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(&args.config).map_err(io_context(&args.config))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.engine.seed = seed;
        cfg.seeds = None;
    }
    if let Some(slots) = args.slots {
        cfg.engine.slots = slots;
    }
    if let Some(r) = args.replicas {
        cfg.replicas = Some(r);
        cfg.seeds = None;
    }
    Ok(cfg)
}

fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FLOWSCHED_THREADS") {
        let n: usize = v.parse().map_err(|_| Failure::Config(format!("FLOWSCHED_THREADS={v:?} is not a number")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Failure::Io(e.to_string()))
}

#[derive(Serialize)]
struct CheckSummary {
    name: &'static str,
    evaluated: u64,
    violations: u64,
    worst_excess: f64,
}

#[derive(Serialize)]
struct ReplicaSummary {
    seed: u64,
    slots: u64,
    metrics: String,
    verdict: Option<StabilityVerdict>,
    verdict_note: Option<String>,
    checks: Vec<CheckSummary>,
    assertion_violations: u64,
    residuals: Vec<Option<ResidualReport>>,
    mean_files: f64,
    mean_total_q: f64,
    delivered: u64,
    injected: u64,
    wasted: u64,
    effective_throughput: f64,
}

#[derive(Serialize)]
struct RunSummary {
    version: u32,
    config: String,
    passed: bool,
    replicas: Vec<ReplicaSummary>,
}

/// Runs one replica, streaming its CSV into `dir`.
fn run_replica(cfg: SimConfig, dir: &Path, snapshot_every: Option<u64>, excess: Option<f64>) -> Result<ReplicaSummary, Failure> {
    fs::create_dir_all(dir).map_err(io_context(dir))?;
    let csv_path = dir.join("metrics.csv");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(io_context(&csv_path))?);
    writeln!(csv, "{CSV_HEADER}")?;
    let seed = cfg.seed;
    let every = cfg.metrics_every;
    let (nodes, w_cong, eta_min) = (cfg.network.node_count(), cfg.window.w_cong, cfg.traffic.eta_min());
    let rates: Vec<f64> = cfg.traffic.sources.iter().map(|s| s.rate).collect();
    let mut sim = Simulator::new(cfg)?;
    let mut files = Vec::new();
    let mut total_q = Vec::new();
    let mut rows = 0u64;
    let mut write_err = None;
    while !sim.is_finished() {
        let frame = sim.step()?;
        if frame.slot % every == 0 {
            files.push(frame.total_files as f64);
            total_q.push(frame.total_q as f64);
            if let Err(e) = writeln!(csv, "{}", frame.csv_row()) {
                write_err = Some(e);
                break;
            }
            rows += 1;
            if rows % FLUSH_EVERY == 0 {
                csv.flush()?;
            }
        }
        if snapshot_every.is_some_and(|n| n > 0 && sim.state().slot % n == 0) {
            let path = dir.join("snapshot.json");
            fs::write(&path, sim.snapshot().to_json()).map_err(io_context(&path))?;
        }
    }
    if let Some(e) = write_err {
        return Err(io_context(&csv_path)(e));
    }
    csv.flush()?;

    let (verdict, verdict_note) =
        match stability_verdict(&files, &total_q, StabilityOptions { slots_per_frame: every, excess_load: excess }) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let state = sim.state();
    let checks: Vec<CheckSummary> = Check::ALL
        .iter()
        .map(|&c| {
            let t = state.check(c);
            CheckSummary { name: c.name(), evaluated: t.evaluated, violations: t.violations, worst_excess: t.worst_excess }
        })
        .collect();
    let residuals = state
        .residuals
        .iter()
        .zip(&rates)
        .map(|(m, &kappa)| {
            let bound = MomentBound { kappa, nodes, r_max: 1.0, w_cong, eta_min };
            residual_moment_test_from_moments(m, &bound).ok()
        })
        .collect();
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    Ok(ReplicaSummary {
        seed,
        slots: state.slot,
        metrics: csv_path.display().to_string(),
        verdict,
        verdict_note,
        assertion_violations: checks.iter().map(|c| c.violations).sum(),
        checks,
        residuals,
        mean_files: mean(&files),
        mean_total_q: mean(&total_q),
        delivered: state.delivered,
        injected: state.injected,
        wasted: state.wasted,
        effective_throughput: sim.effective_throughput(),
    })
}

fn run_experiment(cfg: &ExperimentConfig, out: &Path, pool: &rayon::ThreadPool) -> Result<Vec<ReplicaSummary>, Failure> {
    let seeds = cfg.replica_seeds();
    let configs = seeds.iter().map(|&s| cfg.build(s)).collect::<Result<Vec<_>, _>>()?;
    let single = seeds.len() == 1;
    pool.install(|| {
        configs
            .into_par_iter()
            .map(|c| {
                let dir = if single { out.to_path_buf() } else { out.join(format!("seed-{}", c.seed)) };
                run_replica(c, &dir, cfg.engine.snapshot_every, cfg.analysis.excess_load)
            })
            .collect()
    })
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let out = cfg.output.as_ref().filter(|_| args.out == Path::new("out")).map(PathBuf::from).unwrap_or_else(|| args.out.clone());
    fs::create_dir_all(&out).map_err(io_context(&out))?;
    let replicas = run_experiment(&cfg, &out, &thread_pool()?)?;
    let violations: u64 = replicas.iter().map(|r| r.assertion_violations).sum();
    let summary =
        RunSummary { version: SUMMARY_VERSION, config: args.config.display().to_string(), passed: violations == 0, replicas };
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serialises")).map_err(io_context(&path))?;
    for r in &summary.replicas {
        let tag = r.verdict.as_ref().map(|v| format!("{:?}", v.tag)).unwrap_or_else(|| "none".into());
        println!("seed {}: {} slots, verdict {tag}, {} assertion violations", r.seed, r.slots, r.assertion_violations);
    }
    if violations > 0 {
        return Err(Failure::Assertion(format!("{violations} runtime check violations; see {}", path.display())));
    }
    Ok(())
}

fn cmd_verify(positional: Option<String>, flag: Option<String>, out: Option<PathBuf>) -> Result<(), Failure> {
    let name = flag.or(positional).unwrap_or_else(|| "all".into());
    let suite: Suite = name.parse().map_err(Failure::Config)?;
    let report = run_suite(suite).map_err(|e| Failure::Assertion(e.to_string()))?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    println!("{json}");
    if let Some(dir) = out {
        fs::create_dir_all(&dir).map_err(io_context(&dir))?;
        let path = dir.join("report.json");
        fs::write(&path, &json).map_err(io_context(&path))?;
    }
    if !report.passed {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(Failure::Assertion(format!("failed checks: {}", failed.join(", "))));
    }
    Ok(())
}

fn kind_name(k: SchedulerKind) -> &'static str {
    match k {
        SchedulerKind::Centralized => "centralized",
        SchedulerKind::BasicCsma => "basic_csma",
        SchedulerKind::QCsma => "qcsma",
    }
}

fn cmd_sweep(args: &RunArgs, grid_path: &Path) -> Result<(), Failure> {
    let base = load_config(args)?;
    let text = fs::read_to_string(grid_path).map_err(io_context(grid_path))?;
    let grid: SweepGrid = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("grid: {e}")))?;
    let points = grid.points(&base)?;
    // Validate every point before running any of them.
    for (_, cfg) in &points {
        cfg.build(cfg.engine.seed)?;
    }
    fs::create_dir_all(&args.out).map_err(io_context(&args.out))?;
    let pool = thread_pool()?;
    let path = args.out.join("sweep.csv");
    let mut csv = BufWriter::new(File::create(&path).map_err(io_context(&path))?);
    writeln!(csv, "point,theta,w_cong,scheduler,epsilon,seed,verdict,mean_files,mean_total_q,assertion_violations")?;
    let mut violations = 0;
    for (i, (p, cfg)) in points.iter().enumerate() {
        let replicas = run_experiment(cfg, &args.out.join(format!("point-{i}")), &pool)?;
        for r in replicas {
            let tag = r.verdict.as_ref().map(|v| format!("{:?}", v.tag).to_lowercase()).unwrap_or_else(|| "none".into());
            let theta = p.theta.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                csv,
                "{i},{theta},{},{},{},{},{tag},{},{},{}",
                p.w_cong,
                kind_name(p.scheduler),
                p.epsilon,
                r.seed,
                r.mean_files,
                r.mean_total_q,
                r.assertion_violations
            )?;
            violations += r.assertion_violations;
        }
        csv.flush()?;
    }
    println!("wrote {} grid points to {}", points.len(), path.display());
    if violations > 0 {
        return Err(Failure::Assertion(format!("{violations} runtime check violations")));
    }
    Ok(())
}

#[derive(Serialize)]
struct SamplerSummary {
    version: u32,
    sampler: &'static str,
    slots: u64,
    states: usize,
    tv: f64,
    verdict: MixingVerdict,
    independence_violations: u64,
}

fn cmd_sample_csma(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let network = cfg.network()?;
    let weights = cfg
        .analysis
        .frozen_weights
        .clone()
        .ok_or_else(|| Failure::Config("sample-csma needs analysis.frozen_weights".into()))?;
    if weights.len() != network.link_count() {
        return Err(Failure::Config(format!("{} frozen weights for {} links", weights.len(), network.link_count())));
    }
    let beta = cfg.beta(network.node_count())?;
    let (sampler, name) = match cfg.scheduler.kind {
        SchedulerKind::QCsma => (Sampler::QCsma { network: &network, beta: &beta }, "qcsma"),
        _ => (Sampler::Basic(network.conflict_graph()), "basic_csma"),
    };
    let mc = MixingConfig {
        weights,
        slots: cfg.engine.slots,
        burn_in: cfg.analysis.burn_in.min(cfg.engine.slots / 2),
        seed: cfg.engine.seed,
        tolerance: cfg.analysis.mixing_tolerance,
    };
    let rep = csma_mixing_experiment(sampler, &mc).map_err(|e| Failure::Config(e.to_string()))?;
    let set = flowsched::net_model::enumerate_schedules(network.conflict_graph()).map_err(|e| Failure::Config(e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(io_context(&args.out))?;
    let path = args.out.join("occupancy.csv");
    let mut csv = BufWriter::new(File::create(&path).map_err(io_context(&path))?);
    writeln!(csv, "schedule,links,empirical,gibbs")?;
    for (i, (emp, pi)) in rep.occupancy.iter().zip(&rep.pi).enumerate() {
        let links: Vec<String> = set.links_of(i).iter().map(|l| l.to_string()).collect();
        writeln!(csv, "{i},{},{emp},{pi}", links.join(" "))?;
    }
    csv.flush()?;
    let summary = SamplerSummary {
        version: SUMMARY_VERSION,
        sampler: name,
        slots: mc.slots,
        states: rep.states,
        tv: rep.tv,
        verdict: rep.verdict,
        independence_violations: rep.independence_violations,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    println!("{json}");
    let spath = args.out.join("sampler.json");
    fs::write(&spath, json).map_err(io_context(&spath))?;
    if rep.independence_violations > 0 {
        return Err(Failure::Assertion("sampler produced a conflicting activation".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify { positional, suite, out } => cmd_verify(positional.clone(), suite.clone(), out.clone()),
        Command::Sweep { run, grid } => cmd_sweep(run, grid),
        Command::SampleCsma(args) => cmd_sample_csma(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Assertion(m) => eprintln!("check failure: {m}"),
                Failure::Io(m) => eprintln!("i/o error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
