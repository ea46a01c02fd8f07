//! Command-line front end. `run_cli` returns the process exit code so the
//! binary stays a one-liner and tests can drive it in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::metrics::{self, Report, COMPARE_IGNORED};
use crate::trace::{self, generate_trace, SyntheticWorkloadSpec, Trace, WorkloadKind};
use crate::workload;
use crate::{golden, ConfigError, ExperimentConfig, SimError, Simulator, TraceError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Core counts a sweep may visit, with the NIC line rate each one gets.
pub const SWEEP_POINTS: [(usize, f64); 5] = [(1, 10.0), (2, 10.0), (4, 10.0), (8, 20.0), (16, 40.0)];

#[derive(Parser, Debug)]
#[command(name = "nicsim", version, about = "NIC-assisted critical-region prefetch simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic request trace.
    GenTrace(GenTraceArgs),
    /// Simulate one configuration and write the report bundle.
    Run(RunArgs),
    /// Simulate a series of core counts at their paired line rates.
    Sweep(SweepArgs),
    /// Print a summary, or compare two runs.
    Report(ReportArgs),
    /// Replay the embedded hash-lookup walkthrough against the golden dump.
    Golden {
        /// Print the replayed snapshots.
        #[arg(long)]
        dump: bool,
    },
    /// Print packets in flight needed to sustain line rate.
    Table1 {
        #[arg(long, default_value_t = 64)]
        packet_bytes: u64,
    },
}

#[derive(Args, Debug)]
struct GenTraceArgs {
    #[arg(long, default_value = "hash_chain")]
    kind: String,
    #[arg(long, default_value_t = 1 << 16)]
    buckets: u64,
    #[arg(long, default_value_t = 16)]
    fanout: u64,
    #[arg(long, default_value_t = 50_000)]
    population: u64,
    #[arg(long, default_value_t = 0.5)]
    chain_p: f64,
    #[arg(long, default_value_t = 0.99)]
    zipf: f64,
    #[arg(long, default_value_t = 20_000)]
    requests: u64,
    #[arg(long, default_value_t = 40)]
    work: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write the comma-separated text form instead of binary.
    #[arg(long)]
    text: bool,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: PathBuf,
    /// Output directory; falls back to $SIM_OUT, then to run.output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one setting, e.g. `--set nic.offload_enable=false`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    cores: Vec<usize>,
    /// Sweep points simulated concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directory or summary file.
    #[arg(required_unless_present = "compare")]
    run: Option<PathBuf>,
    /// Two run directories or summary files; prints second / first.
    #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"])]
    compare: Option<Vec<PathBuf>>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            SimError::Trace(t) => t.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let res = match cli.cmd {
        Cmd::GenTrace(a) => gen_trace(a, out),
        Cmd::Run(a) => run(a, out),
        Cmd::Sweep(a) => sweep(a, out),
        Cmd::Report(a) => report(a, out),
        Cmd::Golden { dump } => golden_cmd(dump, out),
        Cmd::Table1 { packet_bytes } => {
            let _ = write!(out, "{}", workload::format_table1(&workload::table1(packet_bytes)));
            Ok(())
        }
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn gen_trace(a: GenTraceArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let kind = WorkloadKind::parse(&a.kind)
        .ok_or_else(|| ConfigError::invalid("kind", format!("unknown workload {:?}", a.kind)))?;
    let spec = SyntheticWorkloadSpec {
        kind,
        buckets: a.buckets,
        fanout: a.fanout,
        population: a.population,
        chain_p: a.chain_p,
        zipf: a.zipf,
        request_count: a.requests,
        work_insts: a.work,
        ..Default::default()
    };
    let t = generate_trace(&spec, a.seed)?;
    if a.text {
        trace::write_trace_text(&t, &a.out)?;
    } else {
        trace::write_trace(&t, &a.out)?;
    }
    let _ = writeln!(out, "wrote {} events ({} requests) to {}", t.len(), spec.request_count, a.out.display());
    Ok(())
}

/// FNV-1a over the binary encoding, cut to 48 bits so it survives a round
/// trip through the f64 summary.
pub fn trace_hash(t: &Trace) -> u64 {
    let h = trace::encode_trace(t)
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    h & ((1 << 48) - 1)
}

fn load_trace(path: &Path) -> Result<Trace, Failure> {
    let is_text = path.extension().is_some_and(|e| e == "txt" || e == "csv");
    Ok(if is_text { trace::read_trace_text(path)? } else { trace::read_trace(path)? })
}

fn load_config(a: &SimArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &a.sets {
        let (lhs, value) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::invalid(s.clone(), "expected SECTION.KEY=VALUE"))?;
        let (section, key) = lhs
            .split_once('.')
            .ok_or_else(|| ConfigError::invalid(s.clone(), "expected SECTION.KEY=VALUE"))?;
        cfg.set(section.trim(), key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(a: &SimArgs, cfg: &ExperimentConfig) -> PathBuf {
    a.out
        .clone()
        .or_else(|| std::env::var_os("SIM_OUT").filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

/// Runs `body` against a fresh directory; on failure removes it again if
/// this call created it.
fn with_output_dir(dir: &Path, body: impl FnOnce() -> Result<(), Failure>) -> Result<(), Failure> {
    let existed = dir.exists();
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let res = body();
    if res.is_err() && !existed {
        let _ = std::fs::remove_dir_all(dir);
    }
    res
}

fn run(a: RunArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_config(&a.sim)?;
    let t = load_trace(&a.sim.trace)?;
    let dir = output_dir(&a.sim, &cfg);
    let hash = trace_hash(&t);
    let sim = Simulator::new(cfg, &t)?;
    with_output_dir(&dir, || {
        let r = sim.run()?;
        metrics::write_outputs(&r, &dir, hash).map_err(|e| io_failure(&dir, e))?;
        let rep = metrics::summarize(&r, hash);
        for k in ["requests_completed", "latency_mean_ns", "latency_p99_ns", "throughput_mrps", "power_watts"] {
            let _ = writeln!(out, "{k} = {:.3}", rep.get(k).unwrap_or(f64::NAN));
        }
        let _ = writeln!(out, "wrote {}", dir.display());
        Ok(())
    })
}

pub fn sweep_label(cores: usize, threads_per_core: usize) -> String {
    format!("{cores}C/{}T", cores * threads_per_core)
}

const SWEEP_COLUMNS: [&str; 10] = [
    "requests_completed",
    "offered_mpps",
    "throughput_mrps",
    "latency_mean_ns",
    "latency_p99_ns",
    "thread_utilization",
    "l1_miss_rate",
    "dram_utilization",
    "power_watts",
    "efficiency_req_per_joule",
];

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let base = load_config(&a.sim)?;
    let mut points = Vec::new();
    for &c in &a.cores {
        let &(_, gbps) = SWEEP_POINTS
            .iter()
            .find(|(k, _)| *k == c)
            .ok_or_else(|| ConfigError::invalid("sweep --cores", format!("{c} is not one of 1,2,4,8,16")))?;
        let mut cfg = base.clone();
        cfg.core.cores = c;
        cfg.workload.offered_gbps = gbps;
        cfg.validate()?;
        points.push(cfg);
    }
    let t = load_trace(&a.sim.trace)?;
    let dir = output_dir(&a.sim, &base);
    let hash = trace_hash(&t);
    for cfg in &points {
        Simulator::new(cfg.clone(), &t)?;
    }

    with_output_dir(&dir, || {
        let jobs = a.jobs.max(1);
        let mut results: Vec<Option<Result<Report, Failure>>> = (0..points.len()).map(|_| None).collect();
        for chunk in (0..points.len()).collect::<Vec<_>>().chunks(jobs) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&i| {
                        let cfg = points[i].clone();
                        let (t, dir) = (&t, &dir);
                        s.spawn(move || -> Result<Report, Failure> {
                            let label = sweep_label(cfg.core.cores, cfg.core.hw_threads_per_core);
                            let r = Simulator::new(cfg, t)?.run()?;
                            let sub = dir.join(label.replace('/', "_"));
                            metrics::write_outputs(&r, &sub, hash).map_err(|e| io_failure(&sub, e))?;
                            Ok(metrics::summarize(&r, hash))
                        })
                    })
                    .collect();
                for (&i, h) in chunk.iter().zip(handles) {
                    results[i] = Some(h.join().unwrap_or_else(|_| Err(Failure::Runtime("sweep worker panicked".into()))));
                }
            });
        }
        let mut csv = String::from("config,cores,threads,nic_gbps");
        for c in SWEEP_COLUMNS {
            csv.push(',');
            csv.push_str(c);
        }
        csv.push('\n');
        for (cfg, res) in points.iter().zip(results) {
            let rep = res.expect("every point ran")?;
            let threads = cfg.core.cores * cfg.core.hw_threads_per_core;
            csv.push_str(&format!(
                "{},{},{},{}",
                sweep_label(cfg.core.cores, cfg.core.hw_threads_per_core),
                cfg.core.cores,
                threads,
                cfg.workload.offered_gbps
            ));
            for c in SWEEP_COLUMNS {
                csv.push_str(&format!(",{:.6}", rep.get(c).unwrap_or(f64::NAN)));
            }
            csv.push('\n');
        }
        let path = dir.join("sweep.csv");
        std::fs::write(&path, &csv).map_err(|e| io_failure(&path, e))?;
        let _ = write!(out, "{csv}");
        Ok(())
    })
}

fn summary_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("summary.txt")
    } else {
        p.to_path_buf()
    }
}

fn read_report(p: &Path) -> Result<Report, Failure> {
    let path = summary_path(p);
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Report::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Config of a run directory, if it has one.
fn read_run_config(p: &Path) -> Result<Option<ExperimentConfig>, Failure> {
    let ini = if p.is_dir() { p.join("config.ini") } else { p.with_file_name("config.ini") };
    if !ini.exists() {
        return Ok(None);
    }
    Ok(Some(ExperimentConfig::load(&ini)?))
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if let Some(pair) = a.compare {
        let (first, second) = (read_report(&pair[0])?, read_report(&pair[1])?);
        if let (Some(c1), Some(c2)) = (read_run_config(&pair[0])?, read_run_config(&pair[1])?) {
            let diff = c1.diff(&c2, &COMPARE_IGNORED);
            if !diff.is_empty() {
                return Err(Failure::Config(format!("runs differ in more than the offload switches: {}", diff.join(", "))));
            }
        }
        if first.get("trace_hash") != second.get("trace_hash") {
            return Err(Failure::Config("runs used different traces".into()));
        }
        let _ = write!(out, "{}", metrics::format_compare(&metrics::compare(&first, &second)));
    } else if let Some(p) = a.run {
        let _ = write!(out, "{}", read_report(&p)?.to_text());
    }
    Ok(())
}

fn golden_cmd(dump: bool, out: &mut dyn Write) -> Result<(), Failure> {
    match golden::check() {
        Ok(w) => {
            if dump {
                let _ = write!(out, "{}", w.text);
            }
            let _ = writeln!(out, "golden walkthrough: pass");
            Ok(())
        }
        Err(d) => Err(Failure::Runtime(format!("golden walkthrough: {d}"))),
    }
}
