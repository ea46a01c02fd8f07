//! Post-run reporting: percentiles, power and efficiency, CPI stack, cache
//! and DRAM utilisation, PCIe traffic, region mix and storage accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::regpred::Election;
use crate::sim::RunResult;
use crate::time::to_ns;

#[derive(Clone, Debug, PartialEq)]
pub struct PowerModel {
    /// Static watts per host core.
    pub core_watts: f64,
    /// Static watts of private caches and LLC slice per host core.
    pub cache_watts: f64,
    pub nic_watts: f64,
    pub dram_watts: f64,
    pub l1_access_nj: f64,
    pub l2_access_nj: f64,
    pub llc_access_nj: f64,
    pub dram_access_nj: f64,
    pub nic_inst_nj: f64,
    pub pcie_byte_nj: f64,
    pub cargo_overhead_watts: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            core_watts: 12.0,
            cache_watts: 3.0,
            nic_watts: 6.0,
            dram_watts: 5.0,
            l1_access_nj: 0.1,
            l2_access_nj: 0.3,
            llc_access_nj: 1.0,
            dram_access_nj: 15.0,
            nic_inst_nj: 0.05,
            pcie_byte_nj: 0.01,
            cargo_overhead_watts: 0.4,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        let all = [
            self.core_watts,
            self.cache_watts,
            self.nic_watts,
            self.dram_watts,
            self.l1_access_nj,
            self.l2_access_nj,
            self.llc_access_nj,
            self.dram_access_nj,
            self.nic_inst_nj,
            self.pcie_byte_nj,
            self.cargo_overhead_watts,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(crate::ConfigError::invalid("power", "all power parameters must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Average watts per component over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PowerBreakdown {
    pub core: f64,
    pub cache: f64,
    pub nic: f64,
    pub dram: f64,
    pub pcie: f64,
    pub overhead: f64,
}

impl PowerBreakdown {
    pub fn total(&self) -> f64 {
        self.core + self.cache + self.nic + self.dram + self.pcie + self.overhead
    }

    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("core", self.core),
            ("cache", self.cache),
            ("nic", self.nic),
            ("dram", self.dram),
            ("pcie", self.pcie),
            ("overhead", self.overhead),
        ]
    }
}

pub fn power(run: &RunResult) -> PowerBreakdown {
    let p = &run.config.power;
    let cores = run.config.core.cores as f64;
    let secs = (run.wall_ps() as f64 * 1e-12).max(1e-12);
    let m = &run.mem;
    let joules = |count: u64, nj: f64| count as f64 * nj * 1e-9;
    let cache_j = joules(m.l1_accesses, p.l1_access_nj) + joules(m.l2_accesses, p.l2_access_nj) + joules(m.llc_accesses, p.llc_access_nj);
    let nic_insts = run.nic.user_routine_insts + run.nic.region_insts;
    PowerBreakdown {
        core: p.core_watts * cores,
        cache: p.cache_watts * cores + cache_j / secs,
        nic: p.nic_watts + joules(nic_insts, p.nic_inst_nj) / secs,
        dram: p.dram_watts + joules(run.dram_accesses, p.dram_access_nj) / secs,
        pcie: joules(run.pcie.total(), p.pcie_byte_nj) / secs,
        overhead: if run.config.offload_active() { p.cargo_overhead_watts } else { 0.0 },
    }
}

/// Nearest-rank percentile of an unsorted sample (`q` in (0, 100]).
pub fn percentile(values: &[u64], q: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageReport {
    pub context_structures: u64,
    pub register_state: u64,
    pub value_predictor: u64,
}

impl StorageReport {
    pub fn total(&self) -> u64 {
        self.context_structures + self.register_state + self.value_predictor
    }
}

pub fn storage(run: &RunResult) -> StorageReport {
    StorageReport {
        context_structures: run.critical_storage_bytes,
        register_state: run.regpred_storage_bytes.0,
        value_predictor: run.regpred_storage_bytes.1,
    }
}

/// Flat summary of a run, in output order.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub values: Vec<(String, f64)>,
}

impl Report {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {}", fmt_num(*v));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("line {}: not a number", n + 1))?;
            values.push((k.trim().to_string(), v));
        }
        Ok(Report { values })
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

pub fn summarize(run: &RunResult, trace_hash: u64) -> Report {
    let totals: Vec<u64> = run.requests.iter().map(|r| r.total_ps()).collect();
    let queues: Vec<u64> = run.requests.iter().map(|r| r.queue_ps).collect();
    let cores: Vec<u64> = run.requests.iter().map(|r| r.core_ps).collect();
    let n = run.requests.len().max(1) as f64;
    let mean = |v: &[u64]| to_ns(v.iter().sum::<u64>()) / n;
    let wall_s = (run.wall_ps() as f64 * 1e-12).max(1e-12);
    let threads = (run.config.core.cores * run.config.core.hw_threads_per_core) as f64;
    let throughput = run.requests.len() as f64 / wall_s;
    let pw = power(run);
    let st = storage(run);
    let w = run.config.core.issue_width as f64;
    let cpu_cycles = run.cpi.total() as f64 / w;
    let usage = run.pcie.usage(&run.config.pcie, run.wall_ps());
    let l1_miss_rate = if run.mem.l1_accesses == 0 { 0.0 } else { run.mem.l1_misses as f64 / run.mem.l1_accesses as f64 };
    let exec = &run.nic.exec;
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut v: Vec<(String, f64)> = Vec::new();
    let mut put = |k: &str, x: f64| v.push((k.to_string(), x));
    put("trace_hash", trace_hash as f64);
    put("requests_completed", run.requests.len() as f64);
    put("packets_in", run.nic.packets_in as f64);
    put("packets_dropped", run.nic.packets_dropped as f64);
    put("offered_mpps", run.config.workload.packets_per_s() * 1e-6);
    put("throughput_mrps", throughput * 1e-6);
    put("wall_us", wall_s * 1e6);
    put("latency_mean_ns", mean(&totals));
    put("latency_p50_ns", to_ns(percentile(&totals, 50.0)));
    put("latency_p99_ns", to_ns(percentile(&totals, 99.0)));
    put("latency_max_ns", to_ns(totals.iter().copied().max().unwrap_or(0)));
    put("queue_mean_ns", mean(&queues));
    put("queue_p99_ns", to_ns(percentile(&queues, 99.0)));
    put("core_mean_ns", mean(&cores));
    put("core_p99_ns", to_ns(percentile(&cores, 99.0)));
    put("thread_utilization", to_ns(cores.iter().sum::<u64>()) * 1e-9 / (threads * wall_s));
    put("instructions", run.instructions as f64);
    put("cpi", if run.instructions == 0 { 0.0 } else { cpu_cycles / run.instructions as f64 });
    for (name, ticks) in run.cpi.buckets() {
        put(&format!("cpi_cycles_{}", name.to_ascii_lowercase()), ticks as f64 / w);
    }
    put("memory_bound_share", run.cpi.memory_share());
    put("l1_accesses", run.mem.l1_accesses as f64);
    put("l1_misses", run.mem.l1_misses as f64);
    put("l1_miss_rate", l1_miss_rate);
    put("dram_accesses", run.dram_accesses as f64);
    put("dram_utilization", run.dram_accesses as f64 / (run.dram_peak_per_s * wall_s));
    put("pcie_state_bytes", run.pcie.state_bytes as f64);
    put("pcie_request_bytes", run.pcie.request_bytes as f64);
    put("pcie_data_bytes", run.pcie.data_bytes as f64);
    put("pcie_state_pct", usage.state_pct);
    put("pcie_request_pct", usage.request_pct);
    put("pcie_data_pct", usage.data_pct);
    put("nic_insts_per_packet", run.nic.insts_per_packet());
    put("nic_user_routine_insts", run.config.nic.user_routine_insts as f64);
    put("nic_region_insts_per_packet", ratio(run.nic.region_insts, run.nic.packets_in));
    put("nic_offload_runs", run.nic.offload_runs as f64);
    put("nic_fills", exec.fills as f64);
    put("nic_skipped", exec.skipped as f64);
    put("nic_failed_unknown_rate", ratio(exec.failed_unknown, exec.executed));
    put("nic_incorrect_rate", ratio(exec.incorrect, exec.fills));
    put("regions_emitted", run.critical.regions_emitted as f64);
    put("regions_withheld", run.critical.regions_withheld as f64);
    put("regions_distinct", run.regions.len() as f64);
    put("epochs", run.critical.epochs as f64);
    put("power_watts", pw.total());
    put("efficiency_req_per_joule", throughput / pw.total());
    put("storage_context_bytes", st.context_structures as f64);
    put("storage_register_state_bytes", st.register_state as f64);
    put("storage_predictor_bytes", st.value_predictor as f64);
    put("storage_total_bytes", st.total() as f64);
    put("little_mean_in_system", run.little.mean_in_system);
    put("little_predicted", run.little.throughput_per_s * run.little.mean_latency_s);
    put("little_relative_error", run.little.relative_error);
    Report { values: v }
}

/// Writes the report bundle into `dir` (created if needed).
pub fn write_outputs(run: &RunResult, dir: &Path, trace_hash: u64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.txt"), summarize(run, trace_hash).to_text())?;
    std::fs::write(dir.join("config.ini"), run.config.to_ini())?;

    let mut s = String::from("request_id,core,arrival_ns,nic_ns,pcie_ns,queue_ns,core_ns,total_ns\n");
    for r in &run.requests {
        let _ = writeln!(
            s,
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
            r.request_id,
            r.core,
            to_ns(r.arrival),
            to_ns(r.nic_ps),
            to_ns(r.pcie_ps),
            to_ns(r.queue_ps),
            to_ns(r.core_ps),
            to_ns(r.total_ps())
        );
    }
    std::fs::write(dir.join("latency.csv"), s)?;

    let w = run.config.core.issue_width as f64;
    let total = run.cpi.total().max(1) as f64;
    let mut s = String::from("bucket,cycles,share\n");
    for (name, ticks) in run.cpi.buckets() {
        let _ = writeln!(s, "{name},{:.2},{:.6}", ticks as f64 / w, ticks as f64 / total);
    }
    std::fs::write(dir.join("cpi.csv"), s)?;

    let mut s = String::from("region_id,instructions,alu,i_ld,d_ld,other,alu_frac,i_ld_frac,d_ld_frac,other_frac,installs,runs\n");
    for r in run.regions.values() {
        let n = r.instructions.max(1) as f64;
        let _ = writeln!(
            s,
            "{:#018x},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.region_id,
            r.instructions,
            r.alu,
            r.independent_loads,
            r.dependent_loads,
            r.other,
            r.alu as f64 / n,
            r.independent_loads as f64 / n,
            r.dependent_loads as f64 / n,
            r.other as f64 / n,
            r.installs,
            r.runs
        );
    }
    std::fs::write(dir.join("regions.csv"), s)?;

    let u = run.pcie.usage(&run.config.pcie, run.wall_ps());
    let traffic = run.pcie.total().max(1) as f64;
    let mut s = String::from("category,bytes,pct_of_traffic,pct_of_capacity\n");
    for (name, bytes, pct) in [
        ("state", u.state_bytes, u.state_pct),
        ("request", u.request_bytes, u.request_pct),
        ("data", u.data_bytes, u.data_pct),
    ] {
        let _ = writeln!(s, "{name},{bytes},{:.4},{pct:.6}", 100.0 * bytes as f64 / traffic);
    }
    std::fs::write(dir.join("pcie.csv"), s)?;

    let pw = power(run);
    let mut s = String::from("component,watts\n");
    for (name, watts) in pw.rows() {
        let _ = writeln!(s, "{name},{watts:.6}");
    }
    let _ = writeln!(s, "total,{:.6}", pw.total());
    std::fs::write(dir.join("power.csv"), s)?;

    let mut s = String::from("core,epoch,register,state,value\n");
    for e in &run.elections {
        let (state, value) = match e.election {
            Election::Ready(v) => ("READY", format!("{v:#x}")),
            Election::ReadyDyn(a) => ("READY-DYN", format!("arg{a}")),
            Election::Unresolved => ("UNRESOLVED", String::new()),
        };
        let _ = writeln!(s, "{},{},{},{state},{value}", e.core, e.epoch, e.reg.name());
    }
    std::fs::write(dir.join("elections.csv"), s)?;

    let width = run.config.nic.report_interval_ns;
    let mut s = String::from("interval_start_ns,packets,drops,offload_runs,executed,skipped,failed_unknown,fills,incorrect\n");
    for (k, v) in &run.nic_intervals {
        let _ = writeln!(
            s,
            "{:.3},{},{},{},{},{},{},{},{}",
            *k as f64 * width,
            v.packets,
            v.drops,
            v.runs,
            v.exec.executed,
            v.exec.skipped,
            v.exec.failed_unknown,
            v.exec.fills,
            v.exec.incorrect
        );
    }
    std::fs::write(dir.join("nic.csv"), s)?;
    Ok(())
}

/// Keys allowed to differ between the two sides of a comparison.
pub const COMPARE_IGNORED: [(&str, &str); 5] = [
    ("run", "name"),
    ("run", "output_dir"),
    ("nic", "offload_enable"),
    ("critical", "enable"),
    ("regpred", "force_unresolved"),
];

/// Per-metric ratio `second / first`, in the first report's key order.
pub fn compare(first: &Report, second: &Report) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (k, a) in &first.values {
        if k == "trace_hash" {
            continue;
        }
        if let Some(b) = second.get(k) {
            let r = if *a == 0.0 && b == 0.0 { 1.0 } else if *a == 0.0 { f64::INFINITY } else { b / a };
            out.insert(k.clone(), r);
        }
    }
    out
}

pub fn format_compare(ratios: &BTreeMap<String, f64>) -> String {
    let mut s = String::from("# ratio = second / first; for latencies a value below 1 means the second run is faster\n");
    for (k, r) in ratios {
        let _ = writeln!(s, "{k} = {r:.6}");
    }
    s
}
