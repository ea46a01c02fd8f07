//! Experiment configuration and its sectioned `key = value` text form.
//!
//! ```text
//! # comment
//! [run]
//! name = baseline
//! seed = 7
//! [nic]
//! offload_enable = false
//! ```
//!
//! Every key has a default; unknown sections and keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::cpu::CoreConfig;
use crate::critical::CriticalConfig;
use crate::error::ConfigError;
use crate::memsys::{CacheConfig, DramConfig, PcieConfig};
use crate::metrics::PowerModel;
use crate::nic::NicConfig;
use crate::regpred::RegPredConfig;
use crate::workload::{ArrivalProcess, ArrivalSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: String,
    pub core: CoreConfig,
    pub cache: CacheConfig,
    pub dram: DramConfig,
    pub pcie: PcieConfig,
    pub nic: NicConfig,
    pub critical: CriticalConfig,
    pub regpred: RegPredConfig,
    pub workload: ArrivalSpec,
    pub power: PowerModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            seed: 1,
            output_dir: "out".into(),
            core: CoreConfig::default(),
            cache: CacheConfig::default(),
            dram: DramConfig::default(),
            pcie: PcieConfig::default(),
            nic: NicConfig::default(),
            critical: CriticalConfig::default(),
            regpred: RegPredConfig::default(),
            workload: ArrivalSpec::default(),
            power: PowerModel::default(),
        }
    }
}

trait Field: Sized {
    fn parse_field(s: &str) -> Option<Self>;
    fn show(&self) -> String;
}

macro_rules! plain_field {
    ($($t:ty),*) => {$(
        impl Field for $t {
            fn parse_field(s: &str) -> Option<Self> {
                <$t>::from_str(s).ok()
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_field!(u64, u32, usize, f64, String);

impl Field for bool {
    fn parse_field(s: &str) -> Option<Self> {
        match s {
            "true" | "1" | "yes" | "on" => Some(true),
            "false" | "0" | "no" | "off" => Some(false),
            _ => None,
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Field for Option<u64> {
    fn parse_field(s: &str) -> Option<Self> {
        if s == "auto" {
            Some(None)
        } else {
            u64::from_str(s).ok().map(Some)
        }
    }
    fn show(&self) -> String {
        self.map(|v| v.to_string()).unwrap_or_else(|| "auto".into())
    }
}

impl Field for ArrivalProcess {
    fn parse_field(s: &str) -> Option<Self> {
        ArrivalProcess::parse(s)
    }
    fn show(&self) -> String {
        self.name().into()
    }
}

/// Expands to the list of (section, key) pairs and, for each, an accessor
/// into the config.
macro_rules! fields {
    ($self:ident, $visit:ident) => {
        $visit!("run", "name", $self.name);
        $visit!("run", "seed", $self.seed);
        $visit!("run", "output_dir", $self.output_dir);
        $visit!("core", "cores", $self.core.cores);
        $visit!("core", "hw_threads_per_core", $self.core.hw_threads_per_core);
        $visit!("core", "clock_ghz", $self.core.clock_ghz);
        $visit!("core", "issue_width", $self.core.issue_width);
        $visit!("core", "commit_width", $self.core.commit_width);
        $visit!("core", "rob_entries", $self.core.rob_entries);
        $visit!("core", "rs_entries", $self.core.rs_entries);
        $visit!("core", "mlp_window", $self.core.mlp_window);
        $visit!("core", "bp_entries", $self.core.bp_entries);
        $visit!("core", "mispredict_penalty", $self.core.mispredict_penalty);
        $visit!("memsys", "l1_bytes", $self.cache.l1_bytes);
        $visit!("memsys", "l1_ways", $self.cache.l1_ways);
        $visit!("memsys", "l1_latency", $self.cache.l1_latency);
        $visit!("memsys", "l2_bytes", $self.cache.l2_bytes);
        $visit!("memsys", "l2_ways", $self.cache.l2_ways);
        $visit!("memsys", "l2_latency", $self.cache.l2_latency);
        $visit!("memsys", "llc_bytes_per_core", $self.cache.llc_bytes_per_core);
        $visit!("memsys", "llc_ways", $self.cache.llc_ways);
        $visit!("memsys", "llc_latency", $self.cache.llc_latency);
        $visit!("memsys", "block_bytes", $self.cache.block_bytes);
        $visit!("memsys", "dram_latency_ns", $self.dram.latency_ns);
        $visit!("memsys", "dram_window_ns", $self.dram.window_ns);
        $visit!("memsys", "dram_max_per_window", $self.dram.max_per_window);
        $visit!("memsys", "pcie_one_way_ns", $self.pcie.one_way_latency_ns);
        $visit!("memsys", "pcie_lanes", $self.pcie.lanes);
        $visit!("memsys", "pcie_gt_per_s", $self.pcie.gt_per_s);
        $visit!("memsys", "pcie_efficiency", $self.pcie.payload_efficiency);
        $visit!("memsys", "pcie_request_header_bytes", $self.pcie.request_header_bytes);
        $visit!("memsys", "pcie_completion_header_bytes", $self.pcie.completion_header_bytes);
        $visit!("memsys", "pcie_state_header_bytes", $self.pcie.state_header_bytes);
        $visit!("memsys", "pcie_instr_encoding_bytes", $self.pcie.instr_encoding_bytes);
        $visit!("memsys", "pcie_reg_encoding_bytes", $self.pcie.reg_encoding_bytes);
        $visit!("nic", "cores", $self.nic.cores);
        $visit!("nic", "clock_mhz", $self.nic.clock_mhz);
        $visit!("nic", "icache_bytes", $self.nic.icache_bytes);
        $visit!("nic", "icache_ways", $self.nic.icache_ways);
        $visit!("nic", "scratchpad_bytes", $self.nic.scratchpad_bytes);
        $visit!("nic", "scratchpad_banks", $self.nic.scratchpad_banks);
        $visit!("nic", "scratchpad_latency_cycles", $self.nic.scratchpad_latency_cycles);
        $visit!("nic", "user_routine_insts", $self.nic.user_routine_insts);
        $visit!("nic", "rx_ring_depth", $self.nic.rx_ring_depth);
        $visit!("nic", "processing_ns", $self.nic.processing_ns);
        $visit!("nic", "transfer_ns", $self.nic.transfer_ns);
        $visit!("nic", "offload_enable", $self.nic.offload_enable);
        $visit!("nic", "step_cap", $self.nic.step_cap);
        $visit!("nic", "report_interval_ns", $self.nic.report_interval_ns);
        $visit!("critical", "enable", $self.critical.enable);
        $visit!("critical", "cache_entries", $self.critical.cache_entries);
        $visit!("critical", "ways", $self.critical.ways);
        $visit!("critical", "epoch_l2_misses", $self.critical.epoch_l2_misses);
        $visit!("critical", "clear_on_epoch", $self.critical.clear_on_epoch);
        $visit!("regpred", "threshold_num", $self.regpred.threshold_num);
        $visit!("regpred", "threshold_den", $self.regpred.threshold_den);
        $visit!("regpred", "in_entries", $self.regpred.in_entries);
        $visit!("regpred", "gen_entries", $self.regpred.gen_entries);
        $visit!("regpred", "max_in_per_reg", $self.regpred.max_in_per_reg);
        $visit!("regpred", "force_unresolved", $self.regpred.force_unresolved);
        $visit!("workload", "process", $self.workload.process);
        $visit!("workload", "offered_gbps", $self.workload.offered_gbps);
        $visit!("workload", "packet_bytes", $self.workload.packet_bytes);
        $visit!("workload", "header_bytes", $self.workload.header_bytes);
        $visit!("workload", "requests", $self.workload.requests);
        $visit!("power", "core_watts", $self.power.core_watts);
        $visit!("power", "cache_watts", $self.power.cache_watts);
        $visit!("power", "nic_watts", $self.power.nic_watts);
        $visit!("power", "dram_watts", $self.power.dram_watts);
        $visit!("power", "l1_access_nj", $self.power.l1_access_nj);
        $visit!("power", "l2_access_nj", $self.power.l2_access_nj);
        $visit!("power", "llc_access_nj", $self.power.llc_access_nj);
        $visit!("power", "dram_access_nj", $self.power.dram_access_nj);
        $visit!("power", "nic_inst_nj", $self.power.nic_inst_nj);
        $visit!("power", "pcie_byte_nj", $self.power.pcie_byte_nj);
        $visit!("power", "cargo_overhead_watts", $self.power.cargo_overhead_watts);
    };
}

const SECTIONS: [&str; 8] = ["run", "core", "memsys", "nic", "critical", "regpred", "workload", "power"];

impl ExperimentConfig {
    /// All settings as (section, key, value) in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let mut out = Vec::new();
        macro_rules! visit {
            ($s:expr, $k:expr, $f:expr) => {
                out.push(($s, $k, Field::show(&$f)));
            };
        }
        fields!(self, visit);
        out
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        macro_rules! visit {
            ($s:expr, $k:expr, $f:expr) => {
                if section == $s && key == $k {
                    $f = Field::parse_field(value).ok_or_else(|| {
                        ConfigError::invalid(format!("{}.{}", $s, $k), format!("cannot parse {value:?}"))
                    })?;
                    return Ok(());
                }
            };
        }
        fields!(self, visit);
        if SECTIONS.contains(&section) {
            Err(ConfigError::UnknownKey { section: section.into(), key: key.into() })
        } else {
            Err(ConfigError::UnknownSection(section.into()))
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: n + 1, reason: "unclosed section header".into() })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownSection(name.into()));
                }
                section = Some(name.into());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: n + 1, reason: "expected key = value".into() })?;
            let sec = section
                .as_deref()
                .ok_or_else(|| ConfigError::Syntax { line: n + 1, reason: "key outside any section".into() })?;
            cfg.set(sec, k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (s, k, v) in self.entries() {
            if s != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{s}]");
                current = s;
            }
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.core.validate()?;
        self.cache.validate()?;
        self.nic.validate()?;
        self.critical.validate()?;
        self.workload.validate()?;
        self.power.validate()?;
        if self.dram.latency_ns < 0.0 || !(self.dram.window_ns > 0.0) || self.dram.max_per_window == 0 {
            return Err(ConfigError::invalid("memsys.dram_window_ns", "DRAM timing must be positive"));
        }
        if self.regpred.threshold_den == 0 {
            return Err(ConfigError::invalid("regpred.threshold_den", "must be >= 1"));
        }
        if self.regpred.in_entries < crate::trace::RegisterId::COUNT || self.regpred.max_in_per_reg == 0 {
            return Err(ConfigError::invalid("regpred.in_entries", "needs one fixed slot per register"));
        }
        Ok(())
    }

    /// Settings that differ between two configs, ignoring the listed keys.
    pub fn diff(&self, other: &Self, ignore: &[(&str, &str)]) -> Vec<String> {
        self.entries()
            .into_iter()
            .zip(other.entries())
            .filter(|((s, k, a), (_, _, b))| a != b && !ignore.contains(&(*s, *k)))
            .map(|((s, k, a), (_, _, b))| format!("{s}.{k}: {a} != {b}"))
            .collect()
    }

    /// Offloads run only when both identification and the NIC side are on.
    pub fn offload_active(&self) -> bool {
        self.nic.offload_enable && self.critical.enable
    }
}
