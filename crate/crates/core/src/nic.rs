//! Multi-core NIC: per-packet user routine, critical-region execution with
//! the shipped register context, and steering fills toward the packet's
//! destination core.

use std::collections::HashSet;

use crate::critical::{CriticalRegion, RequiredState};
use crate::memsys::MemorySystem;
use crate::time::{ns, period_ps, Time};
use crate::trace::{block_of, MemoryImage, OpClass, RegisterId, TraceRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct NicConfig {
    pub cores: usize,
    pub clock_mhz: f64,
    pub icache_bytes: u64,
    pub icache_ways: usize,
    pub scratchpad_bytes: u64,
    pub scratchpad_banks: u64,
    pub scratchpad_latency_cycles: u64,
    pub user_routine_insts: u64,
    pub rx_ring_depth: usize,
    /// Fixed per-packet protocol processing before the PCIe transfer.
    pub processing_ns: f64,
    /// Packet transfer from NIC to the host ring.
    pub transfer_ns: f64,
    pub offload_enable: bool,
    /// Upper bound on instructions executed per region per packet.
    pub step_cap: usize,
    /// Bucket width of the per-interval offload log.
    pub report_interval_ns: f64,
}

impl Default for NicConfig {
    fn default() -> Self {
        NicConfig {
            cores: 6,
            clock_mhz: 166.0,
            icache_bytes: 8 * 1024,
            icache_ways: 2,
            scratchpad_bytes: 256 * 1024,
            scratchpad_banks: 4,
            scratchpad_latency_cycles: 2,
            user_routine_insts: 56,
            rx_ring_depth: 256,
            processing_ns: 900.0,
            transfer_ns: 250.0,
            offload_enable: true,
            step_cap: 64,
            report_interval_ns: 10_000.0,
        }
    }
}

impl NicConfig {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        use crate::ConfigError;
        if self.cores == 0 {
            return Err(ConfigError::invalid("nic.cores", "must be >= 1"));
        }
        if self.rx_ring_depth == 0 {
            return Err(ConfigError::invalid("nic.rx_ring_depth", "must be >= 1"));
        }
        if !(self.clock_mhz > 0.0) {
            return Err(ConfigError::invalid("nic.clock_mhz", "must be positive"));
        }
        if self.scratchpad_banks == 0 {
            return Err(ConfigError::invalid("nic.scratchpad_banks", "must be >= 1"));
        }
        if !(self.processing_ns >= 0.0) || !(self.transfer_ns >= 0.0) {
            return Err(ConfigError::invalid("nic.processing_ns", "stage times must be >= 0"));
        }
        if !(self.report_interval_ns >= 1.0) {
            return Err(ConfigError::invalid("nic.report_interval_ns", "must be >= 1"));
        }
        if self.step_cap == 0 {
            return Err(ConfigError::invalid("nic.step_cap", "must be >= 1"));
        }
        Ok(())
    }

    pub fn cycle_ps(&self) -> Time {
        period_ps(self.clock_mhz)
    }

    /// Time from packet arrival to the host Rx ring.
    pub fn stage_ps(&self) -> Time {
        ns(self.processing_ns) + ns(self.transfer_ns)
    }
}

/// Scratchpad bytes a region's context occupies.
pub fn context_bytes(region: &CriticalRegion, instr_enc: u64, reg_enc: u64) -> u64 {
    region.instructions.len() as u64 * instr_enc + region.required_regs.len() as u64 * reg_enc
}

/// Regions installed for one destination core.
#[derive(Clone, Debug, Default)]
pub struct OffloadTable {
    pub regions: Vec<CriticalRegion>,
    pub installed_at: Time,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InstallOutcome {
    pub state_bytes: u64,
    pub ready_at: Time,
    pub installed: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecOutcome {
    pub executed: u64,
    pub skipped: u64,
    pub failed_unknown: u64,
    pub fills: u64,
    pub correct: u64,
    pub incorrect: u64,
}

impl ExecOutcome {
    /// Counts accumulated since the `earlier` snapshot.
    pub fn since(&self, earlier: &ExecOutcome) -> ExecOutcome {
        ExecOutcome {
            executed: self.executed - earlier.executed,
            skipped: self.skipped - earlier.skipped,
            failed_unknown: self.failed_unknown - earlier.failed_unknown,
            fills: self.fills - earlier.fills,
            correct: self.correct - earlier.correct,
            incorrect: self.incorrect - earlier.incorrect,
        }
    }
}

impl std::ops::AddAssign<&ExecOutcome> for ExecOutcome {
    fn add_assign(&mut self, o: &ExecOutcome) {
        self.executed += o.executed;
        self.skipped += o.skipped;
        self.failed_unknown += o.failed_unknown;
        self.fills += o.fills;
        self.correct += o.correct;
        self.incorrect += o.incorrect;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NicStats {
    pub packets_in: u64,
    pub packets_enqueued: u64,
    pub packets_dropped: u64,
    pub offload_runs: u64,
    pub installs: u64,
    pub regions_installed: u64,
    pub regions_dropped: u64,
    pub user_routine_insts: u64,
    pub region_insts: u64,
    pub busy_ps: u64,
    pub exec: ExecOutcome,
}

impl NicStats {
    /// NIC instructions per packet: user routine plus region execution.
    pub fn insts_per_packet(&self) -> f64 {
        if self.packets_in == 0 {
            0.0
        } else {
            (self.user_routine_insts + self.region_insts) as f64 / self.packets_in as f64
        }
    }
}

/// Inputs describing the packet whose request the offload prefetches for.
pub struct PacketContext<'a> {
    pub args: &'a [u64],
    pub dest_core: usize,
    /// Event index of the request's end, for memory-value lookups.
    pub trace_pos: usize,
    /// Blocks the request's own loads will touch.
    pub actual_blocks: &'a HashSet<u64>,
}

fn alu_result(rec: &TraceRecord, regs: &[Option<u64>; RegisterId::COUNT]) -> Option<u64> {
    let read = |r: Option<RegisterId>| -> Option<Option<u64>> {
        match r {
            None => Some(None),
            Some(r) => regs[r.index()].map(Some),
        }
    };
    let a = read(rec.src1)?.unwrap_or(0);
    let b = match read(rec.src2)? {
        Some(v) => v,
        None => rec.addr_disp as i64 as u64,
    };
    rec.alu_op.eval(a, b)
}

/// Runs one region for a packet. Instruction `k` issues at
/// `start + k` NIC cycles; a load waits for its address registers.
pub fn execute_region(
    region: &CriticalRegion,
    pkt: &PacketContext,
    start: Time,
    cfg: &NicConfig,
    mem: &mut MemorySystem,
    image: &MemoryImage,
) -> ExecOutcome {
    let mut out = ExecOutcome::default();
    let mut regs: [Option<u64>; RegisterId::COUNT] = [None; RegisterId::COUNT];
    let mut ready: [Time; RegisterId::COUNT] = [start; RegisterId::COUNT];
    let mut replaced: Vec<u64> = Vec::new();
    for q in &region.required_regs {
        regs[q.reg.index()] = match q.state {
            RequiredState::Ready(v) => Some(v),
            RequiredState::ReadyDyn(k) => pkt.args.get(k as usize - 1).copied(),
        };
        if let Some(pc) = q.replaces_pc {
            replaced.push(pc);
        }
    }
    let cycle = cfg.cycle_ps();
    let mut visits: Vec<usize> = vec![0; region.instructions.len()];
    let mut i = 0;
    let mut steps = 0;
    while i < region.instructions.len() && steps < cfg.step_cap {
        let ins = &region.instructions[i];
        let rec = &ins.template;
        let now = start + steps as u64 * cycle;
        steps += 1;
        out.executed += 1;
        let mut next = i + 1;
        if replaced.contains(&ins.pc) {
            out.skipped += 1;
            i = next;
            continue;
        }
        let result = match ins.opclass {
            OpClass::Load => match rec.compute_addr(|r| regs[r.index()]) {
                None => {
                    out.failed_unknown += 1;
                    None
                }
                Some(addr) => {
                    let issue = rec.addr_regs().map(|r| ready[r.index()]).fold(now, Time::max);
                    let done = mem.nic_steering_fill(pkt.dest_core, addr, issue);
                    out.fills += 1;
                    if pkt.actual_blocks.contains(&block_of(addr)) {
                        out.correct += 1;
                    } else {
                        out.incorrect += 1;
                    }
                    if let Some(d) = rec.dest {
                        ready[d.index()] = done;
                    }
                    image.value_at(addr, pkt.trace_pos)
                }
            },
            OpClass::Alu => {
                let v = alu_result(rec, &regs);
                if v.is_none() && rec.dest.is_some() && rec.alu_op.eval(0, 0).is_some() {
                    out.failed_unknown += 1;
                }
                v
            }
            OpClass::RegMove => {
                let v = rec.src1.and_then(|s| regs[s.index()]);
                if v.is_none() {
                    out.failed_unknown += 1;
                }
                v
            }
            OpClass::Branch => {
                let visit = visits[i];
                visits[i] += 1;
                let target = rec.branch_target.unwrap_or(0);
                if ins.bias.taken_at(visit, target < ins.pc) {
                    match region.instructions.binary_search_by_key(&target, |x| x.pc) {
                        Ok(j) => next = j,
                        Err(_) => break,
                    }
                }
                None
            }
            OpClass::Store | OpClass::Other => None,
        };
        if let Some(d) = rec.dest {
            regs[d.index()] = result;
            if ins.opclass != OpClass::Load {
                let src_ready = rec.read_regs().iter().map(|r| ready[r.index()]).fold(now, Time::max);
                ready[d.index()] = src_ready;
            }
        }
        i = next;
    }
    out
}

/// NIC cores plus the per-destination offload tables.
#[derive(Clone, Debug)]
pub struct Nic {
    pub cfg: NicConfig,
    free_at: Vec<Time>,
    pub tables: Vec<OffloadTable>,
    pub stats: NicStats,
}

impl Nic {
    pub fn new(cfg: NicConfig, host_cores: usize) -> Self {
        Nic {
            free_at: vec![0; cfg.cores.max(1)],
            tables: vec![OffloadTable::default(); host_cores.max(1)],
            stats: NicStats::default(),
            cfg,
        }
    }

    /// Replaces `core`'s table with `regions`, dropping the largest ones
    /// until the contexts fit the scratchpad.
    pub fn install_regions(
        &mut self,
        core: usize,
        mut regions: Vec<CriticalRegion>,
        now: Time,
        mem: &mut MemorySystem,
    ) -> InstallOutcome {
        let pcie = mem.pcie_config().clone();
        let size = |r: &CriticalRegion| context_bytes(r, pcie.instr_encoding_bytes, pcie.reg_encoding_bytes);
        let budget = self.cfg.scratchpad_bytes / self.tables.len().max(1) as u64;
        let mut dropped = 0;
        regions.sort_by_key(|r| (size(r), r.region_id));
        while regions.iter().map(size).sum::<u64>() > budget {
            regions.pop();
            dropped += 1;
        }
        regions.sort_by_key(|r| r.instructions.first().map(|i| i.pc));
        let bytes: u64 = regions.iter().map(size).sum();
        let state_bytes = pcie.state_header_bytes + bytes;
        mem.pcie.state_bytes += state_bytes;
        let words = state_bytes.div_ceil(8 * self.cfg.scratchpad_banks);
        let ready_at = now + ns(pcie.one_way_latency_ns) + words * self.cfg.scratchpad_latency_cycles * self.cfg.cycle_ps();
        self.stats.installs += 1;
        self.stats.regions_installed += regions.len() as u64;
        self.stats.regions_dropped += dropped as u64;
        let installed = regions.len();
        self.tables[core] = OffloadTable { regions, installed_at: ready_at, bytes };
        InstallOutcome { state_bytes, ready_at, installed, dropped }
    }

    /// Earliest-free NIC core, lowest id on ties.
    fn pick_core(&self, now: Time) -> (usize, Time) {
        self.free_at
            .iter()
            .enumerate()
            .map(|(i, &t)| (i, t.max(now)))
            .min_by_key(|&(i, t)| (t, i))
            .unwrap()
    }

    /// Runs the user routine and every installed region of the packet's
    /// destination core. Returns the NIC core's busy time.
    pub fn offload(&mut self, pkt: &PacketContext, now: Time, mem: &mut MemorySystem, image: &MemoryImage) -> Time {
        let (core, start) = self.pick_core(now);
        let cycle = self.cfg.cycle_ps();
        let mut insts = self.cfg.user_routine_insts;
        self.stats.user_routine_insts += self.cfg.user_routine_insts;
        let table = &self.tables[pkt.dest_core];
        if !table.regions.is_empty() && table.installed_at <= now {
            self.stats.offload_runs += 1;
            let mut t = start + insts * cycle;
            for region in &table.regions {
                let o = execute_region(region, pkt, t, &self.cfg, mem, image);
                t += o.executed * cycle;
                insts += o.executed;
                self.stats.region_insts += o.executed;
                self.stats.exec += &o;
            }
        }
        let busy = insts * cycle;
        self.free_at[core] = start + busy;
        self.stats.busy_ps += busy;
        busy
    }
}
