//! Charging model of an out-of-order core.
//!
//! Time inside a request is counted in ticks of `1 / issue_width` cycle.
//! The recurrence is max-plus, so latencies only ever push work later:
//!
//! * the front end spends `active_threads` ticks per instruction;
//! * a load starts once its slot is reached, its address registers are
//!   available and fewer than `mlp_window` older loads are still in flight,
//!   and completes `latency * issue_width` ticks after its slot;
//! * any other instruction waits for every older load to complete;
//! * a mispredicted branch adds a fixed penalty.
//!
//! Every stall is charged to the load that caused it, DRAM portion first,
//! so the buckets of a [`CpiStack`] add up to the request's ticks exactly.

use std::ops::AddAssign;

use crate::error::SimError;
use crate::memsys::{Level, MemorySystem};
use crate::time::Time;
use crate::trace::{MarkerKind, OpClass, RegisterId, TraceEvent, TraceRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct CoreConfig {
    pub cores: usize,
    pub hw_threads_per_core: usize,
    pub clock_ghz: f64,
    pub issue_width: u64,
    pub commit_width: u64,
    pub rob_entries: u64,
    pub rs_entries: u64,
    /// Loads in flight per thread; `None` derives rs_entries / issue_width.
    pub mlp_window: Option<u64>,
    pub bp_entries: usize,
    pub mispredict_penalty: u64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            cores: 4,
            hw_threads_per_core: 4,
            clock_ghz: 4.0,
            issue_width: 4,
            commit_width: 8,
            rob_entries: 256,
            rs_entries: 128,
            mlp_window: None,
            bp_entries: 4096,
            mispredict_penalty: 15,
        }
    }
}

impl CoreConfig {
    pub fn mlp_window(&self) -> u64 {
        self.mlp_window.unwrap_or(self.rs_entries / self.issue_width.max(1)).max(1)
    }

    pub fn cycle_ps(&self) -> Time {
        (1000.0 / self.clock_ghz).round() as Time
    }

    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        use crate::ConfigError;
        if !(1..=64).contains(&self.cores) {
            return Err(ConfigError::invalid("core.cores", "must lie in 1..=64"));
        }
        if self.hw_threads_per_core == 0 {
            return Err(ConfigError::invalid("core.hw_threads_per_core", "must be >= 1"));
        }
        if self.issue_width == 0 || self.commit_width == 0 {
            return Err(ConfigError::invalid("core.issue_width", "widths must be >= 1"));
        }
        if !(self.clock_ghz > 0.0) {
            return Err(ConfigError::invalid("core.clock_ghz", "must be positive"));
        }
        if self.bp_entries == 0 {
            return Err(ConfigError::invalid("core.bp_entries", "must be >= 1"));
        }
        Ok(())
    }
}

/// Cycle attribution in ticks (`1 / issue_width` cycle).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CpiStack {
    pub base: u64,
    pub l1: u64,
    pub l2: u64,
    pub llc: u64,
    pub dram: u64,
    pub branch: u64,
    pub other: u64,
}

impl CpiStack {
    pub fn total(&self) -> u64 {
        self.base + self.l1 + self.l2 + self.llc + self.dram + self.branch + self.other
    }

    pub fn memory(&self) -> u64 {
        self.l1 + self.l2 + self.llc + self.dram
    }

    /// (L1 + L2 + LLC + DRAM) / total, 0 for an empty stack.
    pub fn memory_share(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.memory() as f64 / self.total() as f64
        }
    }

    pub fn buckets(&self) -> [(&'static str, u64); 7] {
        [
            ("base", self.base),
            ("L1", self.l1),
            ("L2", self.l2),
            ("LLC", self.llc),
            ("DRAM", self.dram),
            ("branch", self.branch),
            ("other", self.other),
        ]
    }
}

impl AddAssign for CpiStack {
    fn add_assign(&mut self, o: Self) {
        self.base += o.base;
        self.l1 += o.l1;
        self.l2 += o.l2;
        self.llc += o.llc;
        self.dram += o.dram;
        self.branch += o.branch;
        self.other += o.other;
    }
}

/// Per-core 2-bit saturating counters indexed by pc.
#[derive(Clone, Debug)]
pub struct BranchPredictor {
    counters: Vec<u8>,
}

impl BranchPredictor {
    pub fn new(entries: usize) -> Self {
        BranchPredictor { counters: vec![1; entries.max(1)] }
    }

    fn index(&self, pc: u64) -> usize {
        ((pc ^ (pc >> 12)) % self.counters.len() as u64) as usize
    }

    /// Predicts, trains, and reports whether the prediction was wrong.
    pub fn mispredicted(&mut self, pc: u64, taken: bool) -> bool {
        let i = self.index(pc);
        let c = &mut self.counters[i];
        let predicted = *c >= 2;
        *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
        predicted != taken
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RequestTiming {
    pub ticks: u64,
    pub latency_ps: Time,
    pub stack: CpiStack,
    pub instructions: u64,
    pub loads: u64,
    pub l2_misses: u64,
    pub dram_loads: u64,
    pub mispredicts: u64,
    pub max_outstanding: u64,
}

#[derive(Clone, Copy, Debug, Default)]
struct InFlight {
    done: u64,
    /// Ticks of the load's latency spent at L1, L2, LLC and DRAM.
    parts: [u64; 4],
}

fn charge(stack: &mut CpiStack, mut delta: u64, load: &InFlight) {
    let slots = [&mut stack.dram, &mut stack.llc, &mut stack.l2, &mut stack.l1];
    let parts = [load.parts[3], load.parts[2], load.parts[1], load.parts[0]];
    for (slot, part) in slots.into_iter().zip(parts) {
        let take = delta.min(part);
        *slot += take;
        delta -= take;
    }
    stack.other += delta;
}

pub struct Core<'a> {
    pub cfg: &'a CoreConfig,
    pub core_id: usize,
}

impl Core<'_> {
    /// Replays one request segment (REQ_BEGIN .. REQ_END) starting at
    /// `start`. `hook` sees every record in order with its L2-miss flag.
    pub fn run_request(
        &self,
        segment: &[TraceEvent],
        active_threads: u64,
        start: Time,
        mem: &mut MemorySystem,
        bp: &mut BranchPredictor,
        mut hook: impl FnMut(&TraceRecord, bool),
    ) -> Result<RequestTiming, SimError> {
        match segment.last() {
            Some(TraceEvent::Marker(m)) if m.kind == MarkerKind::ReqEnd => {}
            _ => {
                let id = match segment.first() {
                    Some(TraceEvent::Marker(m)) => m.request_id,
                    _ => 0,
                };
                return Err(SimError::UnterminatedRequest { request_id: id });
            }
        }
        let w = self.cfg.issue_width;
        let cycle = mem.cycle();
        let per_inst = active_threads.max(1);
        let window = self.cfg.mlp_window() as usize;
        let tick_ps = |t: u64| (t * cycle).div_ceil(w);

        let mut t = RequestTiming::default();
        let mut front: u64 = 0;
        let mut reg_ready: [Option<InFlight>; RegisterId::COUNT] = [None; RegisterId::COUNT];
        let mut latest: Option<InFlight> = None;
        let mut in_flight: std::collections::VecDeque<InFlight> = std::collections::VecDeque::new();

        for ev in segment {
            let TraceEvent::Record(rec) = ev else { continue };
            t.instructions += 1;
            let mut l2_miss = false;
            if rec.opclass == OpClass::Load {
                t.loads += 1;
                let mut begin = front;
                let mut cause: Option<(u64, InFlight)> = None;
                let mut consider = |at: u64, why: InFlight, stall_other: bool, cause: &mut Option<(u64, InFlight)>| {
                    if at > begin {
                        begin = at;
                        *cause = Some((at, if stall_other { InFlight { done: at, parts: [0; 4] } } else { why }));
                    }
                };
                for r in rec.addr_regs() {
                    if let Some(p) = reg_ready[r.index()] {
                        consider(p.done, p, false, &mut cause);
                    }
                }
                in_flight.retain(|l| l.done > front);
                if in_flight.len() >= window {
                    let oldest = in_flight.iter().map(|l| l.done).min().unwrap();
                    consider(oldest, InFlight::default(), true, &mut cause);
                    in_flight.retain(|l| l.done > oldest);
                }
                if let Some((_, why)) = cause {
                    charge(&mut t.stack, begin - front, &why);
                    front = begin;
                }
                let now = start + tick_ps(front);
                let res = mem.core_access(self.core_id, rec.eff_addr.unwrap_or(0), false, now);
                let lv = |l: Level| mem.level_cycles(l) * w;
                let mut parts = [lv(Level::L1), 0, 0, 0];
                if res.level_hit >= Level::L2 {
                    parts[1] = lv(Level::L2);
                }
                if res.level_hit >= Level::Llc {
                    parts[2] = lv(Level::Llc);
                    l2_miss = true;
                    t.l2_misses += 1;
                }
                if res.level_hit == Level::Dram {
                    parts[3] = (mem.dram_cycles() + res.contention_cycles) * w;
                    t.dram_loads += 1;
                }
                let load = InFlight { done: front + per_inst + res.latency_cycles * w, parts };
                if let Some(d) = rec.dest {
                    reg_ready[d.index()] = Some(load);
                }
                if latest.is_none_or(|l| load.done > l.done) {
                    latest = Some(load);
                }
                in_flight.push_back(load);
                t.max_outstanding = t.max_outstanding.max(in_flight.len() as u64);
                front += per_inst;
                t.stack.base += per_inst;
            } else {
                if let Some(l) = latest {
                    if l.done > front {
                        charge(&mut t.stack, l.done - front, &l);
                        front = l.done;
                    }
                }
                if rec.opclass == OpClass::Store {
                    let now = start + tick_ps(front);
                    mem.core_access(self.core_id, rec.eff_addr.unwrap_or(0), true, now);
                }
                front += per_inst;
                t.stack.base += per_inst;
                if let Some(d) = rec.dest {
                    reg_ready[d.index()] = None;
                }
                if rec.opclass == OpClass::Branch && bp.mispredicted(rec.pc, rec.branch_taken) {
                    let p = self.cfg.mispredict_penalty * w;
                    front += p;
                    t.stack.branch += p;
                    t.mispredicts += 1;
                }
            }
            hook(rec, l2_miss);
        }
        if let Some(l) = latest {
            if l.done > front {
                charge(&mut t.stack, l.done - front, &l);
                front = l.done;
            }
        }
        t.ticks = front;
        t.latency_ps = tick_ps(front);
        debug_assert_eq!(t.stack.total(), t.ticks);
        Ok(t)
    }
}
