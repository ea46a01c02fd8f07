//! Deterministic event loop tying arrivals, the NIC, per-core Rx rings,
//! hardware threads, the memory system and the identification engines
//! together.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet, VecDeque};

use crate::config::ExperimentConfig;
use crate::cpu::{BranchPredictor, Core, CpiStack};
use crate::critical::{CriticalEngine, CriticalRegion, CriticalStats};
use crate::error::SimError;
use crate::memsys::{MemStats, MemorySystem, PcieLedger};
use crate::nic::{ExecOutcome, Nic, NicStats, PacketContext};
use crate::time::{ns, Time};
use crate::regpred::Election;
use crate::trace::{block_of, splitmix64, MemoryImage, OpClass, RegisterId, RequestSegment, Trace, TraceEvent};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RequestLog {
    pub request_id: u64,
    pub segment: usize,
    pub core: usize,
    pub arrival: Time,
    pub enqueue: Time,
    pub grant: Time,
    pub done: Time,
    pub nic_ps: Time,
    pub pcie_ps: Time,
    pub queue_ps: Time,
    pub core_ps: Time,
}

impl RequestLog {
    pub fn total_ps(&self) -> Time {
        self.nic_ps + self.pcie_ps + self.queue_ps + self.core_ps
    }
}

/// Instruction class mix of one shipped region.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegionSummary {
    pub region_id: u64,
    pub instructions: usize,
    pub alu: usize,
    pub independent_loads: usize,
    pub dependent_loads: usize,
    pub other: usize,
    pub installs: u64,
    pub runs: u64,
}

impl RegionSummary {
    pub fn of(region: &CriticalRegion) -> Self {
        use crate::critical::Pred;
        let mut s = RegionSummary { region_id: region.region_id, instructions: region.instructions.len(), ..Default::default() };
        for i in &region.instructions {
            match i.opclass {
                OpClass::Alu | OpClass::RegMove => s.alu += 1,
                OpClass::Load if i.preds.iter().any(|p| matches!(p, Pred::Pc(_))) => s.dependent_loads += 1,
                OpClass::Load => s.independent_loads += 1,
                _ => s.other += 1,
            }
        }
        s
    }
}

/// Election outcome of one register on one core at an epoch end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ElectionRow {
    pub core: usize,
    pub epoch: u64,
    pub reg: RegisterId,
    pub election: Election,
}

/// NIC activity over one report interval, bucketed by event time.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NicInterval {
    pub packets: u64,
    pub drops: u64,
    pub runs: u64,
    pub exec: ExecOutcome,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LittleCheck {
    pub mean_in_system: f64,
    pub throughput_per_s: f64,
    pub mean_latency_s: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub requests: Vec<RequestLog>,
    pub cpi: CpiStack,
    pub instructions: u64,
    pub loads: u64,
    pub mispredicts: u64,
    pub max_outstanding_loads: u64,
    pub mem: MemStats,
    pub dram_accesses: u64,
    pub dram_peak_per_s: f64,
    pub pcie: PcieLedger,
    pub nic: NicStats,
    pub critical: CriticalStats,
    pub regions: BTreeMap<u64, RegionSummary>,
    pub elections: Vec<ElectionRow>,
    /// Keyed by interval index; interval k starts at k × report interval.
    pub nic_intervals: BTreeMap<u64, NicInterval>,
    pub first_arrival: Time,
    pub last_departure: Time,
    pub little: LittleCheck,
    pub critical_storage_bytes: u64,
    pub regpred_storage_bytes: (u64, u64),
}

impl RunResult {
    pub fn wall_ps(&self) -> Time {
        self.last_departure.saturating_sub(self.first_arrival)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    ThreadDone { core: usize },
    Install { core: usize, batch: usize },
    RingEnqueue { req: usize },
    Arrival { req: usize },
}

struct Packet {
    segment: usize,
    core: usize,
    arrival: Time,
    enqueue: Time,
}

pub struct Simulator<'t> {
    cfg: ExperimentConfig,
    trace: &'t Trace,
    segments: Vec<RequestSegment>,
}

impl<'t> Simulator<'t> {
    pub fn new(cfg: ExperimentConfig, trace: &'t Trace) -> Result<Self, SimError> {
        cfg.validate()?;
        let segments = trace.segments().map_err(|id| SimError::UnterminatedRequest { request_id: id })?;
        if segments.is_empty() {
            return Err(SimError::Runtime("trace contains no requests".into()));
        }
        Ok(Simulator { cfg, trace, segments })
    }

    pub fn segments(&self) -> &[RequestSegment] {
        &self.segments
    }

    pub fn run(&self) -> Result<RunResult, SimError> {
        let cfg = &self.cfg;
        let cores = cfg.core.cores;
        let offload = cfg.offload_active();
        let n = if cfg.workload.requests == 0 { self.segments.len() } else { cfg.workload.requests as usize };
        let arrivals = cfg.workload.arrival_times(n, cfg.seed);
        let stage_nic = ns(cfg.nic.processing_ns);
        let stage_pcie = ns(cfg.nic.transfer_ns);

        let mut mem = MemorySystem::new(&cfg.cache, &cfg.dram, &cfg.pcie, cores, cfg.core.cycle_ps());
        let mut engines: Vec<CriticalEngine> =
            (0..cores).map(|_| CriticalEngine::new(cfg.critical.clone(), cfg.regpred.clone())).collect();
        let mut bps: Vec<BranchPredictor> = (0..cores).map(|_| BranchPredictor::new(cfg.core.bp_entries)).collect();
        let mut nic = Nic::new(cfg.nic.clone(), cores);
        let image = if offload { MemoryImage::from_trace(self.trace) } else { MemoryImage::default() };
        let actual: Vec<HashSet<u64>> = if offload {
            self.segments
                .iter()
                .map(|s| {
                    self.trace.events[s.range.clone()]
                        .iter()
                        .filter_map(|e| match e {
                            TraceEvent::Record(r) if r.opclass == OpClass::Load => r.eff_addr.map(block_of),
                            _ => None,
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };

        let mut heap: BinaryHeap<Reverse<(Time, Event, u64)>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push = |heap: &mut BinaryHeap<Reverse<(Time, Event, u64)>>, t: Time, e: Event| {
            seq += 1;
            heap.push(Reverse((t, e, seq)));
        };
        for (i, &t) in arrivals.iter().enumerate() {
            push(&mut heap, t, Event::Arrival { req: i });
        }

        let mut packets: Vec<Packet> = Vec::with_capacity(n);
        let mut rings: Vec<VecDeque<usize>> = vec![VecDeque::new(); cores];
        let mut free_threads = vec![cfg.core.hw_threads_per_core; cores];
        let mut batches: Vec<Option<Vec<CriticalRegion>>> = Vec::new();
        let mut logs: Vec<RequestLog> = Vec::with_capacity(n);
        let mut regions: BTreeMap<u64, RegionSummary> = BTreeMap::new();
        let mut elections: Vec<ElectionRow> = Vec::new();
        let mut intervals: BTreeMap<u64, NicInterval> = BTreeMap::new();
        let interval_ps = ns(cfg.nic.report_interval_ns).max(1);
        let mut cpi = CpiStack::default();
        let (mut instructions, mut loads, mut mispredicts, mut max_out) = (0u64, 0u64, 0u64, 0u64);

        while let Some(Reverse((now, ev, _))) = heap.pop() {
            mem.apply_pending(now);
            match ev {
                Event::Arrival { req } => {
                    let segment = req % self.segments.len();
                    let core = (splitmix64(req as u64) % cores as u64) as usize;
                    packets.push(Packet { segment, core, arrival: now, enqueue: now + stage_nic + stage_pcie });
                    nic.stats.packets_in += 1;
                    let bucket = intervals.entry(now / interval_ps).or_default();
                    bucket.packets += 1;
                    if offload {
                        let seg = &self.segments[segment];
                        let args = [seg.key_hash];
                        let pkt = PacketContext {
                            args: &args,
                            dest_core: core,
                            trace_pos: seg.range.end,
                            actual_blocks: &actual[segment],
                        };
                        let before: Vec<u64> = nic.tables[core].regions.iter().map(|r| r.region_id).collect();
                        let ran = nic.stats.offload_runs;
                        let exec_before = nic.stats.exec.clone();
                        nic.offload(&pkt, now, &mut mem, &image);
                        bucket.exec += &nic.stats.exec.since(&exec_before);
                        bucket.runs += nic.stats.offload_runs - ran;
                        if nic.stats.offload_runs > ran {
                            for id in before {
                                if let Some(s) = regions.get_mut(&id) {
                                    s.runs += 1;
                                }
                            }
                        }
                    }
                    push(&mut heap, now + stage_nic + stage_pcie, Event::RingEnqueue { req });
                }
                Event::RingEnqueue { req } => {
                    let core = packets[req].core;
                    if rings[core].len() >= cfg.nic.rx_ring_depth {
                        nic.stats.packets_dropped += 1;
                        intervals.entry(now / interval_ps).or_default().drops += 1;
                        continue;
                    }
                    nic.stats.packets_enqueued += 1;
                    rings[core].push_back(req);
                }
                Event::ThreadDone { core } => {
                    free_threads[core] += 1;
                }
                Event::Install { core, batch } => {
                    let list = batches[batch].take().unwrap_or_default();
                    for r in &list {
                        regions.entry(r.region_id).or_insert_with(|| RegionSummary::of(r)).installs += 1;
                    }
                    nic.install_regions(core, list, now, &mut mem);
                }
            }

            // Grant free threads to waiting packets on every core touched.
            let touched: Vec<usize> = match ev {
                Event::RingEnqueue { req } => vec![packets[req].core],
                Event::ThreadDone { core } => vec![core],
                _ => Vec::new(),
            };
            for core in touched {
                while free_threads[core] > 0 {
                    let Some(req) = rings[core].pop_front() else { break };
                    free_threads[core] -= 1;
                    let active = (cfg.core.hw_threads_per_core - free_threads[core]) as u64;
                    let p = &packets[req];
                    let seg = &self.segments[p.segment];
                    let events = &self.trace.events[seg.range.clone()];
                    let engine = &mut engines[core];
                    let mut emitted: Option<Vec<CriticalRegion>> = None;
                    if cfg.critical.enable {
                        engine.begin_request(seg.key_hash, now)?;
                    }
                    let timing = Core { cfg: &cfg.core, core_id: core }.run_request(
                        events,
                        active,
                        now,
                        &mut mem,
                        &mut bps[core],
                        |rec, l2_miss| {
                            if cfg.critical.enable {
                                if let Some(r) = engine.retire(rec, l2_miss) {
                                    emitted = Some(r);
                                }
                            }
                        },
                    )?;
                    if cfg.critical.enable {
                        engine.end_request();
                    }
                    let done = now + timing.latency_ps;
                    if let Some(list) = emitted {
                        let epoch = engine.epoch() - 1;
                        elections.extend(
                            engine.last_elections().iter().map(|&(reg, election)| ElectionRow { core, epoch, reg, election }),
                        );
                        if offload {
                            batches.push(Some(list));
                            push(&mut heap, done, Event::Install { core, batch: batches.len() - 1 });
                        }
                    }
                    cpi += timing.stack;
                    instructions += timing.instructions;
                    loads += timing.loads;
                    mispredicts += timing.mispredicts;
                    max_out = max_out.max(timing.max_outstanding);
                    logs.push(RequestLog {
                        request_id: req as u64,
                        segment: p.segment,
                        core,
                        arrival: p.arrival,
                        enqueue: p.enqueue,
                        grant: now,
                        done,
                        nic_ps: stage_nic,
                        pcie_ps: stage_pcie,
                        queue_ps: now - p.enqueue,
                        core_ps: timing.latency_ps,
                    });
                    push(&mut heap, done, Event::ThreadDone { core });
                }
            }
        }

        logs.sort_by_key(|l| l.request_id);
        let first_arrival = logs.iter().map(|l| l.arrival).min().unwrap_or(0);
        let last_departure = logs.iter().map(|l| l.done).max().unwrap_or(0);
        let little = little_check(&logs);
        let mut critical = CriticalStats::default();
        for e in &engines {
            let s = &e.stats;
            critical.l2_misses += s.l2_misses;
            critical.allocations += s.allocations;
            critical.evictions += s.evictions;
            critical.checkpoints_taken += s.checkpoints_taken;
            critical.checkpoints_matched += s.checkpoints_matched;
            critical.regions_emitted += s.regions_emitted;
            critical.regions_withheld += s.regions_withheld;
            critical.epochs += s.epochs;
        }
        Ok(RunResult {
            config: cfg.clone(),
            requests: logs,
            cpi,
            instructions,
            loads,
            mispredicts,
            max_outstanding_loads: max_out,
            mem: mem.stats.clone(),
            dram_accesses: mem.dram.accesses,
            dram_peak_per_s: mem.dram.peak_accesses_per_s(),
            pcie: mem.pcie.clone(),
            nic: nic.stats.clone(),
            critical,
            regions,
            elections,
            nic_intervals: intervals,
            first_arrival,
            last_departure,
            little,
            critical_storage_bytes: engines[0].storage_bytes(),
            regpred_storage_bytes: engines[0].regpred.storage_bytes(),
        })
    }
}

/// Time-average of requests in system against arrival rate × mean latency,
/// over [first arrival, last departure].
pub fn little_check(logs: &[RequestLog]) -> LittleCheck {
    if logs.is_empty() {
        return LittleCheck::default();
    }
    let mut edges: Vec<(Time, i64)> = Vec::with_capacity(logs.len() * 2);
    for l in logs {
        edges.push((l.arrival, 1));
        edges.push((l.done, -1));
    }
    edges.sort_unstable();
    let start = edges[0].0;
    let end = edges.last().unwrap().0;
    let (mut area, mut level, mut last) = (0u128, 0i64, start);
    for (t, d) in edges {
        area += (t - last) as u128 * level as u128;
        level += d;
        last = t;
    }
    let wall = (end - start).max(1) as f64 * 1e-12;
    let mean_in_system = area as f64 * 1e-12 / wall;
    let throughput_per_s = logs.len() as f64 / wall;
    let mean_latency_s = logs.iter().map(|l| (l.done - l.arrival) as f64).sum::<f64>() * 1e-12 / logs.len() as f64;
    let predicted = throughput_per_s * mean_latency_s;
    LittleCheck {
        mean_in_system,
        throughput_per_s,
        mean_latency_s,
        relative_error: if mean_in_system > 0.0 { (mean_in_system - predicted).abs() / mean_in_system } else { 0.0 },
    }
}

/// One epoch's output from a standalone identification pass.
#[derive(Clone, Debug)]
pub struct Emission {
    /// Event index range of the trace covered by the epoch.
    pub events: std::ops::Range<usize>,
    pub regions: Vec<CriticalRegion>,
}

/// Replays the whole trace on a single core with cold caches, feeding one
/// identification engine, and returns every epoch's regions.
pub fn identify(trace: &Trace, cfg: &ExperimentConfig) -> Result<(Vec<Emission>, CriticalEngine), SimError> {
    let segments = trace.segments().map_err(|id| SimError::UnterminatedRequest { request_id: id })?;
    let mut mem = MemorySystem::new(&cfg.cache, &cfg.dram, &cfg.pcie, 1, cfg.core.cycle_ps());
    let mut engine = CriticalEngine::new(cfg.critical.clone(), cfg.regpred.clone());
    let mut bp = BranchPredictor::new(cfg.core.bp_entries);
    let core = Core { cfg: &cfg.core, core_id: 0 };
    let mut out = Vec::new();
    let mut epoch_start = 0usize;
    let mut now: Time = 0;
    for seg in &segments {
        engine.begin_request(seg.key_hash, now)?;
        let mut emitted = None;
        let mut pos = seg.range.start;
        let mut at = None;
        let t = core.run_request(&trace.events[seg.range.clone()], 1, now, &mut mem, &mut bp, |rec, l2| {
            pos += 1;
            if let Some(r) = engine.retire(rec, l2) {
                emitted = Some(r);
                at = Some(pos);
            }
        })?;
        engine.end_request();
        if let (Some(regions), Some(end)) = (emitted, at) {
            // `pos` counts records; the segment's first event is its marker.
            let end = seg.range.start + end + 1;
            out.push(Emission { events: epoch_start..end, regions });
            epoch_start = end;
        }
        now += t.latency_ps;
    }
    Ok((out, engine))
}
