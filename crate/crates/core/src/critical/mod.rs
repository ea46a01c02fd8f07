//! Online critical-region identification.
//!
//! Loads that miss the L2 are entered into a small context instruction
//! cache. Each entry records which instructions produced its address
//! operands (looked up in a register-to-pc map) and those producers are
//! pulled into the cache on their next execution, so chains grow backward
//! until they reach root registers marked DEAD. Branches touching the span
//! of cached pcs are tracked as well. At every epoch boundary the ready
//! entries are grouped into regions and shipped together with the register
//! values the predictor can vouch for.

mod region;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

pub use region::{
    BranchBias, CriticalRegion, Pred, RegionInstr, RequiredReg, RequiredState, VISIT_BUCKETS,
};

use crate::error::SimError;
use crate::regpred::{Election, RegPredConfig, RegValuePredictor};
use crate::time::Time;
use crate::trace::{OpClass, RegisterId, TraceRecord};

pub const ENTRY_BYTES: u64 = 13;
pub const MAP_ENTRY_BYTES: u64 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalConfig {
    pub enable: bool,
    pub cache_entries: usize,
    pub ways: usize,
    pub epoch_l2_misses: u64,
    /// Invalidate the whole cache at every epoch boundary instead of aging.
    pub clear_on_epoch: bool,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        CriticalConfig { enable: true, cache_entries: 256, ways: 16, epoch_l2_misses: 4096, clear_on_epoch: false }
    }
}

impl CriticalConfig {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        use crate::ConfigError;
        if self.ways == 0 || !self.cache_entries.is_multiple_of(self.ways) || !(self.cache_entries / self.ways).is_power_of_two() {
            return Err(ConfigError::invalid("critical.ways", "cache_entries / ways must be a power of two"));
        }
        if self.epoch_l2_misses == 0 {
            return Err(ConfigError::invalid("critical.epoch_l2_misses", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapEntry {
    Pc(u64),
    Dead,
    Invalid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeClass {
    Irrelevant,
    Track,
    CheckpointBypass,
}

/// Classifies a branch against the span `[lo, hi]` of cached pcs.
pub fn classify_edge(branch: &TraceRecord, span: Option<(u64, u64)>) -> EdgeClass {
    let (Some((lo, hi)), Some(target)) = (span, branch.branch_target) else {
        return EdgeClass::Irrelevant;
    };
    let inside = |pc: u64| (lo..=hi).contains(&pc);
    if inside(branch.pc) || inside(target) {
        EdgeClass::Track
    } else if target < branch.pc && branch.pc > hi && target < lo {
        EdgeClass::CheckpointBypass
    } else {
        EdgeClass::Irrelevant
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextEntry {
    pub pc: u64,
    pub kind: OpClass,
    pub template: TraceRecord,
    pub preds: [Pred; 2],
    /// Register each predecessor slot stands for (none for branches).
    pub pred_regs: [Option<RegisterId>; 2],
    pub ready: bool,
    pub access_count: u32,
    pub bias: BranchBias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackEdgeCheckpoint {
    pub branch_pc: u64,
    pub target: u64,
    pub template: TraceRecord,
    pub regs: [u64; RegisterId::COUNT],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CandKind {
    /// DEAD operand: IN value is the register's content before the anchor.
    Operand,
    /// Result of a root instruction: IN value is what the anchor writes.
    Dest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CriticalStats {
    pub l2_misses: u64,
    pub allocations: u64,
    pub evictions: u64,
    pub checkpoints_taken: u64,
    pub checkpoints_matched: u64,
    pub regions_emitted: u64,
    pub regions_withheld: u64,
    pub epochs: u64,
}

#[derive(Clone, Debug)]
pub struct CriticalEngine {
    cfg: CriticalConfig,
    sets: usize,
    entries: Vec<Option<ContextEntry>>,
    map: [MapEntry; RegisterId::COUNT],
    arch: [u64; RegisterId::COUNT],
    pending: BTreeSet<u64>,
    checkpoint: Option<BackEdgeCheckpoint>,
    span: Option<(u64, u64)>,
    candidates: HashMap<u64, Vec<(RegisterId, CandKind)>>,
    dirty: bool,
    epoch_misses: u64,
    epoch: u64,
    nic_args: Vec<u64>,
    visits: HashMap<u64, usize>,
    last_request_time: Time,
    elections: Vec<(RegisterId, Election)>,
    pub regpred: RegValuePredictor,
    pub stats: CriticalStats,
}

const MAX_PENDING: usize = 64;

impl CriticalEngine {
    pub fn new(cfg: CriticalConfig, regpred: RegPredConfig) -> Self {
        let sets = (cfg.cache_entries / cfg.ways.max(1)).max(1);
        CriticalEngine {
            entries: vec![None; sets * cfg.ways.max(1)],
            sets,
            map: [MapEntry::Invalid; RegisterId::COUNT],
            arch: [0; RegisterId::COUNT],
            pending: BTreeSet::new(),
            checkpoint: None,
            span: None,
            candidates: HashMap::new(),
            dirty: false,
            epoch_misses: 0,
            epoch: 0,
            nic_args: Vec::new(),
            visits: HashMap::new(),
            last_request_time: 0,
            elections: Vec::new(),
            regpred: RegValuePredictor::new(regpred),
            stats: CriticalStats::default(),
            cfg,
        }
    }

    pub fn config(&self) -> &CriticalConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn epoch_misses(&self) -> u64 {
        self.epoch_misses
    }

    pub fn set_of(&self, pc: u64) -> usize {
        ((pc ^ (pc >> 4)) as usize) & (self.sets - 1)
    }

    fn slot_of(&self, pc: u64) -> Option<usize> {
        let base = self.set_of(pc) * self.cfg.ways;
        (base..base + self.cfg.ways).find(|&i| self.entries[i].as_ref().is_some_and(|e| e.pc == pc))
    }

    pub fn entry(&self, pc: u64) -> Option<&ContextEntry> {
        self.slot_of(pc).and_then(|i| self.entries[i].as_ref())
    }

    /// Valid entries sorted by pc.
    pub fn entries(&self) -> Vec<&ContextEntry> {
        let mut v: Vec<&ContextEntry> = self.entries.iter().flatten().collect();
        v.sort_by_key(|e| e.pc);
        v
    }

    pub fn valid_entries(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    pub fn map_entry(&self, reg: RegisterId) -> MapEntry {
        self.map[reg.index()]
    }

    pub fn span(&self) -> Option<(u64, u64)> {
        self.span
    }

    pub fn checkpoint(&self) -> Option<&BackEdgeCheckpoint> {
        self.checkpoint.as_ref()
    }

    pub fn is_pending(&self, pc: u64) -> bool {
        self.pending.contains(&pc)
    }

    fn root_reset(&mut self) {
        for r in RegisterId::ALL {
            self.map[r.index()] = if r.is_argument() { MapEntry::Dead } else { MapEntry::Invalid };
        }
    }

    fn operand_pred(&self, rec: &TraceRecord, reg: Option<RegisterId>) -> Pred {
        match reg {
            None | Some(RegisterId::Rip) => Pred::Dead,
            Some(RegisterId::Rsp) if rec.is_stack_access => Pred::Dead,
            Some(r) => match self.map[r.index()] {
                MapEntry::Pc(p) => Pred::Pc(p),
                MapEntry::Dead => Pred::Dead,
                MapEntry::Invalid => Pred::Unknown,
            },
        }
    }

    fn operand_regs(rec: &TraceRecord) -> [Option<RegisterId>; 2] {
        match rec.opclass {
            OpClass::Load | OpClass::Store => [rec.addr_base, rec.addr_index],
            OpClass::Alu | OpClass::RegMove => [rec.src1, rec.src2],
            OpClass::Branch | OpClass::Other => [None, None],
        }
    }

    fn template_of(rec: &TraceRecord) -> TraceRecord {
        let mut t = rec.clone();
        t.eff_addr = None;
        t.value = None;
        t.branch_taken = false;
        t
    }

    /// Installs an entry for `rec.pc` unless present. Returns its slot.
    fn allocate(&mut self, rec: &TraceRecord, branch_pred: Option<Pred>) -> usize {
        if let Some(i) = self.slot_of(rec.pc) {
            return i;
        }
        let base = self.set_of(rec.pc) * self.cfg.ways;
        let slot = (base..base + self.cfg.ways).find(|&i| self.entries[i].is_none()).unwrap_or_else(|| {
            (base..base + self.cfg.ways)
                .min_by_key(|&i| (self.entries[i].as_ref().map(|e| e.access_count).unwrap_or(0), i))
                .unwrap()
        });
        if let Some(old) = self.entries[slot].take() {
            self.stats.evictions += 1;
            for e in self.entries.iter_mut().flatten() {
                for p in e.preds.iter_mut() {
                    if *p == Pred::Pc(old.pc) {
                        *p = Pred::Unknown;
                    }
                }
            }
        }
        let (preds, pred_regs) = match branch_pred {
            Some(p) => ([p, Pred::Dead], [None, None]),
            None => {
                let regs = Self::operand_regs(rec);
                ([self.operand_pred(rec, regs[0]), self.operand_pred(rec, regs[1])], regs)
            }
        };
        for p in preds {
            if let Pred::Pc(p) = p {
                if p != rec.pc && self.slot_of(p).is_none() && self.pending.len() < MAX_PENDING {
                    self.pending.insert(p);
                }
            }
        }
        self.pending.remove(&rec.pc);
        self.entries[slot] = Some(ContextEntry {
            pc: rec.pc,
            kind: rec.opclass,
            template: Self::template_of(rec),
            preds,
            pred_regs,
            ready: false,
            access_count: 1,
            bias: BranchBias::default(),
        });
        self.stats.allocations += 1;
        self.dirty = true;
        slot
    }

    /// Re-resolves UNKNOWN and self-referencing predecessors.
    fn refresh(&mut self, slot: usize, rec: &TraceRecord) {
        let Some(e) = self.entries[slot].as_ref() else { return };
        if e.kind == OpClass::Branch {
            return;
        }
        let pc = e.pc;
        let regs = e.pred_regs;
        let old = e.preds;
        let mut new = old;
        for i in 0..2 {
            if matches!(old[i], Pred::Unknown) || old[i] == Pred::Pc(pc) {
                let p = self.operand_pred(rec, regs[i]);
                if p != Pred::Unknown && p != Pred::Pc(pc) {
                    new[i] = p;
                    if let Pred::Pc(q) = p {
                        if self.slot_of(q).is_none() && self.pending.len() < MAX_PENDING {
                            self.pending.insert(q);
                        }
                    }
                }
            }
        }
        if new != old {
            self.entries[slot].as_mut().unwrap().preds = new;
            self.dirty = true;
        }
    }

    fn recompute(&mut self) {
        for e in self.entries.iter_mut().flatten() {
            e.ready = false;
        }
        loop {
            let mut changed = false;
            for i in 0..self.entries.len() {
                let Some(e) = self.entries[i].as_ref() else { continue };
                if e.ready {
                    continue;
                }
                let pc = e.pc;
                let ok = e.preds.iter().all(|p| match *p {
                    Pred::Dead => true,
                    Pred::Unknown => false,
                    Pred::Pc(q) => q != pc && self.entry(q).is_some_and(|d| d.ready),
                });
                if ok {
                    self.entries[i].as_mut().unwrap().ready = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let pcs = self.entries.iter().flatten().map(|e| e.pc);
        self.span = pcs.clone().min().zip(pcs.max());

        self.candidates.clear();
        let mut cands: Vec<(u64, RegisterId, CandKind)> = Vec::new();
        for e in self.entries.iter().flatten() {
            for i in 0..2 {
                if let Some(r) = e.pred_regs[i] {
                    if r != RegisterId::Rip && e.preds[i] == Pred::Dead {
                        cands.push((e.pc, r, CandKind::Operand));
                    }
                }
            }
            let root = matches!(e.kind, OpClass::Load | OpClass::Other) && e.preds.iter().all(|p| *p == Pred::Dead);
            if let (true, Some(d)) = (root, e.template.dest) {
                cands.push((e.pc, d, CandKind::Dest));
            }
        }
        for (pc, r, k) in cands {
            self.regpred.track(r);
            let v = self.candidates.entry(pc).or_default();
            if !v.contains(&(r, k)) {
                v.push((r, k));
            }
        }
        self.dirty = false;
    }

    pub fn begin_request(&mut self, key_hash: u64, now: Time) -> Result<(), SimError> {
        if now < self.last_request_time {
            return Err(SimError::OutOfOrder(format!(
                "request at {now} ps retired after one at {} ps",
                self.last_request_time
            )));
        }
        self.last_request_time = now;
        self.arch[crate::trace::KEY_ARG_REG.index()] = key_hash;
        self.nic_args.clear();
        self.nic_args.push(key_hash);
        self.visits.clear();
        Ok(())
    }

    pub fn end_request(&mut self) {
        self.regpred.end_all_instances();
    }

    /// Handles an L2-missing load: count a hit or allocate a new entry.
    pub fn on_l2_miss(&mut self, rec: &TraceRecord) {
        if rec.opclass != OpClass::Load {
            return;
        }
        self.stats.l2_misses += 1;
        self.epoch_misses += 1;
        match self.slot_of(rec.pc) {
            Some(i) => {
                let e = self.entries[i].as_mut().unwrap();
                e.access_count = e.access_count.saturating_add(1);
            }
            None => {
                self.allocate(rec, None);
            }
        }
    }

    /// Processes one retired instruction in program order. Returns the
    /// regions emitted when this instruction closes an epoch.
    pub fn retire(&mut self, rec: &TraceRecord, l2_miss: bool) -> Option<Vec<CriticalRegion>> {
        if self.span.is_some_and(|(lo, _)| lo == rec.pc) {
            self.root_reset();
        }

        if let Some(cp) = self.checkpoint.as_ref() {
            if self.slot_of(rec.pc).is_some() {
                let reads = rec.read_regs();
                let matched = !reads.is_empty() && reads.iter().all(|r| self.arch[r.index()] == cp.regs[r.index()]);
                let cp = self.checkpoint.take().unwrap();
                if matched {
                    self.stats.checkpoints_matched += 1;
                    self.allocate(&cp.template, Some(Pred::Pc(cp.target)));
                }
            }
        }

        if rec.opclass != OpClass::Store && rec.opclass != OpClass::Branch && self.pending.contains(&rec.pc) {
            self.allocate(rec, None);
        }
        if let Some(i) = self.slot_of(rec.pc) {
            self.refresh(i, rec);
            if rec.opclass != OpClass::Load {
                let e = self.entries[i].as_mut().unwrap();
                e.access_count = e.access_count.saturating_add(1);
            }
        }

        if l2_miss {
            self.on_l2_miss(rec);
        }

        if rec.opclass == OpClass::Branch {
            self.on_branch(rec);
        }

        if self.dirty {
            self.recompute();
        }

        if let Some(cands) = self.candidates.get(&rec.pc) {
            for &(r, k) in cands {
                if k == CandKind::Operand {
                    self.regpred.observe_in(r, self.arch[r.index()], &self.nic_args);
                }
            }
        }
        if let Some(d) = rec.dest {
            self.map[d.index()] = MapEntry::Pc(rec.pc);
            if let Some(v) = rec.value {
                let is_anchor = self
                    .candidates
                    .get(&rec.pc)
                    .is_some_and(|c| c.contains(&(d, CandKind::Dest)));
                if is_anchor {
                    self.regpred.observe_in(d, v, &self.nic_args);
                } else {
                    self.regpred.observe_gen(d, v);
                }
                self.arch[d.index()] = v;
            }
        }

        if self.epoch_misses >= self.cfg.epoch_l2_misses {
            return Some(self.end_epoch());
        }
        None
    }

    fn on_branch(&mut self, rec: &TraceRecord) {
        let visit = {
            let v = self.visits.entry(rec.pc).or_insert(0);
            *v += 1;
            *v - 1
        };
        let target = rec.branch_target.unwrap_or(0);
        match classify_edge(rec, self.span) {
            EdgeClass::Track => {
                let (lo, hi) = self.span.unwrap();
                let pred = if (lo..=hi).contains(&target) { Pred::Pc(target) } else { Pred::Dead };
                let i = self.allocate(rec, Some(pred));
                self.entries[i].as_mut().unwrap().bias.record(visit, rec.branch_taken);
            }
            EdgeClass::CheckpointBypass if rec.branch_taken => {
                self.stats.checkpoints_taken += 1;
                self.checkpoint = Some(BackEdgeCheckpoint {
                    branch_pc: rec.pc,
                    target,
                    template: Self::template_of(rec),
                    regs: self.arch,
                });
            }
            _ => {
                if let Some(i) = self.slot_of(rec.pc) {
                    self.entries[i].as_mut().unwrap().bias.record(visit, rec.branch_taken);
                }
            }
        }
    }

    /// Groups ready entries into regions and resolves their registers.
    pub fn emit_regions(&mut self) -> Vec<CriticalRegion> {
        if self.dirty {
            self.recompute();
        }
        let ready: Vec<&ContextEntry> = self.entries().into_iter().filter(|e| e.ready).collect();
        let n = ready.len();
        let index: HashMap<u64, usize> = ready.iter().enumerate().map(|(i, e)| (e.pc, i)).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let union = |p: &mut Vec<usize>, a: usize, b: usize| {
            let (ra, rb) = (find(p, a), find(p, b));
            if ra != rb {
                p[ra.max(rb)] = ra.min(rb);
            }
        };
        for (i, e) in ready.iter().enumerate() {
            for p in e.preds {
                if let Pred::Pc(q) = p {
                    if let Some(&j) = index.get(&q) {
                        union(&mut parent, i, j);
                    }
                }
            }
        }
        // Merge components whose pc spans overlap until spans are disjoint.
        loop {
            let mut spans: HashMap<usize, (u64, u64)> = HashMap::new();
            for i in 0..n {
                let r = find(&mut parent, i);
                let s = spans.entry(r).or_insert((u64::MAX, 0));
                s.0 = s.0.min(ready[i].pc);
                s.1 = s.1.max(ready[i].pc);
            }
            let mut list: Vec<(u64, u64, usize)> = spans.into_iter().map(|(r, (lo, hi))| (lo, hi, r)).collect();
            list.sort_unstable();
            let mut merged = false;
            for w in list.windows(2) {
                if w[1].0 <= w[0].1 {
                    union(&mut parent, w[0].2, w[1].2);
                    merged = true;
                }
            }
            if !merged {
                break;
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let g = *group_of.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }

        let mut out = Vec::new();
        let mut withheld_count = 0;
        for members in groups {
            let instrs: Vec<&ContextEntry> = members.iter().map(|&i| ready[i]).collect();
            if !instrs.iter().any(|e| e.kind == OpClass::Load) {
                continue;
            }
            let mut required: Vec<RequiredReg> = Vec::new();
            let mut withheld = false;
            for e in &instrs {
                for i in 0..2 {
                    let Some(r) = e.pred_regs[i] else { continue };
                    if r == RegisterId::Rip || e.preds[i] != Pred::Dead || required.iter().any(|q| q.reg == r) {
                        continue;
                    }
                    match RequiredReg::from_election(r, self.regpred.elect(r), None) {
                        Some(q) => required.push(q),
                        None => withheld = true,
                    }
                }
            }
            for e in &instrs {
                let root = matches!(e.kind, OpClass::Load | OpClass::Other) && e.preds.iter().all(|p| *p == Pred::Dead);
                let Some(d) = e.template.dest else { continue };
                if !root || required.iter().any(|q| q.reg == d) {
                    continue;
                }
                match RequiredReg::from_election(d, self.regpred.elect(d), Some(e.pc)) {
                    Some(q) => required.push(q),
                    None if e.kind == OpClass::Other => withheld = true,
                    None => {}
                }
            }
            // Without a per-packet input every packet would compute the same
            // addresses, so such groups carry no context worth shipping.
            if !required.iter().any(|q| matches!(q.state, RequiredState::ReadyDyn(_))) {
                withheld = true;
            }
            if withheld {
                withheld_count += 1;
                continue;
            }
            required.sort_by_key(|q| q.reg);
            let instructions: Vec<RegionInstr> = instrs
                .iter()
                .map(|e| RegionInstr {
                    pc: e.pc,
                    opclass: e.kind,
                    template: e.template.clone(),
                    preds: e.preds,
                    bias: e.bias,
                })
                .collect();
            let pcs: Vec<u64> = instructions.iter().map(|i| i.pc).collect();
            out.push(CriticalRegion {
                region_id: region::region_hash(&pcs),
                instructions,
                required_regs: required,
                epoch: self.epoch,
            });
        }
        self.stats.regions_withheld += withheld_count;
        self.stats.regions_emitted += out.len() as u64;
        out
    }

    /// Emits regions and starts a new epoch.
    pub fn end_epoch(&mut self) -> Vec<CriticalRegion> {
        let regions = self.emit_regions();
        self.elections = RegisterId::ALL
            .into_iter()
            .filter(|&r| self.regpred.is_tracked(r))
            .map(|r| (r, self.regpred.elect(r)))
            .collect();
        self.epoch_misses = 0;
        self.epoch += 1;
        self.stats.epochs += 1;
        self.regpred.on_epoch();
        if self.cfg.clear_on_epoch {
            self.entries.iter_mut().for_each(|e| *e = None);
            self.pending.clear();
            self.checkpoint = None;
            self.map = [MapEntry::Invalid; RegisterId::COUNT];
            self.dirty = true;
            self.recompute();
        } else {
            for e in self.entries.iter_mut().flatten() {
                e.access_count = (e.access_count / 2).max(1);
                e.bias.age();
            }
        }
        regions
    }

    /// Election outcome of every tracked register at the last epoch end.
    pub fn last_elections(&self) -> &[(RegisterId, Election)] {
        &self.elections
    }

    pub fn storage_bytes(&self) -> u64 {
        self.cfg.cache_entries as u64 * ENTRY_BYTES + RegisterId::COUNT as u64 * MAP_ENTRY_BYTES
    }

    /// Text snapshot of the context instruction cache and register map.
    pub fn dump(&self, out: &mut String) {
        let _ = writeln!(out, "Table I: context instruction cache");
        let _ = writeln!(out, "  {:<10} {:<8} {:<11} {:<11} {:<5} {:<5} count", "pc", "kind", "pred1", "pred2", "ready", "valid");
        for e in self.entries() {
            let _ = writeln!(
                out,
                "  {:<10} {:<8} {:<11} {:<11} {:<5} {:<5} {}",
                format!("{:#x}", e.pc),
                e.kind.name(),
                e.preds[0].label(),
                e.preds[1].label(),
                e.ready as u8,
                1,
                e.access_count
            );
        }
        let _ = writeln!(out, "Table II: register to pc map");
        for r in RegisterId::ALL {
            let v = match self.map[r.index()] {
                MapEntry::Pc(p) => format!("{p:#x}"),
                MapEntry::Dead => "DEAD".into(),
                MapEntry::Invalid => "INVALID".into(),
            };
            let _ = writeln!(out, "  {:<5} {v}", r.name());
        }
    }
}
