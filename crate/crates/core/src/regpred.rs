//! IN/GEN register value predictor.
//!
//! For every tracked register the predictor remembers the values seen on
//! entry to a dynamic instance (IN) and the values later produced into it
//! (GEN). An IN value whose instances keep producing GEN values is elected
//! as a constant; a register whose IN value equals a per-packet user-routine
//! output is instead marked as supplied by that output.

use std::fmt::Write as _;

use crate::trace::RegisterId;

#[derive(Clone, Debug, PartialEq)]
pub struct RegPredConfig {
    pub threshold_num: u64,
    pub threshold_den: u64,
    pub in_entries: usize,
    pub gen_entries: usize,
    pub max_in_per_reg: usize,
    /// Ablation: every election reports UNRESOLVED.
    pub force_unresolved: bool,
}

impl Default for RegPredConfig {
    fn default() -> Self {
        RegPredConfig {
            threshold_num: 1,
            threshold_den: 8,
            in_entries: 48,
            gen_entries: 132,
            max_in_per_reg: 8,
            force_unresolved: false,
        }
    }
}

pub const IN_ENTRY_BYTES: u64 = 20;
pub const GEN_ENTRY_BYTES: u64 = 16;
pub const STATE_ENTRY_BYTES: u64 = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Election {
    Ready(u64),
    /// 1-based user-routine output slot.
    ReadyDyn(u8),
    Unresolved,
}

impl Election {
    pub fn is_resolved(self) -> bool {
        !matches!(self, Election::Unresolved)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegState {
    Untracked,
    Tracked,
    Ready(u64),
    ReadyDyn(u8),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenEntry {
    pub owner: usize,
    pub first: Option<(u64, u64)>,
    pub recent: Option<(u64, u64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InEntry {
    pub reg: RegisterId,
    pub value: u64,
    pub usage: u64,
    /// Instances of this IN value that produced at least one GEN value.
    pub support: u64,
    pub gen: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RegValuePredictor {
    cfg: RegPredConfig,
    ins: Vec<Option<InEntry>>,
    gens: Vec<Option<GenEntry>>,
    slots: [Vec<usize>; RegisterId::COUNT],
    observations: [u64; RegisterId::COUNT],
    dyn_arg: [Option<u8>; RegisterId::COUNT],
    tracked: [bool; RegisterId::COUNT],
    /// Open dynamic instance per register: IN slot and whether a GEN was seen.
    current: [Option<(usize, bool)>; RegisterId::COUNT],
    pub evictions: u64,
}

impl RegValuePredictor {
    pub fn new(cfg: RegPredConfig) -> Self {
        RegValuePredictor {
            ins: vec![None; cfg.in_entries.max(RegisterId::COUNT)],
            gens: vec![None; cfg.gen_entries],
            slots: Default::default(),
            observations: [0; RegisterId::COUNT],
            dyn_arg: [None; RegisterId::COUNT],
            tracked: [false; RegisterId::COUNT],
            current: [None; RegisterId::COUNT],
            evictions: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &RegPredConfig {
        &self.cfg
    }

    pub fn track(&mut self, reg: RegisterId) {
        self.tracked[reg.index()] = true;
    }

    pub fn is_tracked(&self, reg: RegisterId) -> bool {
        self.tracked[reg.index()]
    }

    fn alloc_gen(&mut self, owner: usize) -> Option<usize> {
        let i = self.gens.iter().position(|g| g.is_none())?;
        self.gens[i] = Some(GenEntry { owner, first: None, recent: None });
        Some(i)
    }

    fn reset_slot(&mut self, slot: usize, reg: RegisterId, value: u64) {
        if let Some(g) = self.ins[slot].and_then(|e| e.gen) {
            self.gens[g] = None;
        }
        self.ins[slot] = Some(InEntry { reg, value, usage: 0, support: 0, gen: None });
    }

    /// Finds or allocates the IN slot holding `value` for `reg`.
    fn slot_for(&mut self, reg: RegisterId, value: u64) -> usize {
        let r = reg.index();
        if let Some(&s) = self.slots[r].iter().find(|&&s| self.ins[s].map(|e| e.value) == Some(value)) {
            return s;
        }
        if self.slots[r].is_empty() {
            self.slots[r].push(r);
            self.reset_slot(r, reg, value);
            return r;
        }
        if self.slots[r].len() < self.cfg.max_in_per_reg {
            if let Some(free) = (RegisterId::COUNT..self.ins.len()).find(|&i| self.ins[i].is_none()) {
                self.slots[r].push(free);
                self.reset_slot(free, reg, value);
                return free;
            }
        }
        // Least frequently seen IN value of this register, lowest slot on ties.
        let victim = *self.slots[r]
            .iter()
            .min_by_key(|&&s| (self.ins[s].map(|e| e.usage).unwrap_or(0), s))
            .unwrap();
        self.evictions += 1;
        for cur in self.current.iter_mut() {
            if matches!(cur, Some((s, _)) if *s == victim) {
                *cur = None;
            }
        }
        self.reset_slot(victim, reg, value);
        victim
    }

    /// An IN observation opens a new dynamic instance of `reg`.
    pub fn observe_in(&mut self, reg: RegisterId, value: u64, nic_args: &[u64]) {
        let r = reg.index();
        self.tracked[r] = true;
        self.current[r] = None;
        if let Some(k) = nic_args.iter().position(|&a| a == value) {
            self.dyn_arg[r] = Some(k as u8 + 1);
            return;
        }
        self.observations[r] += 1;
        let slot = self.slot_for(reg, value);
        if let Some(e) = self.ins[slot].as_mut() {
            e.usage += 1;
        }
        self.current[r] = Some((slot, false));
    }

    /// A value produced into `reg` inside its open instance.
    pub fn observe_gen(&mut self, reg: RegisterId, value: u64) {
        let r = reg.index();
        let Some((slot, seen)) = self.current[r] else { return };
        let Some(entry) = self.ins[slot] else { return };
        let g = match entry.gen {
            Some(g) => g,
            None => match self.alloc_gen(slot) {
                Some(g) => {
                    self.ins[slot].as_mut().unwrap().gen = Some(g);
                    g
                }
                None => return,
            },
        };
        let gen = self.gens[g].as_mut().unwrap();
        match (gen.first, gen.recent) {
            (None, _) => gen.first = Some((value, 1)),
            (Some((v, c)), _) if v == value => gen.first = Some((v, c + 1)),
            (_, Some((v, c))) if v == value => gen.recent = Some((v, c + 1)),
            _ => gen.recent = Some((value, 1)),
        }
        if !seen {
            self.ins[slot].as_mut().unwrap().support += 1;
            self.current[r] = Some((slot, true));
        }
    }

    pub fn end_instance(&mut self, reg: RegisterId) {
        self.current[reg.index()] = None;
    }

    pub fn end_all_instances(&mut self) {
        self.current = [None; RegisterId::COUNT];
    }

    pub fn elect(&self, reg: RegisterId) -> Election {
        if self.cfg.force_unresolved {
            return Election::Unresolved;
        }
        let r = reg.index();
        if let Some(arg) = self.dyn_arg[r] {
            return Election::ReadyDyn(arg);
        }
        let total = self.observations[r];
        self.slots[r]
            .iter()
            .filter_map(|&s| self.ins[s].map(|e| (s, e)))
            .filter(|(_, e)| e.support * self.cfg.threshold_den > self.cfg.threshold_num * total)
            .max_by(|(sa, a), (sb, b)| (a.support, a.usage).cmp(&(b.support, b.usage)).then(sb.cmp(sa)))
            .map(|(_, e)| Election::Ready(e.value))
            .unwrap_or(Election::Unresolved)
    }

    pub fn state(&self, reg: RegisterId) -> RegState {
        if !self.tracked[reg.index()] {
            return RegState::Untracked;
        }
        match self.elect(reg) {
            Election::Ready(v) => RegState::Ready(v),
            Election::ReadyDyn(a) => RegState::ReadyDyn(a),
            Election::Unresolved => RegState::Tracked,
        }
    }

    /// Epoch boundary: user-routine matches are re-learned each epoch.
    pub fn on_epoch(&mut self) {
        self.dyn_arg = [None; RegisterId::COUNT];
    }

    pub fn in_entries(&self) -> impl Iterator<Item = (usize, &InEntry)> {
        self.ins.iter().enumerate().filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
    }

    pub fn gen_entries(&self) -> impl Iterator<Item = (usize, &GenEntry)> {
        self.gens.iter().enumerate().filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
    }

    pub fn live_in_slots(&self, reg: RegisterId) -> usize {
        self.slots[reg.index()].len()
    }

    pub fn total_observations(&self, reg: RegisterId) -> u64 {
        self.observations[reg.index()]
    }

    pub fn storage_bytes(&self) -> (u64, u64) {
        (
            RegisterId::COUNT as u64 * STATE_ENTRY_BYTES,
            self.cfg.in_entries as u64 * IN_ENTRY_BYTES + self.cfg.gen_entries as u64 * GEN_ENTRY_BYTES,
        )
    }

    /// Register state table followed by the IN and GEN tables.
    pub fn dump(&self, out: &mut String) {
        let _ = writeln!(out, "Table III: register state");
        for reg in RegisterId::ALL {
            match self.state(reg) {
                RegState::Untracked => {}
                RegState::Tracked => {
                    let _ = writeln!(out, "  {:<5} TRACKED", reg.name());
                }
                RegState::Ready(v) => {
                    let _ = writeln!(out, "  {:<5} READY      {v:#x}", reg.name());
                }
                RegState::ReadyDyn(a) => {
                    let _ = writeln!(out, "  {:<5} READY-DYN  arg {a}", reg.name());
                }
            }
        }
        let _ = writeln!(out, "Table IV: IN values");
        for (i, e) in self.in_entries() {
            let _ = writeln!(
                out,
                "  [{i:2}] {:<5} in={:#x} usage={} support={} gen={}",
                e.reg.name(),
                e.value,
                e.usage,
                e.support,
                e.gen.map(|g| g.to_string()).unwrap_or_else(|| "-".into())
            );
        }
        let _ = writeln!(out, "Table V: GEN values");
        for (i, g) in self.gen_entries() {
            let fmt = |v: Option<(u64, u64)>| v.map(|(v, c)| format!("{v:#x} x{c}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "  [{i:2}] owner={} first={} recent={}", g.owner, fmt(g.first), fmt(g.recent));
        }
    }
}
