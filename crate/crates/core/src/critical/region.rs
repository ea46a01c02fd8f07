use crate::regpred::Election;
use crate::trace::{OpClass, RegisterId, TraceRecord};

/// Number of per-visit branch bias buckets; later visits share the last.
pub const VISIT_BUCKETS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pred {
    Pc(u64),
    Dead,
    Unknown,
}

impl Pred {
    pub fn label(self) -> String {
        match self {
            Pred::Pc(pc) => format!("{pc:#x}"),
            Pred::Dead => "DEAD".into(),
            Pred::Unknown => "UNKNOWN".into(),
        }
    }
}

/// Taken / executed counts of a branch, per visit within one request.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BranchBias {
    pub visits: [(u32, u32); VISIT_BUCKETS],
}

impl BranchBias {
    pub fn record(&mut self, visit: usize, taken: bool) {
        let b = &mut self.visits[visit.min(VISIT_BUCKETS - 1)];
        b.0 = b.0.saturating_add(taken as u32);
        b.1 = b.1.saturating_add(1);
    }

    /// Majority direction at `visit`; falls back to the nearest observed
    /// earlier bucket, then to the static hint.
    pub fn taken_at(&self, visit: usize, fallback: bool) -> bool {
        let mut v = visit.min(VISIT_BUCKETS - 1);
        loop {
            let (t, n) = self.visits[v];
            if n > 0 {
                return 2 * t > n;
            }
            if v == 0 {
                return fallback;
            }
            v -= 1;
        }
    }

    pub fn age(&mut self) {
        for b in self.visits.iter_mut() {
            b.0 = b.0.div_ceil(2);
            b.1 = b.1.div_ceil(2);
        }
    }
}

/// One instruction of a shipped region, with what the NIC needs to run it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionInstr {
    pub pc: u64,
    pub opclass: OpClass,
    /// Static fields of the instruction; dynamic fields are zeroed.
    pub template: TraceRecord,
    pub preds: [Pred; 2],
    pub bias: BranchBias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequiredState {
    Ready(u64),
    ReadyDyn(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequiredReg {
    pub reg: RegisterId,
    pub state: RequiredState,
    /// Set when the value stands in for an instruction's result, letting
    /// the NIC skip that instruction.
    pub replaces_pc: Option<u64>,
}

impl RequiredReg {
    pub fn from_election(reg: RegisterId, e: Election, replaces_pc: Option<u64>) -> Option<Self> {
        let state = match e {
            Election::Ready(v) => RequiredState::Ready(v),
            Election::ReadyDyn(a) => RequiredState::ReadyDyn(a),
            Election::Unresolved => return None,
        };
        Some(RequiredReg { reg, state, replaces_pc })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CriticalRegion {
    pub region_id: u64,
    /// Sorted by pc.
    pub instructions: Vec<RegionInstr>,
    pub required_regs: Vec<RequiredReg>,
    pub epoch: u64,
}

impl CriticalRegion {
    pub fn pcs(&self) -> Vec<u64> {
        self.instructions.iter().map(|i| i.pc).collect()
    }

    pub fn loads(&self) -> usize {
        self.instructions.iter().filter(|i| i.opclass == OpClass::Load).count()
    }

    pub fn required(&self, reg: RegisterId) -> Option<&RequiredReg> {
        self.required_regs.iter().find(|r| r.reg == reg)
    }

    pub fn contains_pc(&self, pc: u64) -> bool {
        self.instructions.binary_search_by_key(&pc, |i| i.pc).is_ok()
    }
}

/// Content hash of a region's pcs (FNV-1a over little-endian bytes).
pub(crate) fn region_hash(pcs: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for pc in pcs {
        for b in pc.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
