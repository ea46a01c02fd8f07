//! Abstract instruction traces.
//!
//! A trace is a flat stream of [`TraceEvent`]s: retired instructions of a
//! six-class abstract ISA, delimited per request by REQ_BEGIN / REQ_END
//! markers. Records carry the values written to their destination register
//! so downstream consumers can observe runtime values without a functional
//! model.

mod format;
mod generate;
mod validate;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

pub use format::{decode_trace, encode_trace, read_trace, read_trace_text, write_trace, write_trace_text, MAGIC, RECORD_BYTES};
pub use generate::{generate_trace, HashChainPcs, SyntheticWorkloadSpec, TreeWalkPcs, WorkloadKind};
pub(crate) use generate::splitmix64;
pub use validate::{validate_trace, ValidationReport, Violation, ViolationKind};

pub const BLOCK_BYTES: u64 = 64;

#[inline]
pub fn block_of(addr: u64) -> u64 {
    addr / BLOCK_BYTES
}

/// One of the sixteen architectural registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum RegisterId {
    Rax = 0,
    Rbx,
    Rcx,
    Rdx,
    Rsi,
    Rdi,
    Rbp,
    Rsp,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
    Rip,
}

impl RegisterId {
    pub const COUNT: usize = 16;

    pub const ALL: [RegisterId; 16] = [
        RegisterId::Rax,
        RegisterId::Rbx,
        RegisterId::Rcx,
        RegisterId::Rdx,
        RegisterId::Rsi,
        RegisterId::Rdi,
        RegisterId::Rbp,
        RegisterId::Rsp,
        RegisterId::R8,
        RegisterId::R9,
        RegisterId::R10,
        RegisterId::R11,
        RegisterId::R12,
        RegisterId::R13,
        RegisterId::R14,
        RegisterId::Rip,
    ];

    const NAMES: [&'static str; 16] = [
        "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp", "r8", "r9", "r10", "r11", "r12",
        "r13", "r14", "rip",
    ];

    pub fn new(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim_start_matches('%');
        Self::NAMES.iter().position(|n| *n == name).and_then(|i| Self::new(i as u8))
    }

    /// Registers that root a dependence chain: the argument registers, the
    /// frame/stack pointers and rip.
    pub fn is_argument(self) -> bool {
        matches!(
            self,
            RegisterId::Rsi
                | RegisterId::Rdi
                | RegisterId::Rcx
                | RegisterId::Rdx
                | RegisterId::R8
                | RegisterId::R9
                | RegisterId::Rbp
                | RegisterId::Rsp
                | RegisterId::Rip
        )
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum OpClass {
    Load = 0,
    Store,
    Alu,
    RegMove,
    Branch,
    Other,
}

impl OpClass {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => OpClass::Load,
            1 => OpClass::Store,
            2 => OpClass::Alu,
            3 => OpClass::RegMove,
            4 => OpClass::Branch,
            5 => OpClass::Other,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Load => "LOAD",
            OpClass::Store => "STORE",
            OpClass::Alu => "ALU",
            OpClass::RegMove => "REGMOVE",
            OpClass::Branch => "BRANCH",
            OpClass::Other => "OTHER",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "LOAD" => OpClass::Load,
            "STORE" => OpClass::Store,
            "ALU" => OpClass::Alu,
            "REGMOVE" => OpClass::RegMove,
            "BRANCH" => OpClass::Branch,
            "OTHER" => OpClass::Other,
            _ => return None,
        })
    }
}

/// ALU operation. The second operand is `src2` when present, otherwise the
/// record's displacement acts as an immediate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum AluOp {
    #[default]
    Opaque = 0,
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Mul,
    MovImm,
    Cmp,
    Test,
}

impl AluOp {
    pub fn from_u8(v: u8) -> Option<Self> {
        use AluOp::*;
        Some(match v {
            0 => Opaque,
            1 => Add,
            2 => Sub,
            3 => And,
            4 => Or,
            5 => Xor,
            6 => Shl,
            7 => Shr,
            8 => Mul,
            9 => MovImm,
            10 => Cmp,
            11 => Test,
            _ => return None,
        })
    }

    /// Result of the operation, `None` for flag-only and opaque operations.
    pub fn eval(self, a: u64, b: u64) -> Option<u64> {
        use AluOp::*;
        Some(match self {
            Add => a.wrapping_add(b),
            Sub => a.wrapping_sub(b),
            And => a & b,
            Or => a | b,
            Xor => a ^ b,
            Shl => a.wrapping_shl((b & 63) as u32),
            Shr => a.wrapping_shr((b & 63) as u32),
            Mul => a.wrapping_mul(b),
            MovImm => b,
            Opaque | Cmp | Test => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub pc: u64,
    pub opclass: OpClass,
    pub dest: Option<RegisterId>,
    pub src1: Option<RegisterId>,
    pub src2: Option<RegisterId>,
    pub addr_base: Option<RegisterId>,
    pub addr_index: Option<RegisterId>,
    pub addr_scale: u8,
    pub addr_disp: i32,
    pub eff_addr: Option<u64>,
    pub value: Option<u64>,
    pub branch_target: Option<u64>,
    pub branch_taken: bool,
    pub is_stack_access: bool,
    pub is_pc_relative: bool,
    pub alu_op: AluOp,
}

impl TraceRecord {
    fn blank(pc: u64, opclass: OpClass) -> Self {
        TraceRecord {
            pc,
            opclass,
            dest: None,
            src1: None,
            src2: None,
            addr_base: None,
            addr_index: None,
            addr_scale: 1,
            addr_disp: 0,
            eff_addr: None,
            value: None,
            branch_target: None,
            branch_taken: false,
            is_stack_access: false,
            is_pc_relative: false,
            alu_op: AluOp::Opaque,
        }
    }

    /// `dest <- [base + index*scale + disp]`
    pub fn load(
        pc: u64,
        dest: RegisterId,
        base: Option<RegisterId>,
        index: Option<RegisterId>,
        scale: u8,
        disp: i32,
        eff_addr: u64,
        value: u64,
    ) -> Self {
        let mut r = Self::blank(pc, OpClass::Load);
        r.dest = Some(dest);
        r.addr_base = base;
        r.addr_index = index;
        r.addr_scale = scale;
        r.addr_disp = disp;
        r.eff_addr = Some(eff_addr);
        r.value = Some(value);
        r.is_pc_relative = base == Some(RegisterId::Rip);
        r.is_stack_access = base == Some(RegisterId::Rsp);
        r
    }

    pub fn store(pc: u64, src: RegisterId, base: Option<RegisterId>, disp: i32, eff_addr: u64) -> Self {
        let mut r = Self::blank(pc, OpClass::Store);
        r.src1 = Some(src);
        r.addr_base = base;
        r.addr_disp = disp;
        r.eff_addr = Some(eff_addr);
        r.is_stack_access = base == Some(RegisterId::Rsp);
        r
    }

    pub fn alu(
        pc: u64,
        op: AluOp,
        dest: Option<RegisterId>,
        src1: Option<RegisterId>,
        src2: Option<RegisterId>,
        imm: i32,
        value: Option<u64>,
    ) -> Self {
        let mut r = Self::blank(pc, OpClass::Alu);
        r.alu_op = op;
        r.dest = dest;
        r.src1 = src1;
        r.src2 = src2;
        r.addr_disp = imm;
        r.value = if dest.is_some() { value } else { None };
        r
    }

    pub fn regmove(pc: u64, dest: RegisterId, src: RegisterId, value: u64) -> Self {
        let mut r = Self::blank(pc, OpClass::RegMove);
        r.dest = Some(dest);
        r.src1 = Some(src);
        r.value = Some(value);
        r
    }

    pub fn branch(pc: u64, target: u64, taken: bool) -> Self {
        let mut r = Self::blank(pc, OpClass::Branch);
        r.branch_target = Some(target);
        r.branch_taken = taken;
        r
    }

    pub fn other(pc: u64, dest: Option<RegisterId>, value: Option<u64>) -> Self {
        let mut r = Self::blank(pc, OpClass::Other);
        r.dest = dest;
        r.value = if dest.is_some() { value } else { None };
        r
    }

    pub fn is_mem(&self) -> bool {
        matches!(self.opclass, OpClass::Load | OpClass::Store)
    }

    /// Registers read to form the effective address (rip excluded).
    pub fn addr_regs(&self) -> impl Iterator<Item = RegisterId> + '_ {
        [self.addr_base, self.addr_index]
            .into_iter()
            .flatten()
            .filter(|r| *r != RegisterId::Rip)
    }

    /// Every register this instruction reads, rip excluded.
    pub fn read_regs(&self) -> Vec<RegisterId> {
        let mut v: Vec<RegisterId> = Vec::with_capacity(4);
        let mut push = |r: Option<RegisterId>| {
            if let Some(r) = r {
                if r != RegisterId::Rip && !v.contains(&r) {
                    v.push(r);
                }
            }
        };
        push(self.addr_base);
        push(self.addr_index);
        push(self.src1);
        push(self.src2);
        v
    }

    /// Evaluates base + index*scale + disp; `reg` supplies register values.
    pub fn compute_addr(&self, mut reg: impl FnMut(RegisterId) -> Option<u64>) -> Option<u64> {
        let mut addr = self.addr_disp as i64 as u64;
        if let Some(b) = self.addr_base {
            let v = if b == RegisterId::Rip { self.pc } else { reg(b)? };
            addr = addr.wrapping_add(v);
        }
        if let Some(i) = self.addr_index {
            let v = if i == RegisterId::Rip { self.pc } else { reg(i)? };
            addr = addr.wrapping_add(v.wrapping_mul(self.addr_scale as u64));
        }
        Some(addr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkerKind {
    ReqBegin,
    ReqEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequestMarker {
    pub kind: MarkerKind,
    pub request_id: u64,
    /// Output of the user routine for this request's key (REQ_BEGIN only).
    pub key_hash: u64,
}

impl RequestMarker {
    pub fn begin(request_id: u64, key_hash: u64) -> Self {
        RequestMarker { kind: MarkerKind::ReqBegin, request_id, key_hash }
    }

    pub fn end(request_id: u64) -> Self {
        RequestMarker { kind: MarkerKind::ReqEnd, request_id, key_hash: 0 }
    }
}

/// Register that receives `key_hash` when a request begins (argument slot 1).
pub const KEY_ARG_REG: RegisterId = RegisterId::Rdx;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Marker(RequestMarker),
    Record(TraceRecord),
}

/// One request's slice of the trace, begin and end markers included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestSegment {
    pub request_id: u64,
    pub key_hash: u64,
    pub range: Range<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(events: Vec<TraceEvent>) -> Self {
        Trace { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Record(r) => Some(r),
            TraceEvent::Marker(_) => None,
        })
    }

    /// Splits the stream into request segments. Records outside any
    /// REQ_BEGIN/REQ_END pair are ignored; an unterminated segment is
    /// reported by id.
    pub fn segments(&self) -> Result<Vec<RequestSegment>, u64> {
        let mut out = Vec::new();
        let mut open: Option<(u64, u64, usize)> = None;
        for (i, ev) in self.events.iter().enumerate() {
            if let TraceEvent::Marker(m) = ev {
                match m.kind {
                    MarkerKind::ReqBegin => {
                        if let Some((id, _, _)) = open {
                            return Err(id);
                        }
                        open = Some((m.request_id, m.key_hash, i));
                    }
                    MarkerKind::ReqEnd => {
                        if let Some((id, key_hash, start)) = open.take() {
                            out.push(RequestSegment { request_id: id, key_hash, range: start..i + 1 });
                        }
                    }
                }
            }
        }
        match open {
            Some((id, _, _)) => Err(id),
            None => Ok(out),
        }
    }
}

/// Per-PC load characterization: dynamic accesses and distinct blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PcProfile {
    pub accesses: u64,
    pub unique_blocks: u64,
}

pub fn characterize(trace: &Trace) -> BTreeMap<u64, PcProfile> {
    let mut blocks: HashMap<u64, HashSet<u64>> = HashMap::new();
    let mut out: BTreeMap<u64, PcProfile> = BTreeMap::new();
    for r in trace.records() {
        if r.opclass != OpClass::Load {
            continue;
        }
        let Some(a) = r.eff_addr else { continue };
        out.entry(r.pc).or_default().accesses += 1;
        blocks.entry(r.pc).or_default().insert(block_of(a));
    }
    for (pc, p) in out.iter_mut() {
        p.unique_blocks = blocks[pc].len() as u64;
    }
    out
}

/// Address -> value history reconstructed from the trace's loads and
/// stores. Used as ground-truth memory contents for NIC-side execution.
#[derive(Clone, Debug, Default)]
pub struct MemoryImage {
    versions: HashMap<u64, Vec<(usize, u64)>>,
}

impl MemoryImage {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut regs = [0u64; RegisterId::COUNT];
        let mut versions: HashMap<u64, Vec<(usize, u64)>> = HashMap::new();
        for (i, ev) in trace.events.iter().enumerate() {
            match ev {
                TraceEvent::Marker(m) if m.kind == MarkerKind::ReqBegin => {
                    regs[KEY_ARG_REG.index()] = m.key_hash;
                }
                TraceEvent::Marker(_) => {}
                TraceEvent::Record(r) => {
                    let observed = match r.opclass {
                        OpClass::Load => r.eff_addr.zip(r.value),
                        OpClass::Store => r.eff_addr.zip(r.src1.map(|s| regs[s.index()])),
                        _ => None,
                    };
                    if let Some((addr, value)) = observed {
                        let v = versions.entry(addr).or_default();
                        if v.last().map(|&(_, last)| last != value).unwrap_or(true) {
                            v.push((i, value));
                        }
                    }
                    if let (Some(d), Some(v)) = (r.dest, r.value) {
                        regs[d.index()] = v;
                    }
                }
            }
        }
        MemoryImage { versions }
    }

    /// Value at `addr` as seen by the request ending at event `pos`: the
    /// latest observation at or before `pos`, else the earliest one.
    pub fn value_at(&self, addr: u64, pos: usize) -> Option<u64> {
        let v = self.versions.get(&addr)?;
        let idx = v.partition_point(|&(p, _)| p <= pos);
        if idx == 0 {
            v.first().map(|&(_, val)| val)
        } else {
            Some(v[idx - 1].1)
        }
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }
}
