//! Replay of the hash-lookup walkthrough against a committed table dump.
//!
//! The micro-trace is a chained hash lookup: load the table base, index a
//! bucket with the key hash, then walk `next` pointers comparing tags until
//! the key matches and the value is read. Loads marked as L2 misses are fed
//! straight into a fresh [`CriticalEngine`]; no memory model is involved.
//!
//! Canonical layout of `golden/walkthrough.txt`: a `== <label>` line opens
//! every snapshot, followed by the engine dump (Tables I and II), the
//! predictor dump (Tables III to V) and, for the final snapshot, one
//! `region` block per emitted region. Lines are compared verbatim.

use std::fmt::Write as _;

use crate::critical::{CriticalConfig, CriticalEngine, CriticalRegion, RequiredState};
use crate::regpred::RegPredConfig;
use crate::trace::{splitmix64 as mix, AluOp, RegisterId, TraceRecord};

use RegisterId::*;

pub const BASE_LOAD: u64 = 0x41b571;
pub const BUCKET_LOAD: u64 = 0x41b578;
pub const ENTER_JUMP: u64 = 0x41b57c;
pub const NEXT_LOAD: u64 = 0x41b580;
pub const TAG_LOAD: u64 = 0x41b589;
pub const TAG_CMP: u64 = 0x41b58d;
pub const LOOP_BRANCH: u64 = 0x41b590;
pub const VALUE_LOAD: u64 = 0x41b592;
pub const VALUE_CHECK: u64 = 0x41b5af;

/// The eight instructions the final region must hold, all ready.
pub const NARRATED_PCS: [u64; 8] =
    [BASE_LOAD, BUCKET_LOAD, ENTER_JUMP, NEXT_LOAD, TAG_LOAD, LOOP_BRANCH, VALUE_LOAD, VALUE_CHECK];

pub const EXPECTED: &str = include_str!("../golden/walkthrough.txt");

const REQUESTS: u64 = 16;
const FIRST_EPOCH: u64 = 8;
const TABLE_BASE: u64 = 0x6d_2f40;
const GLOBAL_SLOT: u64 = 0x61_a5c8;

pub struct GoldenRequest {
    pub key_hash: u64,
    /// Records in program order with their L2-miss flag.
    pub records: Vec<(TraceRecord, bool)>,
}

/// The table base stays put for every third request and is reallocated in
/// between, so the constant only clears a low election threshold.
fn table_base(i: u64) -> u64 {
    if i.is_multiple_of(3) {
        TABLE_BASE
    } else {
        0x70_0000 + (i << 12)
    }
}

#[allow(clippy::too_many_arguments)]
fn load(regs: &mut [u64; RegisterId::COUNT], pc: u64, dest: RegisterId, base: RegisterId, index: Option<RegisterId>, scale: u8, disp: i32, value: u64) -> TraceRecord {
    let mut r = TraceRecord::load(pc, dest, Some(base), index, scale, disp, 0, value);
    r.eff_addr = r.compute_addr(|q| Some(if q == Rip { pc } else { regs[q.index()] }));
    regs[dest.index()] = value;
    r
}

pub fn micro_trace() -> Vec<GoldenRequest> {
    (0..REQUESTS)
        .map(|i| {
            let key_hash = mix(i ^ 0x006b_6579) & 0xfff;
            let mut regs = [0u64; RegisterId::COUNT];
            regs[Rdx.index()] = key_hash;
            regs[Rbp.index()] = 0x7a00 + i;
            let hops = i % 3;
            let node = |h: u64| 0x90_0000 + (mix(i * 8 + h) & 0xffff) * 128 + 32;
            let r = &mut regs;
            let mut out = vec![
                (load(r, BASE_LOAD, Rax, Rip, None, 1, (GLOBAL_SLOT - BASE_LOAD) as i32, table_base(i)), false),
                (load(r, BUCKET_LOAD, Rbx, Rax, Some(Rdx), 8, 0, node(0)), true),
                (TraceRecord::branch(ENTER_JUMP, TAG_LOAD, true), false),
            ];
            for h in 0..=hops {
                if h > 0 {
                    out.push((load(r, NEXT_LOAD, Rbx, Rbx, None, 1, 0x10, node(h)), true));
                }
                let tag = if h == hops { r[Rbp.index()] } else { mix(h) };
                out.push((load(r, TAG_LOAD, Rax, Rbx, None, 1, 0x34, tag), true));
                out.push((TraceRecord::alu(TAG_CMP, AluOp::Cmp, None, Some(Rbp), Some(Rax), 0, None), false));
                out.push((TraceRecord::branch(LOOP_BRANCH, NEXT_LOAD, h < hops), false));
            }
            out.push((load(r, VALUE_LOAD, Rax, Rbx, None, 1, 0x2b, mix(key_hash)), true));
            out.push((TraceRecord::branch(VALUE_CHECK, NEXT_LOAD, false), false));
            GoldenRequest { key_hash, records: out }
        })
        .collect()
}

pub struct Walkthrough {
    pub engine: CriticalEngine,
    pub regions: Vec<CriticalRegion>,
    pub text: String,
}

fn snapshot(out: &mut String, label: &str, engine: &CriticalEngine) {
    let _ = writeln!(out, "== {label}");
    engine.dump(out);
    engine.regpred.dump(out);
}

/// Replays the micro-trace over two epochs and renders the snapshots.
pub fn walkthrough(mut crit: CriticalConfig, regpred: RegPredConfig) -> Walkthrough {
    crit.epoch_l2_misses = u64::MAX;
    let mut engine = CriticalEngine::new(crit, regpred);
    let mut text = String::new();
    let mut regions = Vec::new();
    for (i, req) in micro_trace().into_iter().enumerate() {
        if i as u64 == FIRST_EPOCH {
            engine.end_epoch();
            snapshot(&mut text, "epoch 1 start", &engine);
        }
        engine.begin_request(req.key_hash, i as u64).expect("increasing times");
        for (rec, miss) in &req.records {
            engine.retire(rec, *miss);
        }
        engine.end_request();
    }
    snapshot(&mut text, "end of walkthrough", &engine);
    regions.extend(engine.end_epoch());
    for r in &regions {
        let _ = writeln!(text, "region");
        for ins in &r.instructions {
            let _ = writeln!(text, "  {:#x} {}", ins.pc, ins.opclass.name());
        }
        for q in &r.required_regs {
            let state = match q.state {
                RequiredState::Ready(v) => format!("READY {v:#x}"),
                RequiredState::ReadyDyn(a) => format!("READY-DYN arg {a}"),
            };
            let _ = writeln!(text, "  reg {:<5} {state}", q.reg.name());
        }
    }
    Walkthrough { engine, regions, text }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldenDiff {
    /// 1-based line number.
    pub line: usize,
    /// Nearest preceding snapshot and table headers.
    pub section: String,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

impl std::fmt::Display for GoldenDiff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |s: &Option<String>| s.clone().unwrap_or_else(|| "<end of text>".into());
        write!(
            f,
            "first difference at line {} ({})\n  expected: {}\n  actual:   {}",
            self.line,
            self.section,
            show(&self.expected),
            show(&self.actual)
        )
    }
}

pub fn first_diff(expected: &str, actual: &str) -> Option<GoldenDiff> {
    let mut e = expected.lines();
    let mut a = actual.lines();
    let (mut snap, mut table) = (String::new(), String::new());
    let mut line = 0;
    loop {
        line += 1;
        let (x, y) = (e.next(), a.next());
        if x.is_none() && y.is_none() {
            return None;
        }
        if x != y {
            let section = [snap.as_str(), table.as_str()].iter().filter(|s| !s.is_empty()).copied().collect::<Vec<_>>().join(" / ");
            return Some(GoldenDiff { line, section, expected: x.map(String::from), actual: y.map(String::from) });
        }
        let l = x.unwrap();
        if let Some(s) = l.strip_prefix("== ") {
            snap = s.to_string();
            table.clear();
        } else if l.starts_with("Table ") || l == "region" {
            table = l.to_string();
        }
    }
}

/// Runs the walkthrough under `crit`/`regpred` and compares it with the
/// committed dump.
pub fn check_with(crit: CriticalConfig, regpred: RegPredConfig) -> Result<Walkthrough, GoldenDiff> {
    let w = walkthrough(crit, regpred);
    match first_diff(EXPECTED, &w.text) {
        None => Ok(w),
        Some(d) => Err(d),
    }
}

pub fn check() -> Result<Walkthrough, GoldenDiff> {
    check_with(CriticalConfig::default(), RegPredConfig::default())
}
