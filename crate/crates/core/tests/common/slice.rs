//! Offline backward-slice check of a shipped region.
//!
//! Each request is replayed twice in lockstep: the full architectural
//! state, and a region-only state that sees just the region's pcs and
//! starts from the required registers (given their true values). Every
//! region load must recompute its recorded address from region-only
//! state. Instructions whose results never feed a region load address are
//! reported as unused.

use std::collections::BTreeSet;

use nicsim::critical::{CriticalRegion, RequiredState};
use nicsim::trace::{MarkerKind, KEY_ARG_REG};
use nicsim::{OpClass, RegisterId, Trace, TraceEvent};

#[derive(Debug, Default)]
pub struct SliceVerdict {
    pub loads_checked: u64,
    pub failures: Vec<String>,
    /// Non-branch, non-load region pcs that never fed a load address.
    pub unused: BTreeSet<u64>,
}

type Known = [Option<(u64, BTreeSet<u64>)>; RegisterId::COUNT];

pub fn check_region(trace: &Trace, region: &CriticalRegion) -> SliceVerdict {
    let pcs: BTreeSet<u64> = region.pcs().into_iter().collect();
    let replaced: BTreeSet<u64> = region.required_regs.iter().filter_map(|q| q.replaces_pc).collect();
    let mut verdict = SliceVerdict::default();
    let mut used: BTreeSet<u64> = BTreeSet::new();

    let mut arch = [0u64; RegisterId::COUNT];
    let mut key_hash = 0;
    let mut known: Known = Default::default();
    let mut entered = false;

    for (idx, ev) in trace.events.iter().enumerate() {
        let rec = match ev {
            TraceEvent::Marker(m) => {
                if m.kind == MarkerKind::ReqBegin {
                    key_hash = m.key_hash;
                    arch[KEY_ARG_REG.index()] = m.key_hash;
                    entered = false;
                }
                continue;
            }
            TraceEvent::Record(r) => r,
        };
        if pcs.contains(&rec.pc) {
            if !entered {
                entered = true;
                known = Default::default();
                for q in &region.required_regs {
                    if q.replaces_pc.is_some() {
                        continue;
                    }
                    let v = match q.state {
                        RequiredState::ReadyDyn(1) => key_hash,
                        RequiredState::ReadyDyn(k) => {
                            verdict.failures.push(format!("argument slot {k} has no producer"));
                            continue;
                        }
                        RequiredState::Ready(_) => arch[q.reg.index()],
                    };
                    known[q.reg.index()] = Some((v, BTreeSet::new()));
                }
            }
            step_region(rec, idx, &replaced, &mut known, &mut used, &mut verdict);
        }
        if let (Some(d), Some(v)) = (rec.dest, rec.value) {
            arch[d.index()] = v;
        }
    }
    for ins in &region.instructions {
        let counts = !matches!(ins.opclass, OpClass::Branch | OpClass::Load);
        if counts && !used.contains(&ins.pc) && !replaced.contains(&ins.pc) {
            verdict.unused.insert(ins.pc);
        }
    }
    verdict
}

fn step_region(
    rec: &nicsim::TraceRecord,
    idx: usize,
    replaced: &BTreeSet<u64>,
    known: &mut Known,
    used: &mut BTreeSet<u64>,
    verdict: &mut SliceVerdict,
) {
    let get = |known: &Known, r: RegisterId| known[r.index()].clone();
    let with_self = |mut deps: BTreeSet<u64>| {
        deps.insert(rec.pc);
        deps
    };
    let result: Option<(u64, BTreeSet<u64>)> = if replaced.contains(&rec.pc) {
        rec.value.map(|v| (v, BTreeSet::from([rec.pc])))
    } else {
        match rec.opclass {
            OpClass::Load => {
                verdict.loads_checked += 1;
                let mut deps = BTreeSet::new();
                let mut missing = None;
                for r in rec.addr_regs() {
                    match get(known, r) {
                        Some((_, d)) => deps.extend(d),
                        None => missing = Some(r),
                    }
                }
                if let Some(r) = missing {
                    verdict.failures.push(format!("event {idx}: load {:#x} reads {} with no region producer", rec.pc, r.name()));
                    None
                } else {
                    let addr = rec.compute_addr(|r| get(known, r).map(|(v, _)| v));
                    if addr != rec.eff_addr {
                        verdict.failures.push(format!(
                            "event {idx}: load {:#x} recomputes {:?}, trace has {:?}",
                            rec.pc, addr, rec.eff_addr
                        ));
                    }
                    used.extend(deps.iter().copied());
                    rec.value.map(|v| (v, with_self(deps)))
                }
            }
            OpClass::Alu => {
                let a = rec.src1.map(|r| get(known, r));
                let b = rec.src2.map(|r| get(known, r));
                match (a, b) {
                    (Some(None), _) | (_, Some(None)) => None,
                    (a, b) => {
                        let mut deps = BTreeSet::new();
                        let av = a.flatten().map(|(v, d)| {
                            deps.extend(d);
                            v
                        });
                        let bv = b.flatten().map(|(v, d)| {
                            deps.extend(d);
                            v
                        });
                        let imm = rec.addr_disp as i64 as u64;
                        rec.alu_op.eval(av.unwrap_or(0), bv.unwrap_or(imm)).map(|v| (v, with_self(deps)))
                    }
                }
            }
            OpClass::RegMove => rec.src1.and_then(|s| get(known, s)).map(|(v, d)| (v, with_self(d))),
            _ => None,
        }
    };
    if let Some(d) = rec.dest {
        known[d.index()] = result;
    }
}
