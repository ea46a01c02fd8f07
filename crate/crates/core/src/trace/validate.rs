use std::fmt;

use super::{MarkerKind, OpClass, RegisterId, Trace, TraceEvent, KEY_ARG_REG};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// eff_addr disagrees with base + index*scale + disp under replayed registers.
    AddressMismatch { expected: u64, recorded: u64 },
    /// REQ_BEGIN inside an open request, REQ_END without a matching begin,
    /// or a request still open at end of trace.
    Nesting(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::AddressMismatch { expected, recorded } => {
                write!(f, "event {}: eff_addr {recorded:#x}, operands give {expected:#x}", self.index)
            }
            ViolationKind::Nesting(why) => write!(f, "event {}: {why}", self.index),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub records: usize,
    pub requests: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays architectural register state (all registers start at zero,
/// REQ_BEGIN loads the key hash into the key argument register) and checks
/// every memory address and marker pairing.
pub fn validate_trace(trace: &Trace) -> ValidationReport {
    let mut regs = [0u64; RegisterId::COUNT];
    let mut report = ValidationReport::default();
    let mut open: Option<u64> = None;
    for (i, ev) in trace.events.iter().enumerate() {
        match ev {
            TraceEvent::Marker(m) => match m.kind {
                MarkerKind::ReqBegin => {
                    if let Some(prev) = open {
                        report.violations.push(Violation {
                            index: i,
                            kind: ViolationKind::Nesting(format!(
                                "REQ_BEGIN {} while request {prev} is still open",
                                m.request_id
                            )),
                        });
                    }
                    open = Some(m.request_id);
                    report.requests += 1;
                    regs[KEY_ARG_REG.index()] = m.key_hash;
                }
                MarkerKind::ReqEnd => {
                    if open != Some(m.request_id) {
                        report.violations.push(Violation {
                            index: i,
                            kind: ViolationKind::Nesting(format!("REQ_END {} does not close an open request", m.request_id)),
                        });
                    }
                    open = None;
                }
            },
            TraceEvent::Record(r) => {
                report.records += 1;
                if matches!(r.opclass, OpClass::Load | OpClass::Store) {
                    let expected = r.compute_addr(|reg| Some(regs[reg.index()])).unwrap_or(0);
                    if let Some(recorded) = r.eff_addr {
                        if recorded != expected {
                            report.violations.push(Violation {
                                index: i,
                                kind: ViolationKind::AddressMismatch { expected, recorded },
                            });
                        }
                    }
                }
                if let (Some(d), Some(v)) = (r.dest, r.value) {
                    regs[d.index()] = v;
                }
            }
        }
    }
    if let Some(id) = open {
        report.violations.push(Violation {
            index: trace.events.len(),
            kind: ViolationKind::Nesting(format!("request {id} never ends")),
        });
    }
    report
}
