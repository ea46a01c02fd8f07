//! Recount model of the IN/GEN predictor. Slot contents are tracked as
//! (value, position of the observation that installed it); usage and
//! support are recounted from the raw stream whenever they are needed.

use nicsim::regpred::{Election, RegPredConfig, RegValuePredictor};
use nicsim::RegisterId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Obs {
    In { reg: RegisterId, value: u64, args: Vec<u64> },
    Gen { reg: RegisterId, value: u64 },
    End { reg: RegisterId },
    Epoch,
}

pub fn apply(p: &mut RegValuePredictor, stream: &[Obs]) {
    for o in stream {
        match o {
            Obs::In { reg, value, args } => p.observe_in(*reg, *value, args),
            Obs::Gen { reg, value } => p.observe_gen(*reg, *value),
            Obs::End { reg } => p.end_instance(*reg),
            Obs::Epoch => p.on_epoch(),
        }
    }
}

struct Slot {
    value: u64,
    since: usize,
}

/// Per-register instances: (index of the opening IN, value, produced GEN).
fn instances(stream: &[Obs], reg: RegisterId) -> Vec<(usize, u64, bool)> {
    let mut out: Vec<(usize, u64, bool)> = Vec::new();
    let mut open: Option<usize> = None;
    for (i, o) in stream.iter().enumerate() {
        match o {
            Obs::In { reg: r, value, args } if *r == reg => {
                open = None;
                if !args.contains(value) {
                    out.push((i, *value, false));
                    open = Some(out.len() - 1);
                }
            }
            Obs::Gen { reg: r, .. } if *r == reg => {
                if let Some(k) = open {
                    out[k].2 = true;
                }
            }
            Obs::End { reg: r } if *r == reg => open = None,
            _ => {}
        }
    }
    out
}

fn usage(insts: &[(usize, u64, bool)], slot: &Slot, upto: usize) -> u64 {
    insts.iter().filter(|(i, v, _)| *v == slot.value && *i >= slot.since && *i < upto).count() as u64
}

fn support(insts: &[(usize, u64, bool)], slot: &Slot) -> u64 {
    insts.iter().filter(|(i, v, g)| *v == slot.value && *i >= slot.since && *g).count() as u64
}

/// Election for `reg` after the whole stream, computed from scratch.
pub fn elect(cfg: &RegPredConfig, stream: &[Obs], reg: RegisterId) -> Election {
    if cfg.force_unresolved {
        return Election::Unresolved;
    }
    let last_epoch = stream.iter().rposition(|o| *o == Obs::Epoch).map(|i| i + 1).unwrap_or(0);
    // The latest argument match since the last epoch sticks.
    for o in stream[last_epoch..].iter().rev() {
        if let Obs::In { reg: r, value, args } = o {
            if *r == reg {
                if let Some(k) = args.iter().position(|a| a == value) {
                    return Election::ReadyDyn(k as u8 + 1);
                }
            }
        }
    }
    // Replay slot membership for every register; the shared pool means the
    // other registers matter for capacity.
    let pool_cap = cfg.in_entries.max(RegisterId::COUNT) - RegisterId::COUNT;
    let mut pool_used = 0usize;
    let mut slots: Vec<Vec<Slot>> = (0..RegisterId::COUNT).map(|_| Vec::new()).collect();
    let all: Vec<Vec<(usize, u64, bool)>> = RegisterId::ALL.iter().map(|&r| instances(stream, r)).collect();
    for (i, o) in stream.iter().enumerate() {
        let Obs::In { reg: r, value, args } = o else { continue };
        if args.contains(value) {
            continue;
        }
        let list = &mut slots[r.index()];
        if list.iter().any(|s| s.value == *value) {
            continue;
        }
        if list.is_empty() {
            list.push(Slot { value: *value, since: i });
        } else if list.len() < cfg.max_in_per_reg && pool_used < pool_cap {
            pool_used += 1;
            list.push(Slot { value: *value, since: i });
        } else {
            let insts = &all[r.index()];
            let victim = (0..list.len()).min_by_key(|&k| (usage(insts, &list[k], i), k)).unwrap();
            list[victim] = Slot { value: *value, since: i };
        }
    }

    let insts = &all[reg.index()];
    let total = insts.len() as u64;
    let list = &slots[reg.index()];
    let mut best: Option<(u64, u64, usize)> = None;
    for (k, s) in list.iter().enumerate() {
        let sup = support(insts, s);
        let use_ = usage(insts, s, stream.len());
        if sup * cfg.threshold_den <= cfg.threshold_num * total {
            continue;
        }
        let better = match best {
            None => true,
            Some((bs, bu, _)) => (sup, use_) > (bs, bu),
        };
        if better {
            best = Some((sup, use_, k));
        }
    }
    best.map(|(_, _, k)| Election::Ready(list[k].value)).unwrap_or(Election::Unresolved)
}
