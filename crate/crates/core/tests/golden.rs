use nicsim::critical::{CriticalConfig, RequiredState};
use nicsim::golden::{self, first_diff, NARRATED_PCS};
use nicsim::regpred::RegPredConfig;
use nicsim::RegisterId;

#[test]
fn walkthrough_matches_committed_dump() {
    let w = golden::check().unwrap_or_else(|d| panic!("{d}"));
    assert_eq!(w.regions.len(), 1);
    let r = &w.regions[0];
    assert_eq!(r.pcs(), NARRATED_PCS.to_vec());
    assert_eq!(r.required(RegisterId::Rdx).unwrap().state, RequiredState::ReadyDyn(1));
    assert_eq!(r.required(RegisterId::Rax).unwrap().state, RequiredState::Ready(0x6d2f40));
}

#[test]
fn strict_threshold_diverges_at_the_base_register() {
    let strict = RegPredConfig { threshold_den: 2, ..Default::default() };
    let Err(d) = golden::check_with(CriticalConfig::default(), strict) else { panic!("strict threshold matched the dump") };
    assert!(d.section.contains("Table III"), "{d}");
    assert!(d.expected.as_deref().unwrap().trim_start().starts_with("rax"), "{d}");
}

#[test]
fn clearing_on_epoch_empties_the_instruction_cache() {
    let crit = CriticalConfig { clear_on_epoch: true, ..Default::default() };
    let w = golden::walkthrough(crit, RegPredConfig::default());
    let snap: Vec<&str> = w.text.lines().skip_while(|l| *l != "== epoch 1 start").collect();
    let table: Vec<&str> = snap.iter().skip(3).take_while(|l| !l.starts_with("Table II")).copied().collect();
    assert!(table.is_empty(), "{table:?}");
    let d = first_diff(golden::EXPECTED, &w.text).unwrap();
    assert_eq!(d.section, "epoch 1 start / Table I: context instruction cache");
}

#[test]
fn diff_reports_line_and_section() {
    let a = "== s\nTable I: x\n  row 1\n  row 2\n";
    let b = "== s\nTable I: x\n  row 1\n  row 3\n";
    let d = first_diff(a, b).unwrap();
    assert_eq!(d.line, 4);
    assert_eq!(d.section, "s / Table I: x");
    assert_eq!(first_diff(a, a), None);
    let short = first_diff(a, "== s\n").unwrap();
    assert_eq!(short.actual, None);
}
