use nicsim::trace::{
    characterize, decode_trace, encode_trace, generate_trace, read_trace, read_trace_text, validate_trace, write_trace,
    write_trace_text, HashChainPcs, MarkerKind, SyntheticWorkloadSpec, TreeWalkPcs, ViolationKind, WorkloadKind,
};
use nicsim::{OpClass, RequestMarker, Trace, TraceError, TraceEvent, TraceRecord};
use proptest::prelude::*;

fn spec(kind: WorkloadKind, requests: u64) -> SyntheticWorkloadSpec {
    SyntheticWorkloadSpec { kind, request_count: requests, population: 2000, ..Default::default() }
}

fn lookup_records(trace: &Trace) -> Vec<&TraceRecord> {
    trace
        .records()
        .filter(|r| (HashChainPcs::BASE_LOAD..=HashChainPcs::EXIT).contains(&r.pc))
        .collect()
}

#[test]
fn unit_chain_single_request_has_one_of_each() {
    let s = SyntheticWorkloadSpec { chain_p: 1.0, population: 1, buckets: 1, request_count: 1, ..Default::default() };
    let t = generate_trace(&s, 3).unwrap();
    let recs = lookup_records(&t);
    let count = |pc| recs.iter().filter(|r| r.pc == pc).count();
    assert_eq!(count(HashChainPcs::BASE_LOAD), 1);
    assert_eq!(count(HashChainPcs::BUCKET_LOAD), 1);
    assert_eq!(count(HashChainPcs::TAG_LOAD), 1);
    assert_eq!(count(HashChainPcs::NEXT_LOAD), 0);
    assert_eq!(count(HashChainPcs::TAG_CMP), 1);
    let exits: Vec<_> = recs.iter().filter(|r| r.pc == HashChainPcs::EXIT_BRANCH).collect();
    assert_eq!(exits.len(), 1);
    assert!(exits[0].branch_taken);
    assert_eq!(recs.iter().filter(|r| r.opclass == OpClass::Load).count(), 3);
}

#[test]
fn single_bucket_collapses_bucket_loads() {
    let s = SyntheticWorkloadSpec { population: 1, buckets: 1, request_count: 200, ..Default::default() };
    let t = generate_trace(&s, 11).unwrap();
    let prof = characterize(&t);
    assert_eq!(prof[&HashChainPcs::BUCKET_LOAD].accesses, 200);
    assert_eq!(prof[&HashChainPcs::BUCKET_LOAD].unique_blocks, 1);
}

#[test]
fn base_load_is_one_block_while_chain_loads_spread() {
    let s = SyntheticWorkloadSpec { request_count: 20_000, zipf: 0.5, ..Default::default() };
    let t = generate_trace(&s, 1).unwrap();
    let prof = characterize(&t);
    let base = &prof[&HashChainPcs::BASE_LOAD];
    assert_eq!(base.unique_blocks, 1);
    let hottest = [HashChainPcs::BUCKET_LOAD, HashChainPcs::NEXT_LOAD, HashChainPcs::TAG_LOAD]
        .iter()
        .map(|pc| prof[pc].unique_blocks)
        .max()
        .unwrap();
    assert!(hottest >= 1000 * base.unique_blocks, "hottest chain pc touches {hottest} blocks");
}

#[test]
fn generator_is_deterministic_per_seed() {
    let s = spec(WorkloadKind::HashChain, 300);
    assert_eq!(generate_trace(&s, 9).unwrap(), generate_trace(&s, 9).unwrap());
    assert_ne!(generate_trace(&s, 9).unwrap(), generate_trace(&s, 10).unwrap());
}

#[test]
fn generator_output_validates_clean() {
    for kind in [WorkloadKind::HashChain, WorkloadKind::TreeWalk] {
        let t = generate_trace(&spec(kind, 500), 5).unwrap();
        let rep = validate_trace(&t);
        assert!(rep.is_clean(), "{kind:?}: {:?}", rep.violations.first());
        assert_eq!(rep.requests, 500);
        assert_eq!(t.segments().unwrap().len(), 500);
    }
}

#[test]
fn tree_walk_visits_every_level() {
    let s = SyntheticWorkloadSpec { kind: WorkloadKind::TreeWalk, fanout: 16, population: 4096, request_count: 10, ..Default::default() };
    let t = generate_trace(&s, 2).unwrap();
    // 16^3 = 4096 keys need three levels.
    let child = t.records().filter(|r| r.pc == TreeWalkPcs::CHILD_LOAD).count();
    assert_eq!(child, 30);
    let taken = t.records().filter(|r| r.pc == TreeWalkPcs::DESCEND && r.branch_taken).count();
    assert_eq!(taken, 20);
}

#[test]
fn empty_trace_round_trips() {
    let t = Trace::default();
    let bytes = encode_trace(&t);
    let back = decode_trace(&bytes).unwrap();
    assert!(back.is_empty());
    assert_eq!(back.records().count(), 0);
}

#[test]
fn binary_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let t = generate_trace(&spec(WorkloadKind::HashChain, 100), 7).unwrap();
    let p = dir.path().join("t.bin");
    write_trace(&t, &p).unwrap();
    let back = read_trace(&p).unwrap();
    assert_eq!(back, t);
    let q = dir.path().join("u.bin");
    write_trace(&back, &q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn text_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = generate_trace(&spec(WorkloadKind::TreeWalk, 40), 7).unwrap();
    let p = dir.path().join("t.txt");
    write_trace_text(&t, &p).unwrap();
    assert_eq!(read_trace_text(&p).unwrap(), t);
}

fn corrupt_flags(bytes: &mut [u8], event: usize, clear: u8) {
    let header = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    bytes[header + event * nicsim::trace::RECORD_BYTES + 10] &= !clear;
}

#[test]
fn load_without_address_fails_at_its_index() {
    let t = generate_trace(&spec(WorkloadKind::HashChain, 3), 1).unwrap();
    let idx = t
        .events
        .iter()
        .position(|e| matches!(e, TraceEvent::Record(r) if r.pc == HashChainPcs::BUCKET_LOAD))
        .unwrap();
    let mut bytes = encode_trace(&t);
    corrupt_flags(&mut bytes, idx, 1);
    match decode_trace(&bytes) {
        Err(TraceError::Malformed { index, .. }) => assert_eq!(index, idx as u64),
        other => panic!("expected malformed, got {other:?}"),
    }
}

#[test]
fn truncated_or_headerless_input_is_rejected() {
    let t = generate_trace(&spec(WorkloadKind::HashChain, 3), 1).unwrap();
    let bytes = encode_trace(&t);
    assert!(matches!(decode_trace(&bytes[..bytes.len() - 5]), Err(TraceError::Truncated { .. })));
    assert!(matches!(decode_trace(b"garbage\n"), Err(TraceError::BadHeader { .. })));
}

#[test]
fn one_corrupted_address_gives_one_violation() {
    let mut t = generate_trace(&spec(WorkloadKind::HashChain, 50), 4).unwrap();
    let idx = t
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e, TraceEvent::Record(r) if r.pc == HashChainPcs::TAG_LOAD))
        .nth(17)
        .unwrap()
        .0;
    if let TraceEvent::Record(r) = &mut t.events[idx] {
        r.eff_addr = Some(r.eff_addr.unwrap() ^ 0x40);
    }
    let rep = validate_trace(&t);
    assert_eq!(rep.violations.len(), 1);
    assert_eq!(rep.violations[0].index, idx);
    assert!(matches!(rep.violations[0].kind, ViolationKind::AddressMismatch { .. }));
}

#[test]
fn double_begin_is_one_nesting_violation() {
    let t = Trace::new(vec![
        TraceEvent::Marker(RequestMarker::begin(0, 1)),
        TraceEvent::Record(TraceRecord::branch(0x10, 0x20, false)),
        TraceEvent::Marker(RequestMarker::begin(1, 2)),
        TraceEvent::Marker(RequestMarker::end(1)),
    ]);
    let rep = validate_trace(&t);
    assert_eq!(rep.violations.len(), 1);
    assert_eq!(rep.violations[0].index, 2);
    assert!(matches!(rep.violations[0].kind, ViolationKind::Nesting(_)));
}

#[test]
fn segments_report_unterminated_request() {
    let t = Trace::new(vec![TraceEvent::Marker(RequestMarker::begin(4, 0))]);
    assert_eq!(t.segments(), Err(4));
    let m = RequestMarker::end(4);
    assert_eq!(m.kind, MarkerKind::ReqEnd);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_generated_trace_round_trips(seed in 0u64..1000, tree in any::<bool>(), reqs in 1u64..60, p in 0.05f64..1.0) {
        let kind = if tree { WorkloadKind::TreeWalk } else { WorkloadKind::HashChain };
        let s = SyntheticWorkloadSpec { kind, request_count: reqs, chain_p: p, population: 500, ..Default::default() };
        let t = generate_trace(&s, seed).unwrap();
        let bytes = encode_trace(&t);
        let back = decode_trace(&bytes).unwrap();
        prop_assert_eq!(encode_trace(&back), bytes);
        prop_assert!(validate_trace(&back).is_clean());
    }
}
