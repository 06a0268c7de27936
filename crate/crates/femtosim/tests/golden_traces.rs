//! Protocol conformance against golden trace files.
//!
//! Each procedure's step trace, executed through the event kernel from
//! t = 0 with every CAC decision admitting, must match its golden file
//! byte for byte — and must not depend on the run seed, which the
//! signaling path never consults. Set UPDATE_GOLDEN=1 to regenerate.

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use femtosim::fso::{execute_link_switch, FsoSwitchProfile, OpticalSwitchGuard};
use femtosim::handover::{
    default_scripts, full_participants, Advance, CacDecision, HandoverEngine, HandoverError,
    HandoverKind,
};
use femtosim::kernel::RunContext;
use femtosim::time::{SimDuration, SimTime};
use femtosim::trace::{session_lines, switch_lines};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Run one session start-to-finish through the kernel and export its lines.
fn kernel_session_lines(kind: HandoverKind, seed: u64, decision: CacDecision) -> Vec<String> {
    let mut engine =
        HandoverEngine::new(default_scripts(SimDuration::from_millis_f64(5.0).unwrap()));
    let mut ctx: RunContext<usize> = RunContext::new(seed);
    let (id, first) = engine
        .start_handover(kind, 1, full_participants(), ctx.clock())
        .unwrap();
    ctx.schedule(first.latency, first.step_index);
    let mut done = false;
    ctx.run_until(SimTime::from_micros(u64::MAX), |ctx, step| {
        let supplied = engine
            .decision_required(id, step)
            .unwrap()
            .then_some(decision);
        match engine.advance(id, step, ctx.clock(), supplied).unwrap() {
            Advance::Scheduled(next) => {
                ctx.schedule(next.latency, next.step_index);
            }
            Advance::Completed | Advance::Rejected => done = true,
        }
        Ok::<(), std::convert::Infallible>(())
    })
    .unwrap();
    assert!(done, "session must reach a terminal state");
    session_lines(engine.session(id).unwrap())
}

fn check_golden(name: &str, lines: &[String]) {
    let path = golden_path(name);
    let rendered = lines.join("\n") + "\n";
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &rendered).unwrap();
        return;
    }
    let golden = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(rendered, golden, "trace deviates from {}", path.display());
}

#[test]
fn f2m_trace_matches_golden_across_seeds() {
    let a = kernel_session_lines(HandoverKind::FemtoToMacro, 1, CacDecision::Admit);
    let b = kernel_session_lines(HandoverKind::FemtoToMacro, 999, CacDecision::Admit);
    assert_eq!(a, b, "the signaling path never consults the seed");
    assert_eq!(a.len(), 22);
    check_golden("f2m_complete.trace", &a);
}

#[test]
fn m2f_trace_matches_golden_across_seeds() {
    let a = kernel_session_lines(HandoverKind::MacroToFemto, 2, CacDecision::Admit);
    let b = kernel_session_lines(HandoverKind::MacroToFemto, 998, CacDecision::Admit);
    assert_eq!(a, b);
    assert_eq!(a.len(), 27);
    check_golden("m2f_complete.trace", &a);
}

#[test]
fn bh_m2m_trace_matches_golden_across_seeds() {
    let a = kernel_session_lines(HandoverKind::BackhaulMacroToMacro, 3, CacDecision::Admit);
    let b = kernel_session_lines(HandoverKind::BackhaulMacroToMacro, 997, CacDecision::Admit);
    assert_eq!(a, b);
    assert_eq!(a.len(), 31);
    check_golden("bh_m2m_complete.trace", &a);
}

#[test]
fn rejected_traces_match_goldens() {
    let f2m = kernel_session_lines(HandoverKind::FemtoToMacro, 5, CacDecision::Reject);
    assert_eq!(f2m.len(), 11);
    check_golden("f2m_rejected.trace", &f2m);
    let m2f = kernel_session_lines(HandoverKind::MacroToFemto, 5, CacDecision::Reject);
    assert_eq!(m2f.len(), 11);
    check_golden("m2f_rejected.trace", &m2f);
    let bh = kernel_session_lines(HandoverKind::BackhaulMacroToMacro, 5, CacDecision::Reject);
    assert_eq!(bh.len(), 16);
    check_golden("bh_m2m_rejected.trace", &bh);
}

#[test]
fn fso_switch_trace_matches_golden() {
    let outcome = execute_link_switch(
        0,
        1,
        0.0,
        1.0,
        OpticalSwitchGuard::default(),
        &FsoSwitchProfile::default_profile(),
    )
    .unwrap();
    let lines = switch_lines(&outcome);
    assert_eq!(lines.len(), 6);
    check_golden("fso_switch.trace", &lines);
}

#[test]
fn out_of_order_injection_always_raises_protocol_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDECAF);
    let kinds = [
        HandoverKind::FemtoToMacro,
        HandoverKind::MacroToFemto,
        HandoverKind::BackhaulMacroToMacro,
    ];
    let mut errors = 0usize;
    for _ in 0..1_000 {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let mut engine =
            HandoverEngine::new(default_scripts(SimDuration::from_millis_f64(5.0).unwrap()));
        let (id, first) = engine
            .start_handover(kind, 7, full_participants(), SimTime::ZERO)
            .unwrap();
        let len = engine.scripts().get(kind).len();
        // Deliver a valid prefix, then inject a step other than the expected.
        let prefix = rng.random_range(0..len.min(8));
        let mut next = first;
        for _ in 0..prefix {
            let supplied = engine
                .decision_required(id, next.step_index)
                .unwrap()
                .then_some(CacDecision::Admit);
            match engine
                .advance(id, next.step_index, SimTime::ZERO, supplied)
                .unwrap()
            {
                Advance::Scheduled(n) => next = n,
                _ => unreachable!("prefix stays short of terminal"),
            }
        }
        let expected = next.step_index;
        let mut wrong = rng.random_range(1..=len);
        if wrong == expected {
            wrong = if wrong == len { 1 } else { wrong + 1 };
        }
        match engine.advance(id, wrong, SimTime::ZERO, Some(CacDecision::Admit)) {
            Err(HandoverError::OutOfOrder {
                expected: e,
                received: r,
            }) => {
                assert_eq!(e, expected);
                assert_eq!(r, wrong);
                errors += 1;
            }
            other => panic!("expected a protocol error, got {other:?}"),
        }
    }
    assert_eq!(errors, 1_000, "every injection must raise a protocol error");
}
