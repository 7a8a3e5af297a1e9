use std::path::{Path, PathBuf};

use blockdbg_analytics::procedure::INSPECTION_KINDS;
use blockdbg_analytics::{assess_procedure, assess_procedure_with, AssessConfig};
use blockdbg_core::log::{self, ManualClock};
use blockdbg_core::replay::replay;
use blockdbg_core::{parse_program, EventKind, Group, LogEvent, SessionLog, SessionOptions};
use proptest::prelude::*;
use serde_json::json;

fn fixture(name: &str) -> SessionLog {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let out = log::read(&path, true).unwrap();
    assert!(out.diagnostics.is_empty());
    out.log
}

fn corpus_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../programs").join(name)
}

#[test]
fn full_procedure_meets_all_three_steps() {
    let a = assess_procedure(&fixture("procedure_full.dbglog.jsonl"));
    assert_eq!(a.subject_id, "f1");
    assert!(a.step3_breakpoint_inserted && a.step4_intention && a.step5_bug_fixed);
    assert_eq!(a.evidence.step3, [2]);
    assert_eq!(a.evidence.step4, [4, 5]);
    assert_eq!(a.evidence.step5, [7, 8]);
}

#[test]
fn breakpoint_without_a_run_meets_step_three_only() {
    let a = assess_procedure(&fixture("procedure_breakpoint_only.dbglog.jsonl"));
    assert!(a.step3_breakpoint_inserted);
    assert!(!a.step4_intention);
    assert!(!a.step5_bug_fixed);
    // the rejected attempt on an unknown block counts as an insertion attempt
    assert_eq!(a.evidence.step3, [2, 3]);
    assert!(a.evidence.step4.is_empty() && a.evidence.step5.is_empty());
}

#[test]
fn edit_without_rerun_and_inspection_after_continue_do_not_count() {
    let a = assess_procedure(&fixture("procedure_edit_without_rerun.dbglog.jsonl"));
    assert!(a.step3_breakpoint_inserted);
    assert!(!a.step4_intention);
    assert!(!a.step5_bug_fixed);
}

#[test]
fn inspection_window_is_configurable() {
    let log = fixture("procedure_full.dbglog.jsonl");
    let narrow = assess_procedure_with(&log, &AssessConfig { inspection_window: Some(0) });
    assert!(!narrow.step4_intention);
    let one = assess_procedure_with(&log, &AssessConfig { inspection_window: Some(1) });
    assert!(one.step4_intention);
    assert_eq!(one.evidence.step4, [4, 5]);
}

#[test]
fn assessment_is_stable_across_replay() {
    let text = std::fs::read_to_string(corpus_path("bug_off_by_one_loop.blk.json")).unwrap();
    let p = parse_program(&text).unwrap();
    let opts = SessionOptions { subject_id: "r1".into(), group: Group::A, ..Default::default() };
    let mut s = blockdbg_core::DebugSession::start_with(p.clone(), opts, Box::new(ManualClock::new()), None).unwrap();
    s.set_breakpoint(&"f_mul".into()).unwrap();
    s.continue_().unwrap();
    s.add_watch("k").unwrap();
    s.eval_watches().unwrap();
    s.step_over().unwrap();
    s.continue_().unwrap();
    s.end().unwrap();
    let original = s.session_log();
    let report = replay(&original, &p).unwrap();
    assert!(report.reproduced);
    let a = assess_procedure(&original);
    assert!(a.step3_breakpoint_inserted && a.step4_intention);
    assert_eq!(assess_procedure(&report.replayed), a);
    assert_eq!(assess_procedure(&replay(&report.replayed, &p).unwrap().replayed), a);
}

fn kinds() -> impl Strategy<Value = Vec<(EventKind, bool)>> {
    let k = prop::sample::select(vec![
        EventKind::BreakpointSet,
        EventKind::BreakpointHit,
        EventKind::Continue,
        EventKind::RunEnd,
        EventKind::RunStart,
        EventKind::ProgramEdit,
        EventKind::WatchEval,
        EventKind::VariableInspect,
        EventKind::StepIn,
        EventKind::StepOver,
        EventKind::StepOut,
        EventKind::Output,
        EventKind::Pause,
    ]);
    prop::collection::vec((k, prop::bool::weighted(0.85)), 0..40)
}

fn synthetic_log(kinds: &[(EventKind, bool)]) -> SessionLog {
    let mut events = vec![EventKind::SessionStart];
    events.extend(kinds.iter().map(|(k, _)| *k));
    events.push(EventKind::SessionEnd);
    let accepted = std::iter::once(true).chain(kinds.iter().map(|(_, a)| *a)).chain(std::iter::once(true));
    SessionLog::new(
        events
            .into_iter()
            .zip(accepted)
            .enumerate()
            .map(|(i, (kind, ok))| LogEvent {
                timestamp: i as u64,
                session_id: "s".into(),
                subject_id: "x".into(),
                group: Group::A,
                kind,
                payload: if ok { json!({}) } else { json!({ "accepted": false }) },
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn true_flags_cite_evidence_of_the_right_kinds(k in kinds(), window in prop::option::of(0usize..6)) {
        let log = synthetic_log(&k);
        let a = assess_procedure_with(&log, &AssessConfig { inspection_window: window });
        let ev = &log.events;
        prop_assert_eq!(a.step3_breakpoint_inserted, !a.evidence.step3.is_empty());
        prop_assert_eq!(a.step4_intention, !a.evidence.step4.is_empty());
        prop_assert_eq!(a.step5_bug_fixed, !a.evidence.step5.is_empty());
        prop_assert!(a.evidence.step3.iter().all(|&i| ev[i].kind == EventKind::BreakpointSet));
        for pair in a.evidence.step4.chunks(2) {
            prop_assert_eq!(ev[pair[0]].kind, EventKind::BreakpointHit);
            prop_assert!(INSPECTION_KINDS.contains(&ev[pair[1]].kind));
            prop_assert!(ev[pair[0] + 1..pair[1]].iter().all(|e| !matches!(e.kind, EventKind::Continue | EventKind::RunEnd)));
            if let Some(w) = window {
                prop_assert!(pair[1] - pair[0] <= w);
            }
        }
        for pair in a.evidence.step5.chunks(2) {
            prop_assert_eq!(ev[pair[0]].kind, EventKind::ProgramEdit);
            prop_assert_eq!(ev[pair[1]].kind, EventKind::RunStart);
            prop_assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn widening_the_window_never_loses_step_four(k in kinds(), w in 0usize..6) {
        let log = synthetic_log(&k);
        let narrow = assess_procedure_with(&log, &AssessConfig { inspection_window: Some(w) });
        let wide = assess_procedure_with(&log, &AssessConfig { inspection_window: Some(w + 1) });
        let unbounded = assess_procedure(&log);
        prop_assert!(!narrow.step4_intention || wide.step4_intention);
        prop_assert!(!wide.step4_intention || unbounded.step4_intention);
    }
}
