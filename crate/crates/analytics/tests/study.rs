use std::path::Path;

use blockdbg_analytics::report::AnalysisInput;
use blockdbg_analytics::synthetic::{study_logs, StudyPlan};
use blockdbg_analytics::{
    analyze, binarize, build_table, compare_raters, tally_usage, AnalyticsError, BinaryUsage, DebuggerFunction,
    UsageTally,
};
use blockdbg_core::log::ManualClock;
use blockdbg_core::replay::replay;
use blockdbg_core::{parse_program, DebugSession, EventKind, Group, LogEvent, Program, SessionLog, SessionOptions};
use proptest::prelude::*;
use serde_json::json;

fn program() -> Program {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../programs/bug_off_by_one_loop.blk.json");
    parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn corpus() -> Vec<SessionLog> {
    study_logs(&program(), &"f_mul".into(), &StudyPlan::published_margins()).unwrap()
}

fn log_of(kinds: &[EventKind]) -> SessionLog {
    let mut all = vec![EventKind::SessionStart];
    all.extend_from_slice(kinds);
    all.push(EventKind::SessionEnd);
    SessionLog::new(
        all.into_iter()
            .map(|kind| LogEvent {
                timestamp: 0,
                session_id: "s".into(),
                subject_id: "x".into(),
                group: Group::B,
                kind,
                payload: json!({}),
            })
            .collect(),
    )
}

#[test]
fn tally_examples() {
    let t = tally_usage(&log_of(&[EventKind::StepIn; 3]));
    assert_eq!(t.count(DebuggerFunction::StepIn), 3);
    assert_eq!(t.counts.values().sum::<u64>(), 3);
    assert_eq!(t.counts.len(), 6);
    assert!(tally_usage(&log_of(&[])).counts.values().all(|c| *c == 0));
    assert_eq!(t.group, Group::B);
}

#[test]
fn tally_of_scripted_engine_session() {
    let opts = SessionOptions { subject_id: "t1".into(), group: Group::A, ..Default::default() };
    let mut s = DebugSession::start_with(program(), opts, Box::new(ManualClock::new()), None).unwrap();
    s.set_breakpoint(&"f_mul".into()).unwrap();
    s.set_breakpoint(&"show".into()).unwrap();
    s.continue_().unwrap();
    // rejected attempts still count
    let _ = s.set_breakpoint(&"nowhere".into());
    s.end().unwrap();
    let t = tally_usage(&s.session_log());
    assert_eq!(t.subject_id, "t1");
    assert_eq!(t.count(DebuggerFunction::Breakpoint), 3);
    assert_eq!(t.count(DebuggerFunction::Continue), 1);
    for f in [DebuggerFunction::StepIn, DebuggerFunction::StepOver, DebuggerFunction::StepOut, DebuggerFunction::WatchExpression] {
        assert_eq!(t.count(f), 0);
    }
}

#[test]
fn synthetic_corpus_reproduces_published_tables() {
    let logs = corpus();
    assert_eq!(logs.len(), 20);
    for log in &logs {
        let report = replay(log, &program()).unwrap();
        assert!(report.reproduced, "{}: {:?}", log.subject_id().unwrap(), report.divergence);
    }
    let a = analyze(&AnalysisInput::new(logs)).unwrap();
    let step_in = a.table(DebuggerFunction::StepIn);
    assert_eq!(step_in.table, [[10, 5], [0, 5]]);
    assert_eq!(step_in.tests[0].p_value, 0.038_867_104);
    assert!(step_in.tests[0].significant);
    assert_eq!(step_in.notes, ["reference value 0.038867104 reproduced by chi_squared_yates"]);
    let cont = a.table(DebuggerFunction::Continue);
    assert_eq!(cont.table, [[0, 6], [10, 4]]);
    assert!(cont.notes[0].starts_with("reference value 0.055829295 not reproduced"));
    let plan = StudyPlan::published_margins();
    for t in &a.tables {
        assert_eq!(t.table[0], [plan.users(Group::A, t.function) as u64, plan.users(Group::B, t.function) as u64]);
    }
    let text = a.to_text();
    assert!(text.contains("0.038867104 *"));
    assert!(text.contains("note: reference value 0.055829295 not reproduced"));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let one = analyze(&AnalysisInput::new(corpus())).unwrap();
    let two = analyze(&AnalysisInput::new(corpus())).unwrap();
    assert_eq!(one.to_json(), two.to_json());
    assert_eq!(one.to_text(), two.to_text());
    let mut reversed = corpus();
    reversed.reverse();
    assert_eq!(analyze(&AnalysisInput::new(reversed)).unwrap().to_json(), one.to_json());
}

#[test]
fn roster_overrides_log_groups_and_must_match() {
    let plan = StudyPlan::published_margins();
    let mut input = AnalysisInput::new(corpus());
    input.roster = Some(plan.roster());
    assert!(analyze(&input).is_ok());
    let mut short = plan.roster();
    short.remove("b03");
    input.roster = Some(short);
    assert!(matches!(analyze(&input), Err(AnalyticsError::RosterMismatch(_))));
    let mut extra = plan.roster();
    extra.insert("z99".into(), Group::A);
    input.roster = Some(extra);
    assert!(matches!(analyze(&input), Err(AnalyticsError::RosterMismatch(_))));
}

#[test]
fn single_group_input_is_an_empty_group_error() {
    let only_a: Vec<_> = corpus().into_iter().filter(|l| l.group() == Group::A).collect();
    assert!(matches!(analyze(&AnalysisInput::new(only_a)), Err(AnalyticsError::EmptyGroup(Group::B))));
}

#[test]
fn identical_rater_tallies_diff_to_zero() {
    let tallies: Vec<UsageTally> = corpus().iter().map(tally_usage).collect();
    let mut input = AnalysisInput::new(corpus());
    input.raters = Some((tallies.clone(), tallies.clone()));
    let a = analyze(&input).unwrap();
    let d = a.rater_diff.unwrap();
    assert_eq!(d.cells.len(), 20 * 6);
    assert!(d.cells.iter().all(|c| c.delta == 0) && d.flips.is_empty());

    let mut b = tallies.clone();
    let subject = b.iter_mut().find(|t| t.subject_id == "b05").unwrap();
    subject.counts.insert(DebuggerFunction::StepIn, 0);
    let d = compare_raters(&tallies, &b).unwrap();
    assert_eq!(d.flips, vec![("b05".to_string(), DebuggerFunction::StepIn)]);
}

fn counts() -> impl Strategy<Value = [u64; 6]> {
    prop::array::uniform6(prop_oneof![3 => Just(0u64), 2 => 1u64..5])
}

fn usage(prefix: &str, g: Group, rows: &[[u64; 6]]) -> Vec<BinaryUsage> {
    rows.iter()
        .enumerate()
        .map(|(i, c)| {
            let mut t = UsageTally::new(format!("{prefix}{i}"), g);
            for (f, n) in DebuggerFunction::ALL.into_iter().zip(c) {
                t.counts.insert(f, *n);
            }
            binarize(&t)
        })
        .collect()
}

proptest! {
    #[test]
    fn raising_a_count_never_unsets_used(c in counts(), i in 0usize..6, extra in 1u64..4) {
        let mut t = UsageTally::new("s", Group::A);
        for (f, n) in DebuggerFunction::ALL.into_iter().zip(c) {
            t.counts.insert(f, n);
        }
        let before = binarize(&t);
        let f = DebuggerFunction::ALL[i];
        *t.counts.get_mut(&f).unwrap() += extra;
        let after = binarize(&t);
        for g in DebuggerFunction::ALL {
            prop_assert!(!before.used(g) || after.used(g));
            prop_assert_eq!(after.used(g), t.count(g) >= 1);
        }
    }

    #[test]
    fn tables_conserve_group_sizes(a in prop::collection::vec(counts(), 1..12), b in prop::collection::vec(counts(), 1..12)) {
        let (ua, ub) = (usage("a", Group::A, &a), usage("b", Group::B, &b));
        for f in DebuggerFunction::ALL {
            let t = build_table(&ua, &ub, f).unwrap();
            prop_assert_eq!(t.column_totals(), [a.len() as u64, b.len() as u64]);
        }
    }
}

