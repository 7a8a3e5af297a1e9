mod common;

use blockdbg_core::log::{self, Appender, EventKind, JsonlSink, LogEvent, ManualClock};
use blockdbg_core::replay::{replay, ReplayError};
use blockdbg_core::{Command, DebugError, DebugSession, Edit, Group, Program, SessionLog, SessionOptions, SessionStatus};
use proptest::prelude::*;
use serde_json::json;

fn options() -> SessionOptions {
    SessionOptions { session_id: "s-7".into(), subject_id: "p07".into(), group: Group::B, ..Default::default() }
}

/// A typical learner session on the off-by-one program: breakpoint, run,
/// inspect, step, fix, re-run.
fn scripted_session(dir: &std::path::Path) -> (Program, std::path::PathBuf, SessionLog) {
    let p = common::corpus_program("bug_off_by_one_loop.blk.json");
    let path = dir.join(format!("p07{}", log::FILE_EXTENSION));
    let clock = ManualClock::new();
    let sink = JsonlSink::open(&path).unwrap();
    let mut s = DebugSession::start_with(p.clone(), options(), Box::new(clock.clone()), Some(Box::new(sink))).unwrap();
    clock.advance(1200);
    s.set_breakpoint(&"f_mul".into()).unwrap();
    s.add_watch("k").unwrap();
    s.continue_().unwrap();
    s.eval_watches().unwrap();
    clock.advance(800);
    s.step_over().unwrap();
    s.inspect_variables().unwrap();
    s.continue_().unwrap();
    s.clear_breakpoint(&"f_mul".into()).unwrap();
    s.continue_().unwrap();
    assert_eq!(s.status(), SessionStatus::Terminated);
    let fix = Edit::ReplaceBlock {
        target: "f_loop".into(),
        block: blockdbg_core::program::block_from_json(
            &json!({"id":"f_loop","op":"repeat_until",
                    "args":{"condition":{"op":"gt","args":[{"op":"var","name":"k"},{"op":"param","name":"upto"}]}},
                    "substacks":[[
                        {"id":"f_mul","op":"set_var","args":{"var":"product","value":{"op":"mul","args":[{"op":"var","name":"product"},{"op":"var","name":"k"}]}}},
                        {"id":"f_inc","op":"change_var","args":{"var":"k","by":1}}]]}),
            "$",
        )
        .unwrap(),
    };
    clock.advance(5000);
    s.edit_program(&fix).unwrap();
    s.launch(false).unwrap();
    assert_eq!(s.machine().output, ["5! = 120"]);
    s.end().unwrap();
    (p, path, s.session_log())
}

#[test]
fn file_log_matches_memory_and_is_closed() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path, mem) = scripted_session(dir.path());
    let out = log::read(&path, true).unwrap();
    assert!(out.diagnostics.is_empty());
    assert_eq!(out.log.events, mem.events);
    assert!(out.log.is_closed());
    assert_eq!(out.log.session_id(), Some("s-7"));
    assert_eq!(out.log.group(), Group::B);
    let ts: Vec<u64> = out.log.events.iter().map(|e| e.timestamp).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*ts.last().unwrap(), 7000);
}

#[test]
fn engine_log_replays_without_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let (p, path, _) = scripted_session(dir.path());
    let log = log::read(&path, true).unwrap().log;
    let report = replay(&log, &p).unwrap();
    assert!(report.reproduced, "{:?}", report.divergence);
    assert!(report.compared >= 6);
    let kinds = |l: &SessionLog| l.events.iter().map(|e| (e.kind, e.block().map(str::to_owned))).collect::<Vec<_>>();
    assert_eq!(kinds(&report.replayed), kinds(&log));
}

#[test]
fn replay_against_edited_program_is_a_hash_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (p, path, _) = scripted_session(dir.path());
    let log = log::read(&path, true).unwrap().log;
    let edited = blockdbg_core::program::apply_edit(&p, &Edit::DeleteBlock { target: "show".into() }).unwrap();
    assert!(matches!(replay(&log, &edited), Err(ReplayError::HashMismatch { .. })));
}

#[test]
fn forged_breakpoint_hit_is_a_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let (p, path, _) = scripted_session(dir.path());
    let mut log = log::read(&path, true).unwrap().log;
    let first_hit = log.events.iter().position(|e| e.kind == EventKind::BreakpointHit).unwrap();
    let mut forged = log.events[first_hit].clone();
    forged.payload["block"] = json!("show");
    log.events.insert(first_hit + 1, forged);
    let report = replay(&log, &p).unwrap();
    assert!(!report.reproduced);
    let d = report.divergence.unwrap();
    assert_eq!(d.log_index, Some(first_hit + 1));
    assert_eq!(d.expected.as_ref().unwrap().block.as_deref(), Some("show"));
    assert!(d.to_string().contains("log line"));
}

#[test]
fn dropped_output_is_a_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let (p, path, _) = scripted_session(dir.path());
    let mut log = log::read(&path, true).unwrap().log;
    let out = log.events.iter().position(|e| e.kind == EventKind::Output).unwrap();
    log.events[out].payload["text"] = json!("5! = 120");
    let report = replay(&log, &p).unwrap();
    assert_eq!(report.divergence.unwrap().log_index, Some(out));
}

#[test]
fn missing_program_load_is_reported() {
    let log = SessionLog::new(vec![]);
    assert!(matches!(replay(&log, &Program::default()), Err(ReplayError::MissingProgramLoad)));
}

#[test]
fn commands_issued_while_running_replay_at_the_same_tick() {
    let p = common::corpus_program("two_counters.blk.json");
    let mut s = DebugSession::start_with(p.clone(), options(), Box::new(ManualClock::new()), None).unwrap();
    s.begin(Command::Continue).unwrap();
    s.run_for(37).unwrap();
    s.set_breakpoint(&"r_inc".into()).unwrap();
    s.run_for(1000).unwrap();
    assert_eq!(s.paused_location().unwrap().block.as_str(), "r_inc");
    s.add_watch("left - right").unwrap();
    s.eval_watches().unwrap();
    s.begin(Command::Continue).unwrap();
    s.run_for(1).unwrap();
    assert!(matches!(s.eval_watches(), Err(DebugError::NotPaused)));
    s.run_for(5).unwrap();
    s.end().unwrap();
    let report = replay(&s.session_log(), &p).unwrap();
    assert!(report.reproduced, "{:?}", report.divergence);
    assert_eq!(report.replayed.events.len(), s.events().len());
}

#[test]
fn rejected_commands_replay_as_rejections() {
    let p = common::corpus_program("sum_list.blk.json");
    let mut s = DebugSession::start_with(p.clone(), options(), Box::new(ManualClock::new()), None).unwrap();
    let _ = s.set_breakpoint(&"ghost".into());
    let _ = s.step_out();
    s.continue_().unwrap();
    let _ = s.continue_();
    let _ = s.edit_program(&Edit::DeleteBlock { target: "ghost".into() });
    s.end().unwrap();
    let log = s.session_log();
    let report = replay(&log, &p).unwrap();
    assert!(report.reproduced);
    let rejected = |l: &SessionLog| l.events.iter().filter(|e| e.payload.get("accepted") == Some(&json!(false))).count();
    assert_eq!(rejected(&log), 4);
    assert_eq!(rejected(&report.replayed), 4);
}

fn event() -> impl Strategy<Value = LogEvent> {
    let kinds = vec![
        EventKind::SessionStart,
        EventKind::BreakpointSet,
        EventKind::BreakpointHit,
        EventKind::StepIn,
        EventKind::WatchEval,
        EventKind::Output,
        EventKind::SessionEnd,
    ];
    (0u64..50, prop::sample::select(kinds), "[a-z0-9 \"\\\\é]{0,8}", any::<i32>()).prop_map(|(dt, kind, text, n)| LogEvent {
        timestamp: dt,
        session_id: "s".into(),
        subject_id: "subj".into(),
        group: Group::A,
        kind,
        payload: json!({ "text": text, "n": n, "nested": { "list": [1, "two", null] } }),
    })
}

#[derive(Debug, Clone)]
enum Action {
    Cmd(Command),
    SetBp(prop::sample::Index),
    ClearBp(prop::sample::Index),
    Watch,
    Eval,
    Inspect,
    Relaunch(bool),
    Slice(u64),
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        4 => prop::sample::select(vec![Command::Continue, Command::StepIn, Command::StepOver, Command::StepOut]).prop_map(Action::Cmd),
        2 => any::<prop::sample::Index>().prop_map(Action::SetBp),
        1 => any::<prop::sample::Index>().prop_map(Action::ClearBp),
        1 => Just(Action::Watch),
        1 => Just(Action::Eval),
        1 => Just(Action::Inspect),
        1 => any::<bool>().prop_map(Action::Relaunch),
        2 => (0u64..30).prop_map(Action::Slice),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn write_read_round_trip(mut events in prop::collection::vec(event(), 0..40)) {
        let mut t = 0;
        for e in &mut events {
            t += e.timestamp;
            e.timestamp = t;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.dbglog.jsonl");
        let mut app = Appender::new(JsonlSink::open(&path).unwrap());
        for e in &events {
            app.append(e).unwrap();
        }
        let back = log::read(&path, true).unwrap();
        prop_assert_eq!(back.log.events, events);
    }

    #[test]
    fn engine_logs_always_replay(p in common::program(), actions in prop::collection::vec(action(), 0..25)) {
        let opts = SessionOptions { fuel: 200, ..options() };
        let mut s = DebugSession::start_with(p.clone(), opts, Box::new(ManualClock::new()), None).unwrap();
        let ids: Vec<_> = p.blocks().iter().map(|b| b.id.clone()).collect();
        for a in actions {
            let _ = match a {
                Action::Cmd(c) => s.begin(c),
                Action::SetBp(i) => s.set_breakpoint(&ids[i.index(ids.len())]),
                Action::ClearBp(i) => s.clear_breakpoint(&ids[i.index(ids.len())]),
                Action::Watch => s.add_watch("x + length of list l").map(drop),
                Action::Eval => s.eval_watches().map(drop),
                Action::Inspect => s.inspect_variables().map(drop),
                Action::Relaunch(pause) => s.begin_launch(pause),
                Action::Slice(n) => s.run_for(n).map(drop),
            };
            if s.machine().tick_count > 2000 {
                break;
            }
        }
        let _ = s.run_for(100);
        s.end().unwrap();
        let report = replay(&s.session_log(), &p).unwrap();
        prop_assert!(report.reproduced, "{:?}", report.divergence);
    }
}

#[test]
fn fuel_exhaustion_pause_replays_with_the_recorded_fuel() {
    let p = common::corpus_program("two_counters.blk.json");
    let opts = SessionOptions { fuel: 200, ..options() };
    let mut s = DebugSession::start_with(p.clone(), opts, Box::new(ManualClock::new()), None).unwrap();
    s.begin(Command::StepOver).unwrap();
    s.run_for(250).unwrap();
    assert_eq!(s.status(), SessionStatus::Paused);
    s.end().unwrap();
    let log = s.session_log();
    assert_eq!(log.events[0].payload["fuel"], 200);
    let report = replay(&log, &p).unwrap();
    assert!(report.reproduced, "{:?}", report.divergence);
}
