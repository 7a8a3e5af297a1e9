//! Re-drives a fresh debug session from a recorded log and checks that the
//! observable behaviour (breakpoint hits, pauses, output) comes out the same.

use std::fmt;

use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::debug::{Command, DebugSession, SessionOptions, SessionStatus};
use crate::error::DebugError;
use crate::log::{EventKind, LogEvent, ManualClock, SessionLog};
use crate::program::{program_from_json, BlockId, Edit, Program};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("program hash mismatch: log recorded {logged}, program is {actual}")]
    HashMismatch { logged: String, actual: String },
    #[error("log has no program_load event")]
    MissingProgramLoad,
    #[error("log event {index} cannot be replayed: {message}")]
    Unreplayable { index: usize, message: String },
    #[error(transparent)]
    Debug(#[from] DebugError),
}

/// One observable event, stripped of timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Observed {
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Observed {
    fn from_event(e: &LogEvent) -> Option<Self> {
        matches!(e.kind, EventKind::BreakpointHit | EventKind::Pause | EventKind::Output).then(|| Observed {
            kind: e.kind,
            block: e.block().map(str::to_owned),
            text: e.payload_str("text").map(str::to_owned),
        })
    }
}

impl fmt::Display for Observed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(b) = &self.block {
            write!(f, " at {b}")?;
        }
        if let Some(t) = &self.text {
            write!(f, " {t:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Position within the observable-event sequence.
    pub position: usize,
    /// Index of the differing event in the recorded log, if it has one.
    pub log_index: Option<usize>,
    pub expected: Option<Observed>,
    pub actual: Option<Observed>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |o: &Option<Observed>| o.as_ref().map_or("nothing".to_string(), ToString::to_string);
        write!(f, "observable event #{}", self.position + 1)?;
        if let Some(i) = self.log_index {
            write!(f, " (log line {})", i + 1)?;
        }
        write!(f, ": logged {}, replay produced {}", show(&self.expected), show(&self.actual))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub reproduced: bool,
    pub compared: usize,
    pub divergence: Option<Divergence>,
    /// The log the replayed session produced.
    #[serde(skip)]
    pub replayed: SessionLog,
}

fn block_arg(e: &LogEvent, index: usize) -> Result<BlockId, ReplayError> {
    e.block()
        .map(BlockId::new)
        .ok_or_else(|| ReplayError::Unreplayable { index, message: format!("{} without a block", e.kind) })
}

/// Replays `log` against `program`. Timestamps are ignored.
pub fn replay(log: &SessionLog, program: &Program) -> Result<ReplayReport, ReplayError> {
    let load_index = log
        .events
        .iter()
        .position(|e| e.kind == EventKind::ProgramLoad)
        .ok_or(ReplayError::MissingProgramLoad)?;
    let logged = log.events[load_index].payload_str("hash").unwrap_or_default().to_owned();
    let actual = program.content_hash();
    if logged != actual {
        return Err(ReplayError::HashMismatch { logged, actual });
    }
    let first = &log.events[0];
    let options = SessionOptions {
        session_id: first.session_id.clone(),
        subject_id: first.subject_id.clone(),
        group: first.group,
        fuel: first.payload.get("fuel").and_then(Json::as_u64).unwrap_or(SessionOptions::default().fuel),
        ..SessionOptions::default()
    };
    let mut s = DebugSession::open(program.clone(), options, Box::new(ManualClock::new()), None)?;

    for (index, e) in log.events.iter().enumerate().skip(load_index + 1) {
        if !is_command(e.kind) {
            continue;
        }
        catch_up(&mut s, e)?;
        // engine rejections are part of the record and are reproduced as-is
        let _ = match e.kind {
            EventKind::RunStart => {
                let pause = e.payload.get("pause_on_entry").and_then(Json::as_bool).unwrap_or(true);
                s.begin_launch(pause)
            }
            EventKind::BreakpointSet => s.set_breakpoint(&block_arg(e, index)?),
            EventKind::BreakpointClear => s.clear_breakpoint(&block_arg(e, index)?),
            EventKind::Continue => s.begin(Command::Continue),
            EventKind::StepIn => s.begin(Command::StepIn),
            EventKind::StepOver => s.begin(Command::StepOver),
            EventKind::StepOut => s.begin(Command::StepOut),
            EventKind::WatchAdd => {
                let text = e.payload_str("text").unwrap_or_default();
                s.add_watch(text).map(drop)
            }
            EventKind::WatchRemove => {
                let id = e.payload.get("id").and_then(Json::as_u64).unwrap_or(0);
                s.remove_watch(id as u32)
            }
            EventKind::WatchEval => s.eval_watches().map(drop),
            EventKind::VariableInspect => s.inspect_variables().map(drop),
            EventKind::ProgramEdit => {
                let edit: Edit = serde_json::from_value(e.payload.get("edit").cloned().unwrap_or(Json::Null))
                    .map_err(|err| ReplayError::Unreplayable { index, message: err.to_string() })?;
                s.edit_program(&edit)
            }
            EventKind::ProgramLoad => {
                let doc = e.payload.get("program").ok_or_else(|| ReplayError::Unreplayable {
                    index,
                    message: "program_load without an embedded program".into(),
                })?;
                let p = program_from_json(doc)
                    .map_err(|err| ReplayError::Unreplayable { index, message: err.to_string() })?;
                s.load_program(p)
            }
            EventKind::SessionEnd => s.end(),
            _ => Ok(()),
        };
    }
    if s.status() == SessionStatus::Running {
        s.run_to_stop()?;
    }

    let expected: Vec<(usize, Observed)> =
        log.events.iter().enumerate().filter_map(|(i, e)| Observed::from_event(e).map(|o| (i, o))).collect();
    let produced: Vec<Observed> = s.events().iter().filter_map(Observed::from_event).collect();
    let divergence = (0..expected.len().max(produced.len())).find_map(|i| {
        let exp = expected.get(i);
        let act = produced.get(i);
        (exp.map(|(_, o)| o) != act).then(|| Divergence {
            position: i,
            log_index: exp.map(|(li, _)| *li),
            expected: exp.map(|(_, o)| o.clone()),
            actual: act.cloned(),
        })
    });
    Ok(ReplayReport {
        reproduced: divergence.is_none(),
        compared: expected.len(),
        divergence,
        replayed: s.session_log(),
    })
}

fn is_command(kind: EventKind) -> bool {
    !matches!(
        kind,
        EventKind::SessionStart
            | EventKind::BreakpointHit
            | EventKind::Pause
            | EventKind::Resume
            | EventKind::Output
            | EventKind::RunEnd
    )
}

/// A command may have arrived while the recorded session was running; run
/// the replayed session up to the tick at which it was logged.
fn catch_up(s: &mut DebugSession, e: &LogEvent) -> Result<(), ReplayError> {
    if s.status() != SessionStatus::Running {
        return Ok(());
    }
    match e.payload.get("tick").and_then(Json::as_u64) {
        Some(tick) => {
            let now = s.machine().tick_count;
            if tick > now {
                s.run_for(tick - now)?;
            }
        }
        None => s.run_to_stop()?,
    }
    Ok(())
}
