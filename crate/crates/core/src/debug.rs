//! Breakpoint debugger layered over the interpreter.
//!
//! Pauses always happen *before* a block executes, and the paused block is
//! the machine's next block. Every public operation records one log event
//! of its own kind (rejected attempts included) before returning; ticking
//! adds secondary `output`, `pause`, `breakpoint_hit` and `run_end` events.
//!
//! Resuming is split in two so a frontend can interleave commands with
//! execution: [`DebugSession::begin`] validates and logs the command, then
//! [`DebugSession::run_for`] advances a bounded number of ticks. The
//! blocking helpers ([`DebugSession::continue_`] and the `step_*` methods)
//! do both.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::error::{DebugError, LogError};
use crate::exprtext::parse_expr;
use crate::log::{Appender, Clock, EventKind, EventSink, Group, LogEvent, SessionLog, SystemClock};
use crate::error::ProgramError;
use crate::program::{apply_edit, has_errors, program_to_json, validate, BlockId, Edit, Expr, Program};
use crate::value::Value;
use crate::vm::{MachineState, VmEvent, DEFAULT_FUEL};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub block: BlockId,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatchExpression {
    pub id: u32,
    pub source_text: String,
    pub parsed: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseReason {
    Breakpoint,
    Step,
    EntryPause,
}

/// Where execution is paused: the block about to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauseInfo {
    pub thread: usize,
    pub block: BlockId,
    pub reason: PauseReason,
    pub stack_depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Paused,
    Running,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Continue,
    StepIn,
    StepOver,
    StepOut,
}

impl Command {
    fn kind(self) -> EventKind {
        match self {
            Command::Continue => EventKind::Continue,
            Command::StepIn => EventKind::StepIn,
            Command::StepOver => EventKind::StepOver,
            Command::StepOut => EventKind::StepOut,
        }
    }
}

/// A watch evaluation. `value` is `None` when the expression names
/// something that does not resolve at the pause point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchResult {
    pub id: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unresolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListEntry {
    /// 1-based, as the learner sees it.
    pub index: usize,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSnapshot {
    pub globals: BTreeMap<String, Value>,
    pub lists: BTreeMap<String, Vec<ListEntry>>,
    pub bindings: BTreeMap<String, Value>,
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub pause_on_entry: bool,
    /// Breakpoints placed before the first run (launch configuration).
    pub breakpoints: Vec<BlockId>,
    /// Tick budget for a single resume command.
    pub fuel: u64,
    pub session_id: String,
    pub subject_id: String,
    pub group: Group,
    /// Keep the id of every executed block (see [`DebugSession::trace`]).
    pub record_trace: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            pause_on_entry: true,
            breakpoints: Vec::new(),
            fuel: DEFAULT_FUEL,
            session_id: "session".into(),
            subject_id: "anonymous".into(),
            group: Group::Unspecified,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunMode {
    /// Launch without an entry pause; stops only at breakpoints.
    Launch,
    Continue,
    StepOver { thread: usize, depth: usize },
    StepIn { thread: usize, depth: usize },
    StepOut { thread: usize, depth: usize },
}

#[derive(Debug, Clone, Copy)]
struct ActiveRun {
    mode: RunMode,
    ticks: u64,
}

struct EventLog {
    session_id: String,
    subject_id: String,
    group: Group,
    clock: Box<dyn Clock>,
    appender: Option<Appender>,
    history: Vec<LogEvent>,
    drained: usize,
    last: u64,
}

impl EventLog {
    fn record(&mut self, kind: EventKind, payload: Json) -> Result<(), LogError> {
        // clamp so a coarse clock can never produce out-of-order events
        let timestamp = self.clock.elapsed_ms().max(self.last);
        let e = LogEvent {
            timestamp,
            session_id: self.session_id.clone(),
            subject_id: self.subject_id.clone(),
            group: self.group,
            kind,
            payload,
        };
        if let Some(app) = self.appender.as_mut() {
            app.append(&e)?;
        }
        self.last = timestamp;
        self.history.push(e);
        Ok(())
    }
}

pub struct DebugSession {
    program: Program,
    machine: MachineState,
    breakpoints: BTreeMap<BlockId, Breakpoint>,
    watches: Vec<WatchExpression>,
    next_watch_id: u32,
    status: SessionStatus,
    pause: Option<PauseInfo>,
    run: Option<ActiveRun>,
    /// A run has been launched and has not yet ended.
    run_open: bool,
    fuel: u64,
    log: EventLog,
    trace: Option<Vec<BlockId>>,
    ended: bool,
}

impl DebugSession {
    /// Starts a session with an in-memory log and wall-clock timestamps,
    /// then launches the program.
    pub fn start(program: Program, options: SessionOptions) -> Result<Self, DebugError> {
        Self::start_with(program, options, Box::new(SystemClock::new()), None)
    }

    /// Starts a session writing every event to `sink` as well as memory.
    pub fn start_with(
        program: Program,
        options: SessionOptions,
        clock: Box<dyn Clock>,
        sink: Option<Box<dyn EventSink>>,
    ) -> Result<Self, DebugError> {
        let pause_on_entry = options.pause_on_entry;
        let preset = options.breakpoints.clone();
        let mut s = Self::open(program, options, clock, sink)?;
        for id in preset {
            s.set_breakpoint_from(&id, "launch")?;
        }
        s.launch(pause_on_entry)?;
        Ok(s)
    }

    /// Creates a session without launching: logs `session_start` and
    /// `program_load` and leaves the session terminated.
    pub fn open(
        program: Program,
        options: SessionOptions,
        clock: Box<dyn Clock>,
        sink: Option<Box<dyn EventSink>>,
    ) -> Result<Self, DebugError> {
        let diags = validate(&program);
        if has_errors(&diags) {
            return Err(ProgramError::Invalid(diags).into());
        }
        let mut log = EventLog {
            session_id: options.session_id.clone(),
            subject_id: options.subject_id.clone(),
            group: options.group,
            clock,
            appender: sink.map(|s| Appender::new(BoxedSink(s))),
            history: Vec::new(),
            drained: 0,
            last: 0,
        };
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        log.record(EventKind::SessionStart, json!({ "started_at_unix_ms": started, "fuel": options.fuel.max(1) }))?;
        log.record(EventKind::ProgramLoad, json!({ "hash": program.content_hash() }))?;
        Ok(DebugSession {
            machine: MachineState::load(&Program::default()).expect("empty program loads"),
            program,
            breakpoints: BTreeMap::new(),
            watches: Vec::new(),
            next_watch_id: 1,
            status: SessionStatus::Terminated,
            pause: None,
            run: None,
            run_open: false,
            fuel: options.fuel.max(1),
            log,
            trace: options.record_trace.then(Vec::new),
            ended: false,
        })
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn machine(&self) -> &MachineState {
        &self.machine
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = &Breakpoint> {
        self.breakpoints.values()
    }

    pub fn breakpoint_ids(&self) -> BTreeSet<BlockId> {
        self.breakpoints.keys().cloned().collect()
    }

    pub fn watches(&self) -> &[WatchExpression] {
        &self.watches
    }

    /// Every event recorded so far.
    pub fn events(&self) -> &[LogEvent] {
        &self.log.history
    }

    pub fn session_log(&self) -> SessionLog {
        SessionLog::new(self.log.history.clone())
    }

    /// Events recorded since the previous call.
    pub fn drain_new_events(&mut self) -> Vec<LogEvent> {
        let new = self.log.history[self.log.drained..].to_vec();
        self.log.drained = self.log.history.len();
        new
    }

    /// Executed block ids, oldest first, when tracing is enabled.
    pub fn trace(&self) -> Option<&[BlockId]> {
        self.trace.as_deref()
    }

    /// Where execution is paused, if it is.
    pub fn paused_location(&self) -> Option<&PauseInfo> {
        self.pause.as_ref()
    }

    fn tick_count(&self) -> u64 {
        self.machine.tick_count
    }

    fn record(&mut self, kind: EventKind, mut payload: Json) -> Result<(), DebugError> {
        if let Json::Object(m) = &mut payload {
            m.entry("tick").or_insert(json!(self.machine.tick_count));
        }
        self.log.record(kind, payload)?;
        Ok(())
    }

    /// Logs a rejected attempt and hands back the error to return.
    fn reject(&mut self, kind: EventKind, mut payload: Json, err: DebugError) -> DebugError {
        if let Json::Object(m) = &mut payload {
            m.insert("accepted".into(), json!(false));
            m.insert("error".into(), json!(err.to_string()));
        }
        match self.record(kind, payload) {
            Ok(()) => err,
            Err(log_failure) => log_failure,
        }
    }

    // -- run control ------------------------------------------------------

    /// (Re)starts the program from its initial state. Any unfinished run is
    /// ended first.
    pub fn launch(&mut self, pause_on_entry: bool) -> Result<(), DebugError> {
        self.begin_launch(pause_on_entry)?;
        self.run_to_stop()
    }

    pub fn begin_launch(&mut self, pause_on_entry: bool) -> Result<(), DebugError> {
        if self.status == SessionStatus::Running {
            return Err(self.reject(EventKind::RunStart, json!({ "pause_on_entry": pause_on_entry }), DebugError::Running));
        }
        self.close_run("restarted")?;
        self.record(EventKind::RunStart, json!({ "pause_on_entry": pause_on_entry }))?;
        self.machine = MachineState::load(&self.program).map_err(|_| ProgramError::Invalid(validate(&self.program)))?;
        self.run_open = true;
        self.pause = None;
        if !self.machine.is_runnable() {
            return self.terminate();
        }
        if pause_on_entry {
            self.pause_here(PauseReason::EntryPause)
        } else {
            self.status = SessionStatus::Running;
            self.run = Some(ActiveRun { mode: RunMode::Launch, ticks: 0 });
            self.settle_run()
        }
    }

    /// Logs a resume command and, if it is allowed, marks the session
    /// running. Drive it with [`run_for`](Self::run_for).
    pub fn begin(&mut self, cmd: Command) -> Result<(), DebugError> {
        let kind = cmd.kind();
        let Some(pause) = self.pause.clone().filter(|_| self.status == SessionStatus::Paused) else {
            return Err(self.reject(kind, json!({}), DebugError::NotPaused));
        };
        let (thread, depth) = (pause.thread, pause.stack_depth);
        let mode = match cmd {
            Command::Continue => RunMode::Continue,
            Command::StepOver => RunMode::StepOver { thread, depth },
            Command::StepIn => RunMode::StepIn { thread, depth },
            Command::StepOut => {
                if depth <= 1 {
                    return Err(self.reject(kind, json!({ "block": pause.block }), DebugError::AtTopFrame));
                }
                RunMode::StepOut { thread, depth }
            }
        };
        self.record(kind, json!({ "block": pause.block }))?;
        self.pause = None;
        self.status = SessionStatus::Running;
        self.run = Some(ActiveRun { mode, ticks: 0 });
        self.settle_run()
    }

    pub fn continue_(&mut self) -> Result<(), DebugError> {
        self.begin(Command::Continue)?;
        self.run_to_stop()
    }

    pub fn step_over(&mut self) -> Result<(), DebugError> {
        self.begin(Command::StepOver)?;
        self.run_to_stop()
    }

    pub fn step_in(&mut self) -> Result<(), DebugError> {
        self.begin(Command::StepIn)?;
        self.run_to_stop()
    }

    pub fn step_out(&mut self) -> Result<(), DebugError> {
        self.begin(Command::StepOut)?;
        self.run_to_stop()
    }

    pub fn run_to_stop(&mut self) -> Result<(), DebugError> {
        while self.run_for(u64::MAX)? == SessionStatus::Running {}
        Ok(())
    }

    /// Advances a running session by at most `max_ticks` ticks, stopping
    /// early when it pauses or terminates.
    pub fn run_for(&mut self, max_ticks: u64) -> Result<SessionStatus, DebugError> {
        let mut budget = max_ticks;
        while self.run.is_some() && budget > 0 {
            budget -= 1;
            self.tick_once()?;
            if let Some(r) = self.run.as_mut() {
                r.ticks += 1;
            }
            self.settle_run()?;
        }
        Ok(self.status)
    }

    /// Pauses or terminates the active run as soon as a stop condition holds,
    /// so a running session always has a tick to execute next.
    fn settle_run(&mut self) -> Result<(), DebugError> {
        let Some(run) = self.run else { return Ok(()) };
        if !self.machine.is_runnable() {
            return self.terminate();
        }
        match self.stop_reason(run) {
            Some(reason) => self.pause_here(reason),
            None => Ok(()),
        }
    }

    /// Decides whether a run must stop before the next tick.
    fn stop_reason(&self, run: ActiveRun) -> Option<PauseReason> {
        let next = self.machine.next_block()?;
        let at_start = run.ticks == 0;
        // the block paused on does not re-trigger before progress is made
        let check_breakpoints = !at_start || run.mode == RunMode::Launch;
        if check_breakpoints && self.breakpoints.get(next).is_some_and(|b| b.enabled) {
            return Some(PauseReason::Breakpoint);
        }
        if at_start {
            return None;
        }
        let active = self.machine.active_thread;
        let thread_state = |t: usize| &self.machine.threads[t];
        let done = match run.mode {
            RunMode::Launch | RunMode::Continue => false,
            RunMode::StepOver { thread, depth } => {
                !thread_state(thread).is_runnable() || (active == thread && thread_state(thread).depth() <= depth)
            }
            // still a step-in only if the first tick entered a substack or call
            RunMode::StepIn { thread, .. } => !thread_state(thread).is_runnable() || active == thread,
            RunMode::StepOut { thread, depth } => {
                !thread_state(thread).is_runnable() || (active == thread && thread_state(thread).depth() < depth)
            }
        };
        if done || run.ticks >= self.fuel {
            return Some(PauseReason::Step);
        }
        None
    }

    fn tick_once(&mut self) -> Result<(), DebugError> {
        let run = self.run.expect("running");
        let before = self.machine.threads.get(self.machine.active_thread).map(|t| t.depth());
        let outcome = self.machine.tick()?;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(outcome.block.clone());
        }
        for ev in outcome.events {
            if let VmEvent::Output { block, text } = ev {
                self.record(EventKind::Output, json!({ "block": block, "text": text, "thread": outcome.thread }))?;
            }
        }
        // A step-in whose first tick did not deepen the stepping thread
        // continues as a step-over from the same depth.
        if let RunMode::StepIn { thread, depth } = run.mode {
            if run.ticks == 0 {
                let entered = thread == outcome.thread
                    && before.is_some_and(|b| self.machine.threads[thread].depth() > b)
                    && self.machine.threads[thread].is_runnable();
                if !entered {
                    self.run = Some(ActiveRun { mode: RunMode::StepOver { thread, depth }, ticks: run.ticks });
                }
            }
        }
        Ok(())
    }

    fn pause_here(&mut self, reason: PauseReason) -> Result<(), DebugError> {
        let thread = self.machine.active_thread;
        let block = self.machine.next_block().cloned().expect("pause requires a next block");
        let info = PauseInfo { thread, block, reason, stack_depth: self.machine.threads[thread].depth() };
        let kind = if reason == PauseReason::Breakpoint { EventKind::BreakpointHit } else { EventKind::Pause };
        self.run = None;
        self.status = SessionStatus::Paused;
        self.pause = Some(info.clone());
        self.record(kind, serde_json::to_value(&info).expect("pause info"))
    }

    fn terminate(&mut self) -> Result<(), DebugError> {
        self.run = None;
        self.pause = None;
        self.status = SessionStatus::Terminated;
        self.close_run("completed")
    }

    fn close_run(&mut self, termination: &str) -> Result<(), DebugError> {
        if self.run_open {
            self.run_open = false;
            let tick_count = self.tick_count();
            self.record(EventKind::RunEnd, json!({ "termination": termination, "tick_count": tick_count }))?;
        }
        Ok(())
    }

    /// Drops the current run without executing anything further.
    fn abandon_run(&mut self, termination: &str) -> Result<(), DebugError> {
        self.run = None;
        self.pause = None;
        self.status = SessionStatus::Terminated;
        self.machine = MachineState::load(&Program::default()).expect("empty program loads");
        self.close_run(termination)
    }

    // -- breakpoints ----------------------------------------------------

    pub fn set_breakpoint(&mut self, id: &BlockId) -> Result<(), DebugError> {
        self.set_breakpoint_from(id, "user")
    }

    fn set_breakpoint_from(&mut self, id: &BlockId, source: &str) -> Result<(), DebugError> {
        let payload = json!({ "block": id, "source": source });
        if !self.program.contains_block(id) {
            return Err(self.reject(EventKind::BreakpointSet, payload, DebugError::UnknownBlockId(id.to_string())));
        }
        self.record(EventKind::BreakpointSet, payload)?;
        self.breakpoints.insert(id.clone(), Breakpoint { block: id.clone(), enabled: true });
        self.settle_run()
    }

    pub fn clear_breakpoint(&mut self, id: &BlockId) -> Result<(), DebugError> {
        let payload = json!({ "block": id });
        if !self.breakpoints.contains_key(id) {
            return Err(self.reject(EventKind::BreakpointClear, payload, DebugError::NoSuchBreakpoint(id.to_string())));
        }
        self.record(EventKind::BreakpointClear, payload)?;
        self.breakpoints.remove(id);
        Ok(())
    }

    // -- watches and inspection -------------------------------------------

    pub fn add_watch(&mut self, text: &str) -> Result<u32, DebugError> {
        match parse_expr(text) {
            Ok(parsed) => {
                let id = self.next_watch_id;
                self.record(EventKind::WatchAdd, json!({ "id": id, "text": text }))?;
                self.next_watch_id += 1;
                self.watches.push(WatchExpression { id, source_text: text.to_owned(), parsed });
                Ok(id)
            }
            Err(e) => Err(self.reject(EventKind::WatchAdd, json!({ "text": text }), e.into())),
        }
    }

    pub fn remove_watch(&mut self, id: u32) -> Result<(), DebugError> {
        let payload = json!({ "id": id });
        match self.watches.iter().position(|w| w.id == id) {
            Some(i) => {
                self.record(EventKind::WatchRemove, payload)?;
                self.watches.remove(i);
                Ok(())
            }
            None => Err(self.reject(EventKind::WatchRemove, payload, DebugError::UnknownWatchId(id))),
        }
    }

    /// Evaluates every watch at the pause point. Procedure arguments in
    /// scope shadow globals of the same name.
    pub fn eval_watches(&mut self) -> Result<Vec<WatchResult>, DebugError> {
        let Some(pause) = self.pause.clone() else {
            return Err(self.reject(EventKind::WatchEval, json!({}), DebugError::NotPaused));
        };
        let frame = self.machine.threads[pause.thread].procedure_frame();
        let params: BTreeSet<String> = frame.map(|f| f.bindings.keys().cloned().collect()).unwrap_or_default();
        let results: Vec<WatchResult> = self
            .watches
            .iter()
            .map(|w| {
                let mut e = w.parsed.clone();
                e.bind_params(&params);
                match self.machine.evaluate_expr(&e, frame) {
                    Ok(v) => WatchResult { id: w.id, text: w.source_text.clone(), value: Some(v), unresolved: false },
                    Err(_) => WatchResult { id: w.id, text: w.source_text.clone(), value: None, unresolved: true },
                }
            })
            .collect();
        self.record(EventKind::WatchEval, json!({ "block": pause.block, "results": results }))?;
        Ok(results)
    }

    pub fn inspect_variables(&mut self) -> Result<VariableSnapshot, DebugError> {
        let Some(pause) = self.pause.clone() else {
            return Err(self.reject(EventKind::VariableInspect, json!({}), DebugError::NotPaused));
        };
        let bindings = self.machine.threads[pause.thread]
            .procedure_frame()
            .map(|f| f.bindings.clone())
            .unwrap_or_default();
        let snapshot = VariableSnapshot {
            globals: self.machine.globals.clone(),
            lists: self
                .machine
                .lists
                .iter()
                .map(|(k, v)| {
                    let entries =
                        v.iter().enumerate().map(|(i, value)| ListEntry { index: i + 1, value: value.clone() }).collect();
                    (k.clone(), entries)
                })
                .collect(),
            bindings,
        };
        self.record(EventKind::VariableInspect, json!({ "block": pause.block, "snapshot": snapshot }))?;
        Ok(snapshot)
    }

    // -- program changes --------------------------------------------------

    /// Applies a bug fix. Only allowed while paused or terminated; the
    /// current run ends and must be launched again.
    pub fn edit_program(&mut self, edit: &Edit) -> Result<(), DebugError> {
        let mut payload = json!({ "edit": edit, "summary": edit.summary() });
        if self.status == SessionStatus::Running {
            return Err(self.reject(EventKind::ProgramEdit, payload, DebugError::Running));
        }
        match apply_edit(&self.program, edit) {
            Ok(p) => {
                payload["hash"] = json!(p.content_hash());
                self.record(EventKind::ProgramEdit, payload)?;
                self.replace_program(p, "edited")
            }
            Err(e) => Err(self.reject(EventKind::ProgramEdit, payload, e.into())),
        }
    }

    /// Replaces the program wholesale (a frontend loading a new file).
    pub fn load_program(&mut self, program: Program) -> Result<(), DebugError> {
        let payload = json!({ "hash": program.content_hash(), "program": program_to_json(&program) });
        if self.status == SessionStatus::Running {
            return Err(self.reject(EventKind::ProgramLoad, payload, DebugError::Running));
        }
        let diags = validate(&program);
        if has_errors(&diags) {
            return Err(self.reject(EventKind::ProgramLoad, payload, ProgramError::Invalid(diags).into()));
        }
        self.record(EventKind::ProgramLoad, payload)?;
        self.replace_program(program, "reloaded")
    }

    fn replace_program(&mut self, program: Program, termination: &str) -> Result<(), DebugError> {
        self.program = program;
        let program = &self.program;
        self.breakpoints.retain(|id, _| program.contains_block(id));
        self.abandon_run(termination)
    }

    /// Ends the session, closing any open run. Idempotent.
    pub fn end(&mut self) -> Result<(), DebugError> {
        if self.ended {
            return Ok(());
        }
        if self.run_open {
            self.run = None;
            self.pause = None;
            self.status = SessionStatus::Terminated;
            self.close_run("aborted")?;
        }
        self.ended = true;
        self.record(EventKind::SessionEnd, json!({}))
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }
}

struct BoxedSink(Box<dyn EventSink>);

impl EventSink for BoxedSink {
    fn write_event(&mut self, e: &LogEvent) -> Result<(), LogError> {
        self.0.write_event(e)
    }
}
