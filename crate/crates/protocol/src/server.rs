//! Maps protocol requests onto a debug session and turns the session's
//! log events into protocol events.

use blockdbg_core::program::program_from_json;
use blockdbg_core::{Command, DebugError, DebugSession, Edit, EventKind, LogEvent, SessionStatus};
use serde_json::{json, Value as Json};

use crate::envelope::{decode, Envelope};

/// Ticks executed between checks for incoming requests while running.
pub const RUN_SLICE_TICKS: u64 = 1000;

pub struct Server {
    session: DebugSession,
    seq: u64,
    closed: bool,
}

type Reply = Result<Json, String>;

fn err(e: DebugError) -> String {
    e.to_string()
}

fn field<'a>(payload: &'a Json, key: &str) -> Result<&'a Json, String> {
    payload.get(key).ok_or_else(|| format!("missing payload field \"{key}\""))
}

fn str_field<'a>(payload: &'a Json, key: &str) -> Result<&'a str, String> {
    field(payload, key)?.as_str().ok_or_else(|| format!("payload field \"{key}\" must be a string"))
}

impl Server {
    pub fn new(session: DebugSession) -> Self {
        Server { session, seq: 0, closed: false }
    }

    pub fn session(&self) -> &DebugSession {
        &self.session
    }

    pub fn into_session(self) -> DebugSession {
        self.session
    }

    pub fn is_running(&self) -> bool {
        !self.closed && self.session.status() == SessionStatus::Running
    }

    /// True once the frontend disconnected or the session ended.
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn event(&mut self, name: &str, payload: Json) -> Envelope {
        Envelope::Event { seq: self.next_seq(), event: name.to_owned(), payload }
    }

    /// Events for everything the engine logged since the last call: a `log`
    /// event per log entry, followed by its protocol-level counterpart.
    pub fn pending_events(&mut self) -> Vec<Envelope> {
        let mut out = Vec::new();
        for e in self.session.drain_new_events() {
            let log = self.event("log", serde_json::to_value(&e).expect("log events serialize"));
            out.push(log);
            if let Some((name, payload)) = derived_event(&e) {
                let ev = self.event(name, payload);
                out.push(ev);
            }
        }
        out
    }

    /// Handles one incoming line; returns what to send, in order.
    pub fn handle_line(&mut self, line: &str) -> Vec<Envelope> {
        match decode(line) {
            Ok(Envelope::Request { seq, command, payload }) => self.handle_request(seq, &command, &payload),
            Ok(other) => self.failure(other.seq(), "", "expected a request".into()),
            Err(e) => {
                // answer the request's seq when the line starts with a readable document
                let request_seq = serde_json::Deserializer::from_str(line)
                    .into_iter::<Json>()
                    .next()
                    .and_then(Result::ok)
                    .and_then(|v| v.get("seq").and_then(Json::as_u64))
                    .unwrap_or(0);
                self.failure(request_seq, "", e.to_string())
            }
        }
    }

    fn failure(&mut self, request_seq: u64, command: &str, message: String) -> Vec<Envelope> {
        let mut out = self.pending_events();
        out.push(Envelope::Response {
            seq: self.next_seq(),
            request_seq,
            success: false,
            command: command.to_owned(),
            message: Some(message),
            payload: Json::Null,
        });
        out
    }

    pub fn handle_request(&mut self, request_seq: u64, command: &str, payload: &Json) -> Vec<Envelope> {
        let reply = if self.closed { Err("session has ended".to_owned()) } else { self.dispatch(command, payload) };
        let mut out = self.pending_events();
        let (success, message, payload) = match reply {
            Ok(p) => (true, None, p),
            Err(m) => (false, Some(m), Json::Null),
        };
        out.push(Envelope::Response {
            seq: self.next_seq(),
            request_seq,
            success,
            command: command.to_owned(),
            message,
            payload,
        });
        out
    }

    fn status(&self) -> Json {
        json!({ "status": self.session.status() })
    }

    fn dispatch(&mut self, command: &str, p: &Json) -> Reply {
        let s = &mut self.session;
        match command {
            "launch" => {
                let pause = p.get("pause_on_entry").and_then(Json::as_bool).unwrap_or(true);
                s.begin_launch(pause).map_err(err)?;
                Ok(self.status())
            }
            "load_program" => {
                let program = program_from_json(field(p, "program")?).map_err(|e| e.to_string())?;
                s.load_program(program).map_err(err)?;
                Ok(json!({ "hash": s.program().content_hash() }))
            }
            "set_breakpoints" => {
                let blocks = field(p, "blocks")?.as_array().ok_or("payload field \"blocks\" must be an array")?;
                let mut rejected = Vec::new();
                for b in blocks {
                    let id = b.as_str().ok_or("block ids must be strings")?;
                    if let Err(e) = s.set_breakpoint(&id.into()) {
                        rejected.push(e.to_string());
                    }
                }
                if rejected.is_empty() {
                    Ok(json!({ "breakpoints": s.breakpoint_ids() }))
                } else {
                    Err(rejected.join("; "))
                }
            }
            "clear_breakpoint" => {
                s.clear_breakpoint(&str_field(p, "block")?.into()).map_err(err)?;
                Ok(json!({ "breakpoints": s.breakpoint_ids() }))
            }
            "continue" | "step_in" | "step_over" | "step_out" => {
                let cmd = match command {
                    "continue" => Command::Continue,
                    "step_in" => Command::StepIn,
                    "step_over" => Command::StepOver,
                    _ => Command::StepOut,
                };
                s.begin(cmd).map_err(err)?;
                Ok(self.status())
            }
            "add_watch" => {
                let id = s.add_watch(str_field(p, "text")?).map_err(err)?;
                Ok(json!({ "id": id }))
            }
            "remove_watch" => {
                let id = field(p, "id")?.as_u64().ok_or("payload field \"id\" must be a number")?;
                s.remove_watch(id as u32).map_err(err)?;
                Ok(json!({}))
            }
            "eval_watches" => {
                let results = s.eval_watches().map_err(err)?;
                Ok(json!({ "results": results }))
            }
            "inspect" => {
                let snapshot = s.inspect_variables().map_err(err)?;
                Ok(serde_json::to_value(snapshot).expect("snapshots serialize"))
            }
            "edit_program" => {
                let edit: Edit = serde_json::from_value(field(p, "edit")?.clone()).map_err(|e| e.to_string())?;
                s.edit_program(&edit).map_err(err)?;
                Ok(json!({ "hash": s.program().content_hash() }))
            }
            "get_state" => Ok(self.state()),
            "disconnect" => {
                s.end().map_err(err)?;
                self.closed = true;
                Ok(json!({}))
            }
            other => Err(format!("unknown command \"{other}\"")),
        }
    }

    /// Read-only snapshot for a frontend that (re)connects. Not logged.
    fn state(&self) -> Json {
        let s = &self.session;
        json!({
            "status": s.status(),
            "pause": s.paused_location(),
            "breakpoints": s.breakpoint_ids(),
            "watches": s.watches().iter().map(|w| json!({ "id": w.id, "text": w.source_text })).collect::<Vec<_>>(),
            "program": blockdbg_core::program::program_to_json(s.program()),
            "hash": s.program().content_hash(),
            "output": s.machine().output,
        })
    }

    /// Runs one slice of a running session.
    pub fn run_slice(&mut self) -> Vec<Envelope> {
        if !self.is_running() {
            return Vec::new();
        }
        if let Err(e) = self.session.run_for(RUN_SLICE_TICKS) {
            let mut out = self.pending_events();
            let ev = self.event("error", json!({ "message": e.to_string() }));
            out.push(ev);
            return out;
        }
        self.pending_events()
    }

    /// Ends the session after the frontend went away.
    pub fn close(&mut self) -> Vec<Envelope> {
        if !self.closed {
            self.closed = true;
            let _ = self.session.end();
        }
        self.pending_events()
    }
}

fn accepted(e: &LogEvent) -> bool {
    e.payload.get("accepted").and_then(Json::as_bool) != Some(false)
}

fn without_tick(payload: &Json) -> Json {
    let mut p = payload.clone();
    if let Json::Object(m) = &mut p {
        m.remove("tick");
    }
    p
}

fn derived_event(e: &LogEvent) -> Option<(&'static str, Json)> {
    if !accepted(e) {
        return None;
    }
    match e.kind {
        EventKind::BreakpointHit | EventKind::Pause => Some(("stopped", without_tick(&e.payload))),
        EventKind::Continue | EventKind::StepIn | EventKind::StepOver | EventKind::StepOut => {
            Some(("continued", json!({ "command": e.kind })))
        }
        EventKind::RunStart if e.payload.get("pause_on_entry") == Some(&Json::Bool(false)) => {
            Some(("continued", json!({ "command": e.kind })))
        }
        EventKind::Output => Some(("output", without_tick(&e.payload))),
        EventKind::RunEnd => Some(("terminated", e.payload.clone())),
        _ => None,
    }
}
