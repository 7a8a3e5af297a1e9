//! Append-only JSONL record of every run, debug and edit action.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::LogError;

pub const FILE_EXTENSION: &str = ".dbglog.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Group {
    A,
    B,
    #[default]
    #[serde(rename = "unspecified")]
    Unspecified,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::A => "A",
            Group::B => "B",
            Group::Unspecified => "unspecified",
        })
    }
}

impl std::str::FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Group::A),
            "B" | "b" => Ok(Group::B),
            "unspecified" | "" => Ok(Group::Unspecified),
            other => Err(format!("unknown group \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionStart,
    ProgramLoad,
    ProgramEdit,
    RunStart,
    BreakpointSet,
    BreakpointClear,
    BreakpointHit,
    Continue,
    StepIn,
    StepOver,
    StepOut,
    WatchAdd,
    WatchRemove,
    WatchEval,
    VariableInspect,
    Pause,
    Resume,
    Output,
    RunEnd,
    SessionEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SessionStart => "session_start",
            EventKind::ProgramLoad => "program_load",
            EventKind::ProgramEdit => "program_edit",
            EventKind::RunStart => "run_start",
            EventKind::BreakpointSet => "breakpoint_set",
            EventKind::BreakpointClear => "breakpoint_clear",
            EventKind::BreakpointHit => "breakpoint_hit",
            EventKind::Continue => "continue",
            EventKind::StepIn => "step_in",
            EventKind::StepOver => "step_over",
            EventKind::StepOut => "step_out",
            EventKind::WatchAdd => "watch_add",
            EventKind::WatchRemove => "watch_remove",
            EventKind::WatchEval => "watch_eval",
            EventKind::VariableInspect => "variable_inspect",
            EventKind::Pause => "pause",
            EventKind::Resume => "resume",
            EventKind::Output => "output",
            EventKind::RunEnd => "run_end",
            EventKind::SessionEnd => "session_end",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    /// Milliseconds since session start.
    pub timestamp: u64,
    pub session_id: String,
    pub subject_id: String,
    pub group: Group,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: Json,
}

impl LogEvent {
    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Json::as_str)
    }

    /// Block id named by the payload (`block` field), if any.
    pub fn block(&self) -> Option<&str> {
        self.payload_str("block")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    pub events: Vec<LogEvent>,
    pub source: Option<PathBuf>,
}

impl SessionLog {
    pub fn new(events: Vec<LogEvent>) -> Self {
        SessionLog { events, source: None }
    }

    pub fn session_id(&self) -> Option<&str> {
        self.events.first().map(|e| e.session_id.as_str())
    }

    pub fn subject_id(&self) -> Option<&str> {
        self.events.first().map(|e| e.subject_id.as_str())
    }

    pub fn group(&self) -> Group {
        self.events.first().map_or(Group::Unspecified, |e| e.group)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Closed logs start with `session_start` and end with `session_end`.
    pub fn is_closed(&self) -> bool {
        matches!(self.events.first(), Some(e) if e.kind == EventKind::SessionStart)
            && matches!(self.events.last(), Some(e) if e.kind == EventKind::SessionEnd)
    }
}

/// Source of session-relative timestamps.
pub trait Clock: Send {
    fn elapsed_ms(&self) -> u64;
}

pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Clock advanced by hand; clones share the same time.
#[derive(Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn elapsed_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Destination for log events.
pub trait EventSink: Send {
    fn write_event(&mut self, e: &LogEvent) -> Result<(), LogError>;
}

impl EventSink for Vec<LogEvent> {
    fn write_event(&mut self, e: &LogEvent) -> Result<(), LogError> {
        self.push(e.clone());
        Ok(())
    }
}

/// One JSON document per line, flushed after every event.
pub struct JsonlSink {
    file: File,
}

impl JsonlSink {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonlSink { file })
    }
}

impl EventSink for JsonlSink {
    fn write_event(&mut self, e: &LogEvent) -> Result<(), LogError> {
        let mut line = serde_json::to_string(e).map_err(std::io::Error::from)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Enforces per-session ordering before handing events to a sink.
pub struct Appender {
    sink: Box<dyn EventSink>,
    last_timestamp: Option<u64>,
    session_id: Option<String>,
}

impl Appender {
    pub fn new(sink: impl EventSink + 'static) -> Self {
        Appender { sink: Box::new(sink), last_timestamp: None, session_id: None }
    }

    pub fn append(&mut self, e: &LogEvent) -> Result<(), LogError> {
        if let Some(last) = self.last_timestamp {
            if e.timestamp < last {
                return Err(LogError::OutOfOrderTimestamp { last, got: e.timestamp });
            }
        }
        if let Some(sid) = &self.session_id {
            if sid != &e.session_id {
                return Err(LogError::SessionMismatch { expected: sid.clone(), got: e.session_id.clone() });
            }
        }
        self.sink.write_event(e)?;
        self.last_timestamp = Some(e.timestamp);
        self.session_id.get_or_insert_with(|| e.session_id.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineDiagnostic {
    /// 1-based line number; 0 for whole-file remarks.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome {
    pub log: SessionLog,
    pub diagnostics: Vec<LineDiagnostic>,
}

/// Reads a log file. In salvage mode (`strict == false`) malformed lines are
/// skipped and reported; in strict mode the first one aborts the read.
pub fn read(path: &Path, strict: bool) -> Result<ReadOutcome, LogError> {
    let file = File::open(path)?;
    let mut out = read_from(BufReader::new(file), strict)?;
    out.log.source = Some(path.to_owned());
    Ok(out)
}

pub fn read_from(reader: impl BufRead, strict: bool) -> Result<ReadOutcome, LogError> {
    let mut events: Vec<LogEvent> = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let problem = match serde_json::from_str::<LogEvent>(&line) {
            Ok(e) => match events.first() {
                Some(first) if first.session_id != e.session_id => {
                    Some(format!("session id \"{}\" differs from \"{}\"", e.session_id, first.session_id))
                }
                _ => {
                    events.push(e);
                    None
                }
            },
            Err(err) => Some(err.to_string()),
        };
        if let Some(message) = problem {
            if strict {
                return Err(LogError::MalformedLine { line: lineno, message });
            }
            diagnostics.push(LineDiagnostic { line: lineno, message });
        }
    }
    if events.is_empty() && diagnostics.is_empty() {
        diagnostics.push(LineDiagnostic { line: 0, message: "log is empty".into() });
    }
    Ok(ReadOutcome { log: SessionLog::new(events), diagnostics })
}

/// Writes a whole log, replacing the file.
pub fn write(path: &Path, log: &SessionLog) -> Result<(), LogError> {
    let mut f = File::create(path)?;
    for e in &log.events {
        let line = serde_json::to_string(e).map_err(std::io::Error::from)?;
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ev(ts: u64, kind: EventKind) -> LogEvent {
        LogEvent {
            timestamp: ts,
            session_id: "s1".into(),
            subject_id: "p01".into(),
            group: Group::A,
            kind,
            payload: json!({}),
        }
    }

    #[test]
    fn two_appends_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dbglog.jsonl");
        let mut app = Appender::new(JsonlSink::open(&path).unwrap());
        app.append(&ev(0, EventKind::SessionStart)).unwrap();
        app.append(&ev(5, EventKind::BreakpointSet)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = read(&path, true).unwrap();
        assert_eq!(back.log.events, vec![ev(0, EventKind::SessionStart), ev(5, EventKind::BreakpointSet)]);
        assert!(back.diagnostics.is_empty());
    }

    #[test]
    fn earlier_timestamp_rejected() {
        let mut app = Appender::new(Vec::new());
        app.append(&ev(10, EventKind::SessionStart)).unwrap();
        let err = app.append(&ev(9, EventKind::Continue)).unwrap_err();
        assert!(matches!(err, LogError::OutOfOrderTimestamp { last: 10, got: 9 }));
        // equal timestamps are fine
        app.append(&ev(10, EventKind::Continue)).unwrap();
    }

    #[test]
    fn thousand_appends_keep_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.dbglog.jsonl");
        let mut app = Appender::new(JsonlSink::open(&path).unwrap());
        for i in 0..1000 {
            let mut e = ev(i, EventKind::Output);
            e.payload = json!({ "text": i.to_string() });
            app.append(&e).unwrap();
        }
        let log = read(&path, true).unwrap().log;
        assert_eq!(log.events.len(), 1000);
        assert!(log.events.iter().enumerate().all(|(i, e)| e.payload["text"].as_str() == Some(i.to_string().as_str())));
    }

    #[test]
    fn salvage_skips_corrupted_line() {
        let good: Vec<String> =
            [ev(0, EventKind::SessionStart), ev(1, EventKind::StepIn), ev(2, EventKind::SessionEnd)]
                .iter()
                .map(|e| serde_json::to_string(e).unwrap())
                .collect();
        let text = format!("{}\n{{\"timestamp\": 1, garbage\n{}\n{}\n", good[0], good[1], good[2]);
        let out = read_from(text.as_bytes(), false).unwrap();
        assert_eq!(out.log.events.len(), 3);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].line, 2);
        let err = read_from(text.as_bytes(), true).unwrap_err();
        assert!(matches!(err, LogError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn empty_file_warns() {
        let out = read_from("".as_bytes(), false).unwrap();
        assert!(out.log.events.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
    }

    #[test]
    fn field_names_on_the_wire() {
        let line = serde_json::to_string(&ev(3, EventKind::BreakpointHit)).unwrap();
        let j: Json = serde_json::from_str(&line).unwrap();
        for key in ["timestamp", "session_id", "subject_id", "group", "kind", "payload"] {
            assert!(j.get(key).is_some(), "missing {key}");
        }
        assert_eq!(j["kind"], "breakpoint_hit");
        assert_eq!(j["group"], "A");
    }
}
