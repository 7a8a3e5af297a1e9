use thiserror::Error;

use crate::program::Diagnostic;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("malformed program at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("arity mismatch at {path}: \"{op}\" takes {expected} operand(s), found {found}")]
    Arity { path: String, op: String, expected: usize, found: usize },
    #[error("invalid program: {}", join_diags(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("edit rejected: {0}")]
    RejectedEdit(String),
}

fn join_diags(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("program has validation errors")]
    InvalidProgram,
    #[error("unresolved name \"{0}\"")]
    UnresolvedName(String),
    #[error("nothing runnable")]
    NothingRunnable,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {offset}: {message}")]
pub struct ExprParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("out-of-order timestamp: {got} ms after {last} ms")]
    OutOfOrderTimestamp { last: u64, got: u64 },
    #[error("log storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("log event belongs to session \"{got}\", expected \"{expected}\"")]
    SessionMismatch { expected: String, got: String },
}

#[derive(Debug, Error)]
pub enum DebugError {
    #[error("not paused")]
    NotPaused,
    #[error("unknown block id \"{0}\"")]
    UnknownBlockId(String),
    #[error("no breakpoint on block \"{0}\"")]
    NoSuchBreakpoint(String),
    #[error("already at the top frame")]
    AtTopFrame,
    #[error("unknown watch id {0}")]
    UnknownWatchId(u32),
    #[error(transparent)]
    Parse(#[from] ExprParseError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("session is running")]
    Running,
    #[error(transparent)]
    Log(#[from] LogError),
}
