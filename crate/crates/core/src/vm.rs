//! Deterministic tree-walking interpreter.
//!
//! The machine executes one statement block per [`MachineState::tick`].
//! Control blocks push frames for their substacks; completed frames are
//! popped (or re-entered, for loops) as bookkeeping inside the same tick, so
//! between ticks the top frame of every runnable thread always points at the
//! next block to run. Threads are scheduled round-robin and yield at the end
//! of every loop iteration and when their script finishes.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::error::VmError;
use crate::program::{has_errors, validate, ArithOp, BlockId, Block, CompareOp, Expr, Program, Statement};
use crate::value::Value;

pub const DEFAULT_FUEL: u64 = 100_000;

/// Executable form of a block: the statement plus shared substacks.
#[derive(Debug, PartialEq)]
pub struct Node {
    pub id: BlockId,
    pub op: Statement,
    pub substacks: Vec<Seq>,
}

pub type Seq = Arc<[Node]>;

fn compile(seq: &[Block]) -> Seq {
    seq.iter()
        .map(|b| Node { id: b.id.clone(), op: b.op.clone(), substacks: b.substacks.iter().map(|s| compile(s)).collect() })
        .collect()
}

#[derive(Debug, PartialEq)]
struct Code {
    scripts: Vec<Seq>,
    procedures: HashMap<String, (Vec<String>, Seq)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    ScriptRoot,
    Substack,
    ProcedureCall,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoopState {
    /// Iterations still to run after the current one.
    Repeat { remaining: u64 },
    Until { condition: Expr },
    Forever,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    seq: Seq,
    pub cursor: usize,
    pub loop_state: Option<LoopState>,
    /// Procedure arguments; empty unless `kind` is `ProcedureCall`.
    pub bindings: BTreeMap<String, Value>,
    /// The C-block or call block that pushed this frame.
    pub owner: Option<BlockId>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.seq.len()
    }

    pub fn current(&self) -> Option<&Node> {
        self.seq.get(self.cursor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreadStatus {
    Runnable,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadState {
    pub script_index: usize,
    pub stack: Vec<Frame>,
    pub status: ThreadStatus,
}

impl ThreadState {
    pub fn is_runnable(&self) -> bool {
        self.status == ThreadStatus::Runnable
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn next_block(&self) -> Option<&BlockId> {
        if !self.is_runnable() {
            return None;
        }
        self.stack.last().and_then(Frame::current).map(|n| &n.id)
    }

    /// Innermost procedure-call frame, whose bindings are in scope.
    pub fn procedure_frame(&self) -> Option<&Frame> {
        self.stack.iter().rev().find(|f| f.kind == FrameKind::ProcedureCall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VmEvent {
    Output { block: BlockId, text: String },
    Warning { block: BlockId, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub thread: usize,
    pub block: BlockId,
    pub events: Vec<VmEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    FuelExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_state: MachineState,
    pub termination: Termination,
    pub events: Vec<VmEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineState {
    program: Arc<Program>,
    code: Arc<Code>,
    pub globals: BTreeMap<String, Value>,
    pub lists: BTreeMap<String, Vec<Value>>,
    pub threads: Vec<ThreadState>,
    pub active_thread: usize,
    pub output: Vec<String>,
    pub tick_count: u64,
}

/// Maps a list index argument to a 0-based position in a list of `len`
/// items. `"last"` names the final item; anything outside `1..=len` is out
/// of range.
fn list_index(v: &Value, len: usize) -> Option<usize> {
    if let Value::Text(s) = v {
        if s.trim().eq_ignore_ascii_case("last") {
            return len.checked_sub(1);
        }
    }
    let n = v.to_number().floor();
    if n >= 1.0 && n <= len as f64 {
        Some(n as usize - 1)
    } else {
        None
    }
}

/// JavaScript `Math.round`: halves round towards positive infinity.
fn js_round(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let r = x.round();
    if x - r == 0.5 {
        r + 1.0
    } else {
        r
    }
}

fn arith(op: ArithOp, a: f64, b: f64) -> f64 {
    match op {
        ArithOp::Add => a + b,
        ArithOp::Sub => a - b,
        ArithOp::Mul => a * b,
        ArithOp::Div => a / b,
        ArithOp::Mod => {
            let mut r = a % b;
            if r / b < 0.0 {
                r += b;
            }
            r
        }
    }
}

/// Longest text a join may produce; longer results are cut short with a
/// warning so runaway doubling loops cannot exhaust memory.
pub const MAX_TEXT_BYTES: usize = 1 << 16;

/// Read-only view needed to evaluate an expression.
struct Scope<'a> {
    globals: &'a BTreeMap<String, Value>,
    lists: &'a BTreeMap<String, Vec<Value>>,
    bindings: Option<&'a BTreeMap<String, Value>>,
}

impl Scope<'_> {
    fn eval(&self, e: &Expr, warnings: &mut Vec<String>) -> Result<Value, VmError> {
        Ok(match e {
            Expr::Literal(v) => v.clone(),
            Expr::Var(n) => self.globals.get(n).cloned().ok_or_else(|| VmError::UnresolvedName(n.clone()))?,
            Expr::Param(n) => self
                .bindings
                .and_then(|b| b.get(n))
                .cloned()
                .ok_or_else(|| VmError::UnresolvedName(n.clone()))?,
            Expr::ListItem { list, index } => {
                let items = self.list(list)?;
                let idx = self.eval(index, warnings)?;
                match list_index(&idx, items.len()) {
                    Some(i) => items[i].clone(),
                    None => {
                        warnings.push(format!(
                            "item {idx} of {list} is out of range (length {}); lists start at 1",
                            items.len()
                        ));
                        Value::empty()
                    }
                }
            }
            Expr::ListLength(list) => Value::number(self.list(list)?.len() as f64),
            Expr::ListContains { list, item } => {
                let needle = self.eval(item, warnings)?;
                Value::Bool(self.list(list)?.iter().any(|v| v.loosely_equals(&needle)))
            }
            Expr::StringLength(x) => Value::number(self.eval(x, warnings)?.to_string().chars().count() as f64),
            Expr::LetterOf { index, text } => {
                let i = self.eval(index, warnings)?.to_number().floor();
                let s = self.eval(text, warnings)?.to_string();
                if i >= 1.0 {
                    s.chars().nth(i as usize - 1).map_or_else(Value::empty, |c| Value::Text(c.to_string()))
                } else {
                    Value::empty()
                }
            }
            Expr::Join(a, b) => {
                let mut s = self.eval(a, warnings)?.to_string();
                s.push_str(&self.eval(b, warnings)?.to_string());
                if s.len() > MAX_TEXT_BYTES {
                    let mut end = MAX_TEXT_BYTES;
                    while !s.is_char_boundary(end) {
                        end -= 1;
                    }
                    s.truncate(end);
                    warnings.push(format!("joined text truncated to {MAX_TEXT_BYTES} bytes"));
                }
                Value::Text(s)
            }
            Expr::Arith { op, lhs, rhs } => {
                let a = self.eval(lhs, warnings)?.to_number();
                let b = self.eval(rhs, warnings)?.to_number();
                Value::number(arith(*op, a, b))
            }
            Expr::Round(x) => Value::number(js_round(self.eval(x, warnings)?.to_number())),
            Expr::Compare { op, lhs, rhs } => {
                let ord = self.eval(lhs, warnings)?.compare(&self.eval(rhs, warnings)?);
                Value::Bool(match op {
                    CompareOp::Lt => ord.is_lt(),
                    CompareOp::Gt => ord.is_gt(),
                    CompareOp::Eq => ord.is_eq(),
                })
            }
            Expr::And(a, b) => {
                Value::Bool(self.eval(a, warnings)?.to_bool() && self.eval(b, warnings)?.to_bool())
            }
            Expr::Or(a, b) => {
                Value::Bool(self.eval(a, warnings)?.to_bool() || self.eval(b, warnings)?.to_bool())
            }
            Expr::Not(x) => Value::Bool(!self.eval(x, warnings)?.to_bool()),
        })
    }

    fn list(&self, name: &str) -> Result<&Vec<Value>, VmError> {
        self.lists.get(name).ok_or_else(|| VmError::UnresolvedName(name.to_owned()))
    }
}

impl MachineState {
    /// Loads a program: initial values in place, one runnable thread per
    /// non-empty script, nothing executed yet.
    pub fn load(program: &Program) -> Result<Self, VmError> {
        if has_errors(&validate(program)) {
            return Err(VmError::InvalidProgram);
        }
        let code = Code {
            scripts: program.scripts.iter().map(|s| compile(&s.body)).collect(),
            procedures: program
                .procedures
                .iter()
                .map(|p| (p.name.clone(), (p.params.clone(), compile(&p.body))))
                .collect(),
        };
        let threads = code
            .scripts
            .iter()
            .enumerate()
            .map(|(i, seq)| {
                if seq.is_empty() {
                    ThreadState { script_index: i, stack: Vec::new(), status: ThreadStatus::Done }
                } else {
                    ThreadState {
                        script_index: i,
                        stack: vec![Frame {
                            kind: FrameKind::ScriptRoot,
                            seq: seq.clone(),
                            cursor: 0,
                            loop_state: None,
                            bindings: BTreeMap::new(),
                            owner: None,
                        }],
                        status: ThreadStatus::Runnable,
                    }
                }
            })
            .collect::<Vec<_>>();
        let active_thread = threads.iter().position(ThreadState::is_runnable).unwrap_or(0);
        Ok(MachineState {
            program: Arc::new(program.clone()),
            code: Arc::new(code),
            globals: program.variables.clone(),
            lists: program.lists.clone(),
            threads,
            active_thread,
            output: Vec::new(),
            tick_count: 0,
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn is_runnable(&self) -> bool {
        self.threads.iter().any(ThreadState::is_runnable)
    }

    pub fn active(&self) -> Option<&ThreadState> {
        self.threads.get(self.active_thread).filter(|t| t.is_runnable())
    }

    /// The block the next tick will execute, if any thread is runnable.
    pub fn next_block(&self) -> Option<&BlockId> {
        self.active().and_then(ThreadState::next_block)
    }

    /// Evaluates an expression against the current state. `frame` supplies
    /// procedure bindings.
    pub fn evaluate_expr(&self, e: &Expr, frame: Option<&Frame>) -> Result<Value, VmError> {
        self.evaluate_expr_with_warnings(e, frame).map(|(v, _)| v)
    }

    /// Like [`evaluate_expr`](Self::evaluate_expr), also returning runtime
    /// warnings (out-of-range list reads) raised during evaluation.
    pub fn evaluate_expr_with_warnings(
        &self,
        e: &Expr,
        frame: Option<&Frame>,
    ) -> Result<(Value, Vec<String>), VmError> {
        let scope = Scope { globals: &self.globals, lists: &self.lists, bindings: frame.map(|f| &f.bindings) };
        let mut warnings = Vec::new();
        let v = scope.eval(e, &mut warnings)?;
        Ok((v, warnings))
    }

    fn eval_in_thread(&self, t: usize, e: &Expr, block: &BlockId, events: &mut Vec<VmEvent>) -> Result<Value, VmError> {
        let frame = self.threads[t].procedure_frame();
        let (v, warnings) = self.evaluate_expr_with_warnings(e, frame)?;
        events.extend(warnings.into_iter().map(|message| VmEvent::Warning { block: block.clone(), message }));
        Ok(v)
    }

    fn next_runnable_after(&self, t: usize) -> Option<usize> {
        let n = self.threads.len();
        (1..=n).map(|k| (t + k) % n).find(|&i| self.threads[i].is_runnable())
    }

    /// Executes exactly one statement block of the active thread.
    pub fn tick(&mut self) -> Result<TickOutcome, VmError> {
        if self.active().is_none() {
            match self.next_runnable_after(self.active_thread) {
                Some(t) => self.active_thread = t,
                None => return Err(VmError::NothingRunnable),
            }
        }
        let t = self.active_thread;
        let (seq, cursor) = {
            let top = self.threads[t].stack.last().expect("runnable thread has a frame");
            (top.seq.clone(), top.cursor)
        };
        let node = &seq[cursor];
        self.threads[t].stack.last_mut().expect("frame").cursor += 1;

        let mut events = Vec::new();
        let mut yielded = self.execute(t, node, &mut events)?;
        yielded |= self.settle(t, &mut events)?;
        self.tick_count += 1;

        if yielded || !self.threads[t].is_runnable() {
            if let Some(next) = self.next_runnable_after(t) {
                self.active_thread = next;
            }
        }
        Ok(TickOutcome { thread: t, block: node.id.clone(), events })
    }

    fn push_frame(&mut self, t: usize, kind: FrameKind, seq: Seq, loop_state: Option<LoopState>, owner: &BlockId) {
        self.threads[t].stack.push(Frame {
            kind,
            seq,
            cursor: 0,
            loop_state,
            bindings: BTreeMap::new(),
            owner: Some(owner.clone()),
        });
    }

    /// Keeps the cursor on the current block, so it runs again next time.
    fn stay(&mut self, t: usize) {
        self.threads[t].stack.last_mut().expect("frame").cursor -= 1;
    }

    /// Runs one block. Returns whether the thread yields.
    fn execute(&mut self, t: usize, node: &Node, events: &mut Vec<VmEvent>) -> Result<bool, VmError> {
        let id = &node.id;
        match &node.op {
            Statement::SetVar { var, value } => {
                let v = self.eval_in_thread(t, value, id, events)?;
                self.globals.insert(var.clone(), v);
            }
            Statement::ChangeVar { var, by } => {
                let delta = self.eval_in_thread(t, by, id, events)?.to_number();
                let slot = self.globals.get_mut(var).ok_or_else(|| VmError::UnresolvedName(var.clone()))?;
                *slot = Value::number(slot.to_number() + delta);
            }
            Statement::ListAdd { list, item } => {
                let v = self.eval_in_thread(t, item, id, events)?;
                self.list_mut(list)?.push(v);
            }
            Statement::ListDelete { list, index } => {
                let idx = self.eval_in_thread(t, index, id, events)?;
                let items = self.list_mut(list)?;
                match list_index(&idx, items.len()) {
                    Some(i) => {
                        items.remove(i);
                    }
                    None => {
                        let len = items.len();
                        events.push(out_of_range(id, "delete", &idx, list, len));
                    }
                }
            }
            Statement::ListInsert { list, index, item } => {
                let idx = self.eval_in_thread(t, index, id, events)?;
                let v = self.eval_in_thread(t, item, id, events)?;
                let items = self.list_mut(list)?;
                // inserting at length+1 appends
                match list_index(&idx, items.len() + 1) {
                    Some(i) => items.insert(i, v),
                    None => {
                        let len = items.len();
                        events.push(out_of_range(id, "insert at", &idx, list, len));
                    }
                }
            }
            Statement::ListReplace { list, index, item } => {
                let idx = self.eval_in_thread(t, index, id, events)?;
                let v = self.eval_in_thread(t, item, id, events)?;
                let items = self.list_mut(list)?;
                match list_index(&idx, items.len()) {
                    Some(i) => items[i] = v,
                    None => {
                        let len = items.len();
                        events.push(out_of_range(id, "replace", &idx, list, len));
                    }
                }
            }
            Statement::Say { message } => {
                let text = self.eval_in_thread(t, message, id, events)?.to_string();
                self.output.push(text.clone());
                events.push(VmEvent::Output { block: id.clone(), text });
            }
            Statement::If { condition } => {
                if self.eval_in_thread(t, condition, id, events)?.to_bool() && !node.substacks[0].is_empty() {
                    self.push_frame(t, FrameKind::Substack, node.substacks[0].clone(), None, id);
                }
            }
            Statement::IfElse { condition } => {
                let branch = if self.eval_in_thread(t, condition, id, events)?.to_bool() { 0 } else { 1 };
                if !node.substacks[branch].is_empty() {
                    self.push_frame(t, FrameKind::Substack, node.substacks[branch].clone(), None, id);
                }
            }
            Statement::Repeat { times } => {
                let n = js_round(self.eval_in_thread(t, times, id, events)?.to_number());
                if n >= 1.0 && !node.substacks[0].is_empty() {
                    // saturating float-to-int cast; infinite repeats behave like forever
                    let remaining = (n - 1.0) as u64;
                    let state = LoopState::Repeat { remaining };
                    self.push_frame(t, FrameKind::Substack, node.substacks[0].clone(), Some(state), id);
                }
            }
            Statement::RepeatUntil { condition } => {
                if !self.eval_in_thread(t, condition, id, events)?.to_bool() {
                    if node.substacks[0].is_empty() {
                        self.stay(t);
                        return Ok(true);
                    }
                    let state = LoopState::Until { condition: condition.clone() };
                    self.push_frame(t, FrameKind::Substack, node.substacks[0].clone(), Some(state), id);
                }
            }
            Statement::Forever => {
                if node.substacks[0].is_empty() {
                    self.stay(t);
                    return Ok(true);
                }
                self.push_frame(t, FrameKind::Substack, node.substacks[0].clone(), Some(LoopState::Forever), id);
            }
            Statement::Call { procedure, inputs } => {
                let (params, body) = self
                    .code
                    .procedures
                    .get(procedure)
                    .cloned()
                    .ok_or_else(|| VmError::UnresolvedName(procedure.clone()))?;
                let mut bindings = BTreeMap::new();
                for (param, input) in params.iter().zip(inputs) {
                    bindings.insert(param.clone(), self.eval_in_thread(t, input, id, events)?);
                }
                self.push_frame(t, FrameKind::ProcedureCall, body, None, id);
                self.threads[t].stack.last_mut().expect("frame").bindings = bindings;
            }
            Statement::StopScript => {
                let stack = &mut self.threads[t].stack;
                match stack.iter().rposition(|f| f.kind == FrameKind::ProcedureCall) {
                    // inside a procedure: return from it
                    Some(i) => stack.truncate(i),
                    None => stack.clear(),
                }
            }
        }
        Ok(false)
    }

    /// Pops completed frames and restarts loops until the top frame points
    /// at a block or the thread is done. Returns whether the thread yields.
    fn settle(&mut self, t: usize, events: &mut Vec<VmEvent>) -> Result<bool, VmError> {
        let mut yielded = false;
        loop {
            let Some(top) = self.threads[t].stack.last() else {
                self.threads[t].status = ThreadStatus::Done;
                return Ok(true);
            };
            if !top.is_complete() {
                return Ok(yielded);
            }
            match top.loop_state.clone() {
                None => {
                    self.threads[t].stack.pop();
                }
                Some(LoopState::Forever) => {
                    self.threads[t].stack.last_mut().expect("frame").cursor = 0;
                    return Ok(true);
                }
                Some(LoopState::Repeat { remaining }) => {
                    yielded = true;
                    let top = self.threads[t].stack.last_mut().expect("frame");
                    if remaining == 0 {
                        self.threads[t].stack.pop();
                    } else {
                        top.loop_state = Some(LoopState::Repeat { remaining: remaining - 1 });
                        top.cursor = 0;
                        return Ok(true);
                    }
                }
                Some(LoopState::Until { condition }) => {
                    yielded = true;
                    let owner = top.owner.clone().expect("loop frames have an owner");
                    if self.eval_in_thread(t, &condition, &owner, events)?.to_bool() {
                        self.threads[t].stack.pop();
                    } else {
                        self.threads[t].stack.last_mut().expect("frame").cursor = 0;
                        return Ok(true);
                    }
                }
            }
        }
    }

    fn list_mut(&mut self, name: &str) -> Result<&mut Vec<Value>, VmError> {
        self.lists.get_mut(name).ok_or_else(|| VmError::UnresolvedName(name.to_owned()))
    }

    /// Ticks until every thread is done or `fuel` ticks have run.
    pub fn run_to_completion(mut self, fuel: u64) -> RunResult {
        let mut events = Vec::new();
        let mut spent = 0;
        while self.is_runnable() && spent < fuel {
            match self.tick() {
                Ok(outcome) => events.extend(outcome.events),
                Err(_) => break,
            }
            spent += 1;
        }
        let termination = if self.is_runnable() { Termination::FuelExhausted } else { Termination::Completed };
        RunResult { final_state: self, termination, events }
    }
}

fn out_of_range(block: &BlockId, action: &str, idx: &Value, list: &str, len: usize) -> VmEvent {
    VmEvent::Warning {
        block: block.clone(),
        message: format!("cannot {action} item {idx} of {list} (length {len}); lists start at 1"),
    }
}
