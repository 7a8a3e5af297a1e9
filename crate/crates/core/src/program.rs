//! The block-language program model: scripts of statement blocks with nested
//! substacks, reporter expressions, procedures, and the `.blk.json` format.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value as Json};
use sha2::{Digest, Sha256};

use crate::error::ProgramError;
use crate::value::Value;

pub const FILE_EXTENSION: &str = ".blk.json";

/// Author-assigned block identifier, unique within a program.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub String);

impl BlockId {
    pub fn new(id: impl Into<String>) -> Self {
        BlockId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BlockId {
    fn from(s: &str) -> Self {
        BlockId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Lt,
    Gt,
    Eq,
}

/// Reporter expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Var(String),
    Param(String),
    /// 1-based list read.
    ListItem { list: String, index: Box<Expr> },
    ListLength(String),
    ListContains { list: String, item: Box<Expr> },
    StringLength(Box<Expr>),
    LetterOf { index: Box<Expr>, text: Box<Expr> },
    Join(Box<Expr>, Box<Expr>),
    Arith { op: ArithOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Round(Box<Expr>),
    Compare { op: CompareOp, lhs: Box<Expr>, rhs: Box<Expr> },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn lit(v: impl Into<Value>) -> Self {
        Expr::Literal(v.into())
    }

    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_owned())
    }

    pub fn arith(op: ArithOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Arith { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn compare(op: CompareOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Compare { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Visits every sub-expression, this one included, in pre-order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Literal(_) | Expr::Var(_) | Expr::Param(_) | Expr::ListLength(_) => {}
            Expr::ListItem { index: e, .. }
            | Expr::ListContains { item: e, .. }
            | Expr::StringLength(e)
            | Expr::Round(e)
            | Expr::Not(e) => e.visit(f),
            Expr::LetterOf { index: a, text: b }
            | Expr::Join(a, b)
            | Expr::Arith { lhs: a, rhs: b, .. }
            | Expr::Compare { lhs: a, rhs: b, .. }
            | Expr::And(a, b)
            | Expr::Or(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Literal(_) | Expr::Var(_) | Expr::Param(_) | Expr::ListLength(_) => {}
            Expr::ListItem { index: e, .. }
            | Expr::ListContains { item: e, .. }
            | Expr::StringLength(e)
            | Expr::Round(e)
            | Expr::Not(e) => e.visit_mut(f),
            Expr::LetterOf { index: a, text: b }
            | Expr::Join(a, b)
            | Expr::Arith { lhs: a, rhs: b, .. }
            | Expr::Compare { lhs: a, rhs: b, .. }
            | Expr::And(a, b)
            | Expr::Or(a, b) => {
                a.visit_mut(f);
                b.visit_mut(f);
            }
        }
    }

    /// Rewrites variable references that name one of `params` into
    /// parameter references.
    pub fn bind_params(&mut self, params: &BTreeSet<String>) {
        self.visit_mut(&mut |e| {
            if let Expr::Var(name) = e {
                if params.contains(name.as_str()) {
                    *e = Expr::Param(std::mem::take(name));
                }
            }
        });
    }
}

/// Statement opcode together with its named arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    SetVar { var: String, value: Expr },
    ChangeVar { var: String, by: Expr },
    ListAdd { list: String, item: Expr },
    ListDelete { list: String, index: Expr },
    ListInsert { list: String, index: Expr, item: Expr },
    ListReplace { list: String, index: Expr, item: Expr },
    Say { message: Expr },
    If { condition: Expr },
    IfElse { condition: Expr },
    Repeat { times: Expr },
    RepeatUntil { condition: Expr },
    Forever,
    Call { procedure: String, inputs: Vec<Expr> },
    StopScript,
}

impl Statement {
    pub fn opcode(&self) -> &'static str {
        match self {
            Statement::SetVar { .. } => "set_var",
            Statement::ChangeVar { .. } => "change_var",
            Statement::ListAdd { .. } => "list_add",
            Statement::ListDelete { .. } => "list_delete",
            Statement::ListInsert { .. } => "list_insert",
            Statement::ListReplace { .. } => "list_replace",
            Statement::Say { .. } => "say",
            Statement::If { .. } => "if",
            Statement::IfElse { .. } => "if_else",
            Statement::Repeat { .. } => "repeat",
            Statement::RepeatUntil { .. } => "repeat_until",
            Statement::Forever => "forever",
            Statement::Call { .. } => "call",
            Statement::StopScript => "stop_script",
        }
    }

    /// Number of substacks the opcode owns.
    pub fn substack_count(&self) -> usize {
        match self {
            Statement::If { .. }
            | Statement::Repeat { .. }
            | Statement::RepeatUntil { .. }
            | Statement::Forever => 1,
            Statement::IfElse { .. } => 2,
            _ => 0,
        }
    }

    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            Statement::SetVar { value, .. } => vec![value],
            Statement::ChangeVar { by, .. } => vec![by],
            Statement::ListAdd { item, .. } => vec![item],
            Statement::ListDelete { index, .. } => vec![index],
            Statement::ListInsert { index, item, .. } | Statement::ListReplace { index, item, .. } => {
                vec![index, item]
            }
            Statement::Say { message } => vec![message],
            Statement::If { condition }
            | Statement::IfElse { condition }
            | Statement::RepeatUntil { condition } => vec![condition],
            Statement::Repeat { times } => vec![times],
            Statement::Call { inputs, .. } => inputs.iter().collect(),
            Statement::Forever | Statement::StopScript => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub op: Statement,
    pub substacks: Vec<Vec<Block>>,
}

impl Block {
    pub fn new(id: &str, op: Statement) -> Self {
        let substacks = vec![Vec::new(); op.substack_count()];
        Block { id: BlockId::new(id), op, substacks }
    }

    pub fn with_substacks(id: &str, op: Statement, substacks: Vec<Vec<Block>>) -> Self {
        Block { id: BlockId::new(id), op, substacks }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Trigger {
    #[default]
    GreenFlag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub trigger: Trigger,
    pub body: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub variables: BTreeMap<String, Value>,
    pub lists: BTreeMap<String, Vec<Value>>,
    pub procedures: Vec<ProcedureDef>,
    pub scripts: Vec<Script>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Block(BlockId),
    Name(String),
    Script(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Block(id) => write!(f, "block {id}"),
            Location::Name(n) => write!(f, "{n}"),
            Location::Script(i) => write!(f, "script #{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

/// Where a block sequence lives. Used to address sequences without
/// borrowing into the program.
#[derive(Debug, Clone, PartialEq, Eq)]
enum SeqRoot {
    Script(usize),
    Procedure(usize),
}

impl Program {
    pub fn procedure(&self, name: &str) -> Option<&ProcedureDef> {
        self.procedures.iter().find(|p| p.name == name)
    }

    /// Every block in the program, scripts first, then procedure bodies,
    /// each in pre-order.
    pub fn blocks(&self) -> Vec<&Block> {
        fn walk<'a>(seq: &'a [Block], out: &mut Vec<&'a Block>) {
            for b in seq {
                out.push(b);
                for sub in &b.substacks {
                    walk(sub, out);
                }
            }
        }
        let mut out = Vec::new();
        for s in &self.scripts {
            walk(&s.body, &mut out);
        }
        for p in &self.procedures {
            walk(&p.body, &mut out);
        }
        out
    }

    /// The unique block with this id; searches scripts and procedure bodies.
    pub fn block_at(&self, id: &BlockId) -> Result<&Block, ProgramError> {
        fn find<'a>(seq: &'a [Block], id: &BlockId) -> Option<&'a Block> {
            for b in seq {
                if &b.id == id {
                    return Some(b);
                }
                for sub in &b.substacks {
                    if let Some(hit) = find(sub, id) {
                        return Some(hit);
                    }
                }
            }
            None
        }
        self.scripts
            .iter()
            .map(|s| s.body.as_slice())
            .chain(self.procedures.iter().map(|p| p.body.as_slice()))
            .find_map(|seq| find(seq, id))
            .ok_or_else(|| ProgramError::NotFound(id.to_string()))
    }

    pub fn contains_block(&self, id: &BlockId) -> bool {
        self.block_at(id).is_ok()
    }

    /// Lowercase hex SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(serialize_program(self).as_bytes());
        hex::encode(digest)
    }

    fn roots_mut(&mut self) -> Vec<(SeqRoot, &mut Vec<Block>)> {
        let mut v: Vec<(SeqRoot, &mut Vec<Block>)> = Vec::new();
        for (i, s) in self.scripts.iter_mut().enumerate() {
            v.push((SeqRoot::Script(i), &mut s.body));
        }
        for (i, p) in self.procedures.iter_mut().enumerate() {
            v.push((SeqRoot::Procedure(i), &mut p.body));
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Validation

/// Checks every program invariant. An empty result means the program is
/// valid; warnings alone do not make it invalid for [`has_errors`].
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut v = Validator { program: p, seen: HashSet::new(), diags: Vec::new() };
    let mut proc_names = HashSet::new();
    for proc in &p.procedures {
        if !proc_names.insert(proc.name.as_str()) {
            v.error(Location::Name(proc.name.clone()), format!("procedure \"{}\" defined twice", proc.name));
        }
        let mut params = HashSet::new();
        for param in &proc.params {
            if !params.insert(param.as_str()) {
                v.error(
                    Location::Name(proc.name.clone()),
                    format!("parameter \"{param}\" repeated in procedure \"{}\"", proc.name),
                );
            }
        }
    }
    for (i, script) in p.scripts.iter().enumerate() {
        if script.body.is_empty() {
            v.diags.push(Diagnostic {
                severity: Severity::Warning,
                location: Location::Script(i),
                message: "script has an empty body".into(),
            });
        }
        v.sequence(&script.body, &[]);
    }
    for proc in &p.procedures {
        v.sequence(&proc.body, &proc.params);
    }
    v.diags
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

struct Validator<'a> {
    program: &'a Program,
    seen: HashSet<&'a BlockId>,
    diags: Vec<Diagnostic>,
}

impl<'a> Validator<'a> {
    fn error(&mut self, location: Location, message: String) {
        self.diags.push(Diagnostic { severity: Severity::Error, location, message });
    }

    fn sequence(&mut self, seq: &'a [Block], params: &[String]) {
        for b in seq {
            self.block(b, params);
        }
    }

    fn block(&mut self, b: &'a Block, params: &[String]) {
        let loc = || Location::Block(b.id.clone());
        if b.id.0.is_empty() {
            self.error(loc(), "block id is empty".into());
        } else if !self.seen.insert(&b.id) {
            self.error(loc(), format!("duplicate block id \"{}\"", b.id));
        }
        let expected = b.op.substack_count();
        if b.substacks.len() != expected {
            self.error(
                loc(),
                format!("{} takes {expected} substack(s), found {}", b.op.opcode(), b.substacks.len()),
            );
        }
        match &b.op {
            Statement::SetVar { var, .. } | Statement::ChangeVar { var, .. } => {
                if !self.program.variables.contains_key(var) {
                    self.error(loc(), format!("unknown variable \"{var}\""));
                }
            }
            Statement::ListAdd { list, .. }
            | Statement::ListDelete { list, .. }
            | Statement::ListInsert { list, .. }
            | Statement::ListReplace { list, .. } => {
                if !self.program.lists.contains_key(list) {
                    self.error(loc(), format!("unknown list \"{list}\""));
                }
            }
            Statement::Call { procedure, inputs } => match self.program.procedure(procedure) {
                None => self.error(loc(), format!("call to undefined procedure \"{procedure}\"")),
                Some(def) if def.params.len() != inputs.len() => self.error(
                    loc(),
                    format!(
                        "procedure \"{procedure}\" takes {} argument(s), call passes {}",
                        def.params.len(),
                        inputs.len()
                    ),
                ),
                Some(_) => {}
            },
            _ => {}
        }
        for e in b.op.exprs() {
            let mut problems = Vec::new();
            e.visit(&mut |e| match e {
                Expr::Var(n) if !self.program.variables.contains_key(n) => {
                    problems.push(format!("unknown variable \"{n}\""))
                }
                Expr::Param(n) if !params.contains(n) => {
                    problems.push(format!("\"{n}\" is not a parameter of the enclosing procedure"))
                }
                Expr::ListItem { list, .. } | Expr::ListLength(list) | Expr::ListContains { list, .. }
                    if !self.program.lists.contains_key(list) =>
                {
                    problems.push(format!("unknown list \"{list}\""))
                }
                _ => {}
            });
            for m in problems {
                self.error(loc(), m);
            }
        }
        for sub in &b.substacks {
            self.sequence(sub, params);
        }
    }
}

// ---------------------------------------------------------------------------
// Editing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertPosition {
    Before,
    After,
    /// At the start of the target C-block's n-th substack.
    Substack(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialValue {
    List(Vec<Value>),
    Scalar(Value),
}

/// A program edit, the unit of a learner's bug fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Edit {
    ReplaceBlock { target: BlockId, block: Block },
    InsertBlock { target: BlockId, position: InsertPosition, block: Block },
    DeleteBlock { target: BlockId },
    SetInitialValue { target: String, value: InitialValue },
}

impl Edit {
    /// Short human-readable description for logs.
    pub fn summary(&self) -> String {
        match self {
            Edit::ReplaceBlock { target, block } => format!("replace {target} with {} ({})", block.id, block.op.opcode()),
            Edit::InsertBlock { target, position, block } => {
                let pos = match position {
                    InsertPosition::Before => "before".to_string(),
                    InsertPosition::After => "after".to_string(),
                    InsertPosition::Substack(i) => format!("into substack {i} of"),
                };
                format!("insert {} ({}) {pos} {target}", block.id, block.op.opcode())
            }
            Edit::DeleteBlock { target } => format!("delete {target}"),
            Edit::SetInitialValue { target, .. } => format!("set initial value of {target}"),
        }
    }
}

/// Applies an edit as a pure transformation. The result is re-validated and
/// rejected as a whole if it would contain errors.
pub fn apply_edit(p: &Program, e: &Edit) -> Result<Program, ProgramError> {
    let mut out = p.clone();
    match e {
        Edit::ReplaceBlock { target, block } => {
            let slot = find_block_mut(&mut out, target)?;
            *slot = block.clone();
        }
        Edit::DeleteBlock { target } => {
            let (seq, idx) = find_position_mut(&mut out, target)?;
            seq.remove(idx);
        }
        Edit::InsertBlock { target, position, block } => match position {
            InsertPosition::Before | InsertPosition::After => {
                let (seq, idx) = find_position_mut(&mut out, target)?;
                let at = if *position == InsertPosition::After { idx + 1 } else { idx };
                seq.insert(at, block.clone());
            }
            InsertPosition::Substack(n) => {
                let owner = find_block_mut(&mut out, target)?;
                let sub = owner.substacks.get_mut(*n).ok_or_else(|| {
                    ProgramError::RejectedEdit(format!("block {target} has no substack {n}"))
                })?;
                sub.insert(0, block.clone());
            }
        },
        Edit::SetInitialValue { target, value } => match value {
            InitialValue::Scalar(v) => {
                let slot = out
                    .variables
                    .get_mut(target)
                    .ok_or_else(|| ProgramError::NotFound(target.clone()))?;
                *slot = v.clone();
            }
            InitialValue::List(items) => {
                let slot = out
                    .lists
                    .get_mut(target)
                    .ok_or_else(|| ProgramError::NotFound(target.clone()))?;
                *slot = items.clone();
            }
        },
    }
    let diags = validate(&out);
    if has_errors(&diags) {
        let msgs: Vec<String> = diags
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .map(ToString::to_string)
            .collect();
        return Err(ProgramError::RejectedEdit(msgs.join("; ")));
    }
    Ok(out)
}

fn find_position_mut<'a>(
    p: &'a mut Program,
    id: &BlockId,
) -> Result<(&'a mut Vec<Block>, usize), ProgramError> {
    fn find<'a>(seq: &'a mut Vec<Block>, id: &BlockId) -> Option<(&'a mut Vec<Block>, usize)> {
        if let Some(i) = seq.iter().position(|b| &b.id == id) {
            return Some((seq, i));
        }
        for b in seq.iter_mut() {
            for sub in b.substacks.iter_mut() {
                if let Some(hit) = find(sub, id) {
                    return Some(hit);
                }
            }
        }
        None
    }
    for (_, seq) in p.roots_mut() {
        if let Some(hit) = find(seq, id) {
            return Ok(hit);
        }
    }
    Err(ProgramError::NotFound(id.to_string()))
}

fn find_block_mut<'a>(p: &'a mut Program, id: &BlockId) -> Result<&'a mut Block, ProgramError> {
    let (seq, i) = find_position_mut(p, id)?;
    Ok(&mut seq[i])
}

// ---------------------------------------------------------------------------
// JSON format

/// Parses and validates a program document.
pub fn parse_program(text: &str) -> Result<Program, ProgramError> {
    let doc: Json = serde_json::from_str(text).map_err(|e| ProgramError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let program = program_from_json(&doc)?;
    let diags = validate(&program);
    if has_errors(&diags) {
        return Err(ProgramError::Invalid(diags.into_iter().filter(|d| d.severity == Severity::Error).collect()));
    }
    Ok(program)
}

/// Canonical pretty-printed document. Re-parses to an equal program.
pub fn serialize_program(p: &Program) -> String {
    let mut s = serde_json::to_string_pretty(&program_to_json(p)).expect("program JSON");
    s.push('\n');
    s
}

fn schema(path: &str, message: impl fmt::Display) -> ProgramError {
    ProgramError::Schema { path: path.to_owned(), message: message.to_string() }
}

fn value_to_json(v: &Value) -> Json {
    match v {
        Value::Number(n) if n.is_finite() => json!(n),
        Value::Number(n) => Json::String(crate::value::format_number(*n)),
        Value::Text(s) => Json::String(s.clone()),
        Value::Bool(b) => Json::Bool(*b),
    }
}

fn value_from_json(j: &Json, path: &str) -> Result<Value, ProgramError> {
    match j {
        Json::Number(n) => n.as_f64().map(Value::number).ok_or_else(|| schema(path, "number out of range")),
        Json::String(s) => Ok(Value::Text(s.clone())),
        Json::Bool(b) => Ok(Value::Bool(*b)),
        other => Err(schema(path, format!("expected number, string or boolean, found {other}"))),
    }
}

pub fn program_to_json(p: &Program) -> Json {
    let variables: Map<String, Json> =
        p.variables.iter().map(|(k, v)| (k.clone(), value_to_json(v))).collect();
    let lists: Map<String, Json> = p
        .lists
        .iter()
        .map(|(k, v)| (k.clone(), Json::Array(v.iter().map(value_to_json).collect())))
        .collect();
    let procedures: Vec<Json> = p
        .procedures
        .iter()
        .map(|pd| json!({ "name": pd.name, "params": pd.params, "body": seq_to_json(&pd.body) }))
        .collect();
    let scripts: Vec<Json> = p
        .scripts
        .iter()
        .map(|s| json!({ "trigger": "green_flag", "body": seq_to_json(&s.body) }))
        .collect();
    json!({ "variables": variables, "lists": lists, "procedures": procedures, "scripts": scripts })
}

pub fn program_from_json(doc: &Json) -> Result<Program, ProgramError> {
    let obj = doc.as_object().ok_or_else(|| schema("$", "program must be an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "variables" | "lists" | "procedures" | "scripts") {
            return Err(schema("$", format!("unknown field \"{key}\"")));
        }
    }
    let mut p = Program::default();
    if let Some(vars) = obj.get("variables") {
        let vars = vars.as_object().ok_or_else(|| schema("$.variables", "expected object"))?;
        for (k, v) in vars {
            p.variables.insert(k.clone(), value_from_json(v, &format!("$.variables.{k}"))?);
        }
    }
    if let Some(lists) = obj.get("lists") {
        let lists = lists.as_object().ok_or_else(|| schema("$.lists", "expected object"))?;
        for (k, v) in lists {
            let path = format!("$.lists.{k}");
            let items = v.as_array().ok_or_else(|| schema(&path, "expected array"))?;
            let items = items
                .iter()
                .enumerate()
                .map(|(i, it)| value_from_json(it, &format!("{path}[{i}]")))
                .collect::<Result<_, _>>()?;
            p.lists.insert(k.clone(), items);
        }
    }
    if let Some(procs) = obj.get("procedures") {
        let procs = procs.as_array().ok_or_else(|| schema("$.procedures", "expected array"))?;
        for (i, pj) in procs.iter().enumerate() {
            let path = format!("$.procedures[{i}]");
            let name = pj
                .get("name")
                .and_then(Json::as_str)
                .ok_or_else(|| schema(&path, "missing string field \"name\""))?;
            let params = match pj.get("params") {
                None => Vec::new(),
                Some(Json::Array(ps)) => ps
                    .iter()
                    .map(|x| x.as_str().map(str::to_owned).ok_or_else(|| schema(&path, "params must be strings")))
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(schema(&path, "params must be an array")),
            };
            let body = seq_from_json(pj.get("body").unwrap_or(&Json::Null), &format!("{path}.body"))?;
            p.procedures.push(ProcedureDef { name: name.to_owned(), params, body });
        }
    }
    if let Some(scripts) = obj.get("scripts") {
        let scripts = scripts.as_array().ok_or_else(|| schema("$.scripts", "expected array"))?;
        for (i, sj) in scripts.iter().enumerate() {
            let path = format!("$.scripts[{i}]");
            match sj.get("trigger").and_then(Json::as_str) {
                Some("green_flag") | None => {}
                Some(other) => return Err(schema(&path, format!("unsupported trigger \"{other}\""))),
            }
            let body = seq_from_json(sj.get("body").unwrap_or(&Json::Null), &format!("{path}.body"))?;
            p.scripts.push(Script { trigger: Trigger::GreenFlag, body });
        }
    }
    Ok(p)
}

fn seq_to_json(seq: &[Block]) -> Json {
    Json::Array(seq.iter().map(block_to_json).collect())
}

fn seq_from_json(j: &Json, path: &str) -> Result<Vec<Block>, ProgramError> {
    match j {
        Json::Null => Ok(Vec::new()),
        Json::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, b)| block_from_json(b, &format!("{path}[{i}]")))
            .collect(),
        _ => Err(schema(path, "expected array of blocks")),
    }
}

pub fn block_to_json(b: &Block) -> Json {
    let args = match &b.op {
        Statement::SetVar { var, value } => json!({ "var": var, "value": expr_to_json(value) }),
        Statement::ChangeVar { var, by } => json!({ "var": var, "by": expr_to_json(by) }),
        Statement::ListAdd { list, item } => json!({ "list": list, "item": expr_to_json(item) }),
        Statement::ListDelete { list, index } => json!({ "list": list, "index": expr_to_json(index) }),
        Statement::ListInsert { list, index, item } | Statement::ListReplace { list, index, item } => {
            json!({ "list": list, "index": expr_to_json(index), "item": expr_to_json(item) })
        }
        Statement::Say { message } => json!({ "message": expr_to_json(message) }),
        Statement::If { condition } | Statement::IfElse { condition } | Statement::RepeatUntil { condition } => {
            json!({ "condition": expr_to_json(condition) })
        }
        Statement::Repeat { times } => json!({ "times": expr_to_json(times) }),
        Statement::Call { procedure, inputs } => {
            json!({ "proc": procedure, "inputs": inputs.iter().map(expr_to_json).collect::<Vec<_>>() })
        }
        Statement::Forever | Statement::StopScript => json!({}),
    };
    let mut obj = Map::new();
    obj.insert("id".into(), Json::String(b.id.0.clone()));
    obj.insert("op".into(), Json::String(b.op.opcode().into()));
    obj.insert("args".into(), args);
    if !b.substacks.is_empty() {
        obj.insert("substacks".into(), Json::Array(b.substacks.iter().map(|s| seq_to_json(s)).collect()));
    }
    Json::Object(obj)
}

pub fn block_from_json(j: &Json, path: &str) -> Result<Block, ProgramError> {
    let obj = j.as_object().ok_or_else(|| schema(path, "block must be an object"))?;
    let id = obj
        .get("id")
        .and_then(Json::as_str)
        .ok_or_else(|| schema(path, "missing string field \"id\""))?;
    let opcode = obj
        .get("op")
        .and_then(Json::as_str)
        .ok_or_else(|| schema(path, "missing string field \"op\""))?;
    let empty = Map::new();
    let args = match obj.get("args") {
        None => &empty,
        Some(Json::Object(m)) => m,
        Some(_) => return Err(schema(path, "\"args\" must be an object")),
    };
    let apath = format!("{path}.args");
    let name = |key: &str| -> Result<String, ProgramError> {
        args.get(key)
            .and_then(Json::as_str)
            .map(str::to_owned)
            .ok_or_else(|| schema(&apath, format!("{opcode} needs a name argument \"{key}\"")))
    };
    let expr = |key: &str| -> Result<Expr, ProgramError> {
        let e = args
            .get(key)
            .ok_or_else(|| schema(&apath, format!("{opcode} needs an expression argument \"{key}\"")))?;
        expr_from_json(e, &format!("{apath}.{key}"))
    };
    let op = match opcode {
        "set_var" => Statement::SetVar { var: name("var")?, value: expr("value")? },
        "change_var" => Statement::ChangeVar { var: name("var")?, by: expr("by")? },
        "list_add" => Statement::ListAdd { list: name("list")?, item: expr("item")? },
        "list_delete" => Statement::ListDelete { list: name("list")?, index: expr("index")? },
        "list_insert" => Statement::ListInsert { list: name("list")?, index: expr("index")?, item: expr("item")? },
        "list_replace" => Statement::ListReplace { list: name("list")?, index: expr("index")?, item: expr("item")? },
        "say" => Statement::Say { message: expr("message")? },
        "if" => Statement::If { condition: expr("condition")? },
        "if_else" => Statement::IfElse { condition: expr("condition")? },
        "repeat" => Statement::Repeat { times: expr("times")? },
        "repeat_until" => Statement::RepeatUntil { condition: expr("condition")? },
        "forever" => Statement::Forever,
        "call" => {
            let inputs = match args.get("inputs") {
                None => Vec::new(),
                Some(Json::Array(xs)) => xs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| expr_from_json(x, &format!("{apath}.inputs[{i}]")))
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(schema(&apath, "\"inputs\" must be an array")),
            };
            Statement::Call { procedure: name("proc")?, inputs }
        }
        "stop_script" => Statement::StopScript,
        other => return Err(schema(path, format!("unknown opcode \"{other}\""))),
    };
    let substacks = match obj.get("substacks") {
        None => Vec::new(),
        Some(Json::Array(subs)) => subs
            .iter()
            .enumerate()
            .map(|(i, s)| seq_from_json(s, &format!("{path}.substacks[{i}]")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(schema(path, "\"substacks\" must be an array")),
    };
    Ok(Block { id: BlockId::new(id), op, substacks })
}

pub fn expr_to_json(e: &Expr) -> Json {
    fn node(op: &str, args: &[&Expr], name: Option<&str>) -> Json {
        let mut m = Map::new();
        m.insert("op".into(), Json::String(op.into()));
        if !args.is_empty() {
            m.insert("args".into(), Json::Array(args.iter().map(|a| expr_to_json(a)).collect()));
        }
        if let Some(n) = name {
            m.insert("name".into(), Json::String(n.into()));
        }
        Json::Object(m)
    }
    match e {
        Expr::Literal(v) => value_to_json(v),
        Expr::Var(n) => node("var", &[], Some(n)),
        Expr::Param(n) => node("param", &[], Some(n)),
        Expr::ListItem { list, index } => node("item", &[index], Some(list)),
        Expr::ListLength(list) => node("list_length", &[], Some(list)),
        Expr::ListContains { list, item } => node("list_contains", &[item], Some(list)),
        Expr::StringLength(x) => node("string_length", &[x], None),
        Expr::LetterOf { index, text } => node("letter_of", &[index, text], None),
        Expr::Join(a, b) => node("join", &[a, b], None),
        Expr::Arith { op, lhs, rhs } => {
            let name = match op {
                ArithOp::Add => "add",
                ArithOp::Sub => "sub",
                ArithOp::Mul => "mul",
                ArithOp::Div => "div",
                ArithOp::Mod => "mod",
            };
            node(name, &[lhs, rhs], None)
        }
        Expr::Round(x) => node("round", &[x], None),
        Expr::Compare { op, lhs, rhs } => {
            let name = match op {
                CompareOp::Lt => "lt",
                CompareOp::Gt => "gt",
                CompareOp::Eq => "eq",
            };
            node(name, &[lhs, rhs], None)
        }
        Expr::And(a, b) => node("and", &[a, b], None),
        Expr::Or(a, b) => node("or", &[a, b], None),
        Expr::Not(x) => node("not", &[x], None),
    }
}

pub fn expr_from_json(j: &Json, path: &str) -> Result<Expr, ProgramError> {
    let obj = match j {
        Json::Object(m) => m,
        other => return value_from_json(other, path).map(Expr::Literal),
    };
    let op = obj
        .get("op")
        .and_then(Json::as_str)
        .ok_or_else(|| schema(path, "expression object needs a string \"op\""))?;
    let args: Vec<Expr> = match obj.get("args") {
        None => Vec::new(),
        Some(Json::Array(xs)) => xs
            .iter()
            .enumerate()
            .map(|(i, x)| expr_from_json(x, &format!("{path}.args[{i}]")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(schema(path, "\"args\" must be an array")),
    };
    let name = || -> Result<String, ProgramError> {
        obj.get("name")
            .and_then(Json::as_str)
            .map(str::to_owned)
            .ok_or_else(|| schema(path, format!("\"{op}\" needs a \"name\"")))
    };
    let want = |n: usize| -> Result<(), ProgramError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(ProgramError::Arity { path: path.to_owned(), op: op.to_owned(), expected: n, found: args.len() })
        }
    };
    let mut it = args.clone().into_iter().map(Box::new);
    let mut next = || it.next().expect("arity checked");
    let e = match op {
        "var" => {
            want(0)?;
            Expr::Var(name()?)
        }
        "param" => {
            want(0)?;
            Expr::Param(name()?)
        }
        "item" => {
            want(1)?;
            Expr::ListItem { list: name()?, index: next() }
        }
        "list_length" => {
            want(0)?;
            Expr::ListLength(name()?)
        }
        "list_contains" => {
            want(1)?;
            Expr::ListContains { list: name()?, item: next() }
        }
        "string_length" => {
            want(1)?;
            Expr::StringLength(next())
        }
        "letter_of" => {
            want(2)?;
            Expr::LetterOf { index: next(), text: next() }
        }
        "join" => {
            want(2)?;
            Expr::Join(next(), next())
        }
        "add" | "sub" | "mul" | "div" | "mod" => {
            want(2)?;
            let op = match op {
                "add" => ArithOp::Add,
                "sub" => ArithOp::Sub,
                "mul" => ArithOp::Mul,
                "div" => ArithOp::Div,
                _ => ArithOp::Mod,
            };
            Expr::Arith { op, lhs: next(), rhs: next() }
        }
        "round" => {
            want(1)?;
            Expr::Round(next())
        }
        "lt" | "gt" | "eq" => {
            want(2)?;
            let op = match op {
                "lt" => CompareOp::Lt,
                "gt" => CompareOp::Gt,
                _ => CompareOp::Eq,
            };
            Expr::Compare { op, lhs: next(), rhs: next() }
        }
        "and" => {
            want(2)?;
            Expr::And(next(), next())
        }
        "or" => {
            want(2)?;
            Expr::Or(next(), next())
        }
        "not" => {
            want(1)?;
            Expr::Not(next())
        }
        other => return Err(schema(path, format!("unknown expression op \"{other}\""))),
    };
    Ok(e)
}

impl Serialize for Block {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        block_to_json(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = Json::deserialize(d)?;
        block_from_json(&j, "$").map_err(serde::de::Error::custom)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        expr_to_json(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = Json::deserialize(d)?;
        expr_from_json(&j, "$").map_err(serde::de::Error::custom)
    }
}

impl Serialize for Program {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        program_to_json(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Program {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = Json::deserialize(d)?;
        program_from_json(&j).map_err(serde::de::Error::custom)
    }
}
