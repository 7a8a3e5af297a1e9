use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use blockdbg_analytics::raters::{read_tally_file, write_tallies};
use blockdbg_analytics::report::AnalysisInput;
use blockdbg_analytics::roster::read_roster_file;
use blockdbg_analytics::{analyze as run_analysis, AssessConfig, UsageTally};
use blockdbg_core::log::{self, JsonlSink, SystemClock};
use blockdbg_core::program::{has_errors, Severity};
use blockdbg_core::replay::{replay as run_replay, ReplayError};
use blockdbg_core::vm::VmEvent;
use blockdbg_core::{
    parse_program, validate as validate_program, DebugSession, MachineState, Program, SessionLog, SessionOptions,
    Termination,
};
use blockdbg_protocol::{bind, serve_stdio, serve_tcp_once, Server};

use crate::SessionArgs;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FUEL: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

fn load(path: &Path) -> Result<Program> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let program = parse_program(&text).with_context(|| format!("parsing {}", path.display()))?;
    let diags = validate_program(&program);
    for d in diags.iter().filter(|d| d.severity == Severity::Warning) {
        eprintln!("warning: {d}");
    }
    if has_errors(&diags) {
        for d in diags.iter().filter(|d| d.severity == Severity::Error) {
            eprintln!("error: {d}");
        }
        bail!("{} is not a valid program", path.display());
    }
    Ok(program)
}

pub fn run(path: &Path, fuel: u64) -> Result<u8> {
    let program = load(path)?;
    let result = MachineState::load(&program)?.run_to_completion(fuel);
    for e in &result.events {
        match e {
            VmEvent::Output { text, .. } => println!("{text}"),
            VmEvent::Warning { block, message } => eprintln!("warning: {block}: {message}"),
        }
    }
    Ok(match result.termination {
        Termination::Completed => EXIT_OK,
        Termination::FuelExhausted => {
            eprintln!("stopped: fuel of {fuel} ticks exhausted");
            EXIT_FUEL
        }
    })
}

fn open_session(program: Program, args: &SessionArgs) -> Result<DebugSession> {
    let group = args.group.parse().map_err(anyhow::Error::msg)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let options = SessionOptions {
        pause_on_entry: !args.no_pause_on_entry,
        breakpoints: args.breakpoints.iter().map(|b| b.as_str().into()).collect(),
        fuel: args.fuel,
        session_id: args.session_id.clone().unwrap_or_else(|| format!("{}-{started}", args.subject)),
        subject_id: args.subject.clone(),
        group,
        record_trace: false,
    };
    let sink = match &args.log {
        Some(path) => Some(Box::new(JsonlSink::open(path).with_context(|| format!("opening {}", path.display()))?)
            as Box<dyn log::EventSink>),
        None => None,
    };
    Ok(DebugSession::start_with(program, options, Box::new(SystemClock::new()), sink)?)
}

/// Prints what the session did since the last call: output lines, pauses
/// and run ends.
fn report_progress(s: &mut DebugSession) {
    use blockdbg_core::EventKind;
    for e in s.drain_new_events() {
        match e.kind {
            EventKind::Output => println!("> {}", e.payload_str("text").unwrap_or_default()),
            EventKind::BreakpointHit | EventKind::Pause => {
                let reason = e.payload_str("reason").unwrap_or_default();
                println!("paused at {} ({reason})", e.block().unwrap_or_default());
            }
            EventKind::RunEnd => println!("run ended: {}", e.payload_str("termination").unwrap_or_default()),
            _ => {}
        }
    }
}

fn debug_command(s: &mut DebugSession, line: &str) -> Result<bool> {
    let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let rest = rest.trim();
    match word {
        "break" | "b" => {
            for id in rest.split_whitespace() {
                s.set_breakpoint(&id.into())?;
            }
        }
        "clear" => s.clear_breakpoint(&rest.into())?,
        "continue" | "c" => s.continue_()?,
        "step_in" | "in" | "s" => s.step_in()?,
        "step_over" | "over" | "next" | "n" => s.step_over()?,
        "step_out" | "out" => s.step_out()?,
        "watch" => println!("watch {}", s.add_watch(rest)?),
        "unwatch" => s.remove_watch(rest.parse().context("watch id")?)?,
        "eval" => {
            for r in s.eval_watches()? {
                match r.value {
                    Some(v) => println!("{} = {}", r.text, v),
                    None => println!("{} = <unresolved>", r.text),
                }
            }
        }
        "inspect" => {
            let snap = s.inspect_variables()?;
            println!("{}", serde_json::to_string(&snap)?);
        }
        "launch" => s.launch(rest != "nopause")?,
        "where" => match s.paused_location() {
            Some(p) => println!("paused at {} (depth {})", p.block, p.stack_depth),
            None => println!("{:?}", s.status()),
        },
        "quit" | "q" => return Ok(false),
        other => bail!("unknown debug command \"{other}\""),
    }
    Ok(true)
}

pub fn debug(path: &Path, script: Option<&Path>, args: &SessionArgs) -> Result<u8> {
    let program = load(path)?;
    let mut s = open_session(program, args)?;
    report_progress(&mut s);
    let reader: Box<dyn BufRead> = match script {
        Some(p) => Box::new(BufReader::new(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)),
        None => Box::new(BufReader::new(io::stdin())),
    };
    for line in reader.lines() {
        let line = line?;
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let keep_going = match debug_command(&mut s, line) {
            Ok(k) => k,
            Err(e) => {
                println!("error: {e}");
                true
            }
        };
        report_progress(&mut s);
        if !keep_going {
            break;
        }
    }
    s.end()?;
    Ok(EXIT_OK)
}

pub fn serve(path: &Path, port: Option<u16>, stdio: bool, args: &SessionArgs) -> Result<u8> {
    let program = load(path)?;
    if !stdio && port.is_none() {
        bail!("no transport: pass --stdio or --port (or set BLOCKDBG_PORT)");
    }
    let listener = match port {
        Some(p) if !stdio => Some(bind(p)?),
        _ => None,
    };
    let mut server = Server::new(open_session(program, args)?);
    match listener {
        Some(l) => {
            eprintln!("listening on {}", l.local_addr()?);
            serve_tcp_once(&mut server, &l)?;
        }
        None => serve_stdio(&mut server)?,
    }
    Ok(EXIT_OK)
}

pub fn replay(log_path: &Path, program_path: &Path, strict: bool) -> Result<u8> {
    let program = load(program_path)?;
    let log = read_log(log_path, strict)?;
    match run_replay(&log, &program) {
        Ok(r) if r.reproduced => {
            println!("reproduced: {} observable events match", r.compared);
            Ok(EXIT_OK)
        }
        Ok(r) => {
            let d = r.divergence.expect("divergence reported");
            println!("diverged at {d}");
            Ok(EXIT_DIVERGED)
        }
        Err(e @ ReplayError::HashMismatch { .. }) => Err(e.into()),
        Err(e) => Err(e).context("replay failed"),
    }
}

fn read_log(path: &Path, strict: bool) -> Result<SessionLog> {
    let out = log::read(path, strict).with_context(|| format!("reading {}", path.display()))?;
    for d in &out.diagnostics {
        eprintln!("warning: {}: {d}", path.display());
    }
    Ok(out.log)
}

pub struct AnalyzeArgs {
    pub logs: Vec<PathBuf>,
    pub roster: Option<PathBuf>,
    pub alpha: f64,
    pub strict: bool,
    pub window: Option<usize>,
    pub raters: Option<(PathBuf, PathBuf)>,
    pub out: Option<PathBuf>,
    pub json: bool,
}

/// Expands directories into their `.dbglog.jsonl` files, sorted.
fn log_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            found.retain(|f| f.to_string_lossy().ends_with(log::FILE_EXTENSION));
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no session logs found");
    }
    Ok(files)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<u8> {
    let logs = log_files(&args.logs)?
        .iter()
        .map(|p| read_log(p, args.strict))
        .collect::<Result<Vec<_>>>()?;
    let mut input = AnalysisInput::new(logs);
    input.alpha = args.alpha;
    input.assess = AssessConfig { inspection_window: args.window };
    if let Some(r) = &args.roster {
        input.roster = Some(read_roster_file(r)?);
    }
    if let Some((a, b)) = &args.raters {
        input.raters = Some((read_tally_file(a)?, read_tally_file(b)?));
    }
    let analysis = run_analysis(&input)?;
    let (json, text) = (analysis.to_json(), analysis.to_text());
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), &json)?;
        fs::write(dir.join("report.txt"), &text)?;
        let tallies: Vec<UsageTally> = analysis
            .subjects
            .iter()
            .map(|s| UsageTally { subject_id: s.subject_id.clone(), group: s.group, counts: s.counts.clone() })
            .collect();
        write_tallies(fs::File::create(dir.join("tallies.csv"))?, &tallies)?;
    }
    print!("{}", if args.json { json } else { text });
    Ok(EXIT_OK)
}

pub fn validate(path: &Path) -> Result<u8> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let program = parse_program(&text).with_context(|| format!("parsing {}", path.display()))?;
    let diags = validate_program(&program);
    for d in &diags {
        println!("{d}");
    }
    if has_errors(&diags) {
        return Ok(1);
    }
    println!("ok: {} blocks, hash {}", program.blocks().len(), program.content_hash());
    Ok(EXIT_OK)
}
