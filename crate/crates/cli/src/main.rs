//! `blockdbg`: run block programs, debug them from a script or a frontend,
//! replay session logs and analyze debugger usage.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockdbg", version, about = "Block-language runtime with a breakpoint debugger and session analytics")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
pub struct SessionArgs {
    /// Session log file (JSONL); every debugger action is appended to it.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Tick budget per run before the session pauses.
    #[arg(long, default_value_t = 100_000)]
    pub fuel: u64,
    /// Pseudonymous subject id recorded in the log.
    #[arg(long, default_value = "anonymous")]
    pub subject: String,
    /// Learning group recorded in the log (A or B).
    #[arg(long, default_value = "unspecified")]
    pub group: String,
    /// Session id; defaults to the subject id and the start time.
    #[arg(long)]
    pub session_id: Option<String>,
    /// Start running immediately instead of pausing before the first block.
    #[arg(long)]
    pub no_pause_on_entry: bool,
    /// Breakpoints to place before the first run.
    #[arg(long = "break", value_name = "BLOCK_ID")]
    pub breakpoints: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a program to completion and print its output.
    /// Exit 0 when it completes, 2 when the fuel runs out, 1 on errors.
    Run {
        program: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
    },
    /// Debug a program with commands read from a script file or stdin.
    Debug {
        program: PathBuf,
        /// Command script; reads stdin when omitted.
        #[arg(long)]
        script: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Serve a debug session to one frontend over stdio, TCP or WebSocket.
    Serve {
        program: PathBuf,
        /// TCP port; raw JSON lines and WebSocket are both accepted.
        #[arg(long, env = "BLOCKDBG_PORT", conflicts_with = "stdio")]
        port: Option<u16>,
        /// Speak the protocol on stdin/stdout.
        #[arg(long)]
        stdio: bool,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Re-drive a session log against a program.
    /// Exit 0 when reproduced, 3 on divergence, 1 on errors (including a
    /// program hash mismatch).
    Replay {
        log: PathBuf,
        program: PathBuf,
        /// Abort on the first malformed log line.
        #[arg(long)]
        strict: bool,
    },
    /// Tally debugger usage across session logs and test group differences.
    Analyze {
        /// Session logs, or directories containing `.dbglog.jsonl` files.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// CSV with header `subject_id,group`.
        #[arg(long)]
        roster: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Abort on the first malformed log line.
        #[arg(long)]
        strict: bool,
        /// Events after a breakpoint hit in which an inspection counts
        /// (default: until the next continue or run end).
        #[arg(long)]
        window: Option<usize>,
        /// First rater's tally CSV.
        #[arg(long, requires = "rater_b")]
        rater_a: Option<PathBuf>,
        /// Second rater's tally CSV.
        #[arg(long, requires = "rater_a")]
        rater_b: Option<PathBuf>,
        /// Directory for report.json, report.txt and tallies.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the JSON report instead of the text tables.
        #[arg(long)]
        json: bool,
    },
    /// Check a program file and list its diagnostics.
    Validate { program: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { program, fuel } => commands::run(&program, fuel),
        Cmd::Debug { program, script, session } => commands::debug(&program, script.as_deref(), &session),
        Cmd::Serve { program, port, stdio, session } => commands::serve(&program, port, stdio, &session),
        Cmd::Replay { log, program, strict } => commands::replay(&log, &program, strict),
        Cmd::Analyze { logs, roster, alpha, strict, window, rater_a, rater_b, out, json } => {
            let raters = rater_a.zip(rater_b);
            commands::analyze(&commands::AnalyzeArgs { logs, roster, alpha, strict, window, raters, out, json })
        }
        Cmd::Validate { program } => commands::validate(&program),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
