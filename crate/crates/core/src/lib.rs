//! Block-language runtime with an integrated breakpoint debugger.
//!
//! * [`program`]: program model, `.blk.json` format, validation and edits
//! * [`vm`]: deterministic tree-walking interpreter
//! * [`debug`]: breakpoints, stepping, watches and pause reporting
//! * [`log`]: JSONL session log
//! * [`replay`]: re-driving a session from its log

pub mod debug;
pub mod error;
pub mod exprtext;
pub mod log;
pub mod program;
pub mod replay;
pub mod value;
pub mod vm;

pub use debug::{Command, DebugSession, PauseInfo, PauseReason, SessionOptions, SessionStatus};
pub use error::{DebugError, LogError, ProgramError, VmError};
pub use log::{EventKind, Group, LogEvent, SessionLog};
pub use program::{parse_program, serialize_program, validate, BlockId, Edit, Expr, Program};
pub use value::Value;
pub use vm::{MachineState, RunResult, Termination};
