//! Detection of debugging-procedure steps 3 to 5 in a session log:
//! placing breakpoints, using a breakpoint stop to inspect state, and
//! fixing the program then re-running it.

use blockdbg_core::{EventKind, LogEvent, SessionLog};
use serde::{Deserialize, Serialize};

/// Events that count as inspecting program state at a stop.
pub const INSPECTION_KINDS: [EventKind; 5] =
    [EventKind::WatchEval, EventKind::VariableInspect, EventKind::StepIn, EventKind::StepOver, EventKind::StepOut];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AssessConfig {
    /// Maximum number of events after a breakpoint hit in which an
    /// inspection still counts. `None` means up to the next `continue` or
    /// `run_end`, whichever comes first.
    pub inspection_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StepEvidence {
    pub step3: Vec<usize>,
    pub step4: Vec<usize>,
    pub step5: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureAssessment {
    pub subject_id: String,
    pub session_id: String,
    pub step3_breakpoint_inserted: bool,
    pub step4_intention: bool,
    pub step5_bug_fixed: bool,
    /// Indices into the log's event list.
    pub evidence: StepEvidence,
}

fn accepted(e: &LogEvent) -> bool {
    e.payload.get("accepted").and_then(serde_json::Value::as_bool) != Some(false)
}

pub fn assess_procedure(log: &SessionLog) -> ProcedureAssessment {
    assess_procedure_with(log, &AssessConfig::default())
}

/// Step 3 holds when a breakpoint was set (attempts count). Step 4 holds when
/// a breakpoint hit is followed by an inspection before the next `continue`
/// or `run_end` (and within the configured window); evidence is each such
/// hit and its first inspection. Step 5 holds when an accepted program edit
/// is followed by an accepted `run_start`; evidence is each edit and the
/// run that follows it.
pub fn assess_procedure_with(log: &SessionLog, config: &AssessConfig) -> ProcedureAssessment {
    let ev = &log.events;
    let step3: Vec<usize> = (0..ev.len()).filter(|&i| ev[i].kind == EventKind::BreakpointSet).collect();

    let mut step4 = Vec::new();
    for (hit, _) in ev.iter().enumerate().filter(|(_, e)| e.kind == EventKind::BreakpointHit) {
        let limit = config.inspection_window.map_or(ev.len(), |w| (hit + 1 + w).min(ev.len()));
        let found = ev[hit + 1..limit]
            .iter()
            .take_while(|e| !matches!(e.kind, EventKind::Continue | EventKind::RunEnd))
            .position(|e| INSPECTION_KINDS.contains(&e.kind));
        if let Some(off) = found {
            step4.extend([hit, hit + 1 + off]);
        }
    }

    let mut step5 = Vec::new();
    for (edit, _) in ev.iter().enumerate().filter(|(_, e)| e.kind == EventKind::ProgramEdit && accepted(e)) {
        let rerun = ev[edit + 1..].iter().position(|e| e.kind == EventKind::RunStart && accepted(e));
        if let Some(off) = rerun {
            step5.extend([edit, edit + 1 + off]);
        }
    }

    ProcedureAssessment {
        subject_id: log.subject_id().unwrap_or_default().to_owned(),
        session_id: log.session_id().unwrap_or_default().to_owned(),
        step3_breakpoint_inserted: !step3.is_empty(),
        step4_intention: !step4.is_empty(),
        step5_bug_fixed: !step5.is_empty(),
        evidence: StepEvidence { step3, step4, step5 },
    }
}
