//! Engine-generated study corpora with prescribed usage counts, for
//! exercising the analysis end to end.

use blockdbg_core::log::ManualClock;
use blockdbg_core::{BlockId, DebugError, DebugSession, Group, Program, SessionLog, SessionOptions};

use crate::roster::Roster;
use crate::usage::DebuggerFunction;

/// How many subjects of each group use each function, in
/// [`DebuggerFunction::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyPlan {
    pub group_size: usize,
    pub users_a: [usize; 6],
    pub users_b: [usize; 6],
}

impl StudyPlan {
    /// Ten subjects per group. Continue is used by 0 of A and 6 of B; step
    /// in by all of A and 5 of B. The other functions get arbitrary counts.
    pub fn published_margins() -> Self {
        StudyPlan { group_size: 10, users_a: [10, 0, 8, 10, 4, 7], users_b: [6, 6, 2, 5, 0, 3] }
    }

    pub fn users(&self, group: Group, f: DebuggerFunction) -> usize {
        let i = DebuggerFunction::ALL.iter().position(|g| *g == f).expect("known function");
        if group == Group::A {
            self.users_a[i]
        } else {
            self.users_b[i]
        }
    }

    pub fn subject_ids(&self, group: Group) -> Vec<String> {
        let prefix = if group == Group::A { 'a' } else { 'b' };
        (1..=self.group_size).map(|i| format!("{prefix}{i:02}")).collect()
    }

    pub fn roster(&self) -> Roster {
        [Group::A, Group::B]
            .into_iter()
            .flat_map(|g| self.subject_ids(g).into_iter().map(move |s| (s, g)))
            .collect()
    }
}

/// Drives one debug session per subject. Subject `i` of a group uses
/// function `f` exactly when `i < users(f)`; a user of `f` invokes it once,
/// in the order breakpoint, watch, step in, step over, step out, continue.
/// Timestamps come from a manual clock advanced one second per action, so
/// the logs are identical on every call.
pub fn study_logs(program: &Program, breakpoint: &BlockId, plan: &StudyPlan) -> Result<Vec<SessionLog>, DebugError> {
    let mut logs = Vec::new();
    for group in [Group::A, Group::B] {
        for (i, subject) in plan.subject_ids(group).into_iter().enumerate() {
            let uses = |f| i < plan.users(group, f);
            let clock = ManualClock::new();
            let options = SessionOptions {
                session_id: format!("{subject}-practice"),
                subject_id: subject.clone(),
                group,
                ..SessionOptions::default()
            };
            let mut s = DebugSession::start_with(program.clone(), options, Box::new(clock.clone()), None)?;
            for f in [
                DebuggerFunction::Breakpoint,
                DebuggerFunction::WatchExpression,
                DebuggerFunction::StepIn,
                DebuggerFunction::StepOver,
                DebuggerFunction::StepOut,
                DebuggerFunction::Continue,
            ] {
                if !uses(f) {
                    continue;
                }
                clock.advance(1000);
                // rejected attempts are still logged and counted
                let _ = match f {
                    DebuggerFunction::Breakpoint => s.set_breakpoint(breakpoint),
                    DebuggerFunction::WatchExpression => s.add_watch("k").map(drop),
                    DebuggerFunction::StepIn => s.step_in(),
                    DebuggerFunction::StepOver => s.step_over(),
                    DebuggerFunction::StepOut => s.step_out(),
                    DebuggerFunction::Continue => s.continue_(),
                };
            }
            clock.advance(1000);
            s.end()?;
            logs.push(s.session_log());
        }
    }
    Ok(logs)
}
