//! Per-subject counts of the six debugger functions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use blockdbg_core::{EventKind, Group, SessionLog};
use serde::{Deserialize, Serialize};

/// Revision of the event-counting rules in [`tally_usage`]. Bumped whenever
/// the mapping from log events to counts changes.
pub const COUNTING_RULES_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebuggerFunction {
    Breakpoint,
    #[serde(rename = "continue")]
    Continue,
    StepOver,
    StepIn,
    StepOut,
    WatchExpression,
}

impl DebuggerFunction {
    pub const ALL: [DebuggerFunction; 6] = [
        DebuggerFunction::Breakpoint,
        DebuggerFunction::Continue,
        DebuggerFunction::StepOver,
        DebuggerFunction::StepIn,
        DebuggerFunction::StepOut,
        DebuggerFunction::WatchExpression,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DebuggerFunction::Breakpoint => "breakpoint",
            DebuggerFunction::Continue => "continue",
            DebuggerFunction::StepOver => "step_over",
            DebuggerFunction::StepIn => "step_in",
            DebuggerFunction::StepOut => "step_out",
            DebuggerFunction::WatchExpression => "watch_expression",
        }
    }

    /// The log event that counts as one use of this function.
    pub fn event_kind(self) -> EventKind {
        match self {
            DebuggerFunction::Breakpoint => EventKind::BreakpointSet,
            DebuggerFunction::Continue => EventKind::Continue,
            DebuggerFunction::StepOver => EventKind::StepOver,
            DebuggerFunction::StepIn => EventKind::StepIn,
            DebuggerFunction::StepOut => EventKind::StepOut,
            DebuggerFunction::WatchExpression => EventKind::WatchAdd,
        }
    }
}

impl fmt::Display for DebuggerFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DebuggerFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        DebuggerFunction::ALL
            .into_iter()
            .find(|f| f.as_str() == s || (s == "continue_" && *f == DebuggerFunction::Continue))
            .ok_or_else(|| format!("unknown debugger function \"{s}\""))
    }
}

fn zero_counts() -> BTreeMap<DebuggerFunction, u64> {
    DebuggerFunction::ALL.into_iter().map(|f| (f, 0)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTally {
    pub subject_id: String,
    pub group: Group,
    /// Always holds all six functions.
    pub counts: BTreeMap<DebuggerFunction, u64>,
}

impl UsageTally {
    pub fn new(subject_id: impl Into<String>, group: Group) -> Self {
        UsageTally { subject_id: subject_id.into(), group, counts: zero_counts() }
    }

    pub fn with(mut self, f: DebuggerFunction, n: u64) -> Self {
        self.counts.insert(f, n);
        self
    }

    pub fn count(&self, f: DebuggerFunction) -> u64 {
        self.counts.get(&f).copied().unwrap_or(0)
    }

    /// Adds another tally's counts (e.g. a second session of the same subject).
    pub fn absorb(&mut self, other: &UsageTally) {
        for f in DebuggerFunction::ALL {
            *self.counts.entry(f).or_insert(0) += other.count(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryUsage {
    pub subject_id: String,
    pub group: Group,
    pub used: BTreeMap<DebuggerFunction, bool>,
}

impl BinaryUsage {
    pub fn used(&self, f: DebuggerFunction) -> bool {
        self.used.get(&f).copied().unwrap_or(false)
    }
}

/// Counts one use per logged attempt: `breakpoint_set`, `continue`,
/// `step_over`, `step_in`, `step_out` and `watch_add` events, including
/// attempts the engine rejected.
pub fn tally_usage(log: &SessionLog) -> UsageTally {
    let mut t = UsageTally::new(log.subject_id().unwrap_or_default(), log.group());
    for f in DebuggerFunction::ALL {
        t.counts.insert(f, log.count(f.event_kind()) as u64);
    }
    t
}

pub fn binarize(t: &UsageTally) -> BinaryUsage {
    BinaryUsage {
        subject_id: t.subject_id.clone(),
        group: t.group,
        used: DebuggerFunction::ALL.into_iter().map(|f| (f, t.count(f) >= 1)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for f in DebuggerFunction::ALL {
            assert_eq!(f.as_str().parse::<DebuggerFunction>().unwrap(), f);
            assert_eq!(serde_json::to_value(f).unwrap(), f.as_str());
        }
        assert_eq!("continue_".parse::<DebuggerFunction>().unwrap(), DebuggerFunction::Continue);
    }

    #[test]
    fn binarize_examples() {
        let t = UsageTally::new("s", Group::A).with(DebuggerFunction::StepIn, 3);
        let b = binarize(&t);
        assert!(b.used(DebuggerFunction::StepIn));
        assert_eq!(b.used.values().filter(|u| **u).count(), 1);
        assert!(binarize(&UsageTally::new("s", Group::A)).used.values().all(|u| !u));
        let both = UsageTally::new("s", Group::B).with(DebuggerFunction::Breakpoint, 1).with(DebuggerFunction::Continue, 7);
        let b = binarize(&both);
        assert!(b.used(DebuggerFunction::Breakpoint) && b.used(DebuggerFunction::Continue));
    }
}
