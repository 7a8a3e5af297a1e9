//! 2x2 used/not-used tables by learning group.

use std::collections::BTreeSet;
use std::fmt;

use blockdbg_core::Group;
use serde::{Deserialize, Serialize};

use crate::usage::{BinaryUsage, DebuggerFunction};
use crate::AnalyticsError;

/// Rows are used / not used; columns are group A (with tool learning) and
/// group B (without tool learning).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub const fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable2x2 { a, b, c, d }
    }

    pub const fn from_rows(rows: [[u64; 2]; 2]) -> Self {
        Self::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
    }

    pub fn rows(&self) -> [[u64; 2]; 2] {
        [[self.a, self.b], [self.c, self.d]]
    }

    pub fn row_totals(&self) -> [u64; 2] {
        [self.a + self.b, self.c + self.d]
    }

    pub fn column_totals(&self) -> [u64; 2] {
        [self.a + self.c, self.b + self.d]
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn is_degenerate(&self) -> bool {
        self.row_totals().contains(&0) || self.column_totals().contains(&0)
    }

    pub fn swap_rows(&self) -> Self {
        Self::new(self.c, self.d, self.a, self.b)
    }

    pub fn swap_columns(&self) -> Self {
        Self::new(self.b, self.a, self.d, self.c)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a, self.c, self.b, self.d)
    }
}

impl fmt::Display for ContingencyTable2x2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]]", self.a, self.b, self.c, self.d)
    }
}

pub fn build_table(
    group_a: &[BinaryUsage],
    group_b: &[BinaryUsage],
    f: DebuggerFunction,
) -> Result<ContingencyTable2x2, AnalyticsError> {
    if group_a.is_empty() {
        return Err(AnalyticsError::EmptyGroup(Group::A));
    }
    if group_b.is_empty() {
        return Err(AnalyticsError::EmptyGroup(Group::B));
    }
    let mut seen = BTreeSet::new();
    for u in group_a.iter().chain(group_b) {
        if !seen.insert(u.subject_id.as_str()) {
            return Err(AnalyticsError::DuplicateSubject(u.subject_id.clone()));
        }
    }
    let used = |g: &[BinaryUsage]| g.iter().filter(|u| u.used(f)).count() as u64;
    let (a, b) = (used(group_a), used(group_b));
    Ok(ContingencyTable2x2::new(a, b, group_a.len() as u64 - a, group_b.len() as u64 - b))
}
