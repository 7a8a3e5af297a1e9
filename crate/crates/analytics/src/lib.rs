//! Evaluation of debugger usage from session logs: per-function tallies,
//! used-at-least-once tables, 2x2 significance tests, debugging-procedure
//! assessment and inter-rater comparison.

pub mod procedure;
pub mod raters;
pub mod report;
pub mod roster;
pub mod stats;
pub mod synthetic;
pub mod table;
pub mod usage;

use blockdbg_core::Group;
use thiserror::Error;

pub use procedure::{assess_procedure, assess_procedure_with, AssessConfig, ProcedureAssessment};
pub use raters::{compare_raters, RaterCell, RaterDiff};
pub use report::{analyze, Analysis, AnalysisInput};
pub use stats::{chi_squared_yates, fisher_exact, Method, TestResult, DEFAULT_ALPHA};
pub use table::{build_table, ContingencyTable2x2};
pub use usage::{binarize, tally_usage, BinaryUsage, DebuggerFunction, UsageTally, COUNTING_RULES_VERSION};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("group {0} has no subjects")]
    EmptyGroup(Group),
    #[error("subject \"{0}\" appears more than once")]
    DuplicateSubject(String),
    #[error("a row or column total is zero; the test is undefined for {0}")]
    DegenerateMargin(ContingencyTable2x2),
    #[error("rater tallies cover different subjects (only in first: {only_a:?}; only in second: {only_b:?})")]
    SubjectSetMismatch { only_a: Vec<String>, only_b: Vec<String> },
    #[error("roster mismatch: {0}")]
    RosterMismatch(String),
    #[error("{path}: {message}")]
    InvalidCsv { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
