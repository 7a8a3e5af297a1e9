//! Whole-study analysis over a set of session logs, rendered as JSON and as
//! aligned text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use blockdbg_core::{Group, SessionLog};
use serde::Serialize;

use crate::procedure::{assess_procedure_with, AssessConfig, ProcedureAssessment};
use crate::raters::{compare_raters, RaterDiff};
use crate::roster::Roster;
use crate::stats::{chi_squared_yates, fisher_exact, Method, TestResult, DEFAULT_ALPHA};
use crate::table::{build_table, ContingencyTable2x2};
use crate::usage::{binarize, tally_usage, BinaryUsage, DebuggerFunction, UsageTally, COUNTING_RULES_VERSION};
use crate::AnalyticsError;

/// Published p-values for specific tables, checked against our own results
/// whenever one of these tables comes up.
pub const REFERENCE_P_VALUES: [(ContingencyTable2x2, f64); 2] = [
    (ContingencyTable2x2::from_rows([[10, 5], [0, 5]]), 0.038_867_104),
    (ContingencyTable2x2::from_rows([[0, 6], [10, 4]]), 0.055_829_295),
];

/// Agreement needed to call a reference p-value reproduced.
pub const REFERENCE_TOLERANCE: f64 = 5e-6;

const DECIMALS: usize = 9;

fn fixed(x: f64) -> String {
    format!("{x:.DECIMALS$}")
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

pub struct AnalysisInput {
    pub logs: Vec<SessionLog>,
    /// Group assignment; when absent each log's own group field is used.
    pub roster: Option<Roster>,
    pub alpha: f64,
    pub assess: AssessConfig,
    /// Two raters' independent tallies to compare.
    pub raters: Option<(Vec<UsageTally>, Vec<UsageTally>)>,
}

impl AnalysisInput {
    pub fn new(logs: Vec<SessionLog>) -> Self {
        AnalysisInput { logs, roster: None, alpha: DEFAULT_ALPHA, assess: AssessConfig::default(), raters: None }
    }
}

/// A test result with values rounded to the report's fixed precision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportedTest {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub significant: bool,
}

impl From<TestResult> for ReportedTest {
    fn from(r: TestResult) -> Self {
        ReportedTest {
            method: r.method,
            statistic: r.statistic.map(round9),
            p_value: round9(r.p_value),
            significant: r.significant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionReport {
    pub function: DebuggerFunction,
    pub table: [[u64; 2]; 2],
    /// Both tests, or empty when the table has a zero margin.
    pub tests: Vec<ReportedTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub group: Group,
    pub sessions: usize,
    pub counts: BTreeMap<DebuggerFunction, u64>,
    pub used: BTreeMap<DebuggerFunction, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub counting_rules_version: u32,
    pub alpha: f64,
    pub inspection_window: Option<usize>,
    pub subjects: Vec<SubjectReport>,
    pub tables: Vec<FunctionReport>,
    pub procedures: Vec<ProcedureAssessment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rater_diff: Option<RaterDiff>,
}

/// Notes comparing a table's p-values with a published value for the same
/// counts, if there is one.
pub fn reference_notes(t: &ContingencyTable2x2, yates: &TestResult, fisher: &TestResult) -> Vec<String> {
    REFERENCE_P_VALUES
        .iter()
        .filter(|(rt, _)| rt == t)
        .map(|(_, p)| {
            if (yates.p_value - p).abs() <= REFERENCE_TOLERANCE {
                format!("reference value {} reproduced by chi_squared_yates", fixed(*p))
            } else if (fisher.p_value - p).abs() <= REFERENCE_TOLERANCE {
                format!("reference value {} reproduced by fisher_exact", fixed(*p))
            } else {
                format!(
                    "reference value {} not reproduced (chi_squared_yates {}, fisher_exact {})",
                    fixed(*p),
                    fixed(yates.p_value),
                    fixed(fisher.p_value)
                )
            }
        })
        .collect()
}

fn group_of(subject: &str, log_group: Group, roster: Option<&Roster>) -> Result<Group, AnalyticsError> {
    match roster {
        Some(r) => r
            .get(subject)
            .copied()
            .ok_or_else(|| AnalyticsError::RosterMismatch(format!("subject \"{subject}\" has a log but is not on the roster"))),
        None if log_group == Group::Unspecified => {
            Err(AnalyticsError::RosterMismatch(format!("subject \"{subject}\" has no group; supply a roster")))
        }
        None => Ok(log_group),
    }
}

pub fn analyze(input: &AnalysisInput) -> Result<Analysis, AnalyticsError> {
    let roster = input.roster.as_ref();
    let mut tallies: BTreeMap<String, (UsageTally, usize)> = BTreeMap::new();
    for log in &input.logs {
        let t = tally_usage(log);
        let group = group_of(&t.subject_id, t.group, roster)?;
        let entry = tallies
            .entry(t.subject_id.clone())
            .or_insert_with(|| (UsageTally::new(t.subject_id.clone(), group), 0));
        if entry.0.group != group {
            return Err(AnalyticsError::RosterMismatch(format!(
                "subject \"{}\" is logged in both groups",
                t.subject_id
            )));
        }
        entry.0.absorb(&t);
        entry.1 += 1;
    }
    if let Some(r) = roster {
        if let Some(missing) = r.keys().find(|s| !tallies.contains_key(*s)) {
            return Err(AnalyticsError::RosterMismatch(format!("subject \"{missing}\" is on the roster but has no log")));
        }
    }

    let binary: Vec<BinaryUsage> = tallies.values().map(|(t, _)| binarize(t)).collect();
    let in_group = |g: Group| binary.iter().filter(|b| b.group == g).cloned().collect::<Vec<_>>();
    let (group_a, group_b) = (in_group(Group::A), in_group(Group::B));

    let mut tables = Vec::new();
    for f in DebuggerFunction::ALL {
        let t = build_table(&group_a, &group_b, f)?;
        let report = match (chi_squared_yates(&t, input.alpha), fisher_exact(&t, input.alpha)) {
            (Ok(y), Ok(fe)) => FunctionReport {
                function: f,
                table: t.rows(),
                notes: reference_notes(&t, &y, &fe),
                tests: vec![y.into(), fe.into()],
                undefined: None,
            },
            (Err(e), _) | (_, Err(e)) => {
                FunctionReport { function: f, table: t.rows(), tests: vec![], undefined: Some(e.to_string()), notes: vec![] }
            }
        };
        tables.push(report);
    }

    let subjects = tallies
        .values()
        .zip(&binary)
        .map(|((t, sessions), b)| SubjectReport {
            subject_id: t.subject_id.clone(),
            group: t.group,
            sessions: *sessions,
            counts: t.counts.clone(),
            used: b.used.clone(),
        })
        .collect();

    let mut procedures: Vec<ProcedureAssessment> =
        input.logs.iter().map(|l| assess_procedure_with(l, &input.assess)).collect();
    procedures.sort_by(|a, b| (&a.subject_id, &a.session_id).cmp(&(&b.subject_id, &b.session_id)));

    let rater_diff = input.raters.as_ref().map(|(a, b)| compare_raters(a, b)).transpose()?;

    Ok(Analysis {
        counting_rules_version: COUNTING_RULES_VERSION,
        alpha: input.alpha,
        inspection_window: input.assess.inspection_window,
        subjects,
        tables,
        procedures,
        rater_diff,
    })
}

impl Analysis {
    pub fn table(&self, f: DebuggerFunction) -> &FunctionReport {
        self.tables.iter().find(|t| t.function == f).expect("all six functions are reported")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let count = |g| self.subjects.iter().filter(|s| s.group == g).count();
        let _ = writeln!(out, "Debugger usage report");
        let _ = writeln!(out, "counting rules: v{}", self.counting_rules_version);
        let _ = writeln!(out, "alpha: {}", fixed(self.alpha));
        let _ = writeln!(
            out,
            "subjects: {} (group A, with tool learning: {}; group B, without tool learning: {})",
            self.subjects.len(),
            count(Group::A),
            count(Group::B)
        );

        for t in &self.tables {
            let _ = writeln!(out, "\n== {} ==", t.function);
            let _ = writeln!(out, "{:<24}{:>20}{:>23}", "", "With tool learning", "Without tool learning");
            let _ = writeln!(out, "{:<24}{:>20}{:>23}", "Used", t.table[0][0], t.table[0][1]);
            let _ = writeln!(out, "{:<24}{:>20}{:>23}", "Not Used", t.table[1][0], t.table[1][1]);
            if let Some(reason) = &t.undefined {
                let _ = writeln!(out, "{:<24}{}", "p-value", reason);
            }
            for test in &t.tests {
                let label = match test.method {
                    Method::ChiSquaredYates => "p-value (Yates)",
                    Method::FisherExact => "p-value (Fisher exact)",
                };
                let mark = if test.significant { " *" } else { "" };
                let _ = writeln!(out, "{:<24}{:>20}{}", label, fixed(test.p_value), mark);
                if let Some(stat) = test.statistic {
                    let _ = writeln!(out, "{:<24}{:>20}", "chi-squared statistic", fixed(stat));
                }
            }
            for note in &t.notes {
                let _ = writeln!(out, "note: {note}");
            }
        }

        let _ = writeln!(out, "\n== usage counts ==");
        let mut header = format!("{:<16}{:<6}", "subject", "group");
        for f in DebuggerFunction::ALL {
            let _ = write!(header, "{:>18}", f.as_str());
        }
        let _ = writeln!(out, "{}", header.trim_end());
        for s in &self.subjects {
            let mut line = format!("{:<16}{:<6}", s.subject_id, s.group.to_string());
            for f in DebuggerFunction::ALL {
                let _ = write!(line, "{:>18}", s.counts[&f]);
            }
            let _ = writeln!(out, "{line}");
        }

        let _ = writeln!(out, "\n== debugging procedure (steps 3-5) ==");
        let _ = writeln!(out, "{:<16}{:<16}{:>7}{:>7}{:>7}", "subject", "session", "step3", "step4", "step5");
        let yn = |b: bool| if b { "yes" } else { "no" };
        for p in &self.procedures {
            let _ = writeln!(
                out,
                "{:<16}{:<16}{:>7}{:>7}{:>7}",
                p.subject_id,
                p.session_id,
                yn(p.step3_breakpoint_inserted),
                yn(p.step4_intention),
                yn(p.step5_bug_fixed)
            );
        }

        if let Some(d) = &self.rater_diff {
            let _ = writeln!(out, "\n== rater comparison ==");
            let differing: Vec<_> = d.cells.iter().filter(|c| c.delta != 0).collect();
            let _ = writeln!(out, "differing cells: {} (max |delta| {})", differing.len(), d.max_abs_delta());
            for c in differing {
                let _ = writeln!(out, "  {} {}: {} vs {} (delta {})", c.subject_id, c.function, c.count_a, c.count_b, c.delta);
            }
            let _ = writeln!(out, "binarization flips: {}", d.flips.len());
            for (s, f) in &d.flips {
                let _ = writeln!(out, "  {s} {f}");
            }
        }
        out
    }
}
