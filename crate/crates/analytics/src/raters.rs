//! Comparison of two independent tallies of the same sessions, plus the
//! CSV format raters use to record them.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use blockdbg_core::Group;
use serde::{Deserialize, Serialize};

use crate::usage::{DebuggerFunction, UsageTally};
use crate::AnalyticsError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterCell {
    pub subject_id: String,
    pub function: DebuggerFunction,
    pub count_a: u64,
    pub count_b: u64,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RaterDiff {
    /// One cell per (subject, function), subjects sorted.
    pub cells: Vec<RaterCell>,
    /// Cells whose used-at-least-once value differs between the raters.
    pub flips: Vec<(String, DebuggerFunction)>,
}

impl RaterDiff {
    pub fn max_abs_delta(&self) -> u64 {
        self.cells.iter().map(|c| c.delta.unsigned_abs()).max().unwrap_or(0)
    }
}

fn by_subject(tallies: &[UsageTally]) -> Result<BTreeMap<&str, &UsageTally>, AnalyticsError> {
    let mut out = BTreeMap::new();
    for t in tallies {
        if out.insert(t.subject_id.as_str(), t).is_some() {
            return Err(AnalyticsError::DuplicateSubject(t.subject_id.clone()));
        }
    }
    Ok(out)
}

pub fn compare_raters(a: &[UsageTally], b: &[UsageTally]) -> Result<RaterDiff, AnalyticsError> {
    let (ma, mb) = (by_subject(a)?, by_subject(b)?);
    let only = |x: &BTreeMap<&str, _>, y: &BTreeMap<&str, _>| -> Vec<String> {
        x.keys().filter(|k| !y.contains_key(*k)).map(|k| k.to_string()).collect()
    };
    let (only_a, only_b) = (only(&ma, &mb), only(&mb, &ma));
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(AnalyticsError::SubjectSetMismatch { only_a, only_b });
    }
    let mut diff = RaterDiff::default();
    for (subject, ta) in &ma {
        let tb = mb[subject];
        for f in DebuggerFunction::ALL {
            let (count_a, count_b) = (ta.count(f), tb.count(f));
            diff.cells.push(RaterCell {
                subject_id: subject.to_string(),
                function: f,
                count_a,
                count_b,
                delta: count_a as i64 - count_b as i64,
            });
            if (count_a >= 1) != (count_b >= 1) {
                diff.flips.push((subject.to_string(), f));
            }
        }
    }
    Ok(diff)
}

/// CSV header for tally files: `subject_id,group` followed by one column per
/// debugger function.
pub fn tally_csv_header() -> Vec<&'static str> {
    let mut h = vec!["subject_id", "group"];
    h.extend(DebuggerFunction::ALL.iter().map(|f| f.as_str()));
    h
}

pub fn write_tallies(w: impl Write, tallies: &[UsageTally]) -> Result<(), AnalyticsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(tally_csv_header())?;
    for t in tallies {
        let mut row = vec![t.subject_id.clone(), t.group.to_string()];
        row.extend(DebuggerFunction::ALL.iter().map(|f| t.count(*f).to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a tally file. Function columns may appear in any order; missing
/// ones count as zero.
pub fn read_tallies(r: impl Read, source: &str) -> Result<Vec<UsageTally>, AnalyticsError> {
    let bad = |message: String| AnalyticsError::InvalidCsv { path: source.to_owned(), message };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let subject = col("subject_id").ok_or_else(|| bad("missing subject_id column".into()))?;
    let group = col("group");
    let mut functions = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i != subject && Some(i) != group {
            let f = h.parse::<DebuggerFunction>().map_err(bad)?;
            functions.push((i, f));
        }
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let g = match group {
            Some(i) => rec[i].parse::<Group>().map_err(|e| bad(format!("row {}: {e}", line + 2)))?,
            None => Group::Unspecified,
        };
        let mut t = UsageTally::new(&rec[subject], g);
        for &(i, f) in &functions {
            let n = rec[i].parse::<u64>().map_err(|e| bad(format!("row {}, {f}: {e}", line + 2)))?;
            t.counts.insert(f, n);
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_tally_file(path: &Path) -> Result<Vec<UsageTally>, AnalyticsError> {
    read_tallies(std::fs::File::open(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tally(s: &str, f: DebuggerFunction, n: u64) -> UsageTally {
        UsageTally::new(s, Group::A).with(f, n)
    }

    #[test]
    fn compare_examples() {
        let a = vec![tally("s1", DebuggerFunction::StepIn, 2), tally("s2", DebuggerFunction::Continue, 3)];
        let d = compare_raters(&a, &a).unwrap();
        assert!(d.cells.iter().all(|c| c.delta == 0));
        assert!(d.flips.is_empty());

        let b = vec![tally("s1", DebuggerFunction::StepIn, 2), tally("s2", DebuggerFunction::Continue, 2)];
        let d = compare_raters(&a, &b).unwrap();
        assert_eq!(d.max_abs_delta(), 1);
        assert!(d.flips.is_empty());

        let a1 = vec![tally("s1", DebuggerFunction::StepIn, 1)];
        let b1 = vec![tally("s1", DebuggerFunction::StepIn, 0)];
        let d = compare_raters(&a1, &b1).unwrap();
        let cell = d.cells.iter().find(|c| c.function == DebuggerFunction::StepIn).unwrap();
        assert_eq!(cell.delta, 1);
        assert_eq!(d.flips, vec![("s1".to_string(), DebuggerFunction::StepIn)]);
    }

    #[test]
    fn mismatched_subjects() {
        let a = vec![tally("s1", DebuggerFunction::StepIn, 1)];
        let b = vec![tally("s2", DebuggerFunction::StepIn, 1)];
        match compare_raters(&a, &b) {
            Err(AnalyticsError::SubjectSetMismatch { only_a, only_b }) => {
                assert_eq!(only_a, ["s1"]);
                assert_eq!(only_b, ["s2"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_and_column_order() {
        let t = vec![tally("s1", DebuggerFunction::StepOut, 4), UsageTally::new("s2", Group::B)];
        let mut buf = Vec::new();
        write_tallies(&mut buf, &t).unwrap();
        assert_eq!(read_tallies(buf.as_slice(), "mem").unwrap(), t);
        let shuffled = "step_in, subject_id ,group\n2,s9,B\n";
        let back = read_tallies(shuffled.as_bytes(), "mem").unwrap();
        assert_eq!(back[0].count(DebuggerFunction::StepIn), 2);
        assert_eq!(back[0].count(DebuggerFunction::Breakpoint), 0);
        assert!(read_tallies("subject_id,jumps\ns1,1\n".as_bytes(), "mem").is_err());
    }
}
