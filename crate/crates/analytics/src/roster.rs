//! Roster CSV (`subject_id,group`) assigning subjects to learning groups.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use blockdbg_core::Group;
use serde::Deserialize;

use crate::AnalyticsError;

pub type Roster = BTreeMap<String, Group>;

#[derive(Deserialize)]
struct Row {
    subject_id: String,
    group: String,
}

pub fn read_roster(r: impl Read, source: &str) -> Result<Roster, AnalyticsError> {
    let bad = |message: String| AnalyticsError::InvalidCsv { path: source.to_owned(), message };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Roster::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let group = match row.group.parse::<Group>() {
            Ok(g @ (Group::A | Group::B)) => g,
            Ok(Group::Unspecified) => return Err(bad(format!("row {}: group must be A or B", i + 2))),
            Err(e) => return Err(bad(format!("row {}: {e}", i + 2))),
        };
        if out.insert(row.subject_id.clone(), group).is_some() {
            return Err(AnalyticsError::DuplicateSubject(row.subject_id));
        }
    }
    Ok(out)
}

pub fn read_roster_file(path: &Path) -> Result<Roster, AnalyticsError> {
    read_roster(std::fs::File::open(path)?, &path.display().to_string())
}
