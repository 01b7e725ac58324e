//! Human label files: one JSON object per line giving the sub-scores a
//! rater assigned to a record.
//!
//! ```text
//! {"id":"ref0000#high","subs":[0.0,1.0,0.0,0.0,0.0,0.0]}
//! ```
//!
//! Labels replace the planted sub-scores of the matching records before
//! evaluation; every evaluated record needs a label.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::corpus::ReportRecord;
use crate::error::{Error, Result};
use crate::scoring::{ScoringSystem, SubScores};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelLine {
    id: String,
    subs: SubScores,
}

pub type Labels = BTreeMap<String, SubScores>;

pub fn parse_labels(text: &str, system: &ScoringSystem) -> Result<Labels> {
    let mut out = Labels::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: LabelLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        system.check(&raw.subs).map_err(|e| match e {
            Error::Structural(m) | Error::Validation { message: m, .. } => {
                Error::validation(format!("line {lineno}: subs"), m)
            }
            other => other,
        })?;
        if out.insert(raw.id.clone(), raw.subs).is_some() {
            return Err(Error::validation(format!("line {lineno}: id"), format!("duplicate label for {:?}", raw.id)));
        }
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>, system: &ScoringSystem) -> Result<Labels> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, system)
}

/// Copies of `records` carrying the labelled sub-scores, totals and quality.
pub fn apply_labels(records: &[ReportRecord], labels: &Labels, system: &ScoringSystem) -> Result<Vec<ReportRecord>> {
    records
        .iter()
        .map(|r| {
            let subs = labels
                .get(&r.id)
                .ok_or_else(|| Error::validation("labels", format!("no label for record {:?}", r.id)))?;
            let total = system.total_score(subs)?;
            Ok(ReportRecord {
                subs: subs.clone(),
                total,
                quality: system.quality_of_total(total),
                ..r.clone()
            })
        })
        .collect()
}
