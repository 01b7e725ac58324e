//! Line-delimited JSON record files, one object per line:
//!
//! ```text
//! {"id":"ref0000#high","reference_text":"...","candidate_text":"...","subs":[0.0,1.0,...],"total":1.0,"tier":"high"}
//! ```
//!
//! Totals are re-validated against the scoring system on read.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ReportRecord, Tier};
use crate::error::{Error, Result};
use crate::scoring::{ScoringSystem, SubScores};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    reference_text: String,
    candidate_text: String,
    subs: SubScores,
    total: f64,
    tier: Tier,
}

pub fn records_to_string(records: &[ReportRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            reference_text: r.reference_text.clone(),
            candidate_text: r.candidate_text.clone(),
            subs: r.subs.clone(),
            total: r.total,
            tier: r.tier,
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_records(records: &[ReportRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, records_to_string(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>, system: &ScoringSystem) -> Result<Vec<ReportRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, system)
}

/// Parses records and checks each against `system`. Line numbers are 1-based.
pub fn parse_records(text: &str, system: &ScoringSystem) -> Result<Vec<ReportRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let total = system.total_score(&raw.subs).map_err(|e| match e {
            Error::Structural(m) | Error::Validation { message: m, .. } => {
                Error::validation(format!("line {lineno}: subs"), m)
            }
            other => other,
        })?;
        if (total - raw.total).abs() > 1e-9 {
            return Err(Error::validation(
                format!("line {lineno}: total"),
                format!("stored total {} but sub-scores give {total}", raw.total),
            ));
        }
        out.push(ReportRecord {
            id: raw.id,
            reference_text: raw.reference_text,
            candidate_text: raw.candidate_text,
            quality: system.quality_of_total(raw.total),
            subs: raw.subs,
            total: raw.total,
            tier: raw.tier,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compose_references, TieredGenerator};

    #[test]
    fn round_trip_generated_records() {
        let s = ScoringSystem::preset("radcliq6").unwrap();
        let g = TieredGenerator::for_system(&s).unwrap();
        let recs = g.generate(&compose_references(1, 0), 0).unwrap();
        assert_eq!(recs.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        write_records(&recs, &p).unwrap();
        let back = read_records(&p, &s).unwrap();
        assert_eq!(back, recs);
        for r in &back {
            assert_eq!(s.total_score(&r.subs).unwrap(), r.total);
        }
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let s = ScoringSystem::preset("radcliq6").unwrap();
        let g = TieredGenerator::for_system(&s).unwrap();
        let recs = g.generate(&compose_references(1, 0), 0).unwrap();
        let mut text = records_to_string(&recs);
        text.truncate(text.len() - 20);
        match parse_records(&text, &s) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_with_system() {
        let s = ScoringSystem::preset("radcliq6").unwrap();
        let w = ScoringSystem::preset("mrscore7").unwrap();
        let g = TieredGenerator::for_system(&s).unwrap();
        let text = records_to_string(&g.generate(&compose_references(1, 0), 0).unwrap());
        assert!(matches!(parse_records(&text, &w), Err(Error::Validation { .. })));
        let tampered = text.replacen("\"total\":", "\"total\":1", 1);
        assert!(parse_records(&tampered, &s).is_err());
    }
}
