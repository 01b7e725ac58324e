//! Accepted/rejected training pairs.
//!
//! Candidates generated from the same reference are paired whenever their
//! quality scores differ; the better one is accepted. Margins are quality
//! differences, per criterion (`-W_j * S_j` components) and in total, so
//! the per-criterion margins always sum to the total margin.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ReportRecord;
use crate::error::{Error, Result};
use crate::scoring::ScoringSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPair {
    pub reference_text: String,
    pub accepted: ReportRecord,
    pub rejected: ReportRecord,
    pub sub_margins: Vec<f64>,
    pub total_margin: f64,
    /// Scale the stored margins have been divided by (1 when raw).
    pub scale: f64,
    pub normalized: bool,
}

impl ReportPair {
    /// Margins in raw quality units, whatever the current normalization.
    pub fn raw_total_margin(&self) -> f64 {
        self.total_margin * self.scale
    }

    pub fn raw_sub_margins(&self) -> Vec<f64> {
        self.sub_margins.iter().map(|m| m * self.scale).collect()
    }
}

fn margins(system: &ScoringSystem, w: &ReportRecord, l: &ReportRecord) -> Result<(Vec<f64>, f64)> {
    let qw = system.quality_components(&w.subs)?;
    let ql = system.quality_components(&l.subs)?;
    let subs = qw.iter().zip(&ql).map(|(a, b)| a - b).collect();
    let total = system.quality_score(&w.subs)? - system.quality_score(&l.subs)?;
    Ok((subs, total))
}

/// All within-reference pairs with strictly different quality.
///
/// Groups are keyed by reference text and emitted in order of their smallest
/// record id; pairs inside a group are sorted by descending total margin,
/// then by accepted and rejected id.
pub fn make_pairs(records: &[ReportRecord], system: &ScoringSystem) -> Result<Vec<ReportPair>> {
    let mut groups: BTreeMap<&str, Vec<&ReportRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.reference_text.as_str()).or_default().push(r);
    }
    let mut ordered: Vec<Vec<&ReportRecord>> = groups.into_values().collect();
    for g in &mut ordered {
        g.sort_by(|a, b| a.id.cmp(&b.id));
    }
    ordered.sort_by(|a, b| a[0].id.cmp(&b[0].id));

    let mut out = Vec::new();
    for group in ordered {
        let mut pairs = Vec::new();
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                let qa = system.quality_score(&a.subs).map_err(|e| tag(e, &a.id))?;
                let qb = system.quality_score(&b.subs).map_err(|e| tag(e, &b.id))?;
                if qa == qb {
                    continue;
                }
                let (w, l) = if qa > qb { (*a, *b) } else { (*b, *a) };
                let (sub_margins, total_margin) = margins(system, w, l)?;
                pairs.push(ReportPair {
                    reference_text: w.reference_text.clone(),
                    accepted: w.clone(),
                    rejected: l.clone(),
                    sub_margins,
                    total_margin,
                    scale: 1.0,
                    normalized: false,
                });
            }
        }
        pairs.sort_by(|x, y| {
            y.total_margin
                .total_cmp(&x.total_margin)
                .then_with(|| x.accepted.id.cmp(&y.accepted.id))
                .then_with(|| x.rejected.id.cmp(&y.rejected.id))
        });
        out.extend(pairs);
    }
    Ok(out)
}

fn tag(e: Error, id: &str) -> Error {
    match e {
        Error::Structural(m) | Error::Validation { message: m, .. } => {
            Error::validation(format!("record {id:?}"), m)
        }
        other => other,
    }
}

/// Divides all margins by the width R of the system's quality range.
pub fn margin_normalize(pair: &ReportPair, system: &ScoringSystem) -> Result<ReportPair> {
    if pair.normalized {
        return Err(Error::Config("pair margins are already normalized".into()));
    }
    let r = system.range_width();
    if !(r > 0.0) {
        return Err(Error::Config(format!(
            "system {:?} has a zero-width quality range",
            system.name()
        )));
    }
    let mut out = pair.clone();
    out.sub_margins.iter_mut().for_each(|m| *m /= r);
    out.total_margin /= r;
    out.scale = r;
    out.normalized = true;
    Ok(out)
}

pub fn normalize_all(pairs: &[ReportPair], system: &ScoringSystem) -> Result<Vec<ReportPair>> {
    pairs.iter().map(|p| margin_normalize(p, system)).collect()
}

/// On-disk pair line.
///
/// ```text
/// {"reference_text":"...","accepted_text":"...","rejected_text":"...","sub_margins":[...],"total_margin":0.25,"normalized":true,"accepted_id":"ref0000#high","rejected_id":"ref0000#low"}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLine {
    pub reference_text: String,
    pub accepted_text: String,
    pub rejected_text: String,
    pub sub_margins: Vec<f64>,
    pub total_margin: f64,
    pub normalized: bool,
    #[serde(default)]
    pub accepted_id: String,
    #[serde(default)]
    pub rejected_id: String,
}

impl From<&ReportPair> for PairLine {
    fn from(p: &ReportPair) -> Self {
        PairLine {
            reference_text: p.reference_text.clone(),
            accepted_text: p.accepted.candidate_text.clone(),
            rejected_text: p.rejected.candidate_text.clone(),
            sub_margins: p.sub_margins.clone(),
            total_margin: p.total_margin,
            normalized: p.normalized,
            accepted_id: p.accepted.id.clone(),
            rejected_id: p.rejected.id.clone(),
        }
    }
}

pub fn pairs_to_string(pairs: &[PairLine]) -> String {
    pairs
        .iter()
        .map(|p| serde_json::to_string(p).expect("pair serializes") + "\n")
        .collect()
}

pub fn write_pairs(pairs: &[PairLine], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, pairs_to_string(pairs)).map_err(|e| Error::io(path, e))
}

/// Reads a pair file; `n` is the number of criteria every line must carry.
pub fn parse_pairs(text: &str, n: usize) -> Result<Vec<PairLine>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PairLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if p.sub_margins.len() != n {
            return Err(Error::validation(
                format!("line {}: sub_margins", i + 1),
                format!("expected {n} margins, found {}", p.sub_margins.len()),
            ));
        }
        if !(p.total_margin > 0.0) || !p.total_margin.is_finite() {
            return Err(Error::validation(
                format!("line {}: total_margin", i + 1),
                format!("total margin must be positive, got {}", p.total_margin),
            ));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn read_pairs(path: impl AsRef<Path>, n: usize) -> Result<Vec<PairLine>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tier;
    use crate::scoring::SubScores;

    fn record(system: &ScoringSystem, id: &str, subs: &[f64]) -> ReportRecord {
        let subs = SubScores(subs.to_vec());
        let total = system.total_score(&subs).unwrap();
        ReportRecord {
            id: id.into(),
            reference_text: "ref".into(),
            candidate_text: format!("cand {id}"),
            quality: system.quality_of_total(total),
            subs,
            total,
            tier: Tier::Mid,
        }
    }

    #[test]
    fn three_qualities_make_three_pairs() {
        let s = ScoringSystem::preset("mrscore7").unwrap();
        // qualities 90, 55, 20
        let recs = vec![
            record(&s, "a", &[0., 0., 0., 1., 0., 0., 0.]),
            record(&s, "b", &[1., 0., 0., 0., 0., 1., 0.]),
            record(&s, "c", &[1., 1., 1., 0., 1., 0., 0.]),
        ];
        assert_eq!(recs.iter().map(|r| r.quality).collect::<Vec<_>>(), vec![90., 65., 20.]);
        let pairs = make_pairs(&recs, &s).unwrap();
        let m: Vec<(String, String, f64)> = pairs
            .iter()
            .map(|p| (p.accepted.id.clone(), p.rejected.id.clone(), p.total_margin))
            .collect();
        assert_eq!(
            m,
            vec![
                ("a".into(), "c".into(), 70.0),
                ("b".into(), "c".into(), 45.0),
                ("a".into(), "b".into(), 25.0),
            ]
        );
    }

    #[test]
    fn ties_produce_no_pair() {
        let s = ScoringSystem::preset("radcliq6").unwrap();
        let recs = vec![
            record(&s, "a", &[1., 0., 0., 0., 0., 0.]),
            record(&s, "b", &[0., 1., 0., 0., 0., 0.]),
        ];
        assert!(make_pairs(&recs, &s).unwrap().is_empty());
    }

    #[test]
    fn weighted_sub_margins() {
        let s = ScoringSystem::preset("mrscore7").unwrap();
        let recs = vec![
            record(&s, "w", &[0.; 7]),
            record(&s, "l", &[1., 0., 0., 0., 0., 0., 0.]),
        ];
        let p = &make_pairs(&recs, &s).unwrap()[0];
        assert_eq!(p.accepted.id, "w");
        assert_eq!(p.sub_margins, vec![30., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(p.total_margin, 30.0);
    }

    #[test]
    fn sub_margins_may_be_negative() {
        let s = ScoringSystem::preset("radcliq6").unwrap();
        let recs = vec![
            record(&s, "w", &[1., 0., 0., 0., 0., 0.]),
            record(&s, "l", &[0., 2., 0., 0., 0., 0.]),
        ];
        let p = &make_pairs(&recs, &s).unwrap()[0];
        assert_eq!(p.sub_margins, vec![-1., 2., 0., 0., 0., 0.]);
        assert_eq!(p.total_margin, 1.0);
    }

    #[test]
    fn normalization() {
        let s = ScoringSystem::preset("mrscore7").unwrap();
        let recs = vec![
            record(&s, "w", &[0., 1., 0., 0., 0., 0., 0.]),
            record(&s, "l", &[1., 0., 0., 0., 0., 0., 0.]),
        ];
        let p = &make_pairs(&recs, &s).unwrap()[0];
        let n = margin_normalize(p, &s).unwrap();
        assert!((n.total_margin - 0.1).abs() < 1e-15);
        assert_eq!(n.sub_margins[1], -0.2);
        assert_eq!(n.raw_total_margin(), p.total_margin);
        assert!(margin_normalize(&n, &s).is_err());

        let c = ScoringSystem::preset("radcliq6").unwrap();
        let recs = vec![record(&c, "w", &[0.; 6]), record(&c, "l", &[2., 2., 0., 0., 0., 0.])];
        let n = margin_normalize(&make_pairs(&recs, &c).unwrap()[0], &c).unwrap();
        assert_eq!(n.total_margin, 4.0 / 12.0);
    }

    #[test]
    fn zero_width_range_is_a_config_error() {
        use crate::scoring::{Criterion, CriterionKind, Formula};
        let s = ScoringSystem::new(
            "flat",
            vec![Criterion {
                id: "a".into(),
                description: String::new(),
                kind: CriterionKind::ErrorCount { max_count: 2 },
                weight: 0.0,
            }],
            Formula::SumOfErrors,
        )
        .unwrap();
        let p = ReportPair {
            reference_text: "r".into(),
            accepted: record(&s, "w", &[0.]),
            rejected: record(&s, "l", &[1.]),
            sub_margins: vec![0.0],
            total_margin: 1.0,
            scale: 1.0,
            normalized: false,
        };
        assert!(matches!(margin_normalize(&p, &s), Err(Error::Config(_))));
    }

    #[test]
    fn pair_file_round_trip_and_validation() {
        let s = ScoringSystem::preset("radcliq6").unwrap();
        let recs = vec![record(&s, "w", &[0.; 6]), record(&s, "l", &[0., 1., 0., 0., 0., 0.])];
        let lines: Vec<PairLine> = make_pairs(&recs, &s).unwrap().iter().map(PairLine::from).collect();
        let text = pairs_to_string(&lines);
        assert_eq!(parse_pairs(&text, 6).unwrap(), lines);
        assert!(parse_pairs(&text, 7).is_err());
        let bad = text.replace("\"total_margin\":1.0", "\"total_margin\":0.0");
        assert!(parse_pairs(&bad, 6).is_err());
        assert!(matches!(parse_pairs("{\"x\":", 6), Err(Error::Parse { line: 1, .. })));
    }
}
