//! Correlation reports and their text/CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{kendall_tau, spearman, Correlation};
use crate::error::{Error, Result};
use crate::scoring::Orientation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CriterionStat {
    Correlation { id: String, kendall_tau: f64, kendall_p: f64, spearman_rho: f64, spearman_p: f64 },
    Accuracy { id: String, accuracy: f64 },
}

impl CriterionStat {
    pub fn id(&self) -> &str {
        match self {
            CriterionStat::Correlation { id, .. } | CriterionStat::Accuracy { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_name: String,
    pub kendall_tau: f64,
    pub kendall_p: f64,
    pub spearman_rho: f64,
    pub spearman_p: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_criterion: Vec<CriterionStat>,
}

/// Flips lower-is-better values so larger means better.
pub fn to_quality(values: &[f64], orientation: Orientation) -> Vec<f64> {
    match orientation {
        Orientation::HigherIsBetter => values.to_vec(),
        Orientation::LowerIsBetter => values.iter().map(|v| -v).collect(),
    }
}

fn both(x: &[f64], y: &[f64]) -> Result<(Correlation, Correlation)> {
    Ok((kendall_tau(x, y)?, spearman(x, y)?))
}

/// Correlates a metric with human scores, both given in quality orientation.
pub fn evaluate_metric(name: &str, scores: &[f64], human: &[f64]) -> Result<EvalReport> {
    let (k, s) = both(scores, human)?;
    Ok(EvalReport {
        metric_name: name.to_string(),
        kendall_tau: k.coef,
        kendall_p: k.p,
        spearman_rho: s.coef,
        spearman_p: s.p,
        n: scores.len(),
        per_criterion: Vec::new(),
    })
}

/// Adds one correlation row per criterion. Columns of `scores` and
/// `human` are aligned with `ids`; constant columns are skipped.
pub fn add_criterion_correlations(
    report: &mut EvalReport,
    ids: &[String],
    scores: &[Vec<f64>],
    human: &[Vec<f64>],
) -> Result<()> {
    if scores.len() != human.len() {
        return Err(Error::Structural(format!("{} score rows against {} label rows", scores.len(), human.len())));
    }
    for (j, id) in ids.iter().enumerate() {
        let x: Vec<f64> = scores.iter().map(|r| r[j]).collect();
        let y: Vec<f64> = human.iter().map(|r| r[j]).collect();
        match both(&x, &y) {
            Ok((k, s)) => report.per_criterion.push(CriterionStat::Correlation {
                id: id.clone(),
                kendall_tau: k.coef,
                kendall_p: k.p,
                spearman_rho: s.coef,
                spearman_p: s.p,
            }),
            Err(Error::UndefinedCorrelation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.1e}")
    } else {
        format!("{p:.4}")
    }
}

/// Aligned table: one row per metric, tau and rho with p-values in parentheses.
pub fn render_table(reports: &[EvalReport]) -> String {
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                r.metric_name.clone(),
                format!("{:.4} ({})", r.kendall_tau, fmt_p(r.kendall_p)),
                format!("{:.4} ({})", r.spearman_rho, fmt_p(r.spearman_p)),
                r.n.to_string(),
            ]
        })
        .collect();
    let head = ["metric", "kendall_tau (p)", "spearman_rho (p)", "n"];
    let mut w = head.map(str::len);
    for r in &rows {
        for (k, c) in r.iter().enumerate() {
            w[k] = w[k].max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 4]| {
        let _ = writeln!(out, "{:<a$}  {:>b$}  {:>c$}  {:>d$}", cells[0], cells[1], cells[2], cells[3], a = w[0], b = w[1], c = w[2], d = w[3]);
    };
    line(&mut out, head);
    let _ = writeln!(out, "{}", "-".repeat(w.iter().sum::<usize>() + 6));
    for r in &rows {
        line(&mut out, [&r[0], &r[1], &r[2], &r[3]]);
    }
    let details: Vec<&EvalReport> = reports.iter().filter(|r| !r.per_criterion.is_empty()).collect();
    for r in details {
        let _ = writeln!(out, "\n{} per criterion", r.metric_name);
        let iw = r.per_criterion.iter().map(|c| c.id().len()).max().unwrap_or(0).max(9);
        for c in &r.per_criterion {
            match c {
                CriterionStat::Correlation { id, kendall_tau, kendall_p, spearman_rho, spearman_p } => {
                    let _ = writeln!(
                        out,
                        "  {id:<iw$}  tau {kendall_tau:.4} ({})  rho {spearman_rho:.4} ({})",
                        fmt_p(*kendall_p),
                        fmt_p(*spearman_p)
                    );
                }
                CriterionStat::Accuracy { id, accuracy } => {
                    let _ = writeln!(out, "  {id:<iw$}  accuracy {accuracy:.4}");
                }
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long-form CSV. Headline rows have an empty `criterion` column. Numbers
/// use the shortest round-trip form, with an exponent when very small.
pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,criterion,n,kendall_tau,kendall_p,spearman_rho,spearman_p,accuracy\n");
    for r in reports {
        let m = csv_field(&r.metric_name);
        let _ = writeln!(
            out,
            "{m},,{},{:?},{:?},{:?},{:?},",
            r.n, r.kendall_tau, r.kendall_p, r.spearman_rho, r.spearman_p
        );
        for c in &r.per_criterion {
            match c {
                CriterionStat::Correlation { id, kendall_tau, kendall_p, spearman_rho, spearman_p } => {
                    let _ = writeln!(out, "{m},{},{},{kendall_tau:?},{kendall_p:?},{spearman_rho:?},{spearman_p:?},", csv_field(id), r.n);
                }
                CriterionStat::Accuracy { id, accuracy } => {
                    let _ = writeln!(out, "{m},{},{},,,,,{accuracy:?}", csv_field(id), r.n);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_scores_give_unit_correlation() {
        let h = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0];
        let r = evaluate_metric("self", &h, &h).unwrap();
        assert!((r.kendall_tau - 1.0).abs() < 1e-12);
        assert!((r.spearman_rho - 1.0).abs() < 1e-12);
        assert_eq!(r.n, 7);
    }

    #[test]
    fn permuted_labels_look_null() {
        let human: Vec<f64> = (0..200).map(|i| (i % 13) as f64 + 0.01 * i as f64).collect();
        let mut shuffled = human.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
        let r = evaluate_metric("perm", &shuffled, &human).unwrap();
        assert!(r.kendall_tau.abs() < 0.15, "{}", r.kendall_tau);
        assert!(r.kendall_p > 0.01, "{}", r.kendall_p);
    }

    #[test]
    fn orientation_flip_restores_agreement() {
        let errors = [0.0, 2.0, 5.0, 1.0];
        let quality = [10.0, 8.0, 5.0, 9.0];
        let r = evaluate_metric("e", &to_quality(&errors, Orientation::LowerIsBetter), &quality).unwrap();
        assert!((r.kendall_tau - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renderings_contain_every_metric() {
        let h = [1.0, 2.0, 3.0, 4.0];
        let mut a = evaluate_metric("learned", &h, &h).unwrap();
        a.per_criterion.push(CriterionStat::Accuracy { id: "grammar".into(), accuracy: 0.98 });
        let b = evaluate_metric("bleu4", &[1.0, 3.0, 2.0, 4.0], &h).unwrap();
        let t = render_table(&[a.clone(), b.clone()]);
        assert!(t.contains("learned") && t.contains("bleu4") && t.contains("grammar"));
        let c = render_csv(&[a, b]);
        assert_eq!(c.lines().count(), 4);
        assert!(c.contains("learned,grammar,4,,,,,0.98"));
    }

    #[test]
    fn constant_criterion_is_skipped() {
        let mut r = evaluate_metric("m", &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let s = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        add_criterion_correlations(&mut r, &ids, &s, &s).unwrap();
        assert_eq!(r.per_criterion.len(), 1);
        assert_eq!(r.per_criterion[0].id(), "a");
    }
}
