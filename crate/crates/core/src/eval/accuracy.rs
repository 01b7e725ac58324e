//! Per-criterion binary accuracy for weighted binary-error systems.
//!
//! Rewards are continuous; a criterion is predicted as "error present" when
//! its reward falls below a threshold fitted on a held-out split.

use crate::error::{Error, Result};
use crate::scoring::{ScoringSystem, SubScores};

fn require_binary(system: &ScoringSystem) -> Result<()> {
    if !system.is_binary() {
        return Err(Error::validation(
            "system",
            format!("per-criterion accuracy needs a binary_error system, `{}` is not", system.name()),
        ));
    }
    Ok(())
}

/// Threshold per criterion maximizing held-out accuracy.
///
/// Candidates are midpoints between consecutive sorted rewards plus both
/// extremes; ties keep the smallest threshold.
pub fn fit_thresholds(system: &ScoringSystem, rewards: &[Vec<f64>], truth: &[SubScores]) -> Result<Vec<f64>> {
    require_binary(system)?;
    check_shapes(system, rewards.len(), truth)?;
    if rewards.is_empty() {
        return Err(Error::validation("rewards", "cannot fit thresholds on an empty split"));
    }
    let n = system.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut col: Vec<(f64, bool)> = rewards
            .iter()
            .zip(truth)
            .map(|(r, t)| (r[j], t.0[j] >= 0.5))
            .collect();
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        // threshold below everything: everything predicted clean
        let mut correct = col.iter().filter(|(_, err)| !err).count();
        let mut best = (correct, col[0].0 - 1.0);
        for i in 0..col.len() {
            // moving past col[i] flips it to "error"
            if col[i].1 {
                correct += 1;
            } else {
                correct -= 1;
            }
            if i + 1 < col.len() && col[i + 1].0 == col[i].0 {
                continue;
            }
            let t = if i + 1 < col.len() {
                0.5 * (col[i].0 + col[i + 1].0)
            } else {
                col[i].0 + 1.0
            };
            if correct > best.0 {
                best = (correct, t);
            }
        }
        out.push(best.1);
    }
    Ok(out)
}

/// 1 where the reward is below its threshold.
pub fn binarize(rewards: &[Vec<f64>], thresholds: &[f64]) -> Vec<SubScores> {
    rewards
        .iter()
        .map(|r| {
            SubScores(
                r.iter()
                    .zip(thresholds)
                    .map(|(v, t)| if v < t { 1.0 } else { 0.0 })
                    .collect(),
            )
        })
        .collect()
}

fn check_shapes(system: &ScoringSystem, n: usize, truth: &[SubScores]) -> Result<()> {
    if n != truth.len() {
        return Err(Error::Structural(format!("{n} predictions against {} labels", truth.len())));
    }
    for (i, t) in truth.iter().enumerate() {
        system.check(t).map_err(|e| match e {
            Error::Validation { path, message } => Error::validation(format!("truth[{i}].{path}"), message),
            other => other,
        })?;
    }
    Ok(())
}

/// Fraction of matching labels per criterion, in criterion order.
pub fn subscore_accuracy(system: &ScoringSystem, predicted: &[SubScores], truth: &[SubScores]) -> Result<Vec<(String, f64)>> {
    require_binary(system)?;
    check_shapes(system, predicted.len(), truth)?;
    for (i, p) in predicted.iter().enumerate() {
        system.check(p).map_err(|e| match e {
            Error::Validation { path, message } => Error::validation(format!("predicted[{i}].{path}"), message),
            other => other,
        })?;
    }
    if truth.is_empty() {
        return Err(Error::validation("truth", "no samples"));
    }
    let n = truth.len() as f64;
    Ok(system
        .criteria()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let hits = predicted.iter().zip(truth).filter(|(p, t)| p.0[j] == t.0[j]).count();
            (c.id.clone(), hits as f64 / n)
        })
        .collect())
}
