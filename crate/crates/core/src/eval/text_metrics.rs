//! Baseline overlap metrics on lowercased alphanumeric tokens.
//!
//! BLEU-4 is sentence-level with uniform weights over the orders that fit
//! in the candidate (`min(4, len)`), clipped n-gram precision and the usual
//! brevity penalty `exp(1 - r/c)` when `c <= r`. A zero match count at
//! order n > 1 is replaced by `SMOOTHING_EPS`; no unigram overlap at all
//! scores 0. ROUGE-L is the LCS F1 measure.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::features::tokenize;

pub const SMOOTHING_EPS: f64 = 1e-9;

fn tokens(what: &str, text: &str) -> Result<Vec<String>> {
    let t = tokenize(text);
    if t.is_empty() {
        return Err(Error::validation(what, "text has no tokens"));
    }
    Ok(t)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Clipped matches and candidate n-gram count at order `n`.
pub fn clipped_matches(reference: &[String], candidate: &[String], n: usize) -> (usize, usize) {
    let r = ngram_counts(reference, n);
    let c = ngram_counts(candidate, n);
    let matches = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

pub fn bleu4(reference: &str, candidate: &str) -> Result<f64> {
    let r = tokens("reference", reference)?;
    let c = tokens("candidate", candidate)?;
    let orders = c.len().min(4);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (matches, total) = clipped_matches(&r, &c, n);
        if n == 1 && matches == 0 {
            return Ok(0.0);
        }
        let m = if matches == 0 { SMOOTHING_EPS } else { matches as f64 };
        log_sum += (m / total as f64).ln();
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    Ok((bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(reference: &str, candidate: &str) -> Result<f64> {
    let r = tokens("reference", reference)?;
    let c = tokens("candidate", candidate)?;
    let lcs = lcs_len(&r, &c) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / c.len() as f64;
    let rec = lcs / r.len() as f64;
    Ok(2.0 * p * rec / (p + rec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_scores_one() {
        let t = "There is a small left pleural effusion.";
        assert_eq!(bleu4(t, t).unwrap(), 1.0);
        assert_eq!(rouge_l(t, t).unwrap(), 1.0);
        assert_eq!(bleu4("Effusion.", "effusion").unwrap(), 1.0);
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(bleu4("heart normal", "lungs clear today").unwrap(), 0.0);
        assert_eq!(rouge_l("heart normal", "lungs clear today").unwrap(), 0.0);
    }

    #[test]
    fn one_substitution_by_hand() {
        let r = "the small left pleural effusion";
        let c = "the large left pleural effusion";
        // unigrams 4/5, bigrams 2/4, trigrams 1/3, 4-grams 0/2 -> eps/2; equal length so BP = 1
        let expected = ((0.8f64).ln() + (0.5f64).ln() + (1.0f64 / 3.0).ln() + (SMOOTHING_EPS / 2.0).ln()) / 4.0;
        assert!((bleu4(r, c).unwrap() - expected.exp()).abs() < 1e-15);
        // LCS = 4 of 5 on both sides
        assert!((rouge_l(r, c).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn brevity_penalty_applies() {
        let r = "a b c d e f g h";
        let c = "a b c d";
        let b = bleu4(r, c).unwrap();
        assert!((b - (1.0f64 - 2.0).exp()).abs() < 1e-15);
        assert!(rouge_l(r, c).unwrap() < 1.0);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(bleu4("", "a").is_err());
        assert!(rouge_l("a", " ... ").is_err());
    }
}
