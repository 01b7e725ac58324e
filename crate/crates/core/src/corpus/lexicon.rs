use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/lexicon.toml");

/// Word swaps, sentence pools and segmentation exceptions.
#[derive(Debug, Clone, Deserialize)]
pub struct Lexicon {
    pub laterality: Vec<[String; 2]>,
    pub severity: Vec<[String; 2]>,
    pub comparison_markers: Vec<String>,
    pub abbreviations: Vec<String>,
    pub sides: Vec<String>,
    pub zones: Vec<String>,
    pub severities: Vec<String>,
    pub normal_statements: Vec<String>,
    pub findings: Vec<String>,
    pub comparisons: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::from_toml(BUNDLED).expect("bundled lexicon parses")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapTable {
    Laterality,
    Severity,
}

impl Lexicon {
    pub fn from_toml(text: &str) -> Result<Self> {
        let lex: Lexicon = toml::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            message: format!("lexicon: {}", e.message()),
        })?;
        if lex.findings.is_empty() || lex.comparisons.is_empty() {
            return Err(Error::validation("lexicon", "finding and comparison pools must be non-empty"));
        }
        Ok(lex)
    }

    fn table(&self, t: SwapTable) -> &[[String; 2]] {
        match t {
            SwapTable::Laterality => &self.laterality,
            SwapTable::Severity => &self.severity,
        }
    }

    /// Word positions in `sentence` that have a partner in the table.
    pub fn swap_sites(&self, sentence: &str, t: SwapTable) -> Vec<(usize, usize, String)> {
        let table = self.table(t);
        word_spans(sentence)
            .into_iter()
            .filter_map(|(start, end)| {
                let word = sentence[start..end].to_lowercase();
                table.iter().find_map(|[a, b]| {
                    if word == *a {
                        Some((start, end, b.clone()))
                    } else if word == *b {
                        Some((start, end, a.clone()))
                    } else {
                        None
                    }
                })
            })
            .collect()
    }

    /// Swaps one randomly chosen swappable word in `sentence`.
    pub fn swap<R: Rng>(&self, sentence: &str, t: SwapTable, rng: &mut R) -> Option<String> {
        let sites = self.swap_sites(sentence, t);
        let (start, end, partner) = sites.choose(rng)?.clone();
        let original = &sentence[start..end];
        let replacement = match original.chars().next() {
            Some(c) if c.is_uppercase() => capitalize(&partner),
            _ => partner,
        };
        Some(format!("{}{}{}", &sentence[..start], replacement, &sentence[end..]))
    }

    pub fn is_comparison(&self, sentence: &str) -> bool {
        let lower = sentence.to_lowercase();
        word_spans(&lower)
            .into_iter()
            .any(|(s, e)| self.comparison_markers.iter().any(|m| *m == lower[s..e]))
    }

    /// Fills `{side}`, `{zone}` and `{sev}` slots.
    pub fn instantiate<R: Rng>(&self, template: &str, rng: &mut R) -> String {
        let mut out = template.to_string();
        for (slot, pool) in [
            ("{side}", &self.sides),
            ("{zone}", &self.zones),
            ("{sev}", &self.severities),
        ] {
            while let Some(pos) = out.find(slot) {
                let word = pool.choose(rng).map(String::as_str).unwrap_or("");
                out.replace_range(pos..pos + slot.len(), word);
            }
        }
        capitalize(&out)
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Byte spans of alphabetic words.
fn word_spans(s: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_alphabetic(), start) {
            (true, None) => start = Some(i),
            (false, Some(st)) => {
                spans.push((st, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(st) = start {
        spans.push((st, s.len()));
    }
    spans
}

/// Splits on a period followed by whitespace, except after a listed abbreviation.
pub fn split_sentences(text: &str, abbreviations: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if c == '.' && chars.peek().is_some_and(|n| n.is_whitespace()) {
            let last_word = current
                .rsplit(char::is_whitespace)
                .next()
                .unwrap_or("")
                .to_lowercase();
            if !abbreviations.iter().any(|a| *a == last_word) {
                let s = current.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

pub fn join_sentences(sentences: &[String]) -> String {
    sentences.join(" ")
}
