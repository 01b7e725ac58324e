use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{join_sentences, split_sentences, Lexicon, SwapTable};
use crate::error::{Error, Result};
use crate::scoring::{ScoringSystem, SubScores};

/// Sentence-level error types planted by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    FalseFinding,
    OmitFinding,
    WrongLocation,
    WrongSeverity,
    SpuriousComparison,
    OmitComparison,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::FalseFinding,
        CorruptionKind::OmitFinding,
        CorruptionKind::WrongLocation,
        CorruptionKind::WrongSeverity,
        CorruptionKind::SpuriousComparison,
        CorruptionKind::OmitComparison,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionKind::FalseFinding => "false_finding",
            CorruptionKind::OmitFinding => "omit_finding",
            CorruptionKind::WrongLocation => "wrong_location",
            CorruptionKind::WrongSeverity => "wrong_severity",
            CorruptionKind::SpuriousComparison => "spurious_comparison",
            CorruptionKind::OmitComparison => "omit_comparison",
        }
    }

    /// Inserting kinds add a sentence at the target position.
    pub fn inserts(&self) -> bool {
        matches!(self, CorruptionKind::FalseFinding | CorruptionKind::SpuriousComparison)
    }

    fn index(&self) -> usize {
        CorruptionKind::ALL.iter().position(|k| k == self).unwrap()
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::validation("kind", format!("unknown corruption kind {s:?}")))
    }
}

/// One planted error. For inserting kinds `target_sentence_index` is the
/// insertion position (`0..=len`); otherwise it names an existing sentence.
/// An empty `replacement` lets the engine choose the new text from the seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionOp {
    pub kind: CorruptionKind,
    pub target_sentence_index: usize,
    #[serde(default)]
    pub replacement: String,
}

impl CorruptionOp {
    pub fn new(kind: CorruptionKind, target_sentence_index: usize) -> Self {
        CorruptionOp {
            kind,
            target_sentence_index,
            replacement: String::new(),
        }
    }
}

/// Assignment of corruption kinds to criteria of a scoring system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KindMap {
    targets: [Option<usize>; 6],
}

impl KindMap {
    /// Builds a map from `(kind, criterion id)` pairs. Kinds left out are
    /// never generated.
    pub fn from_pairs<'a>(
        system: &ScoringSystem,
        pairs: impl IntoIterator<Item = (CorruptionKind, &'a str)>,
    ) -> Result<Self> {
        let mut targets = [None; 6];
        for (kind, id) in pairs {
            let j = system.criterion_index(id).ok_or_else(|| {
                Error::validation(
                    format!("kind_map.{kind}"),
                    format!("criterion {id:?} not in system {:?}", system.name()),
                )
            })?;
            targets[kind.index()] = Some(j);
        }
        Ok(KindMap { targets })
    }

    /// Default mapping: any system carrying the seven-item criterion ids maps
    /// by meaning (grammar and terminology are never planted); other
    /// six-criterion systems map kind `i` to criterion `i`.
    pub fn default_for(system: &ScoringSystem) -> Result<Self> {
        use CorruptionKind::*;
        let by_meaning = [
            (FalseFinding, "impression_consistency"),
            (OmitFinding, "completeness"),
            (WrongLocation, "impression_organs"),
            (WrongSeverity, "lesion_description"),
            (SpuriousComparison, "clinical_history"),
            (OmitComparison, "clinical_history"),
        ];
        if by_meaning.iter().all(|(_, id)| system.criterion_index(id).is_some()) {
            return KindMap::from_pairs(system, by_meaning);
        }
        if system.len() == 6 {
            let mut targets = [None; 6];
            for (i, t) in targets.iter_mut().enumerate() {
                *t = Some(i);
            }
            return Ok(KindMap { targets });
        }
        Err(Error::Config(format!(
            "no default corruption mapping for system {:?} with {} criteria; supply one",
            system.name(),
            system.len()
        )))
    }

    pub fn criterion(&self, kind: CorruptionKind) -> Option<usize> {
        self.targets[kind.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Sentence {
    pub text: String,
    /// Untouched sentences from the reference are the only legal targets.
    pub original: bool,
    pub comparison: bool,
}

/// Working state while ops are applied in order.
#[derive(Debug, Clone)]
pub(crate) struct Draft {
    pub sentences: Vec<Sentence>,
}

impl Draft {
    pub fn new(reference: &str, lex: &Lexicon) -> Result<Self> {
        let sentences: Vec<Sentence> = split_sentences(reference, &lex.abbreviations)
            .into_iter()
            .map(|text| Sentence {
                comparison: lex.is_comparison(&text),
                text,
                original: true,
            })
            .collect();
        if sentences.is_empty() {
            return Err(Error::validation("reference", "reference contains no sentences"));
        }
        Ok(Draft { sentences })
    }

    pub fn text(&self) -> String {
        let texts: Vec<String> = self.sentences.iter().map(|s| s.text.clone()).collect();
        join_sentences(&texts)
    }

    /// Sentence positions a non-inserting op of `kind` may target.
    pub fn targets(&self, kind: CorruptionKind, lex: &Lexicon) -> Vec<usize> {
        self.sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.original && self.applies(kind, s, lex))
            .map(|(i, _)| i)
            .collect()
    }

    fn applies(&self, kind: CorruptionKind, s: &Sentence, lex: &Lexicon) -> bool {
        match kind {
            // a candidate keeps at least one sentence
            CorruptionKind::OmitFinding => !s.comparison && self.sentences.len() > 1,
            CorruptionKind::OmitComparison => s.comparison && self.sentences.len() > 1,
            CorruptionKind::WrongLocation => !lex.swap_sites(&s.text, SwapTable::Laterality).is_empty(),
            CorruptionKind::WrongSeverity => !lex.swap_sites(&s.text, SwapTable::Severity).is_empty(),
            CorruptionKind::FalseFinding | CorruptionKind::SpuriousComparison => false,
        }
    }

    /// Finding templates whose instantiation is not already present.
    fn fresh_insertion(&self, kind: CorruptionKind, lex: &Lexicon, rng: &mut ChaCha8Rng) -> String {
        let pool = match kind {
            CorruptionKind::SpuriousComparison => &lex.comparisons,
            _ => &lex.findings,
        };
        for _ in 0..32 {
            let template = pool.choose(rng).expect("non-empty pool");
            let s = lex.instantiate(template, rng);
            if !self.sentences.iter().any(|x| x.text == s) {
                return s;
            }
        }
        lex.instantiate(pool.choose(rng).expect("non-empty pool"), rng)
    }

    /// Applies one op and returns the op with its replacement text filled in.
    pub fn apply(
        &mut self,
        op: &CorruptionOp,
        position: usize,
        lex: &Lexicon,
        rng: &mut ChaCha8Rng,
    ) -> Result<CorruptionOp> {
        let i = op.target_sentence_index;
        let index_path = format!("ops[{position}].target_sentence_index");
        let mut resolved = op.clone();
        if op.kind.inserts() {
            if i > self.sentences.len() {
                return Err(Error::validation(
                    index_path,
                    format!("insertion point {i} beyond {} sentences", self.sentences.len()),
                ));
            }
            let text = if op.replacement.is_empty() {
                self.fresh_insertion(op.kind, lex, rng)
            } else {
                op.replacement.clone()
            };
            resolved.replacement = text.clone();
            self.sentences.insert(
                i,
                Sentence {
                    comparison: op.kind == CorruptionKind::SpuriousComparison,
                    text,
                    original: false,
                },
            );
            return Ok(resolved);
        }
        let Some(sentence) = self.sentences.get(i) else {
            return Err(Error::validation(
                index_path,
                format!("sentence {i} out of range ({} sentences)", self.sentences.len()),
            ));
        };
        if !sentence.original || !self.applies(op.kind, sentence, lex) {
            return Err(Error::validation(
                index_path,
                format!("{} does not apply to sentence {i}: {:?}", op.kind, sentence.text),
            ));
        }
        match op.kind {
            CorruptionKind::OmitFinding | CorruptionKind::OmitComparison => {
                self.sentences.remove(i);
            }
            CorruptionKind::WrongLocation | CorruptionKind::WrongSeverity => {
                let table = if op.kind == CorruptionKind::WrongLocation {
                    SwapTable::Laterality
                } else {
                    SwapTable::Severity
                };
                let text = if op.replacement.is_empty() {
                    lex.swap(&sentence.text, table, rng).expect("site checked above")
                } else {
                    op.replacement.clone()
                };
                resolved.replacement = text.clone();
                let s = &mut self.sentences[i];
                s.text = text;
                s.original = false;
            }
            CorruptionKind::FalseFinding | CorruptionKind::SpuriousComparison => unreachable!(),
        }
        Ok(resolved)
    }
}

/// Applies corruption ops to reference reports and labels the result.
#[derive(Debug, Clone)]
pub struct Corruptor {
    system: ScoringSystem,
    kinds: KindMap,
    lexicon: Lexicon,
}

impl Corruptor {
    pub fn new(system: ScoringSystem, kinds: KindMap, lexicon: Lexicon) -> Self {
        Corruptor {
            system,
            kinds,
            lexicon,
        }
    }

    /// Corruptor with the bundled lexicon and the system's default kind map.
    pub fn for_system(system: &ScoringSystem) -> Result<Self> {
        Ok(Corruptor::new(
            system.clone(),
            KindMap::default_for(system)?,
            Lexicon::default(),
        ))
    }

    pub fn system(&self) -> &ScoringSystem {
        &self.system
    }

    pub fn kinds(&self) -> &KindMap {
        &self.kinds
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Applies `ops` in order. Each op counts one error against its mapped
    /// criterion (saturating at the criterion's cap).
    pub fn corrupt(&self, reference: &str, ops: &[CorruptionOp], seed: u64) -> Result<(String, SubScores)> {
        let mut draft = Draft::new(reference, &self.lexicon)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut subs = SubScores::zeros(self.system.len());
        for (k, op) in ops.iter().enumerate() {
            let j = self.kinds.criterion(op.kind).ok_or_else(|| {
                Error::validation(
                    format!("ops[{k}].kind"),
                    format!("{} is not mapped to a criterion of {:?}", op.kind, self.system.name()),
                )
            })?;
            draft.apply(op, k, &self.lexicon, &mut rng)?;
            let cap = f64::from(self.system.criteria()[j].kind.cap());
            subs.0[j] = (subs.0[j] + 1.0).min(cap);
        }
        let candidate = if ops.is_empty() {
            reference.to_string()
        } else {
            draft.text()
        };
        Ok((candidate, subs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REF: &str = "The heart size is normal. There is a small left pleural effusion. \
                       A mild opacity is present in the right upper lobe. \
                       Compared to the prior study, the left pleural effusion has increased.";

    fn radcliq() -> Corruptor {
        Corruptor::for_system(&ScoringSystem::preset("radcliq6").unwrap()).unwrap()
    }

    #[test]
    fn identity_corruption() {
        let c = radcliq();
        let (cand, subs) = c.corrupt(REF, &[], 7).unwrap();
        assert_eq!(cand, REF);
        assert_eq!(subs, SubScores::zeros(6));
    }

    #[test]
    fn wrong_location_swaps_laterality() {
        let c = radcliq();
        let ops = [CorruptionOp::new(CorruptionKind::WrongLocation, 1)];
        let (cand, subs) = c.corrupt(REF, &ops, 0).unwrap();
        assert!(cand.contains("There is a small right pleural effusion."), "{cand}");
        assert_eq!(subs.values(), &[0., 0., 1., 0., 0., 0.]);
    }

    #[test]
    fn two_omissions_remove_two_sentences() {
        let c = radcliq();
        let ops = [
            CorruptionOp::new(CorruptionKind::OmitFinding, 0),
            CorruptionOp::new(CorruptionKind::OmitFinding, 1),
        ];
        let (cand, subs) = c.corrupt(REF, &ops, 0).unwrap();
        let lex = Lexicon::default();
        let before = split_sentences(REF, &lex.abbreviations).len();
        let after = split_sentences(&cand, &lex.abbreviations).len();
        assert_eq!(before - after, 2);
        assert_eq!(subs.values()[1], 2.0);
        assert!(!cand.contains("heart size"));
        assert!(!cand.contains("upper lobe"));
    }

    #[test]
    fn counts_saturate_and_binary_items_set_once() {
        let c = radcliq();
        let ops = vec![CorruptionOp::new(CorruptionKind::FalseFinding, 0); 3];
        let (_, subs) = c.corrupt(REF, &ops, 1).unwrap();
        assert_eq!(subs.values()[0], 2.0);

        let w = Corruptor::for_system(&ScoringSystem::preset("mrscore7").unwrap()).unwrap();
        let ops = [
            CorruptionOp::new(CorruptionKind::SpuriousComparison, 0),
            CorruptionOp::new(CorruptionKind::OmitComparison, 4),
        ];
        let (_, subs) = w.corrupt(REF, &ops, 1).unwrap();
        assert_eq!(subs.values(), &[0., 0., 0., 1., 0., 0., 0.]);
        assert_eq!(w.system().total_score(&subs).unwrap(), 90.0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let c = radcliq();
        let ops = [
            CorruptionOp::new(CorruptionKind::FalseFinding, 2),
            CorruptionOp::new(CorruptionKind::WrongSeverity, 3),
        ];
        let a = c.corrupt(REF, &ops, 99).unwrap();
        let b = c.corrupt(REF, &ops, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let c = radcliq();
        assert!(matches!(c.corrupt("   ", &[], 0), Err(Error::Validation { .. })));
        let far = [CorruptionOp::new(CorruptionKind::OmitFinding, 9)];
        match c.corrupt(REF, &far, 0) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "ops[0].target_sentence_index"),
            other => panic!("unexpected {other:?}"),
        }
        // the heart sentence has no laterality word
        assert!(c.corrupt(REF, &[CorruptionOp::new(CorruptionKind::WrongLocation, 0)], 0).is_err());
        // a modified sentence cannot be targeted again
        let twice = [
            CorruptionOp::new(CorruptionKind::WrongLocation, 1),
            CorruptionOp::new(CorruptionKind::WrongSeverity, 1),
        ];
        assert!(c.corrupt(REF, &twice, 0).is_err());
        // the last sentence cannot be omitted
        let single = "There is a small left pleural effusion.";
        assert!(c.corrupt(single, &[CorruptionOp::new(CorruptionKind::OmitFinding, 0)], 0).is_err());
    }
}
