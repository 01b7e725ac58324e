use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corrupt::{CorruptionKind, CorruptionOp, Corruptor, Draft};
use super::lexicon::Lexicon;
use super::ReportRecord;
use crate::error::{Error, Result};
use crate::scoring::{Formula, ScoringSystem};

const EPS: f64 = 1e-9;
const ATTEMPTS_PER_TARGET: usize = 64;

/// Seed of the bundled 50-report mini-corpus.
pub const BUNDLED_SEED: u64 = 20_240_917;

/// A ground-truth report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference {
    pub id: String,
    pub text: String,
}

impl Reference {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Reference {
            id: id.into(),
            text: text.into(),
        }
    }

    /// Wraps bare texts with sequential ids `ref0000`, `ref0001`, ...
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Vec<Reference> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Reference::new(format!("ref{i:04}"), t.as_ref()))
            .collect()
    }
}

/// Reads references: one per line, either `id<TAB>text` or bare text.
pub fn read_references(path: impl AsRef<Path>) -> Result<Vec<Reference>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_references(&text))
}

pub fn parse_references(text: &str) -> Vec<Reference> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| match line.split_once('\t') {
            Some((id, body)) => Reference::new(id.trim(), body.trim()),
            None => Reference::new(format!("ref{i:04}"), line.trim()),
        })
        .collect()
}

pub fn format_references(refs: &[Reference]) -> String {
    refs.iter().map(|r| format!("{}\t{}\n", r.id, r.text)).collect()
}

/// Composes `count` template reports: normal statements, findings and
/// one or two comparison sentences.
pub fn compose_references(count: usize, seed: u64) -> Vec<Reference> {
    let lex = Lexicon::default();
    (0..count)
        .map(|i| {
            let id = format!("ref{i:04}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &id));
            let mut body: Vec<String> = Vec::new();
            let normals = rng.gen_range(1..=3);
            for t in lex.normal_statements.choose_multiple(&mut rng, normals) {
                body.push(t.clone());
            }
            let findings = rng.gen_range(1..=3);
            for t in lex.findings.choose_multiple(&mut rng, findings) {
                body.push(lex.instantiate(t, &mut rng));
            }
            body.shuffle(&mut rng);
            let comparisons = rng.gen_range(1..=2);
            for t in lex.comparisons.choose_multiple(&mut rng, comparisons) {
                body.push(lex.instantiate(t, &mut rng));
            }
            Reference::new(id, body.join(" "))
        })
        .collect()
}

/// The bundled mini-corpus of 50 references.
pub fn bundled_references() -> Vec<Reference> {
    compose_references(50, BUNDLED_SEED)
}

/// Per-reference seed, `SHA-256(seed_le || id)` truncated to 64 bits.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Mid => "mid",
            Tier::Low => "low",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive band `[lo, hi]` on the native total score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierBand {
    pub tier: Tier,
    pub lo: f64,
    pub hi: f64,
}

impl TierBand {
    pub fn contains(&self, total: f64) -> bool {
        total >= self.lo - EPS && total <= self.hi + EPS
    }
}

impl fmt::Display for TierBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}, {}]", self.tier, self.lo, self.hi)
    }
}

/// Quality tiers used during generation. Adjacent bands may share an
/// endpoint; their interiors must be disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TierSpec {
    bands: Vec<TierBand>,
}

impl TierSpec {
    pub fn new(system: &ScoringSystem, bands: Vec<TierBand>) -> Result<Self> {
        let (min, max) = system.total_range();
        for (i, b) in bands.iter().enumerate() {
            if !(b.lo <= b.hi) || b.lo < min - EPS || b.hi > max + EPS {
                return Err(Error::Config(format!(
                    "band {b} must satisfy {min} <= lo <= hi <= {max}"
                )));
            }
            for other in &bands[..i] {
                if other.tier == b.tier {
                    return Err(Error::Config(format!("tier {} listed twice", b.tier)));
                }
                if b.lo < other.hi - EPS && other.lo < b.hi - EPS {
                    return Err(Error::Config(format!("bands {other} and {b} overlap")));
                }
            }
        }
        Ok(TierSpec { bands })
    }

    /// Error-count systems: 0-2 / 3-4 / 5-6 errors. Weighted systems:
    /// totals 70-100 / 40-70 / 0-40.
    pub fn default_for(system: &ScoringSystem) -> Result<Self> {
        let band = |tier, lo, hi| TierBand { tier, lo, hi };
        match system.formula() {
            Formula::SumOfErrors => TierSpec::new(
                system,
                vec![band(Tier::High, 0.0, 2.0), band(Tier::Mid, 3.0, 4.0), band(Tier::Low, 5.0, 6.0)],
            ),
            Formula::HundredMinusWeightedSum => TierSpec::new(
                system,
                vec![
                    band(Tier::High, 70.0, 100.0),
                    band(Tier::Mid, 40.0, 70.0),
                    band(Tier::Low, 0.0, 40.0),
                ],
            ),
        }
    }

    pub fn bands(&self) -> &[TierBand] {
        &self.bands
    }

    pub fn band(&self, tier: Tier) -> Option<&TierBand> {
        self.bands.iter().find(|b| b.tier == tier)
    }
}

/// Produces one corrupted record per tier for each reference.
#[derive(Debug, Clone)]
pub struct TieredGenerator {
    corruptor: Corruptor,
    tiers: TierSpec,
}

impl TieredGenerator {
    /// Checks up front that every band is reachable under the system.
    pub fn new(corruptor: Corruptor, tiers: TierSpec) -> Result<Self> {
        let g = TieredGenerator { corruptor, tiers };
        for band in g.tiers.bands() {
            if g.penalty_targets(band).is_empty() {
                return Err(Error::Config(format!(
                    "tier band {band} is unreachable under system {:?}",
                    g.corruptor.system().name()
                )));
            }
        }
        Ok(g)
    }

    pub fn for_system(system: &ScoringSystem) -> Result<Self> {
        TieredGenerator::new(Corruptor::for_system(system)?, TierSpec::default_for(system)?)
    }

    pub fn corruptor(&self) -> &Corruptor {
        &self.corruptor
    }

    pub fn tiers(&self) -> &TierSpec {
        &self.tiers
    }

    fn system(&self) -> &ScoringSystem {
        self.corruptor.system()
    }

    /// Penalty interval (weighted error mass) equivalent to a total band.
    fn penalty_interval(&self, band: &TierBand) -> (f64, f64) {
        match self.system().formula() {
            Formula::SumOfErrors => (band.lo, band.hi),
            Formula::HundredMinusWeightedSum => (100.0 - band.hi, 100.0 - band.lo),
        }
    }

    /// Achievable penalties inside the band using only mapped criteria.
    fn penalty_targets(&self, band: &TierBand) -> Vec<f64> {
        let system = self.system();
        let mut sums = vec![0.0f64];
        for (j, c) in system.criteria().iter().enumerate() {
            let mapped = CorruptionKind::ALL
                .iter()
                .any(|&k| self.corruptor.kinds().criterion(k) == Some(j));
            if !mapped || c.weight <= 0.0 {
                continue;
            }
            let mut next = Vec::new();
            for s in &sums {
                for n in 0..=c.kind.cap() {
                    next.push(s + c.weight * f64::from(n));
                }
            }
            next.sort_by(f64::total_cmp);
            next.dedup_by(|a, b| (*a - *b).abs() < EPS);
            sums = next;
        }
        let (lo, hi) = self.penalty_interval(band);
        sums.into_iter()
            .filter(|p| *p >= lo - EPS && *p <= hi + EPS)
            .collect()
    }

    /// Samples an op sequence whose penalty equals one achievable target in
    /// the band. Kinds are drawn uniformly among those still applicable.
    fn plan(&self, reference: &Reference, band: &TierBand, rng: &mut ChaCha8Rng) -> Result<Vec<CorruptionOp>> {
        let system = self.system();
        let lex = self.corruptor.lexicon();
        let mut targets = self.penalty_targets(band);
        targets.shuffle(rng);
        for target in targets {
            'attempt: for _ in 0..ATTEMPTS_PER_TARGET {
                let mut draft = Draft::new(&reference.text, lex)?;
                let mut counts = vec![0u32; system.len()];
                let mut remaining = target;
                let mut ops = Vec::new();
                while remaining > EPS {
                    let options: Vec<CorruptionKind> = CorruptionKind::ALL
                        .into_iter()
                        .filter(|&k| {
                            let Some(j) = self.corruptor.kinds().criterion(k) else {
                                return false;
                            };
                            let c = &system.criteria()[j];
                            c.weight > 0.0
                                && c.weight <= remaining + EPS
                                && counts[j] < c.kind.cap()
                                && (k.inserts() || !draft.targets(k, lex).is_empty())
                        })
                        .collect();
                    let Some(&kind) = options.choose(rng) else {
                        continue 'attempt;
                    };
                    let index = if kind.inserts() {
                        rng.gen_range(0..=draft.sentences.len())
                    } else {
                        *draft.targets(kind, lex).choose(rng).expect("checked non-empty")
                    };
                    let op = draft.apply(&CorruptionOp::new(kind, index), ops.len(), lex, rng)?;
                    let j = self.corruptor.kinds().criterion(kind).expect("mapped");
                    counts[j] += 1;
                    remaining -= system.criteria()[j].weight;
                    ops.push(op);
                }
                return Ok(ops);
            }
        }
        Err(Error::Config(format!(
            "tier band {band} is unreachable for reference {:?}",
            reference.id
        )))
    }

    /// Records for one reference, in tier order.
    pub fn generate_one(&self, reference: &Reference, seed: u64) -> Result<Vec<ReportRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &reference.id));
        let system = self.system();
        self.tiers
            .bands()
            .iter()
            .map(|band| {
                let ops = self.plan(reference, band, &mut rng)?;
                let (candidate, subs) = self.corruptor.corrupt(&reference.text, &ops, rng.gen())?;
                let total = system.total_score(&subs)?;
                debug_assert!(band.contains(total), "{total} outside {band}");
                Ok(ReportRecord {
                    id: format!("{}#{}", reference.id, band.tier),
                    reference_text: reference.text.clone(),
                    candidate_text: candidate,
                    quality: system.quality_of_total(total),
                    subs,
                    total,
                    tier: band.tier,
                })
            })
            .collect()
    }

    /// Deterministic for a fixed seed; each reference is seeded independently.
    pub fn generate(&self, references: &[Reference], seed: u64) -> Result<Vec<ReportRecord>> {
        let mut out = Vec::with_capacity(references.len() * self.tiers.bands().len());
        for r in references {
            out.extend(self.generate_one(r, seed)?);
        }
        Ok(out)
    }
}

/// Convenience wrapper with the system's default tiers and kind mapping.
pub fn generate_tiered(
    references: &[Reference],
    system: &ScoringSystem,
    tiers: &TierSpec,
    seed: u64,
) -> Result<Vec<ReportRecord>> {
    TieredGenerator::new(Corruptor::for_system(system)?, tiers.clone())?.generate(references, seed)
}
