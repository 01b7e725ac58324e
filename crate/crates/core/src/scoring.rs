//! Scoring systems: criteria, weights and total-score formulas.
//!
//! Two formulas are supported:
//!
//! * `sum_of_errors`: the total is the (weighted) count of errors, lower is better.
//! * `hundred_minus_weighted_sum`: `100 - sum(S_i * W_i)`, higher is better.
//!
//! Everything downstream of scoring works in *quality orientation*, where a
//! larger number is a better report. [`ScoringSystem::quality_score`] performs
//! that conversion.
//!
//! Definitions are TOML documents:
//!
//! ```toml
//! name = "radcliq6"
//! formula = "sum_of_errors"
//!
//! [[criteria]]
//! id = "false_finding"
//! description = "False prediction of a finding"
//! kind = "error_count"      # or "binary_error"
//! max_count = 2             # error_count only, defaults to 2
//! weight = 1.0
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RADCLIQ6: &str = include_str!("../data/systems/radcliq6.toml");
const MRSCORE7: &str = include_str!("../data/systems/mrscore7.toml");

/// Names of the built-in presets accepted by [`ScoringSystem::preset`].
pub const PRESETS: [&str; 2] = ["radcliq6", "mrscore7"];

const DEFAULT_MAX_COUNT: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    ErrorCount { max_count: u32 },
    BinaryError,
}

impl CriterionKind {
    /// Largest legal sub-score.
    pub fn cap(&self) -> u32 {
        match *self {
            CriterionKind::ErrorCount { max_count } => max_count,
            CriterionKind::BinaryError => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: String,
    pub description: String,
    pub kind: CriterionKind,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    SumOfErrors,
    HundredMinusWeightedSum,
}

impl Formula {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "sum_of_errors" => Some(Formula::SumOfErrors),
            "hundred_minus_weighted_sum" => Some(Formula::HundredMinusWeightedSum),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Formula::SumOfErrors => "sum_of_errors",
            Formula::HundredMinusWeightedSum => "hundred_minus_weighted_sum",
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            Formula::SumOfErrors => Orientation::LowerIsBetter,
            Formula::HundredMinusWeightedSum => Orientation::HigherIsBetter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

/// Per-criterion sub-scores, aligned with [`ScoringSystem::criteria`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubScores(pub Vec<f64>);

impl SubScores {
    pub fn zeros(n: usize) -> Self {
        SubScores(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for SubScores {
    fn from(v: Vec<f64>) -> Self {
        SubScores(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringSystem {
    name: String,
    criteria: Vec<Criterion>,
    formula: Formula,
}

impl ScoringSystem {
    /// Builds and validates a system.
    pub fn new(name: impl Into<String>, criteria: Vec<Criterion>, formula: Formula) -> Result<Self> {
        let system = ScoringSystem {
            name: name.into(),
            criteria,
            formula,
        };
        system.validate()?;
        Ok(system)
    }

    /// One of the shipped presets, see [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "radcliq6" => Self::from_toml(RADCLIQ6),
            "mrscore7" => Self::from_toml(MRSCORE7),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Resolves a preset name first, then falls back to a definition file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        Self::from_file(name_or_path)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: SystemDoc = toml::from_str(text).map_err(|e| Error::Parse {
            line: toml_error_line(text, &e),
            message: e.message().to_string(),
        })?;
        doc.into_system()
    }

    pub fn to_toml(&self) -> String {
        let doc = SystemDoc::from(self);
        toml::to_string(&doc).expect("system document serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("name", "must not be empty"));
        }
        if self.criteria.is_empty() {
            return Err(Error::validation("criteria", "at least one criterion is required"));
        }
        let mut seen = HashSet::new();
        for (i, c) in self.criteria.iter().enumerate() {
            if c.id.trim().is_empty() {
                return Err(Error::validation(format!("criteria[{i}].id"), "must not be empty"));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::validation(
                    format!("criteria[{i}].id"),
                    format!("duplicate criterion id {:?}", c.id),
                ));
            }
            if !c.weight.is_finite() || c.weight < 0.0 {
                return Err(Error::validation(
                    format!("criteria[{i}].weight"),
                    format!("weight must be a non-negative number, got {}", c.weight),
                ));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }

    /// Number of criteria, N.
    pub fn len(&self) -> usize {
        self.criteria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty()
    }

    pub fn formula(&self) -> Formula {
        self.formula
    }

    pub fn orientation(&self) -> Orientation {
        self.formula.orientation()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.criteria.iter().map(|c| c.weight).collect()
    }

    pub fn criterion_index(&self, id: &str) -> Option<usize> {
        self.criteria.iter().position(|c| c.id == id)
    }

    /// True when every criterion is a yes/no item.
    pub fn is_binary(&self) -> bool {
        self.criteria
            .iter()
            .all(|c| c.kind == CriterionKind::BinaryError)
    }

    /// Weighted error mass at the worst legal sub-scores.
    pub fn max_penalty(&self) -> f64 {
        self.criteria
            .iter()
            .map(|c| c.weight * f64::from(c.kind.cap()))
            .sum()
    }

    /// `(min_total, max_total)` in the formula's native units.
    pub fn total_range(&self) -> (f64, f64) {
        match self.formula {
            Formula::SumOfErrors => (0.0, self.max_penalty()),
            Formula::HundredMinusWeightedSum => (100.0 - self.max_penalty(), 100.0),
        }
    }

    /// Width R of the quality range, used to normalize margins.
    pub fn range_width(&self) -> f64 {
        let (lo, hi) = self.total_range();
        hi - lo
    }

    /// Checks length, range and integrality of every sub-score.
    pub fn check(&self, subs: &SubScores) -> Result<()> {
        if subs.len() != self.len() {
            return Err(Error::Structural(format!(
                "system {:?} has {} criteria but {} sub-scores were given",
                self.name,
                self.len(),
                subs.len()
            )));
        }
        for (c, &v) in self.criteria.iter().zip(subs.values()) {
            let cap = f64::from(c.kind.cap());
            if !v.is_finite() || v < 0.0 || v > cap || v.fract() != 0.0 {
                return Err(Error::validation(
                    format!("subs.{}", c.id),
                    format!("sub-score {v} outside the legal integer range [0, {cap}]"),
                ));
            }
        }
        Ok(())
    }

    fn penalty(&self, subs: &SubScores) -> f64 {
        self.criteria
            .iter()
            .zip(subs.values())
            .map(|(c, v)| c.weight * v)
            .sum()
    }

    /// Total score in the formula's native units.
    pub fn total_score(&self, subs: &SubScores) -> Result<f64> {
        self.check(subs)?;
        Ok(match self.formula {
            Formula::SumOfErrors => self.penalty(subs),
            Formula::HundredMinusWeightedSum => 100.0 - self.penalty(subs),
        })
    }

    /// Total score flipped so that higher is always better.
    pub fn quality_score(&self, subs: &SubScores) -> Result<f64> {
        let total = self.total_score(subs)?;
        Ok(self.quality_of_total(total))
    }

    /// Maps a native total onto quality orientation.
    pub fn quality_of_total(&self, total: f64) -> f64 {
        match self.orientation() {
            Orientation::HigherIsBetter => total,
            Orientation::LowerIsBetter => self.total_range().1 - total,
        }
    }

    /// Per-criterion contribution to quality, `-W_j * S_j`. Differences of
    /// these sum to differences of [`quality_score`](Self::quality_score).
    pub fn quality_components(&self, subs: &SubScores) -> Result<Vec<f64>> {
        self.check(subs)?;
        Ok(self
            .criteria
            .iter()
            .zip(subs.values())
            .map(|(c, v)| -(c.weight * v))
            .collect())
    }
}

fn toml_error_line(text: &str, e: &toml::de::Error) -> usize {
    e.span()
        .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
        .unwrap_or(0)
}

#[derive(Debug, Serialize, Deserialize)]
struct SystemDoc {
    name: String,
    formula: String,
    criteria: Vec<CriterionDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CriterionDoc {
    id: String,
    #[serde(default)]
    description: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_count: Option<u32>,
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

impl SystemDoc {
    fn into_system(self) -> Result<ScoringSystem> {
        let formula = Formula::parse(&self.formula).ok_or_else(|| {
            Error::validation(
                "formula",
                format!(
                    "unknown formula {:?}; expected sum_of_errors or hundred_minus_weighted_sum",
                    self.formula
                ),
            )
        })?;
        let criteria = self
            .criteria
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let kind = match c.kind.as_str() {
                    "error_count" => CriterionKind::ErrorCount {
                        max_count: c.max_count.unwrap_or(DEFAULT_MAX_COUNT),
                    },
                    "binary_error" => {
                        if c.max_count.is_some_and(|m| m != 1) {
                            return Err(Error::validation(
                                format!("criteria[{i}].max_count"),
                                "binary_error criteria cannot set max_count",
                            ));
                        }
                        CriterionKind::BinaryError
                    }
                    other => {
                        return Err(Error::validation(
                            format!("criteria[{i}].kind"),
                            format!("unknown kind {other:?}; expected error_count or binary_error"),
                        ))
                    }
                };
                Ok(Criterion {
                    id: c.id,
                    description: c.description,
                    kind,
                    weight: c.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScoringSystem::new(self.name, criteria, formula)
    }
}

impl From<&ScoringSystem> for SystemDoc {
    fn from(s: &ScoringSystem) -> Self {
        SystemDoc {
            name: s.name.clone(),
            formula: s.formula.as_str().to_string(),
            criteria: s
                .criteria
                .iter()
                .map(|c| CriterionDoc {
                    id: c.id.clone(),
                    description: c.description.clone(),
                    kind: match c.kind {
                        CriterionKind::ErrorCount { .. } => "error_count".into(),
                        CriterionKind::BinaryError => "binary_error".into(),
                    },
                    max_count: match c.kind {
                        CriterionKind::ErrorCount { max_count } => Some(max_count),
                        CriterionKind::BinaryError => None,
                    },
                    weight: c.weight,
                })
                .collect(),
        }
    }
}
