//! Text featurizers mapping a (reference, candidate) pair to a dense vector.
//!
//! The hashed variant counts word and character n-grams. Keys are
//! `w<n>:<tokens joined by space>` for word n-grams and `c<n>:<chars>` for
//! character n-grams over the lowercased, whitespace-collapsed text. A key is
//! hashed as `h = mix64(fnv1a64(key, offset = 0xcbf29ce484222325 ^ salt))`,
//! `mix64` being the SplitMix64 finalizer, and lands in bucket `h & (dim - 1)`.
//!
//! Two layouts fold the counts into `dim` buckets.
//!
//! `edit` (default) keeps only what changed. With `d(g) = tf_cand(g) - tf_ref(g)`:
//!
//! ```text
//! v[bucket(g, SALT_ADDED)]   += d(g)     for d(g) > 0
//! v[bucket(g, SALT_MISSING)] += -d(g)    for d(g) < 0
//! ```
//!
//! The vector is zero for an exact copy and is not normalized, so its size
//! tracks how much was edited.
//!
//! `stacked` superimposes three signed components (sign `+1` when the top
//! bit of `h` is clear, `-1` otherwise) and normalizes:
//!
//! ```text
//! u = H_cand(tf(candidate)) + H_ref(tf(reference)) + H_diff(tf(candidate)) - H_diff(tf(reference))
//! v = u / |u|
//! ```

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const SALT_CANDIDATE: u64 = 0x9e37_79b9_7f4a_7c15;
pub const SALT_REFERENCE: u64 = 0xc2b2_ae3d_27d4_eb4f;
pub const SALT_DIFFERENCE: u64 = 0x1656_67b1_9e37_79f9;
pub const SALT_ADDED: u64 = 0x27d4_eb2f_1656_67c5;
pub const SALT_MISSING: u64 = 0x85eb_ca77_c2b2_ae63;

pub const MIN_DIM: usize = 8;

/// 64-bit FNV-1a with a salted offset basis, finalized with SplitMix64.
pub fn hash64(bytes: &[u8], salt: u64) -> u64 {
    let mut h = FNV_OFFSET ^ salt;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(h)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Edit,
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FeatureSpec {
    HashedNgrams {
        dim: usize,
        word_n: BTreeSet<usize>,
        char_n: BTreeSet<usize>,
        #[serde(default)]
        layout: Layout,
    },
    External {
        dim: usize,
    },
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::HashedNgrams {
            dim: 4096,
            word_n: [1, 2].into(),
            char_n: [3, 4].into(),
            layout: Layout::Edit,
        }
    }
}

impl FeatureSpec {
    pub fn hashed(dim: usize, word_n: &[usize], char_n: &[usize]) -> Result<Self> {
        let spec = FeatureSpec::HashedNgrams {
            dim,
            word_n: word_n.iter().copied().collect(),
            char_n: char_n.iter().copied().collect(),
            layout: Layout::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same spec with another hashed layout; external specs are unchanged.
    pub fn with_layout(mut self, new: Layout) -> Self {
        if let FeatureSpec::HashedNgrams { layout, .. } = &mut self {
            *layout = new;
        }
        self
    }

    pub fn layout(&self) -> Option<Layout> {
        match self {
            FeatureSpec::HashedNgrams { layout, .. } => Some(*layout),
            FeatureSpec::External { .. } => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureSpec::HashedNgrams { dim, .. } | FeatureSpec::External { dim } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim < MIN_DIM {
            return Err(Error::validation("features.dim", format!("dim {dim} is below {MIN_DIM}")));
        }
        if let FeatureSpec::HashedNgrams { word_n, char_n, .. } = self {
            if !dim.is_power_of_two() {
                return Err(Error::validation(
                    "features.dim",
                    format!("hashed dim must be a power of two, got {dim}"),
                ));
            }
            if word_n.is_empty() && char_n.is_empty() {
                return Err(Error::validation("features", "no n-gram orders selected"));
            }
            if word_n.contains(&0) || char_n.contains(&0) {
                return Err(Error::validation("features", "n-gram order 0"));
            }
        }
        Ok(())
    }
}

/// A dense feature vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|x| *x /= n);
        }
        self
    }
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_keys(text: &str, word_n: &BTreeSet<usize>, char_n: &BTreeSet<usize>) -> Vec<String> {
    let mut keys = Vec::new();
    let tokens = tokenize(text);
    for &n in word_n {
        for w in tokens.windows(n) {
            keys.push(format!("w{n}:{}", w.join(" ")));
        }
    }
    let collapsed: Vec<char> = text
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect();
    for &n in char_n {
        for w in collapsed.windows(n) {
            keys.push(format!("c{n}:{}", w.iter().collect::<String>()));
        }
    }
    keys
}

fn fold(keys: &[String], salt: u64, dim: usize, scale: f64, out: &mut [f64]) {
    let mask = (dim - 1) as u64;
    for k in keys {
        let h = hash64(k.as_bytes(), salt);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        out[(h & mask) as usize] += scale * sign;
    }
}

/// The three folded components before they are summed and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedParts {
    pub candidate: Vec<f64>,
    pub reference: Vec<f64>,
    pub difference: Vec<f64>,
}

impl HashedParts {
    pub fn sum(&self) -> Vec<f64> {
        (0..self.candidate.len())
            .map(|i| self.candidate[i] + self.reference[i] + self.difference[i])
            .collect()
    }
}

fn check_text(what: &str, text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::validation(what, "text is empty"));
    }
    Ok(())
}

/// Components of the hashed featurization. Fails on empty text or a
/// non-hashed spec.
pub fn hashed_parts(spec: &FeatureSpec, reference: &str, candidate: &str) -> Result<HashedParts> {
    let FeatureSpec::HashedNgrams { dim, word_n, char_n, .. } = spec else {
        return Err(Error::Config("hashed_parts needs a hashed_ngrams spec".into()));
    };
    check_text("reference", reference)?;
    check_text("candidate", candidate)?;
    let dim = *dim;
    let c = ngram_keys(candidate, word_n, char_n);
    let r = ngram_keys(reference, word_n, char_n);
    let mut parts = HashedParts {
        candidate: vec![0.0; dim],
        reference: vec![0.0; dim],
        difference: vec![0.0; dim],
    };
    fold(&c, SALT_CANDIDATE, dim, 1.0, &mut parts.candidate);
    fold(&r, SALT_REFERENCE, dim, 1.0, &mut parts.reference);
    fold(&c, SALT_DIFFERENCE, dim, 1.0, &mut parts.difference);
    fold(&r, SALT_DIFFERENCE, dim, -1.0, &mut parts.difference);
    Ok(parts)
}

/// Unnormalized `edit` layout: added and missing n-gram counts.
pub fn edit_counts(spec: &FeatureSpec, reference: &str, candidate: &str) -> Result<Vec<f64>> {
    let FeatureSpec::HashedNgrams { dim, word_n, char_n, .. } = spec else {
        return Err(Error::Config("edit_counts needs a hashed_ngrams spec".into()));
    };
    check_text("reference", reference)?;
    check_text("candidate", candidate)?;
    let mut delta: HashMap<String, i64> = HashMap::new();
    for k in ngram_keys(candidate, word_n, char_n) {
        *delta.entry(k).or_default() += 1;
    }
    for k in ngram_keys(reference, word_n, char_n) {
        *delta.entry(k).or_default() -= 1;
    }
    let mask = (*dim - 1) as u64;
    let mut v = vec![0.0; *dim];
    // integer counts, so the summation order cannot change the result
    for (k, d) in delta {
        let salt = match d.cmp(&0) {
            std::cmp::Ordering::Greater => SALT_ADDED,
            std::cmp::Ordering::Less => SALT_MISSING,
            std::cmp::Ordering::Equal => continue,
        };
        v[(hash64(k.as_bytes(), salt) & mask) as usize] += d.unsigned_abs() as f64;
    }
    Ok(v)
}

/// Vectors loaded from an external encoder, keyed by record id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl ExternalTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    /// Parses `id<TAB>v1,v2,...,vd` lines.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut rows = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected id<TAB>values".into(),
            })?;
            let v = values
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("row {id:?}: {e}"),
                })?;
            if v.len() != dim {
                return Err(Error::validation(
                    format!("row {id:?}"),
                    format!("expected {dim} values, found {}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!("row {id:?}"), "non-finite value"));
            }
            rows.insert(id.to_string(), v);
        }
        Ok(ExternalTable { dim, rows })
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut table = ExternalTable { dim, rows: HashMap::new() };
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::validation(format!("row {id:?}"), format!("expected {dim} values")));
            }
            table.rows.insert(id, v);
        }
        Ok(table)
    }

    /// Rows sorted by id. Uses the shortest representation that round-trips.
    pub fn to_text(&self) -> String {
        let mut ids: Vec<&String> = self.rows.keys().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| {
                let v: Vec<String> = self.rows[id].iter().map(|x| format!("{x:?}")).collect();
                format!("{id}\t{}\n", v.join(","))
            })
            .collect()
    }
}

pub fn load_external(path: impl AsRef<Path>, dim: usize) -> Result<ExternalTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExternalTable::parse(&text, dim)
}

/// A feature spec bound to whatever data it needs.
#[derive(Debug, Clone)]
pub struct Featurizer {
    spec: FeatureSpec,
    external: Option<ExternalTable>,
}

impl Featurizer {
    pub fn new(spec: FeatureSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Featurizer { spec, external: None })
    }

    pub fn with_external(spec: FeatureSpec, table: ExternalTable) -> Result<Self> {
        spec.validate()?;
        if table.dim() != spec.dim() {
            return Err(Error::validation(
                "features.dim",
                format!("table has dim {} but spec declares {}", table.dim(), spec.dim()),
            ));
        }
        Ok(Featurizer {
            spec,
            external: Some(table),
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    /// Features for a candidate. `id` is only consulted by the external
    /// variant, whose rows are normalized to unit length.
    pub fn featurize(&self, id: &str, reference: &str, candidate: &str) -> Result<FeatureVector> {
        match &self.spec {
            FeatureSpec::HashedNgrams { layout: Layout::Edit, .. } => {
                Ok(FeatureVector(edit_counts(&self.spec, reference, candidate)?))
            }
            FeatureSpec::HashedNgrams { layout: Layout::Stacked, .. } => {
                let parts = hashed_parts(&self.spec, reference, candidate)?;
                Ok(FeatureVector(parts.sum()).normalized())
            }
            FeatureSpec::External { .. } => {
                check_text("reference", reference)?;
                check_text("candidate", candidate)?;
                let row = self
                    .external
                    .as_ref()
                    .and_then(|t| t.get(id))
                    .ok_or_else(|| Error::Lookup(id.to_string()))?;
                Ok(FeatureVector(row.to_vec()).normalized())
            }
        }
    }
}

/// Hashed featurization of one pair of texts.
pub fn featurize(spec: &FeatureSpec, reference: &str, candidate: &str) -> Result<FeatureVector> {
    Featurizer::new(spec.clone())?.featurize("", reference, candidate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> FeatureSpec {
        FeatureSpec::hashed(64, &[1, 2], &[3]).unwrap()
    }

    #[test]
    fn hash_is_stable() {
        // pinned so feature files stay reproducible across platforms
        assert_eq!(hash64(b"", 0), mix64(FNV_OFFSET));
        assert_eq!(hash64(b"w1:left", 0), hash64(b"w1:left", 0));
        assert_ne!(hash64(b"w1:left", SALT_CANDIDATE), hash64(b"w1:left", SALT_REFERENCE));
        assert_eq!(hash64(b"a", 0), mix64((FNV_OFFSET ^ 0x61).wrapping_mul(FNV_PRIME)));
    }

    #[test]
    fn identical_texts_have_zero_difference() {
        let p = hashed_parts(&small(), "small left effusion.", "small left effusion.").unwrap();
        assert!(p.difference.iter().all(|&x| x == 0.0));
        assert!(p.candidate.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn determinism_and_unit_norm() {
        let spec = FeatureSpec::default().with_layout(Layout::Stacked);
        let a = featurize(&spec, "Heart is normal.", "Heart is large.").unwrap();
        let b = featurize(&spec, "Heart is normal.", "Heart is large.").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 4096);
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn edit_layout_by_hand() {
        let spec = FeatureSpec::hashed(1024, &[1], &[]).unwrap();
        assert_eq!(spec.layout(), Some(Layout::Edit));
        let same = featurize(&spec, "left effusion", "left effusion").unwrap();
        assert!(same.values().iter().all(|&x| x == 0.0));

        // "left" is missing once, "right" added twice
        let v = featurize(&spec, "left effusion", "right effusion right").unwrap();
        let mut expected = vec![0.0; 1024];
        expected[(hash64(b"w1:left", SALT_MISSING) & 1023) as usize] += 1.0;
        expected[(hash64(b"w1:right", SALT_ADDED) & 1023) as usize] += 2.0;
        assert_eq!(v.values(), expected.as_slice());
        assert_eq!(featurize(&spec, "left effusion", "right effusion right").unwrap(), v);
    }

    #[test]
    fn layout_defaults_when_absent() {
        let spec: FeatureSpec = serde_json::from_str(r#"{"variant":"hashed_ngrams","dim":64,"word_n":[1],"char_n":[]}"#).unwrap();
        assert_eq!(spec.layout(), Some(Layout::Edit));
        let round: FeatureSpec = serde_json::from_str(&serde_json::to_string(&small().with_layout(Layout::Stacked)).unwrap()).unwrap();
        assert_eq!(round.layout(), Some(Layout::Stacked));
    }

    #[test]
    fn one_token_change_touches_only_its_ngrams() {
        let spec = FeatureSpec::hashed(256, &[1, 2], &[]).unwrap();
        let a = hashed_parts(&spec, "left effusion", "left effusion").unwrap().sum();
        let b = hashed_parts(&spec, "left effusion", "right effusion").unwrap().sum();
        // n-grams that differ: w1:left, w1:right, w2:left effusion, w2:right effusion,
        // each in the candidate and difference components
        let mut touched = BTreeSet::new();
        for key in ["w1:left", "w1:right", "w2:left effusion", "w2:right effusion"] {
            for salt in [SALT_CANDIDATE, SALT_DIFFERENCE] {
                touched.insert((hash64(key.as_bytes(), salt) & 255) as usize);
            }
        }
        for i in 0..256 {
            if !touched.contains(&i) {
                assert_eq!(a[i], b[i], "bucket {i} changed");
            }
        }
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_specs_and_inputs() {
        assert!(FeatureSpec::hashed(100, &[1], &[]).is_err());
        assert!(FeatureSpec::hashed(4, &[1], &[]).is_err());
        assert!(FeatureSpec::hashed(16, &[], &[]).is_err());
        assert!(matches!(featurize(&small(), "  ", "x"), Err(Error::Validation { .. })));
        assert!(featurize(&small(), "x", "").is_err());
    }

    #[test]
    fn external_table() {
        let text = "a\t1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,2\nb\t0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0.5\nc\t0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1,1.1,1.2,1.3,1.4,1.5,1.6\n";
        let t = ExternalTable::parse(text, 16).unwrap();
        assert_eq!(t.len(), 3);
        let back = ExternalTable::parse(&t.to_text(), 16).unwrap();
        assert_eq!(back, t);

        let short = "x\t1,2,3,4,5,6,7,8,9,10,11,12,13,14,15\n";
        match ExternalTable::parse(short, 16) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "row \"x\""),
            other => panic!("unexpected {other:?}"),
        }

        let f = Featurizer::with_external(FeatureSpec::External { dim: 16 }, t).unwrap();
        let v = f.featurize("b", "r", "c").unwrap();
        assert_eq!(v.values()[15], 1.0);
        assert!(matches!(f.featurize("zzz", "r", "c"), Err(Error::Lookup(id)) if id == "zzz"));
        let bare = Featurizer::new(FeatureSpec::External { dim: 16 }).unwrap();
        assert!(matches!(bare.featurize("a", "r", "c"), Err(Error::Lookup(_))));
    }

    proptest! {
        #[test]
        fn external_rows_round_trip_exactly(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 8), 1..5)) {
            let t = ExternalTable::from_rows(8, rows.into_iter().enumerate().map(|(i, v)| (format!("r{i}"), v))).unwrap();
            prop_assert_eq!(ExternalTable::parse(&t.to_text(), 8).unwrap(), t);
        }

        #[test]
        fn stacked_norm_is_one_for_nonempty_text(a in "[a-z]{1,8}( [a-z]{1,8}){0,6}", b in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
            let v = featurize(&small().with_layout(Layout::Stacked), &a, &b).unwrap();
            prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn edit_mass_counts_changed_ngrams(a in "[a-z]{1,8}( [a-z]{1,8}){0,6}", b in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
            let spec = FeatureSpec::hashed(64, &[1], &[]).unwrap();
            let v = featurize(&spec, &a, &b).unwrap();
            let mut ca = std::collections::HashMap::<String, i64>::new();
            for t in tokenize(&b) { *ca.entry(t).or_default() += 1; }
            for t in tokenize(&a) { *ca.entry(t).or_default() -= 1; }
            let l1: i64 = ca.values().map(|d| d.abs()).sum();
            prop_assert_eq!(v.values().iter().sum::<f64>(), l1 as f64);
            prop_assert!(v.values().iter().all(|&x| x >= 0.0));
        }
    }
}
