//! Multi-reward head: one reward per scoring criterion, summed into the
//! metric score.
//!
//! Parameters live in one flat vector so the optimizer and gradient checks
//! can treat every architecture alike. Layout (all matrices row-major):
//!
//! | arch   | blocks, in order                                  |
//! |--------|---------------------------------------------------|
//! | linear | `W (N x dim)`, `b (N)`                            |
//! | mlp    | `W1 (H x dim)`, `b1 (H)`, `W2 (N x H)`, `b2 (N)`  |
//!
//! # Model file
//!
//! ```text
//! magic      6 bytes   "MRERM\0"
//! version    u32 LE
//! header_len u32 LE
//! header     JSON {version, system_name, n_out, spec, arch, dtype, param_count}
//! params     param_count x f64 LE, in the layout above
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSpec, Featurizer};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 6] = b"MRERM\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Linear,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

impl Default for Arch {
    fn default() -> Self {
        Arch::Linear
    }
}

/// Per-criterion rewards and their exact sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector<T> {
    pub values: Vec<T>,
    pub total: T,
}

impl<T: Scalar> RewardVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        let total = values.iter().copied().sum();
        RewardVector { values, total }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    hidden: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel<T> {
    spec: FeatureSpec,
    arch: Arch,
    system_name: String,
    n_out: usize,
    params: Vec<T>,
}

impl<T: Scalar> RewardModel<T> {
    /// All-zero parameters.
    pub fn zeros(spec: FeatureSpec, arch: Arch, system_name: impl Into<String>, n_out: usize) -> Result<Self> {
        spec.validate()?;
        if n_out == 0 {
            return Err(Error::validation("model.n_out", "at least one output is required"));
        }
        if let Arch::Mlp { hidden: 0 } = arch {
            return Err(Error::validation("model.arch.hidden", "hidden width must be positive"));
        }
        let count = param_count(spec.dim(), arch, n_out);
        Ok(RewardModel {
            spec,
            arch,
            system_name: system_name.into(),
            n_out,
            params: vec![T::zero(); count],
        })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from a seeded
    /// ChaCha8 stream, biases zero.
    pub fn init(spec: FeatureSpec, arch: Arch, system_name: impl Into<String>, n_out: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(spec, arch, system_name, n_out)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = m.spec.dim();
        let mut fill = |block: &mut [T], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for w in block {
                *w = T::of(rng.gen_range(-a..a));
            }
        };
        match arch {
            Arch::Linear => {
                let w = n_out * dim;
                fill(&mut m.params[..w], dim);
            }
            Arch::Mlp { hidden } => {
                let w1 = hidden * dim;
                fill(&mut m.params[..w1], dim);
                let w2 = w1 + hidden;
                fill(&mut m.params[w2..w2 + n_out * hidden], hidden);
            }
        }
        Ok(m)
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn system_name(&self) -> &str {
        &self.system_name
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Structural(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Structural(format!(
                "feature dim {} does not match model dim {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<RewardVector<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<(RewardVector<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let dim = self.dim();
        let n = self.n_out;
        match self.arch {
            Arch::Linear => {
                let (w, b) = self.params.split_at(n * dim);
                let r = affine(w, b, x, n, dim);
                Ok((RewardVector::new(r), ForwardCache { hidden: Vec::new() }))
            }
            Arch::Mlp { hidden } => {
                let (w1, rest) = self.params.split_at(hidden * dim);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(n * hidden);
                let h: Vec<T> = affine(w1, b1, x, hidden, dim).into_iter().map(T::tanh).collect();
                let r = affine(w2, b2, &h, n, hidden);
                Ok((RewardVector::new(r), ForwardCache { hidden: h }))
            }
        }
    }

    /// Adds `d loss / d params` to `grad` given `d loss / d rewards`.
    pub fn backward(&self, x: &[T], cache: &ForwardCache<T>, grad_r: &[T], grad: &mut [T]) -> Result<()> {
        self.check_input(x)?;
        if grad_r.len() != self.n_out || grad.len() != self.params.len() {
            return Err(Error::Structural("gradient buffer shape mismatch".into()));
        }
        let dim = self.dim();
        let n = self.n_out;
        match self.arch {
            Arch::Linear => {
                let (gw, gb) = grad.split_at_mut(n * dim);
                outer_acc(gw, grad_r, x, dim);
                gb.iter_mut().zip(grad_r).for_each(|(g, &d)| *g = *g + d);
            }
            Arch::Mlp { hidden } => {
                let w2_at = hidden * dim + hidden;
                let w2 = &self.params[w2_at..w2_at + n * hidden];
                // d/dh = W2^T grad_r, then through tanh: (1 - h^2)
                let mut gh = vec![T::zero(); hidden];
                for (j, &d) in grad_r.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    let row = &w2[j * hidden..(j + 1) * hidden];
                    for (g, &w) in gh.iter_mut().zip(row) {
                        *g = *g + w * d;
                    }
                }
                for (g, &h) in gh.iter_mut().zip(&cache.hidden) {
                    *g = *g * (T::one() - h * h);
                }
                let (gw1, rest) = grad.split_at_mut(hidden * dim);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (gw2, gb2) = rest.split_at_mut(n * hidden);
                outer_acc(gw1, &gh, x, dim);
                gb1.iter_mut().zip(&gh).for_each(|(g, &d)| *g = *g + d);
                outer_acc(gw2, grad_r, &cache.hidden, hidden);
                gb2.iter_mut().zip(grad_r).for_each(|(g, &d)| *g = *g + d);
            }
        }
        Ok(())
    }

    /// Copy with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> RewardModel<U> {
        RewardModel {
            spec: self.spec.clone(),
            arch: self.arch,
            system_name: self.system_name.clone(),
            n_out: self.n_out,
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            version: MODEL_FORMAT_VERSION,
            system_name: self.system_name.clone(),
            n_out: self.n_out,
            spec: self.spec.clone(),
            arch: self.arch,
            dtype: T::DTYPE.to_string(),
            param_count: self.params.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(14 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let parse = |message: &str| Error::Parse {
            line: 0,
            message: format!("model file: {message}"),
        };
        if bytes.len() < 14 || &bytes[..6] != MODEL_MAGIC {
            return Err(parse("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let header_bytes = bytes.get(14..14 + hlen).ok_or_else(|| parse("truncated header"))?;
        let header: ModelHeader =
            serde_json::from_slice(header_bytes).map_err(|e| parse(&e.to_string()))?;
        if header.version != version {
            return Err(parse("header version disagrees with preamble"));
        }
        let body = &bytes[14 + hlen..];
        if body.len() != 8 * header.param_count {
            return Err(parse(&format!(
                "expected {} parameter bytes, found {}",
                8 * header.param_count,
                body.len()
            )));
        }
        let mut model = Self::zeros(header.spec, header.arch, header.system_name, header.n_out)?;
        if model.params.len() != header.param_count {
            return Err(parse("parameter count does not match architecture"));
        }
        for (p, chunk) in model.params.iter_mut().zip(body.chunks_exact(8)) {
            *p = T::of(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        if !model.all_finite() {
            return Err(Error::Numeric("model file holds non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a model; with `expected_system` set, refuses a model trained
    /// for a different scoring system.
    pub fn load(path: impl AsRef<Path>, expected_system: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model = Self::from_bytes(&bytes)?;
        if let Some(name) = expected_system {
            if model.system_name != name {
                return Err(Error::validation(
                    "model.system_name",
                    format!("model was trained for {:?}, not {name:?}", model.system_name),
                ));
            }
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    system_name: String,
    n_out: usize,
    spec: FeatureSpec,
    arch: Arch,
    dtype: String,
    param_count: usize,
}

pub fn param_count(dim: usize, arch: Arch, n_out: usize) -> usize {
    match arch {
        Arch::Linear => n_out * dim + n_out,
        Arch::Mlp { hidden } => hidden * dim + hidden + n_out * hidden + n_out,
    }
}

/// `W x + b` for a row-major `rows x cols` matrix; zero inputs are skipped.
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let nz: Vec<(usize, T)> = x
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| *v != T::zero())
        .collect();
    (0..rows)
        .map(|i| {
            let row = &w[i * cols..(i + 1) * cols];
            nz.iter().fold(b[i], |acc, &(k, v)| acc + row[k] * v)
        })
        .collect()
}

/// `G += d x^T`.
fn outer_acc<T: Scalar>(g: &mut [T], d: &[T], x: &[T], cols: usize) {
    for (i, &di) in d.iter().enumerate() {
        if di == T::zero() {
            continue;
        }
        let row = &mut g[i * cols..(i + 1) * cols];
        for (gk, &xk) in row.iter_mut().zip(x) {
            if xk != T::zero() {
                *gk = *gk + di * xk;
            }
        }
    }
}

/// Converts `f64` features into the model's scalar type.
pub fn to_scalar<T: Scalar>(x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| T::of(v)).collect()
}

/// Featurizes a candidate and runs the head. Returns sub-rewards; the
/// metric score is `rewards.total`.
pub fn score_report<T: Scalar>(
    model: &RewardModel<T>,
    featurizer: &Featurizer,
    id: &str,
    reference: &str,
    candidate: &str,
) -> Result<RewardVector<T>> {
    if featurizer.spec() != model.spec() {
        return Err(Error::Config("featurizer spec differs from the model's".into()));
    }
    let v = featurizer.featurize(id, reference, candidate)?;
    model.forward(&to_scalar(v.values()))
}
