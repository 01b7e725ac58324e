//! Mini-batch training of a [`RewardModel`] on accepted/rejected pairs.
//!
//! Update rule per batch, with gradient `g` of the batch objective, step
//! count `t`, step size `eta`, momentum `mu`:
//!
//! ```text
//! adaptive off:  u = g
//! adaptive on:   s = beta * s + (1 - beta) * g^2
//!                u = g / (sqrt(s / (1 - beta^t)) + eps)
//! v     = mu * v + u
//! theta = (1 - eta * weight_decay) * theta - eta * v
//! ```
//!
//! With `averaging` on, the trained model is the uniform mean of the
//! initial point and every iterate.
//!
//! Epoch `e` visits pairs in the order of a ChaCha8 shuffle seeded with
//! `derive_seed(seed, "epoch-<e>")`, so resuming from a checkpoint taken at
//! an epoch boundary replays exactly the same trajectory.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::derive_seed;
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::loss::{mre_grad, mre_loss, LossBreakdown, LossConfig, PairRewards};
use crate::model::{to_scalar, RewardModel};
use crate::pairing::PairLine;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Adaptive {
    pub beta: f64,
    pub eps: f64,
}

impl Default for Adaptive {
    fn default() -> Self {
        Adaptive { beta: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub momentum: f64,
    /// Decoupled L2 shrinkage: each step also applies `theta -= eta * weight_decay * theta`.
    pub weight_decay: f64,
    pub adaptive: Option<Adaptive>,
    /// Report the running mean of all iterates instead of the last one.
    pub averaging: bool,
    pub seed: u64,
    pub loss: LossConfig,
    /// Log every this many epochs (the last epoch is always logged).
    pub eval_every: usize,
    /// Stop after this many logged evaluations without a lower training loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 6,
            step_size: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            adaptive: None,
            averaging: true,
            seed: 0,
            loss: LossConfig::default(),
            eval_every: 1,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be at least 1"));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::validation("train.step_size", "must be a finite non-negative number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::validation("train.weight_decay", "must be a finite non-negative number"));
        }
        if let Some(a) = self.adaptive {
            if !(0.0..1.0).contains(&a.beta) || !(a.eps > 0.0) {
                return Err(Error::validation("train.adaptive", "beta in [0, 1) and eps > 0 required"));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::validation("train.eval_every", "must be at least 1"));
        }
        self.loss.validate()
    }

    /// Everything that shapes the trajectory; `epochs`, `eval_every` and
    /// `patience` are left out so a run can be extended after resuming.
    fn trajectory_fields(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().unwrap();
        obj.remove("epochs");
        obj.remove("eval_every");
        obj.remove("patience");
        v
    }

    pub fn hash(&self) -> String {
        let text = self.trajectory_fields().to_string();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// A featurized pair ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair<T> {
    pub accepted: Vec<T>,
    pub rejected: Vec<T>,
    pub sub_margins: Vec<T>,
    pub total_margin: T,
}

/// Featurizes pair lines. External features are looked up by record id.
pub fn prepare_pairs<T: Scalar>(featurizer: &Featurizer, pairs: &[PairLine]) -> Result<Vec<TrainPair<T>>> {
    pairs
        .iter()
        .map(|p| {
            let a = featurizer.featurize(&p.accepted_id, &p.reference_text, &p.accepted_text)?;
            let r = featurizer.featurize(&p.rejected_id, &p.reference_text, &p.rejected_text)?;
            Ok(TrainPair {
                accepted: to_scalar(a.values()),
                rejected: to_scalar(r.values()),
                sub_margins: to_scalar(&p.sub_margins),
                total_margin: T::of(p.total_margin),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ind: f64,
    pub l_tot: f64,
    pub l_total: f64,
    /// Fraction of pairs whose accepted total reward beats the rejected one.
    pub pair_accuracy: f64,
}

/// Mutable training state: model, optimizer moments and progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    model: RewardModel<T>,
    config: TrainConfig,
    velocity: Vec<T>,
    second_moment: Vec<T>,
    /// Running mean of the parameters after each step (empty when off).
    average: Vec<T>,
    steps: u64,
    epochs_done: usize,
    log: Vec<EpochLog>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: RewardModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = model.params().len();
        let average = if config.averaging { model.params().to_vec() } else { Vec::new() };
        Ok(Trainer {
            model,
            config,
            velocity: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            average,
            steps: 0,
            epochs_done: 0,
            log: Vec::new(),
        })
    }

    /// The current iterate.
    pub fn model(&self) -> &RewardModel<T> {
        &self.model
    }

    /// The model training produces: the iterate average when averaging is
    /// on, the current iterate otherwise.
    pub fn output_model(&self) -> RewardModel<T> {
        if self.average.is_empty() {
            return self.model.clone();
        }
        let mut m = self.model.clone();
        m.set_params(self.average.clone()).expect("average has the model's shape");
        m
    }

    pub fn into_model(self) -> RewardModel<T> {
        if self.average.is_empty() {
            self.model
        } else {
            self.output_model()
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Loss and pair accuracy of [`Trainer::output_model`] over `pairs`.
    pub fn evaluate(&self, pairs: &[TrainPair<T>]) -> Result<(LossBreakdown<T>, f64)> {
        if self.average.is_empty() {
            evaluate_pairs(&self.model, pairs, &self.config.loss)
        } else {
            evaluate_pairs(&self.output_model(), pairs, &self.config.loss)
        }
    }

    /// Runs until `config.epochs` epochs are done in total. On a non-finite
    /// loss or parameter the batch is rolled back, training stops and the
    /// error is returned; the trainer keeps the last finite state.
    pub fn run(&mut self, pairs: &[TrainPair<T>]) -> Result<()> {
        let target = self.config.epochs;
        self.run_until(pairs, target)
    }

    pub fn run_until(&mut self, pairs: &[TrainPair<T>], target_epochs: usize) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::validation("pairs", "no training pairs"));
        }
        let mut best = f64::INFINITY;
        let mut stale = 0usize;
        while self.epochs_done < target_epochs {
            self.epoch(pairs)?;
            let e = self.epochs_done;
            if e % self.config.eval_every == 0 || e == target_epochs {
                let (loss, acc) = self.evaluate(pairs)?;
                let entry = EpochLog {
                    epoch: e,
                    l_ind: loss.l_ind.as_f64(),
                    l_tot: loss.l_tot.as_f64(),
                    l_total: loss.l_total.as_f64(),
                    pair_accuracy: acc,
                };
                if !entry.l_total.is_finite() {
                    return Err(Error::Numeric(format!("training loss diverged at epoch {e}")));
                }
                if let Some(patience) = self.config.patience {
                    if entry.l_total < best {
                        best = entry.l_total;
                        stale = 0;
                    } else {
                        stale += 1;
                    }
                    self.log.push(entry);
                    if stale >= patience {
                        break;
                    }
                    continue;
                }
                self.log.push(entry);
            }
        }
        Ok(())
    }

    fn epoch(&mut self, pairs: &[TrainPair<T>]) -> Result<()> {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let epoch = self.epochs_done + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("epoch-{epoch}")));
        order.shuffle(&mut rng);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainPair<T>> = chunk.iter().map(|&i| &pairs[i]).collect();
            self.step(&batch)?;
        }
        self.epochs_done = epoch;
        Ok(())
    }

    fn step(&mut self, batch: &[&TrainPair<T>]) -> Result<()> {
        let grad = batch_gradient(&self.model, batch, &self.config.loss)?.1;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let eta = T::of(self.config.step_size);
        let mu = T::of(self.config.momentum);
        let decay = T::one() - eta * T::of(self.config.weight_decay);
        self.steps += 1;
        let snapshot = (self.model.params().to_vec(), self.velocity.clone(), self.second_moment.clone());
        let bias = self
            .config
            .adaptive
            .map(|a| (T::of(a.beta), T::of(a.eps), T::one() - T::of(a.beta).powi(self.steps.min(i32::MAX as u64) as i32)));
        let params = self.model.params_mut();
        for i in 0..params.len() {
            let g = grad[i];
            let u = match bias {
                Some((beta, eps, correction)) => {
                    let s = beta * self.second_moment[i] + (T::one() - beta) * g * g;
                    self.second_moment[i] = s;
                    g / ((s / correction).sqrt() + eps)
                }
                None => g,
            };
            self.velocity[i] = mu * self.velocity[i] + u;
            params[i] = decay * params[i] - eta * self.velocity[i];
        }
        if !self.model.all_finite() {
            let (p, v, s) = snapshot;
            self.model.set_params(p)?;
            self.velocity = v;
            self.second_moment = s;
            self.steps -= 1;
            return Err(Error::Numeric("parameters became non-finite; rolled back".into()));
        }
        if !self.average.is_empty() {
            // mean over the initial point and `steps` iterates
            let k = T::of((self.steps + 1) as f64);
            for (a, &p) in self.average.iter_mut().zip(self.model.params()) {
                *a = *a + (p - *a) / k;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            config_hash: self.config.hash(),
            model: self.model.to_bytes(),
            velocity: self.velocity.iter().map(|v| v.as_f64()).collect(),
            second_moment: self.second_moment.iter().map(|v| v.as_f64()).collect(),
            average: self.average.iter().map(|v| v.as_f64()).collect(),
            steps: self.steps,
            epochs_done: self.epochs_done,
            log: self.log.clone(),
        }
    }

    /// Restores a trainer; `config` must agree with the checkpoint on every
    /// trajectory-shaping field.
    pub fn from_checkpoint(cp: Checkpoint, config: TrainConfig) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: cp.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        config.validate()?;
        if config.hash() != cp.config_hash {
            return Err(Error::Config(format!(
                "checkpoint was written under a different configuration: {}",
                config_diff(&cp.config, &config)
            )));
        }
        let model = RewardModel::<T>::from_bytes(&cp.model)?;
        let n = model.params().len();
        let expected_avg = if config.averaging { n } else { 0 };
        if cp.velocity.len() != n || cp.second_moment.len() != n || cp.average.len() != expected_avg {
            return Err(Error::Parse {
                line: 0,
                message: "checkpoint optimizer state does not match the model".into(),
            });
        }
        Ok(Trainer {
            model,
            config,
            velocity: to_scalar(&cp.velocity),
            second_moment: to_scalar(&cp.second_moment),
            average: to_scalar(&cp.average),
            steps: cp.steps,
            epochs_done: cp.epochs_done,
            log: cp.log,
        })
    }

    pub fn checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn resume(path: impl AsRef<Path>, config: TrainConfig) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?, config)
    }
}

fn config_diff(old: &TrainConfig, new: &TrainConfig) -> String {
    let a = old.trajectory_fields();
    let b = new.trajectory_fields();
    let mut diffs = Vec::new();
    for (k, va) in a.as_object().unwrap() {
        let vb = &b[k];
        if va != vb {
            diffs.push(format!("{k}: {va} -> {vb}"));
        }
    }
    diffs.join(", ")
}

/// Serialized training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    /// Model file bytes.
    #[serde(with = "hex_bytes")]
    pub model: Vec<u8>,
    pub velocity: Vec<f64>,
    pub second_moment: Vec<f64>,
    #[serde(default)]
    pub average: Vec<f64>,
    pub steps: u64,
    pub epochs_done: usize,
    pub log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("checkpoint: {e}"),
        })
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Objective and flat parameter gradient over a batch, pairs in order.
pub fn batch_gradient<T: Scalar>(
    model: &RewardModel<T>,
    batch: &[&TrainPair<T>],
    loss: &LossConfig,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let mut outs = Vec::with_capacity(batch.len());
    for p in batch {
        let (rw, cw) = model.forward_cached(&p.accepted)?;
        let (rl, cl) = model.forward_cached(&p.rejected)?;
        outs.push((rw, cw, rl, cl));
    }
    let rewards: Vec<PairRewards<'_, T>> = batch
        .iter()
        .zip(&outs)
        .map(|(p, (rw, _, rl, _))| PairRewards {
            r_w: &rw.values,
            r_l: &rl.values,
            sub_margins: &p.sub_margins,
            total_margin: p.total_margin,
        })
        .collect();
    let (breakdown, reward_grads) = mre_grad(&rewards, loss)?;
    let mut grad = vec![T::zero(); model.params().len()];
    for ((p, (_, cw, _, cl)), (gw, gl)) in batch.iter().zip(&outs).zip(&reward_grads) {
        model.backward(&p.accepted, cw, gw, &mut grad)?;
        model.backward(&p.rejected, cl, gl, &mut grad)?;
    }
    Ok((breakdown, grad))
}

/// Loss over all pairs and the fraction ranked correctly by total reward.
pub fn evaluate_pairs<T: Scalar>(
    model: &RewardModel<T>,
    pairs: &[TrainPair<T>],
    loss: &LossConfig,
) -> Result<(LossBreakdown<T>, f64)> {
    let mut rewards = Vec::with_capacity(pairs.len());
    let mut correct = 0usize;
    for p in pairs {
        let rw = model.forward(&p.accepted)?;
        let rl = model.forward(&p.rejected)?;
        if rw.total > rl.total {
            correct += 1;
        }
        rewards.push((rw, rl));
    }
    let batch: Vec<PairRewards<'_, T>> = pairs
        .iter()
        .zip(&rewards)
        .map(|(p, (rw, rl))| PairRewards {
            r_w: &rw.values,
            r_l: &rl.values,
            sub_margins: &p.sub_margins,
            total_margin: p.total_margin,
        })
        .collect();
    let breakdown = mre_loss(&batch, loss)?;
    Ok((breakdown, correct as f64 / pairs.len() as f64))
}

/// Trains from scratch and returns the model and its log.
pub fn train<T: Scalar>(
    pairs: &[TrainPair<T>],
    model: RewardModel<T>,
    config: TrainConfig,
) -> Result<(RewardModel<T>, Vec<EpochLog>)> {
    let mut t = Trainer::new(model, config)?;
    t.run(pairs)?;
    let log = t.log.clone();
    Ok((t.into_model(), log))
}
