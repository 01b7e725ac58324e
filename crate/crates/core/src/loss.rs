//! Margin Reward Enforcement loss.
//!
//! For one accepted/rejected pair with rewards `r_w`, `r_l` (length N),
//! per-criterion margins `m_j` and total margin `m > 0`:
//!
//! ```text
//! gap_j = r_w[j] - r_l[j]
//! ind_j = relu(m_j - gap_j)         if m_j > 0
//!       = relu(gap_j - m_j)         if m_j < 0
//!       = relu(|gap_j| - c)         if m_j = 0
//! L_ind = mean_j ind_j
//! L_tot = relu(m - (sum r_w - sum r_l))
//! L     = sum over pairs of L_ind + lambda * L_tot
//! ```
//!
//! The `m_j < 0` branch is the signed form `relu(-t (gap_j) + t m_j)` with
//! `t = -1`; writing it out avoids taking `sign(m_j)` when `m_j = 0`.
//!
//! Subgradients: `relu'(0) = 0` and `d|x|/dx = 0` at `x = 0`.

use crate::error::{Error, Result};
use crate::scalar::{relu, relu_grad, sign0, Scalar};

/// Which terms contribute to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerms {
    #[default]
    Both,
    IndividualOnly,
    TotalOnly,
}

/// How per-pair losses are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub c: f64,
    #[serde(default)]
    pub terms: LossTerms,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            c: 1e-2,
            terms: LossTerms::Both,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        LossConfig {
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::validation("loss.lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::validation("loss.c", format!("must be positive, got {}", self.c)));
        }
        Ok(())
    }

    fn weights<T: Scalar>(&self) -> (T, T) {
        match self.terms {
            LossTerms::Both => (T::one(), T::of(self.lambda)),
            LossTerms::IndividualOnly => (T::one(), T::zero()),
            LossTerms::TotalOnly => (T::zero(), T::of(self.lambda)),
        }
    }
}

/// Loss values, summed over pairs (or averaged under [`Reduction::Mean`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub l_ind: T,
    pub l_tot: T,
    /// The optimized objective: `w_ind * l_ind + w_tot * l_tot` with the
    /// term weights implied by [`LossTerms`] and lambda.
    pub l_total: T,
    pub per_criterion: Vec<T>,
}

/// Rewards and margins for one pair.
#[derive(Debug, Clone, Copy)]
pub struct PairRewards<'a, T> {
    pub r_w: &'a [T],
    pub r_l: &'a [T],
    pub sub_margins: &'a [T],
    pub total_margin: T,
}

fn check_finite<T: Scalar>(what: &str, xs: &[T]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in {what}")));
    }
    Ok(())
}

fn check_shapes<T: Scalar>(r_w: &[T], r_l: &[T], m: &[T]) -> Result<()> {
    if r_w.len() != r_l.len() || r_w.len() != m.len() || r_w.is_empty() {
        return Err(Error::Structural(format!(
            "reward/margin lengths differ or are empty: {}, {}, {}",
            r_w.len(),
            r_l.len(),
            m.len()
        )));
    }
    check_finite("accepted rewards", r_w)?;
    check_finite("rejected rewards", r_l)?;
    check_finite("sub-margins", m)
}

/// The per-criterion hinge argument; the term is `relu` of it.
#[inline]
fn ind_argument<T: Scalar>(gap: T, m: T, c: T) -> T {
    if m > T::zero() {
        m - gap
    } else if m < T::zero() {
        gap - m
    } else {
        gap.abs() - c
    }
}

/// Mean over criteria of the branch penalties, plus the per-criterion terms.
pub fn l_ind<T: Scalar>(r_w: &[T], r_l: &[T], sub_margins: &[T], c: T) -> Result<(T, Vec<T>)> {
    check_shapes(r_w, r_l, sub_margins)?;
    let terms: Vec<T> = r_w
        .iter()
        .zip(r_l)
        .zip(sub_margins)
        .map(|((&w, &l), &m)| relu(ind_argument(w - l, m, c)))
        .collect();
    let n = T::of(terms.len() as f64);
    let value = terms.iter().copied().sum::<T>() / n;
    Ok((value, terms))
}

/// Hinge on the summed rewards.
pub fn l_tot<T: Scalar>(r_w: &[T], r_l: &[T], total_margin: T) -> Result<T> {
    if !(total_margin > T::zero()) || !total_margin.is_finite() {
        return Err(Error::validation(
            "total_margin",
            format!("total margin must be positive, got {total_margin}"),
        ));
    }
    if r_w.len() != r_l.len() {
        return Err(Error::Structural("reward lengths differ".into()));
    }
    check_finite("accepted rewards", r_w)?;
    check_finite("rejected rewards", r_l)?;
    Ok(relu(tot_argument(r_w, r_l, total_margin)))
}

#[inline]
fn tot_argument<T: Scalar>(r_w: &[T], r_l: &[T], total_margin: T) -> T {
    let sw: T = r_w.iter().copied().sum();
    let sl: T = r_l.iter().copied().sum();
    total_margin - (sw - sl)
}

/// Batch loss, pairs reduced in order.
pub fn mre_loss<T: Scalar>(batch: &[PairRewards<'_, T>], config: &LossConfig) -> Result<LossBreakdown<T>> {
    Ok(mre_loss_and_grad(batch, config, false)?.0)
}

/// Gradients of `l_total` with respect to each pair's `(r_w, r_l)`.
pub type RewardGrads<T> = Vec<(Vec<T>, Vec<T>)>;

pub fn mre_grad<T: Scalar>(
    batch: &[PairRewards<'_, T>],
    config: &LossConfig,
) -> Result<(LossBreakdown<T>, RewardGrads<T>)> {
    mre_loss_and_grad(batch, config, true)
}

fn mre_loss_and_grad<T: Scalar>(
    batch: &[PairRewards<'_, T>],
    config: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown<T>, RewardGrads<T>)> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::validation("batch", "empty batch"));
    }
    let n_crit = batch[0].r_w.len();
    let (w_ind, w_tot) = config.weights::<T>();
    let scale = match config.reduction {
        Reduction::Sum => T::one(),
        Reduction::Mean => T::one() / T::of(batch.len() as f64),
    };
    let c = T::of(config.c);

    let mut out = LossBreakdown {
        l_ind: T::zero(),
        l_tot: T::zero(),
        l_total: T::zero(),
        per_criterion: vec![T::zero(); n_crit],
    };
    let mut grads = Vec::with_capacity(if want_grad { batch.len() } else { 0 });
    for p in batch {
        if p.r_w.len() != n_crit {
            return Err(Error::Structural("pairs in a batch disagree on N".into()));
        }
        let (ind, terms) = l_ind(p.r_w, p.r_l, p.sub_margins, c)?;
        let tot = l_tot(p.r_w, p.r_l, p.total_margin)?;
        out.l_ind = out.l_ind + ind * scale;
        out.l_tot = out.l_tot + tot * scale;
        out.l_total = out.l_total + (w_ind * ind + w_tot * tot) * scale;
        for (acc, t) in out.per_criterion.iter_mut().zip(terms) {
            *acc = *acc + t * scale;
        }
        if want_grad {
            let n = T::of(n_crit as f64);
            let tot_active = relu_grad(tot_argument(p.r_w, p.r_l, p.total_margin)) * w_tot * scale;
            let mut gw = vec![T::zero(); n_crit];
            let mut gl = vec![T::zero(); n_crit];
            for j in 0..n_crit {
                let gap = p.r_w[j] - p.r_l[j];
                let m = p.sub_margins[j];
                let active = relu_grad(ind_argument(gap, m, c));
                // d(argument)/d(gap)
                let dgap = if m > T::zero() {
                    -T::one()
                } else if m < T::zero() {
                    T::one()
                } else {
                    sign0(gap)
                };
                let g = active * dgap * w_ind * scale / n;
                // d(tot argument)/d r_w = -1, / d r_l = +1
                gw[j] = g - tot_active;
                gl[j] = -g + tot_active;
            }
            grads.push((gw, gl));
        }
    }
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn two_criterion_example() {
        let (v, terms) = l_ind(&[0.5, 0.2], &[0.1, 0.3], &[0.3, -0.2], 0.01).unwrap();
        assert!(close(terms[0], 0.0));
        assert!(close(terms[1], 0.1));
        assert!(close(v, 0.05));
    }

    #[test]
    fn equality_branch() {
        let (_, t) = l_ind(&[0.5], &[0.45], &[0.0], 0.01).unwrap();
        assert!(close(t[0], 0.04));
        let (v, _) = l_ind(&[0.3, 0.7], &[0.3, 0.7], &[0.0, 0.0], 0.01).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn total_term() {
        assert_eq!(l_tot(&[0.4, 0.3], &[0.2, 0.2], 0.1).unwrap(), 0.0);
        assert!(close(l_tot(&[0.4, 0.3], &[0.2, 0.2], 0.5).unwrap(), 0.2));
        assert!(close(l_tot(&[0.1, 0.2], &[0.1, 0.2], 0.3).unwrap(), 0.3));
        assert!(matches!(l_tot(&[0.0], &[0.0], 0.0), Err(Error::Validation { .. })));
        assert!(l_tot(&[0.0], &[0.0], -1.0).is_err());
    }

    #[test]
    fn errors() {
        assert!(matches!(l_ind(&[0.1], &[0.1, 0.2], &[0.0], 0.01), Err(Error::Structural(_))));
        assert!(matches!(l_ind(&[f64::NAN], &[0.1], &[0.0], 0.01), Err(Error::Numeric(_))));
        assert!(mre_loss::<f64>(&[], &LossConfig::default()).is_err());
        let bad = LossConfig { lambda: 0.0, ..Default::default() };
        let p = PairRewards { r_w: &[0.0], r_l: &[0.0], sub_margins: &[0.0], total_margin: 1.0 };
        assert!(mre_loss(&[p], &bad).is_err());
    }

    #[test]
    fn batch_sums_pairs() {
        let a = PairRewards { r_w: &[0.5, 0.2], r_l: &[0.1, 0.3], sub_margins: &[0.3, -0.2], total_margin: 0.1 };
        let b = PairRewards { r_w: &[0.4, 0.3], r_l: &[0.2, 0.2], sub_margins: &[0.0, 0.0], total_margin: 0.5 };
        let out = mre_loss(&[a, b], &LossConfig::default()).unwrap();
        // pair a: l_ind 0.05, l_tot relu(0.1 - 0.3) = 0
        // pair b: terms relu(0.2-0.01)=0.19, relu(0.1-0.01)=0.09 -> 0.14; l_tot 0.2
        assert!(close(out.l_ind, 0.05 + 0.14));
        assert!(close(out.l_tot, 0.2));
        assert!(close(out.l_total, 0.19 + 0.2));
        assert!(close(out.per_criterion[0], 0.19));
        assert!(close(out.per_criterion[1], 0.1 + 0.09));

        let ind_only = LossConfig { terms: LossTerms::IndividualOnly, ..Default::default() };
        let o = mre_loss(&[a, b], &ind_only).unwrap();
        assert_eq!(o.l_total, o.l_ind);
        let mean = LossConfig { reduction: Reduction::Mean, ..Default::default() };
        assert!(close(mre_loss(&[a, b], &mean).unwrap().l_total, (0.19 + 0.2) / 2.0));
    }

    #[test]
    fn active_branch_gradients() {
        let p = PairRewards { r_w: &[0.0, 0.0], r_l: &[0.0, 0.0], sub_margins: &[0.5, 0.0], total_margin: 0.01 };
        let cfg = LossConfig { terms: LossTerms::IndividualOnly, ..Default::default() };
        let (_, g) = mre_grad(&[p], &cfg).unwrap();
        assert_eq!(g[0].0, vec![-0.5, 0.0]);
        assert_eq!(g[0].1, vec![0.5, 0.0]);
        // inactive everywhere: large gap satisfies every hinge
        let q = PairRewards { r_w: &[2.0, 0.0], r_l: &[0.0, 0.0], sub_margins: &[0.5, 0.0], total_margin: 0.1 };
        let (l, g) = mre_grad(&[q], &LossConfig::default()).unwrap();
        assert_eq!(l.l_total, 0.0);
        assert!(g[0].0.iter().chain(&g[0].1).all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn non_negative_and_translation_invariant(
            rw in prop::collection::vec(-2.0f64..2.0, 4),
            rl in prop::collection::vec(-2.0f64..2.0, 4),
            m in prop::collection::vec(-1.0f64..1.0, 4),
            shift in -3.0f64..3.0,
            mt in 0.01f64..1.0,
        ) {
            let (v, t) = l_ind(&rw, &rl, &m, 0.01).unwrap();
            prop_assert!(v >= 0.0 && t.iter().all(|&x| x >= 0.0));
            let tot = l_tot(&rw, &rl, mt).unwrap();
            prop_assert!(tot >= 0.0);
            let rw2: Vec<f64> = rw.iter().map(|x| x + shift).collect();
            let rl2: Vec<f64> = rl.iter().map(|x| x + shift).collect();
            let (v2, _) = l_ind(&rw2, &rl2, &m, 0.01).unwrap();
            prop_assert!((v - v2).abs() < 1e-9);
            prop_assert!((tot - l_tot(&rw2, &rl2, mt).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn raising_accepted_reward_on_positive_margin_never_hurts(
            rw in prop::collection::vec(-2.0f64..2.0, 3),
            rl in prop::collection::vec(-2.0f64..2.0, 3),
            m in prop::collection::vec(0.01f64..1.0, 3),
            j in 0usize..3,
            bump in 0.0f64..1.0,
        ) {
            let cfg = LossConfig::default();
            let p = PairRewards { r_w: &rw, r_l: &rl, sub_margins: &m, total_margin: 0.5 };
            let before = mre_loss(&[p], &cfg).unwrap().l_total;
            let mut up = rw.clone();
            up[j] += bump;
            let q = PairRewards { r_w: &up, ..p };
            prop_assert!(mre_loss(&[q], &cfg).unwrap().l_total <= before + 1e-12);
        }
    }
}
