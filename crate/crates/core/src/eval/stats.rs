//! Rank correlations with p-values.
//!
//! Kendall's tau-b counts discordant pairs by inversion counting after a
//! lexicographic sort (O(n log n)); its p-value uses the normal
//! approximation with the tie-corrected variance of `S = C - D` and a
//! continuity correction, `z = (|S| - 1) / sqrt(var(S))`:
//!
//! ```text
//! var(S) = (m(2n+5) - sum_x t(t-1)(2t+5) - sum_y u(u-1)(2u+5)) / 18
//!        + (sum_x t(t-1)/2)(sum_y u(u-1)/2) * 2 / m
//!        + (sum_x t(t-1)(t-2))(sum_y u(u-1)(u-2)) / (9 m (n-2)),   m = n(n-1)
//! ```
//!
//! Spearman's rho is the Pearson correlation of mid-ranks with a Student t
//! p-value on `n - 2` degrees of freedom. For `n <= 10` both statistics
//! also offer an exact permutation p-value over all `n!` orderings of `y`.

use std::cmp::Ordering;

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest n for which exact permutation p-values are enumerated.
pub const MAX_EXACT_N: usize = 10;

/// Tolerance when comparing permuted statistics with the observed one.
const PERM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub coef: f64,
    pub p: f64,
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Structural(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::validation("n", format!("need at least {min} observations, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite observation".into()));
    }
    Ok(())
}

/// Dense ranks (0-based) after sorting; equal values share a rank.
fn dense_ranks(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0; v.len()];
    let mut r = 0;
    for k in 0..idx.len() {
        if k > 0 && v[idx[k]] != v[idx[k - 1]] {
            r += 1;
        }
        ranks[idx[k]] = r;
    }
    ranks
}

/// Sizes of tie groups with more than one member.
fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut run = 1usize;
    for k in 1..=s.len() {
        if k < s.len() && s[k] == s[k - 1] {
            run += 1;
        } else {
            if run > 1 {
                out.push(run as f64);
            }
            run = 1;
        }
    }
    out
}

/// Pairs strictly inverted in `seq`, via a Fenwick tree over dense ranks.
fn count_inversions(seq: &[usize]) -> u64 {
    let size = seq.iter().max().map_or(0, |m| m + 1);
    let mut tree = vec![0u64; size + 1];
    let mut seen = 0u64;
    let mut inv = 0u64;
    for &v in seq {
        // elements already seen with rank <= v
        let mut i = v + 1;
        let mut le = 0u64;
        while i > 0 {
            le += tree[i];
            i &= i - 1;
        }
        inv += seen - le;
        let mut i = v + 1;
        while i <= size {
            tree[i] += 1;
            i += i & i.wrapping_neg();
        }
        seen += 1;
    }
    inv
}

/// `(C - D, n0 - n1, n0 - n2)` for tau-b.
fn kendall_parts(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len();
    let xr = dense_ranks(x);
    let yr = dense_ranks(y);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xr[a].cmp(&xr[b]).then(yr[a].cmp(&yr[b])));
    let ys: Vec<usize> = order.iter().map(|&i| yr[i]).collect();
    let dis = count_inversions(&ys) as f64;

    let mut joint = 0f64;
    let mut run = 1f64;
    for k in 1..=n {
        if k < n && xr[order[k]] == xr[order[k - 1]] && yr[order[k]] == yr[order[k - 1]] {
            run += 1.0;
        } else {
            joint += run * (run - 1.0) / 2.0;
            run = 1.0;
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let n1: f64 = tie_groups(x).iter().map(|t| t * (t - 1.0) / 2.0).sum();
    let n2: f64 = tie_groups(y).iter().map(|t| t * (t - 1.0) / 2.0).sum();
    // concordant = n0 - n1 - n2 + joint - dis
    let s = n0 - n1 - n2 + joint - 2.0 * dis;
    (s, n0 - n1, n0 - n2)
}

/// Two-sided normal p for S = C - D on the tie-adjusted variance, with a
/// continuity correction of 1 on |S|.
fn kendall_normal_p(x: &[f64], y: &[f64], s: f64) -> f64 {
    let n = x.len() as f64;
    let m = n * (n - 1.0);
    let tx = tie_groups(x);
    let ty = tie_groups(y);
    let sum = |g: &[f64], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t)).sum::<f64>();
    let x1 = sum(&tx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let y1 = sum(&ty, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let xtie = sum(&tx, &|t| t * (t - 1.0) / 2.0);
    let ytie = sum(&ty, &|t| t * (t - 1.0) / 2.0);
    let x0 = sum(&tx, &|t| t * (t - 1.0) * (t - 2.0));
    let y0 = sum(&ty, &|t| t * (t - 1.0) * (t - 2.0));
    let mut var = (m * (2.0 * n + 5.0) - x1 - y1) / 18.0 + 2.0 * xtie * ytie / m;
    if n > 2.0 {
        var += x0 * y0 / (9.0 * m * (n - 2.0));
    }
    if !(var > 0.0) {
        return 1.0;
    }
    let z = (s.abs() - 1.0).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Tau-b with a normal-approximation p-value.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y, 2)?;
    let (s, dx, dy) = kendall_parts(x, y);
    if dx == 0.0 || dy == 0.0 {
        return Err(Error::UndefinedCorrelation("all values tied in one argument".into()));
    }
    let tau = (s / (dx * dy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        coef: tau,
        p: kendall_normal_p(x, y, s),
    })
}

/// Average ranks, 1-based; ties share the mean of their positions.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn spearman_t_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Spearman's rho with a Student t p-value; needs n >= 3.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y, 3)?;
    let rx = mid_ranks(x);
    let ry = mid_ranks(y);
    let rho = pearson(&rx, &ry)
        .ok_or_else(|| Error::UndefinedCorrelation("zero rank variance".into()))?;
    Ok(Correlation {
        coef: rho,
        p: spearman_t_p(rho, x.len()),
    })
}

/// Visits every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn check_exact(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    check_pair(x, y, min)?;
    if x.len() > MAX_EXACT_N {
        return Err(Error::validation(
            "n",
            format!("exact permutation p-values are limited to n <= {MAX_EXACT_N}"),
        ));
    }
    Ok(())
}

/// Two-sided permutation p-value of tau-b: the share of orderings of `y`
/// whose `|C - D|` reaches the observed one.
pub fn kendall_exact_p(x: &[f64], y: &[f64]) -> Result<f64> {
    check_exact(x, y, 2)?;
    let observed = kendall_tau(x, y)?;
    let n = x.len();
    let s_of = |yy: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let a = x[i].partial_cmp(&x[j]).unwrap_or(Ordering::Equal) as i32;
                let b = yy[i].partial_cmp(&yy[j]).unwrap_or(Ordering::Equal) as i32;
                s += f64::from(a * b);
            }
        }
        s
    };
    let s_obs = s_of(y).abs();
    debug_assert!(observed.coef.is_finite());
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut yy = y.to_vec();
    for_each_permutation(n, |perm| {
        for (k, &p) in perm.iter().enumerate() {
            yy[k] = y[p];
        }
        if s_of(&yy).abs() >= s_obs - PERM_TOL {
            hits += 1;
        }
        total += 1;
    });
    Ok(hits as f64 / total as f64)
}

/// Two-sided permutation p-value of Spearman's rho.
pub fn spearman_exact_p(x: &[f64], y: &[f64]) -> Result<f64> {
    check_exact(x, y, 3)?;
    spearman(x, y)?;
    let rx = mid_ranks(x);
    let ry = mid_ranks(y);
    let n = x.len();
    let mean = (n as f64 + 1.0) / 2.0;
    // rho is an increasing affine function of sum (rx - mean) * ry
    let stat = |perm_ry: &dyn Fn(usize) -> f64| -> f64 {
        (0..n).map(|k| (rx[k] - mean) * perm_ry(k)).sum::<f64>()
    };
    let obs = stat(&|k| ry[k]).abs();
    let mut hits = 0u64;
    let mut total = 0u64;
    for_each_permutation(n, |perm| {
        if stat(&|k| ry[perm[k]]).abs() >= obs - PERM_TOL {
            hits += 1;
        }
        total += 1;
    });
    Ok(hits as f64 / total as f64)
}
