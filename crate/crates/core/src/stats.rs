//! Sample-size sufficiency: learning curves and rank-based tests.
//!
//! The exact tests count the null distribution of the statistic with a
//! dynamic program over doubled mid-ranks (always integers), so ties are
//! handled exactly. Two-sided p-values double the smaller tail and cap at 1.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};
use thiserror::Error;

use crate::manifest::PresentationClass;
use crate::scoring::{aggregate_mse, error_rates, Verdict};
use crate::seed::sub_rng;

/// Largest number of non-zero differences for the exact signed-rank test.
pub const WILCOXON_EXACT_MAX_N: usize = 20;
/// Largest number of label assignments, C(n+m, n), for the exact U test.
pub const MANN_WHITNEY_EXACT_MAX_ASSIGNMENTS: u128 = 2_000_000;

pub const DEFAULT_CONVERGENCE_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite observation")]
    NonFinite,
    #[error("exact test not permitted for this sample size")]
    ExactTooLarge,
    #[error("class `{0}` has no verdicts")]
    MissingClass(PresentationClass),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    NormalApprox,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::NormalApprox => "normal_approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSize {
    /// Pairs left after dropping zero differences, and how many were dropped.
    Paired { n: usize, zeros_dropped: usize },
    Independent { n_a: usize, n_b: usize },
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Paired { n, zeros_dropped } => write!(f, "n={n},zeros_dropped={zeros_dropped}"),
            SampleSize::Independent { n_a, n_b } => write!(f, "n_a={n_a},n_b={n_b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub n: SampleSize,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Mid-ranks (1-based) doubled so they are integers.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut data = Data::new(values.to_vec());
    data
        .ranks(RankTieBreaker::Average)
        .into_iter()
        .map(|r| (2.0 * r).round() as u64)
        .collect()
}

/// Σ(t³ − t) over tie groups.
fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        term += t * t * t - t;
        i = j;
    }
    term
}

/// Two-sided p from a discrete null distribution given as (value, weight)
/// counts over doubled-statistic support.
fn two_sided_from_counts(counts: &[f64], observed: usize) -> f64 {
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed.min(counts.len() - 1)].iter().sum();
    let upper: f64 = counts[observed.min(counts.len())..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

/// Two-sided normal tail with continuity correction and a fourth-cumulant
/// (Edgeworth) term. Both rank statistics are symmetric, so the skewness
/// term vanishes.
fn normal_two_sided(statistic: f64, mean: f64, variance: f64, excess_kurtosis: f64) -> f64 {
    if variance <= 0.0 {
        return 1.0;
    }
    let deviation = ((statistic - mean).abs() - 0.5).max(0.0);
    let z = deviation / variance.sqrt();
    let std_normal = Normal::standard();
    let tail = std_normal.sf(z) + std_normal.pdf(z) * excess_kurtosis / 24.0 * (z.powi(3) - 3.0 * z);
    (2.0 * tail).clamp(0.0, 1.0)
}

/// Excess kurtosis of W+ under the null: a sum of independent `r * B(1/2)`
/// terms, so kappa4 = -sum(r^4)/8 and variance = sum(r^2)/4.
fn signed_rank_kurtosis(doubled: &[u64]) -> f64 {
    let (s2, s4) = doubled.iter().fold((0.0, 0.0), |(s2, s4), &d| {
        let r2 = (d as f64 / 2.0).powi(2);
        (s2 + r2, s4 + r2 * r2)
    });
    if s2 == 0.0 {
        0.0
    } else {
        -2.0 * s4 / (s2 * s2)
    }
}

/// Excess kurtosis of a sum of `n` draws without replacement from the
/// pooled (mid)ranks.
fn rank_sum_kurtosis(doubled: &[u64], n: usize) -> f64 {
    let big_n = doubled.len();
    let mean = doubled.iter().sum::<u64>() as f64 / (2.0 * big_n as f64);
    let (s2, s4) = doubled.iter().fold((0.0, 0.0), |(s2, s4), &d| {
        let c2 = (d as f64 / 2.0 - mean).powi(2);
        (s2 + c2, s4 + c2 * c2)
    });
    // p[k]: probability that k given distinct units are all drawn
    let mut p = [1.0f64; 5];
    for k in 1..5 {
        p[k] = if p[k - 1] == 0.0 || n < k {
            0.0
        } else {
            p[k - 1] * (n - k + 1) as f64 / (big_n - k + 1) as f64
        };
    }
    let m2 = (p[1] - p[2]) * s2;
    let m4 = s4 * (p[1] - 7.0 * p[2] + 12.0 * p[3] - 6.0 * p[4]) + s2 * s2 * (3.0 * p[2] - 6.0 * p[3] + 3.0 * p[4]);
    if m2 <= 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}

/// Signed-rank test on paired samples. Method is exact when at most
/// [`WILCOXON_EXACT_MAX_N`] non-zero differences remain.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<StatResult, StatsError> {
    wilcoxon_signed_rank_using(x, y, None)
}

/// As [`wilcoxon_signed_rank`], optionally forcing a method.
pub fn wilcoxon_signed_rank_using(
    x: &[f64],
    y: &[f64],
    method: Option<Method>,
) -> Result<StatResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(x)?;
    check_finite(y)?;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let n = diffs.len();
    let size = SampleSize::Paired {
        n,
        zeros_dropped: x.len() - n,
    };
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&magnitudes);
    let w_plus_doubled: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();
    let statistic = w_plus_doubled as f64 / 2.0;

    let method = method.unwrap_or(if n <= WILCOXON_EXACT_MAX_N {
        Method::Exact
    } else {
        Method::NormalApprox
    });
    let p_value = match method {
        Method::Exact => {
            if n > WILCOXON_EXACT_MAX_N {
                return Err(StatsError::ExactTooLarge);
            }
            // counts[s] = number of sign assignments whose doubled W+ is s
            let max_sum: u64 = ranks.iter().sum();
            let mut counts = vec![0.0f64; max_sum as usize + 1];
            counts[0] = 1.0;
            let mut reach = 0usize;
            for &r in &ranks {
                let r = r as usize;
                for s in (0..=reach).rev() {
                    if counts[s] != 0.0 {
                        counts[s + r] += counts[s];
                    }
                }
                reach += r;
            }
            two_sided_from_counts(&counts, w_plus_doubled as usize)
        }
        Method::NormalApprox => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&magnitudes) / 48.0;
            normal_two_sided(statistic, mean, variance, signed_rank_kurtosis(&ranks))
        }
    };
    Ok(StatResult {
        statistic,
        p_value,
        method,
        n: size,
    })
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    acc
}

/// Rank-sum test on independent samples; the statistic is U for `a`,
/// counting ties as one half.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<StatResult, StatsError> {
    mann_whitney_u_using(a, b, None)
}

pub fn mann_whitney_u_using(
    a: &[f64],
    b: &[f64],
    method: Option<Method>,
) -> Result<StatResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(a)?;
    check_finite(b)?;
    let (n, m) = (a.len(), b.len());
    let size = SampleSize::Independent { n_a: n, n_b: m };

    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let rank_sum_a: u64 = ranks[..n].iter().sum();
    // 2U = 2R_a - n(n+1)
    let u_doubled = rank_sum_a - (n * (n + 1)) as u64;
    let statistic = u_doubled as f64 / 2.0;

    let exact_ok = binomial((n + m) as u64, n as u64) <= MANN_WHITNEY_EXACT_MAX_ASSIGNMENTS;
    let method = method.unwrap_or(if exact_ok { Method::Exact } else { Method::NormalApprox });
    let p_value = match method {
        Method::Exact => {
            if !exact_ok {
                return Err(StatsError::ExactTooLarge);
            }
            // ways[k][s]: subsets of size k with doubled rank sum s
            let total: usize = ranks.iter().sum::<u64>() as usize;
            let mut ways = vec![vec![0.0f64; total + 1]; n + 1];
            ways[0][0] = 1.0;
            for (seen, &r) in ranks.iter().enumerate() {
                let r = r as usize;
                for k in (1..=n.min(seen + 1)).rev() {
                    let (lower, upper) = ways.split_at_mut(k);
                    let src = &lower[k - 1];
                    let dst = &mut upper[0];
                    for s in (r..=total).rev() {
                        if src[s - r] != 0.0 {
                            dst[s] += src[s - r];
                        }
                    }
                }
            }
            let offset = n * (n + 1);
            let u_counts: Vec<f64> = ways[n][offset..].to_vec();
            two_sided_from_counts(&u_counts, u_doubled as usize)
        }
        Method::NormalApprox => {
            let (nf, mf) = (n as f64, m as f64);
            let big_n = nf + mf;
            let mean = nf * mf / 2.0;
            let tie_adj = if big_n > 1.0 {
                tie_term(&pooled) / (big_n * (big_n - 1.0))
            } else {
                0.0
            };
            let variance = nf * mf / 12.0 * ((big_n + 1.0) - tie_adj);
            normal_two_sided(statistic, mean, variance, rank_sum_kurtosis(&ranks, n))
        }
    };
    Ok(StatResult {
        statistic,
        p_value,
        method,
        n: size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_per_class: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub shuffle_seed: u64,
}

/// MSE recomputed while growing each class one sample at a time, in a
/// seeded per-class order. Classes smaller than `n` contribute everything.
pub fn learning_curve(verdicts: &[Verdict], seed: u64) -> Result<LearningCurve, StatsError> {
    let mut by_class: BTreeMap<PresentationClass, Vec<&Verdict>> = BTreeMap::new();
    for v in verdicts {
        by_class.entry(v.class).or_default().push(v);
    }
    for class in PresentationClass::ALL {
        if !by_class.contains_key(&class) {
            return Err(StatsError::MissingClass(class));
        }
    }
    for (class, list) in by_class.iter_mut() {
        list.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        list.shuffle(&mut sub_rng(seed, &format!("curve/{class}")));
    }
    let max_n = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut points = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let subset: Vec<Verdict> = by_class
            .values()
            .flat_map(|list| list.iter().take(n).map(|v| (*v).clone()))
            .collect();
        let mse = aggregate_mse(&error_rates(&subset))
            .expect("every class is present")
            .value();
        points.push(CurvePoint { n_per_class: n, mse });
    }
    Ok(LearningCurve {
        points,
        shuffle_seed: seed,
    })
}

/// Smallest `n` from which every later point stays strictly within
/// `epsilon` of the final MSE. `None` only when no such `n` exists, which
/// requires `epsilon <= 0` or an empty curve.
pub fn converged_at(curve: &LearningCurve, epsilon: f64) -> Option<usize> {
    let last = curve.points.last()?.mse;
    let mut n0 = None;
    for p in curve.points.iter().rev() {
        if (p.mse - last).abs() < epsilon {
            n0 = Some(p.n_per_class);
        } else {
            break;
        }
    }
    n0
}
