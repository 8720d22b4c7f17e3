//! Association measures between surprisal and novelty annotations.
//!
//! - [`pearson`]: product-moment r, two-sided t-test with n-2 degrees of freedom.
//! - [`spearman`]: Pearson on average ranks, same test.
//! - [`mann_whitney`]: pair counts, U, rank-biserial r_b and AUC (ties count
//!   half). The p-value is exact (tie-aware permutation distribution) when
//!   `n1 + n2 <= 20`. Above that it uses the normal approximation with tie and
//!   continuity corrections.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::numeric;

/// Largest pooled sample size for which the exact U distribution is enumerated.
pub const EXACT_MAX_TOTAL: usize = 20;

/// Human-readable description of the significance procedures, for report metadata.
pub const SIGNIFICANCE_PROCEDURES: &str = "pearson/spearman: two-sided t-test (n-2 df); \
     mann-whitney: two-sided exact permutation for n1+n2<=20, else normal approximation with tie and continuity correction";

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("empty group")]
    EmptyGroup,
    #[error("non-finite observation")]
    NonFinite,
    #[error("relative gain undefined for a zero base")]
    ZeroBase,
}

/// A correlation coefficient with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub coefficient: f64,
    pub p_value: f64,
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewObservations { needed: 3, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let mx = numeric::mean(x).expect("nonempty");
    let my = numeric::mean(y).expect("nonempty");
    let sxx = numeric::sum(x.iter().map(|v| (v - mx) * (v - mx)));
    let syy = numeric::sum(y.iter().map(|v| (v - my) * (v - my)));
    let sxy = numeric::sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        n: x.len(),
        coefficient: r,
        p_value: t_test_p(r, x.len()),
    })
}

fn t_test_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    check_finite(x)?;
    check_finite(y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mann-Whitney comparison of a novel group against a conventional group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub n_novel: usize,
    pub n_conventional: usize,
    /// Pairs where the novel value is larger.
    pub wins: u64,
    /// Pairs where the conventional value is larger.
    pub losses: u64,
    pub ties: u64,
    /// U of the novel group: `wins + ties / 2`.
    pub u: f64,
    pub rank_biserial: f64,
    pub auc: f64,
    pub p_value: f64,
    pub exact: bool,
}

pub fn mann_whitney(novel: &[f64], conventional: &[f64]) -> Result<MannWhitney, StatsError> {
    if novel.is_empty() || conventional.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    check_finite(novel)?;
    check_finite(conventional)?;
    let mut sorted = conventional.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n2 = sorted.len() as u64;
    let (mut wins, mut losses, mut ties) = (0u64, 0u64, 0u64);
    for &v in novel {
        let below = sorted.partition_point(|&c| c < v) as u64;
        let at_or_below = sorted.partition_point(|&c| c <= v) as u64;
        wins += below;
        ties += at_or_below - below;
        losses += n2 - at_or_below;
    }
    let pairs = (novel.len() as u64 * n2) as f64;
    let exact = novel.len() + conventional.len() <= EXACT_MAX_TOTAL;
    let p_value = if exact {
        exact_p(novel, conventional)
    } else {
        normal_p(novel, conventional, wins as f64 + ties as f64 / 2.0)
    };
    Ok(MannWhitney {
        n_novel: novel.len(),
        n_conventional: conventional.len(),
        wins,
        losses,
        ties,
        u: wins as f64 + ties as f64 / 2.0,
        rank_biserial: (wins as f64 - losses as f64) / pairs,
        auc: (2 * wins + ties) as f64 / (2.0 * pairs),
        p_value,
        exact,
    })
}

/// Doubled mid-ranks of the pooled sample (always integers).
fn doubled_ranks(pooled: &[f64]) -> Vec<u64> {
    average_ranks(pooled).iter().map(|r| (2.0 * r) as u64).collect()
}

/// Two-sided p under the permutation distribution of the novel group's rank sum.
fn exact_p(novel: &[f64], conventional: &[f64]) -> f64 {
    let pooled: Vec<f64> = novel.iter().chain(conventional).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let n = pooled.len();
    let k = novel.len();
    let observed: u64 = ranks[..k].iter().sum();
    let max_sum: u64 = ranks.iter().sum();

    // counts[j][s]: subsets of size j with doubled rank sum s
    let width = max_sum as usize + 1;
    let mut counts = vec![vec![0u64; width]; k + 1];
    counts[0][0] = 1;
    for &r in &ranks {
        let r = r as usize;
        for j in (1..=k).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            for s in (r..width).rev() {
                upper[0][s] += lower[j - 1][s - r];
            }
        }
    }
    // Mean doubled rank sum is k*(n+1).
    let centre = (k * (n + 1)) as i64;
    let deviation = |s: u64| (s as i64 - centre).abs();
    let threshold = deviation(observed);
    let (mut extreme, mut total) = (0u64, 0u64);
    for (s, &c) in counts[k].iter().enumerate() {
        total += c;
        if deviation(s as u64) >= threshold {
            extreme += c;
        }
    }
    (extreme as f64 / total as f64).min(1.0)
}

fn normal_p(novel: &[f64], conventional: &[f64], u: f64) -> f64 {
    let n1 = novel.len() as f64;
    let n2 = conventional.len() as f64;
    let n = n1 + n2;
    let mut pooled: Vec<f64> = novel.iter().chain(conventional).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let variance = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        return 1.0;
    }
    let z = ((u - n1 * n2 / 2.0).abs() - 0.5).max(0.0) / variance.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// `100 * (variant - base) / |base|`
    Relative,
    /// `100 * (variant - base)`
    AbsolutePoints,
}

pub fn gain_percent(base: f64, variant: f64, mode: GainMode) -> Result<f64, StatsError> {
    if !base.is_finite() || !variant.is_finite() {
        return Err(StatsError::NonFinite);
    }
    match mode {
        GainMode::Relative if base == 0.0 => Err(StatsError::ZeroBase),
        GainMode::Relative => Ok(100.0 * (variant - base) / base.abs()),
        GainMode::AbsolutePoints => Ok(100.0 * (variant - base)),
    }
}

/// All association measures for one analysis cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub pearson: Option<Correlation>,
    pub spearman: Option<Correlation>,
    pub n_novel: usize,
    pub n_conventional: usize,
    pub mann_whitney: Option<MannWhitney>,
}

impl CorrelationReport {
    pub fn rank_biserial(&self) -> Option<f64> {
        self.mann_whitney.map(|m| m.rank_biserial)
    }

    pub fn auc(&self) -> Option<f64> {
        self.mann_whitney.map(|m| m.auc)
    }
}
