//! Significance tests for comparing two groups of per-seed accuracies: a
//! pooled-shift bootstrap test on the difference of means, the Mann-Whitney U
//! test, and Bonferroni correction.

mod table;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng;

pub use table::{compare, format_comparison_table, ComparisonRow, GroupSummary};

/// Corrected p-values below this are significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 10_000;

/// Largest combined sample size for which the automatic Mann-Whitney method
/// enumerates the exact null distribution.
pub const EXACT_MWU_MAX_N: usize = 12;

const BOOTSTRAP_CHUNK: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Bootstrap,
    MannWhitneyU,
}

/// Direction of a one-sided bootstrap test on `mean(a) - mean(b)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    Greater,
    Less,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwuMethod {
    /// Exact for combined size up to [`EXACT_MWU_MAX_N`], normal otherwise.
    #[default]
    Auto,
    Exact,
    Normal,
}

/// Two groups of observations, e.g. per-seed accuracies of two configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label: String,
    pub a_label: String,
    pub b_label: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SampleSet {
    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() || self.b.is_empty() {
            return Err(Error::EmptyGroup);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub raw_p: f64,
    pub corrected_p: f64,
    pub correction_factor: usize,
}

impl TestResult {
    pub fn new(kind: TestKind, statistic: f64, raw_p: f64) -> Self {
        Self {
            kind,
            statistic,
            raw_p,
            corrected_p: raw_p,
            correction_factor: 1,
        }
    }

    pub fn corrected(mut self, factor: usize) -> Result<Self> {
        self.corrected_p = bonferroni(self.raw_p, factor)?;
        self.correction_factor = factor;
        Ok(self)
    }

    /// Strictly below [`SIGNIFICANCE_LEVEL`] after correction.
    pub fn significant(&self) -> bool {
        self.corrected_p < SIGNIFICANCE_LEVEL
    }
}

pub fn bonferroni(raw_p: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Config("Bonferroni factor must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&raw_p) {
        return Err(Error::Config(format!("p-value {raw_p} outside [0, 1]")));
    }
    Ok((raw_p * m as f64).min(1.0))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Config("samples must be finite".into()));
    }
    Ok(())
}

fn resampled_mean(xs: &[f64], rng: &mut impl Rng) -> f64 {
    let mut s = 0.0;
    for _ in 0..xs.len() {
        s += xs[rng.gen_range(0..xs.len())];
    }
    s / xs.len() as f64
}

/// One-sided bootstrap test of `mean(a) - mean(b)` under the pooled-shift null.
///
/// Both groups are shifted onto the pooled mean, resampled with replacement,
/// and the p-value is the fraction of resampled differences at least as
/// extreme as the observed one in the direction of `alternative` (ties count).
/// Iterations are split into fixed chunks with their own seed streams, so the
/// result does not depend on the thread count.
pub fn bootstrap_test(a: &[f64], b: &[f64], iterations: usize, seed: u64, alternative: Alternative) -> Result<TestResult> {
    check_groups(a, b)?;
    if iterations < 1000 {
        return Err(Error::Config(format!("bootstrap needs at least 1000 iterations, got {iterations}")));
    }
    let (ma, mb) = (mean(a), mean(b));
    let pooled = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (a.len() + b.len()) as f64;
    let a0: Vec<f64> = a.iter().map(|x| x - ma + pooled).collect();
    let b0: Vec<f64> = b.iter().map(|x| x - mb + pooled).collect();
    let observed = ma - mb;
    let scale = a.iter().chain(b).fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale;

    let chunks = iterations.div_ceil(BOOTSTRAP_CHUNK);
    let count: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, &format!("bootstrap.{c}"));
            let n = BOOTSTRAP_CHUNK.min(iterations - c * BOOTSTRAP_CHUNK);
            (0..n)
                .filter(|_| {
                    let d = resampled_mean(&a0, &mut r) - resampled_mean(&b0, &mut r);
                    match alternative {
                        Alternative::Greater => d >= observed - tol,
                        Alternative::Less => d <= observed + tol,
                    }
                })
                .count()
        })
        .sum();
    Ok(TestResult::new(TestKind::Bootstrap, observed, count as f64 / iterations as f64))
}

/// Midranks (1-based) of the concatenation of `a` and `b`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// `U_a`: the number of pairs with `a_i > b_j`, counting ties as one half.
fn u_from_rank_sum(rank_sum: f64, na: usize) -> f64 {
    rank_sum - (na * (na + 1)) as f64 / 2.0
}

/// Two-sided Mann-Whitney U test reporting `U_a`.
pub fn mann_whitney_u(a: &[f64], b: &[f64], method: MwuMethod) -> Result<TestResult> {
    check_groups(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&all);
    let u = u_from_rank_sum(ranks[..na].iter().sum(), na);
    let exact = match method {
        MwuMethod::Auto => n <= EXACT_MWU_MAX_N,
        MwuMethod::Exact => true,
        MwuMethod::Normal => false,
    };
    let p = if exact {
        exact_two_sided(&ranks, na)
    } else {
        normal_two_sided(&ranks, u, na, nb)
    };
    Ok(TestResult::new(TestKind::MannWhitneyU, u, p.clamp(0.0, 1.0)))
}

/// Exact permutation p-value: the fraction of the `C(n, na)` ways of choosing
/// group `a`'s ranks whose rank sum is at least as far from its mean as the
/// observed one. Midranks are multiples of one half, so doubled ranks are
/// integers and the null distribution is a subset-sum count.
fn exact_two_sided(ranks: &[f64], na: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s.
    let mut counts = vec![vec![0f64; total + 1]; na + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=na).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            for s in (r..=total).rev() {
                upper[0][s] += lower[j - 1][s - r];
            }
        }
    }
    let n = ranks.len();
    // The null mean of the doubled rank sum is na * (n + 1).
    let centre2 = (na * (n + 1)) as i64;
    let observed: usize = doubled[..na].iter().sum();
    let obs_dev = (observed as i64 - centre2).abs();
    let mut extreme = 0.0;
    let mut all = 0.0;
    for (s, &c) in counts[na].iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        all += c;
        if (s as i64 - centre2).abs() >= obs_dev {
            extreme += c;
        }
    }
    extreme / all
}

fn normal_two_sided(ranks: &[f64], u: f64, na: usize, nb: usize) -> f64 {
    let n = (na + nb) as f64;
    let (fa, fb) = (na as f64, nb as f64);
    let mu = fa * fb / 2.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = fa * fb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        // Every observation tied.
        return 1.0;
    }
    let dev = ((u - mu).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - normal.cdf(z))
}
