//! Brute-force references for the rank and resampling tests.

use ensemble_debias::stats::{bootstrap_test, Alternative};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distributions::Distribution;
use statrs::distribution::Normal;

/// `U_a` by direct pair counting.
pub fn pairwise_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Exact two-sided permutation p-value of `U_a`: the fraction of all ways of
/// splitting the pooled values into groups of the observed sizes whose `U`
/// is at least as far from `|a||b|/2` as the observed one.
pub fn brute_force_mwu_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let centre = (a.len() * b.len()) as f64 / 2.0;
    let observed = (pairwise_u(a, b) - centre).abs();
    let splits = combinations(pooled.len(), a.len());
    let extreme = splits
        .iter()
        .filter(|idx| {
            let ga: Vec<f64> = idx.iter().map(|&i| pooled[i]).collect();
            let gb: Vec<f64> = (0..pooled.len()).filter(|i| !idx.contains(i)).map(|i| pooled[i]).collect();
            (pairwise_u(&ga, &gb) - centre).abs() >= observed - 1e-9
        })
        .count();
    extreme as f64 / splits.len() as f64
}

/// Fraction of `nulls` simulated equal-distribution comparisons with
/// bootstrap p < 0.05.
pub fn bootstrap_null_rejection_rate(nulls: usize, size: usize, iterations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.6, 0.05).unwrap();
    let rejected = (0..nulls)
        .filter(|&i| {
            let a: Vec<f64> = (0..size).map(|_| dist.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..size).map(|_| dist.sample(&mut rng)).collect();
            bootstrap_test(&a, &b, iterations, i as u64, Alternative::Greater).unwrap().raw_p < 0.05
        })
        .count();
    rejected as f64 / nulls as f64
}
