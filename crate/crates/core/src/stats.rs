//! Paired comparisons: one-sided Wilcoxon signed-rank test, Holm step-down
//! adjustment and consistency deviations.

use std::cmp::Ordering;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest effective sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 12;
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alternative {
    /// `a` tends to exceed `b`.
    #[default]
    Greater,
    /// `a` tends to fall below `b`.
    Less,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    /// Sum of the ranks of differences pointing in the alternative's direction.
    pub statistic: f64,
    /// Continuity-corrected normal score, reported in both branches.
    pub z: f64,
    pub p_raw: f64,
    /// Equals `p_raw` until a multiple-comparison adjustment is applied.
    pub p_adjusted: f64,
    /// z / sqrt(n_effective).
    pub effect_r: f64,
    pub n_effective: usize,
    pub exact: bool,
}

/// Midranks (1-based) of the values; ties share the average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Upper-tail probability P(W+ >= observed) under the sign-flip null, by
/// counting sign patterns. Ranks are doubled so midranks stay integral.
fn exact_upper_tail(ranks: &[f64], observed: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    // ways[s] = number of sign patterns whose positive ranks sum to s
    let mut ways = vec![0u64; max + 1];
    ways[0] = 1;
    for &r in &doubled {
        for s in (r..=max).rev() {
            ways[s] += ways[s - r];
        }
    }
    let threshold = (2.0 * observed).round() as usize;
    let hits: u64 = ways[threshold.min(max + 1)..].iter().sum();
    hits as f64 / (1u64 << ranks.len()) as f64
}

pub fn wilcoxon_one_sided(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!("{} vs {} paired observations", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| match alternative {
            Alternative::Greater => x - y,
            Alternative::Less => y - x,
        })
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(Error::TooFewPairs(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_groups(&abs).map(|t| t * t * t - t).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w_plus - mean - 0.5) / var.sqrt();

    let exact = n <= EXACT_MAX_N;
    let p = if exact { exact_upper_tail(&ranks, w_plus) } else { 0.5 * erfc(z / std::f64::consts::SQRT_2) };
    let p = p.clamp(f64::MIN_POSITIVE, 1.0);
    Ok(TestResult {
        statistic: w_plus,
        z,
        p_raw: p,
        p_adjusted: p,
        effect_r: z / nf.sqrt(),
        n_effective: n,
        exact,
    })
}

/// Sizes of groups of equal values.
fn tie_groups(values: &[f64]) -> impl Iterator<Item = f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        groups.push(j as f64);
        i += j;
    }
    groups.into_iter()
}

/// Holm step-down adjusted p-values, in input order.
pub fn holm_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap_or(Ordering::Equal));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &i) in order.iter().enumerate() {
        let scaled = ((m - j) as f64 * p_values[i]).min(1.0);
        running = running.max(scaled);
        out[i] = running;
    }
    out
}

/// Applies Holm adjustment across the successful tests; failures are left
/// untouched and do not count towards the family size.
pub fn adjust_family(results: &mut [Result<TestResult>]) {
    let ps: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.p_raw).collect();
    let adjusted = holm_adjust(&ps);
    for (r, p) in results.iter_mut().filter_map(|r| r.as_mut().ok()).zip(adjusted) {
        r.p_adjusted = p;
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

/// Absolute deviation of each kappa from the median kappa.
pub fn consistency_deviation(kappas: &[f64]) -> Vec<f64> {
    match median(kappas) {
        Some(med) => kappas.iter().map(|k| (k - med).abs()).collect(),
        None => Vec::new(),
    }
}
