//! Two-sided Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size using the exact null distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    pub method: WilcoxonMethod,
}

/// Average ranks of `values` (1-based), ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p-value. Ranks are doubled so tied half-ranks stay
/// integral; the null distribution of the doubled W+ is counted by dynamic
/// programming over include/exclude choices.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let observed = (2.0 * (w_plus * 2.0).round() - total as f64).abs();
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| (2.0 * s as f64 - total as f64).abs() >= observed)
        .map(|(_, &c)| c)
        .sum();
    extreme as f64 / (1u64 << ranks.len()) as f64
}

/// Normal approximation with continuity and tie corrections.
fn normal_p(abs_diffs: &[f64], w_plus: f64) -> f64 {
    let n = abs_diffs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs_diffs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}

/// Tests whether paired samples differ; zero differences are dropped, at
/// least 5 non-zero pairs must remain. Significant iff `p < alpha`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::input(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in paired samples".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::input("degenerate input: all paired differences are zero"));
    }
    if diffs.len() < 5 {
        return Err(Error::input(format!(
            "need at least 5 non-zero paired differences, got {}",
            diffs.len()
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let n = diffs.len();
    let total = (n * (n + 1)) as f64 / 2.0;
    let (p_value, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), WilcoxonMethod::Exact)
    } else {
        (normal_p(&abs, w_plus), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(total - w_plus),
        w_plus,
        n,
        p_value,
        alpha,
        significant: p_value < alpha,
        method,
    })
}

/// Two significant digits, trailing zeros dropped: `0.038`, `0.001`, `0.0039`.
pub fn format_p_value(p: f64) -> String {
    if p <= 0.0 || !p.is_finite() {
        return format!("{p}");
    }
    let decimals = (1 - p.log10().floor() as i32).max(0) as usize;
    let s = format!("{p:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(wilcoxon_signed_rank(&a, &a, 0.05), Err(Error::Input(_))));
        assert!(wilcoxon_signed_rank(&a[..4], &[0.0; 4], 0.05).is_err());
    }

    #[test]
    fn all_positive_six_is_extreme() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = a.map(|v: f64| -v);
        let r = wilcoxon_signed_rank(&a, &b, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 2.0 / 64.0);
        assert!(r.significant);
    }

    #[test]
    fn large_samples_use_normal() {
        let a: Vec<f64> = (0..30).map(|i| i as f64 * 0.37 % 5.0).collect();
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.11) % 4.0 + 0.05).collect();
        let r = wilcoxon_signed_rank(&a, &b, 0.05).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn p_value_style() {
        assert_eq!(format_p_value(0.038), "0.038");
        assert_eq!(format_p_value(0.001), "0.001");
        assert_eq!(format_p_value(0.0039), "0.0039");
        assert_eq!(format_p_value(0.000213), "0.00021");
        assert_eq!(format_p_value(0.03125), "0.031");
        assert_eq!(format_p_value(1.0), "1");
        assert_eq!(format_p_value(0.5), "0.5");
    }
}
