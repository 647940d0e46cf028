//! One-sided Wilcoxon signed-rank test.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::special::normal_cdf;

/// Largest sample handled by exact enumeration.
const EXACT_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    /// Sum of the ranks of the positive differences.
    pub w_plus: f64,
    /// `P(W+ >= observed)` under the null of a distribution symmetric about zero.
    pub p_value: f64,
    pub exact: bool,
}

/// Tests whether the differences are centred above zero. Zeros are dropped, tied
/// magnitudes share their mean rank. Exact for at most 20 non-zero differences,
/// otherwise a normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    signed_rank(diffs, EXACT_MAX)
}

fn signed_rank(diffs: &[f64], exact_max: usize) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon differences".into()));
    }
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n < 5 {
        return Err(Error::InsufficientSamples { need: 5, got: n });
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    // Doubled mid-ranks stay integral.
    let mut ranks2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64;
        for r in &mut ranks2[i..=j] {
            *r = r2;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w2: u64 = nz.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= exact_max {
        // counts[s]: sign patterns whose doubled positive-rank sum is s.
        let total: u64 = ranks2.iter().sum();
        let mut counts = vec![0f64; total as usize + 1];
        counts[0] = 1.0;
        for &r in &ranks2 {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let tail: f64 = counts[w2 as usize..].iter().sum();
        let p_value = tail / 2f64.powi(n as i32);
        return Ok(WilcoxonResult { n, w_plus, p_value, exact: true });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean - 0.5) / var.sqrt();
    Ok(WilcoxonResult { n, w_plus, p_value: normal_cdf(-z), exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_exact() {
        let d: Vec<f64> = (1..=10).map(|i| i as f64 * 0.3).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert!(r.exact);
        assert_eq!(r.w_plus, 55.0);
        assert!((r.p_value - 1.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn antisymmetric_is_even_odds() {
        let d: Vec<f64> = (1..=15).flat_map(|i| [i as f64, -(i as f64)]).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert!(!r.exact);
        assert!((r.p_value - 0.5).abs() < 0.03, "{}", r.p_value);
        let small: Vec<f64> = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0].to_vec();
        let r = wilcoxon_signed_rank(&small).unwrap();
        assert!(r.exact);
        assert!((r.p_value - 0.5).abs() < 0.1, "{}", r.p_value);
    }

    #[test]
    fn zeros_are_dropped_and_too_few_fail() {
        assert!(matches!(
            wilcoxon_signed_rank(&[0.0; 12]),
            Err(Error::InsufficientSamples { need: 5, got: 0 })
        ));
        let r = wilcoxon_signed_rank(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.n, 5);
        assert!((r.p_value - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_known_table_value() {
        // n = 8 with no ties: compare against all 256 sign patterns.
        let d = [1.0, 2.0, 3.0, 4.0, -5.0, -6.0, 7.0, 8.0];
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert_eq!(r.w_plus, 25.0);
        let brute = (0u32..256)
            .filter(|mask| (0..8).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).sum::<u32>() >= 25)
            .count() as f64
            / 256.0;
        assert!((r.p_value - brute).abs() < 1e-15);
    }

    #[test]
    fn large_separated_sample_is_extreme() {
        let d: Vec<f64> = (0..1000).map(|i| if i % 10 == 0 { -1.0 } else { 1.0 + i as f64 * 1e-3 }).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert!(r.p_value < 1e-10, "{}", r.p_value);
    }

    #[test]
    fn normal_approximation_tracks_exact_near_twenty() {
        let d: Vec<f64> = (1..=20).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let exact = signed_rank(&d, 20).unwrap();
        let approx = signed_rank(&d, 0).unwrap();
        assert!(exact.exact && !approx.exact);
        assert!((approx.p_value - exact.p_value).abs() < 0.005, "{} vs {}", approx.p_value, exact.p_value);
    }
}
