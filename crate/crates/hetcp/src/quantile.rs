//! Finite-set quantile used for critical nonconformity scores.

use crate::error::{Error, Result};

/// Inflated quantile level (1 - alpha)(1 + 1/n) used throughout calibration.
pub fn inflated_level(alpha: f64, n: usize) -> f64 {
    (1.0 - alpha) * (1.0 + 1.0 / n as f64)
}

/// k-th order statistic quantile of a finite score set, k = ceil(beta * n).
///
/// `beta <= 0` returns the minimum, `beta > 1` returns `+inf` (the calibration
/// set is too small for the requested level, so the prediction region must
/// cover everything). Products like (1 - alpha)(1 + 1/n) * n that are integers
/// in exact arithmetic can land a few ulp above the integer, so the rank is
/// snapped to the nearest integer within a 1e-9 relative tolerance before
/// taking the ceiling.
pub fn finite_quantile(scores: &[f64], beta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if beta > 1.0 {
        return Ok(f64::INFINITY);
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores must not contain NaN"));
    if beta <= 0.0 {
        return Ok(sorted[0]);
    }
    let k = rank_for(beta, scores.len());
    Ok(sorted[k - 1])
}

/// Rank k = ceil(beta * n) with integer snapping, clamped to [1, n].
fn rank_for(beta: f64, n: usize) -> usize {
    let t = beta * n as f64;
    let nearest = t.round();
    let k = if (t - nearest).abs() <= 1e-9 * t.abs().max(1.0) {
        nearest
    } else {
        t.ceil()
    };
    (k as usize).clamp(1, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kth_order_statistic() {
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(finite_quantile(&scores, 0.6).unwrap(), 3.0);
        assert_eq!(finite_quantile(&scores, 1.0).unwrap(), 5.0);
        assert_eq!(finite_quantile(&scores, 0.0).unwrap(), 1.0);
        assert_eq!(finite_quantile(&scores, -0.5).unwrap(), 1.0);
    }

    #[test]
    fn singleton() {
        assert_eq!(finite_quantile(&[3.1], 0.5).unwrap(), 3.1);
    }

    #[test]
    fn inflated_level_on_nine_scores() {
        // (1 - 0.2)(1 + 1/9) * 9 = 8 exactly; floating point must not push
        // the rank up to 9.
        let scores: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let beta = inflated_level(0.2, scores.len());
        assert_eq!(finite_quantile(&scores, beta).unwrap(), 8.0);
    }

    #[test]
    fn overflow_returns_infinity() {
        let scores = [1.0, 2.0];
        assert_eq!(finite_quantile(&scores, 1.2).unwrap(), f64::INFINITY);
        // Inflated level with one calibration point at alpha = 0.1: 1.8 > 1.
        assert!(inflated_level(0.1, 1) > 1.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            finite_quantile(&[], 0.5),
            Err(Error::EmptyCalibration)
        ));
    }

    #[test]
    fn permutation_invariant() {
        let a = [0.3, 7.1, 2.2, 5.5, 5.5, 1.0];
        let b = [5.5, 1.0, 0.3, 5.5, 7.1, 2.2];
        for i in 1..=10 {
            let beta = i as f64 / 10.0;
            assert_eq!(
                finite_quantile(&a, beta).unwrap(),
                finite_quantile(&b, beta).unwrap()
            );
        }
    }

    #[test]
    fn monotone_in_beta() {
        let scores = [4.0, -1.0, 2.5, 2.5, 9.0, 0.0, 3.3];
        let mut last = f64::NEG_INFINITY;
        for i in 0..=120 {
            let beta = i as f64 / 100.0;
            let q = finite_quantile(&scores, beta).unwrap();
            assert!(q >= last, "beta={beta}: {q} < {last}");
            last = q;
        }
    }

    /// Coverage of the inflated quantile over all rank positions of a fresh
    /// draw: for continuous i.i.d. scores the test score's rank among n+1 is
    /// uniform, so coverage is exactly min(k, n+1)/(n+1) with
    /// k = ceil((1-alpha)(n+1)).
    #[test]
    fn rank_enumeration_matches_lemma_bound() {
        for n in 1..=12usize {
            for &alpha_tenths in &[1u32, 2, 3] {
                // k = ceil((10 - a)(n + 1)/10) in exact integer arithmetic.
                let num = (10 - alpha_tenths) as usize * (n + 1);
                let k_exact = num.div_ceil(10);
                let beta = inflated_level(alpha_tenths as f64 / 10.0, n);
                // Enumerate rank positions: calibration scores are 1..n,
                // the fresh score takes each of the n+1 gap positions.
                let calib: Vec<f64> = (1..=n).map(|v| v as f64).collect();
                let mut covered = 0usize;
                for pos in 0..=n {
                    // Fresh value sits between pos and pos+1 in rank order.
                    let fresh = pos as f64 + 0.5;
                    let q = finite_quantile(&calib, beta).unwrap();
                    if fresh <= q {
                        covered += 1;
                    }
                }
                let expect = k_exact.min(n + 1);
                assert_eq!(
                    covered, expect,
                    "n={n} alpha=0.{alpha_tenths}: covered {covered}, expected {expect}"
                );
            }
        }
    }
}
