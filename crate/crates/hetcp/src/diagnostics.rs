//! Pre-deployment conditional-validity diagnostics: per-class score ECDFs,
//! a bootstrap test on inflated-quantile differences between classes, and a
//! two-sample Kolmogorov-Smirnov test.
//!
//! The question these answer: will a marginal (non-Mondrian) conformal
//! predictor be conditionally valid for a given taxonomy? If the calibration
//! score distribution is the same in every class, yes; the tools below look
//! for evidence against that.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{inc_beta_regularized, kolmogorov_survival};
use crate::error::{Error, Result};
use crate::quantile::inflated_level;
use crate::rng::RngStream;

/// Highest quantile level the Harrell-Davis estimator is evaluated at; the
/// inflated level can exceed 1 for small classes and the estimator is
/// undefined at 1.
pub const MAX_HD_LEVEL: f64 = 1.0 - 1e-9;

/// Empirical CDF of one score group: distinct sorted values with their
/// cumulative probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfGroup {
    pub label: String,
    pub values: Vec<f64>,
    pub cum_probs: Vec<f64>,
}

/// Marginal plus per-class ECDFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfTable {
    pub groups: Vec<EcdfGroup>,
}

fn ecdf(label: &str, values: &[f64]) -> Result<EcdfGroup> {
    if values.is_empty() {
        return Err(Error::EmptyGroup(label.to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores must not contain NaN"));
    let n = sorted.len() as f64;
    let mut out_values = Vec::new();
    let mut cum_probs = Vec::new();
    let mut seen = 0usize;
    let mut i = 0usize;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
            seen += 1;
        }
        out_values.push(v);
        cum_probs.push(seen as f64 / n);
    }
    Ok(EcdfGroup {
        label: label.to_string(),
        values: out_values,
        cum_probs,
    })
}

/// ECDFs of the marginal score sample and of each class's sub-sample.
pub fn ecdf_by_class(scores: &[(f64, usize)]) -> Result<EcdfTable> {
    if scores.is_empty() {
        return Err(Error::EmptyGroup("marginal".into()));
    }
    let all: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    let mut groups = vec![ecdf("marginal", &all)?];
    let max_class = scores.iter().map(|&(_, c)| c).max().unwrap_or(0);
    for class in 0..=max_class {
        let subset: Vec<f64> = scores
            .iter()
            .filter(|&&(_, c)| c == class)
            .map(|&(s, _)| s)
            .collect();
        if subset.is_empty() {
            return Err(Error::EmptyGroup(format!("class_{class}")));
        }
        groups.push(ecdf(&format!("class_{class}"), &subset)?);
    }
    Ok(EcdfTable { groups })
}

impl EcdfTable {
    /// CSV export `group,value,cum_prob`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "group,value,cum_prob")?;
        for group in &self.groups {
            for (v, p) in group.values.iter().zip(&group.cum_probs) {
                writeln!(out, "{},{},{}", group.label, v, p)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Harrell-Davis quantile estimate: a Beta-weighted average of the order
/// statistics, with weights I_{i/n}(a, b) - I_{(i-1)/n}(a, b) where
/// a = (n+1)q and b = (n+1)(1-q).
pub fn harrell_davis(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptyGroup("harrell-davis sample".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidQuantileLevel { q });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("sample must not contain NaN"));
    let n = sorted.len();
    let a = (n as f64 + 1.0) * q;
    let b = (n as f64 + 1.0) * (1.0 - q);
    let mut prev = 0.0;
    let mut acc = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cum = inc_beta_regularized((i + 1) as f64 / n as f64, a, b);
        acc += (cum - prev) * x;
        prev = cum;
    }
    Ok(acc)
}

/// Harrell-Davis weights for a sample of size n at level q; sums to one.
pub fn harrell_davis_weights(n: usize, q: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyGroup("harrell-davis sample".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidQuantileLevel { q });
    }
    let a = (n as f64 + 1.0) * q;
    let b = (n as f64 + 1.0) * (1.0 - q);
    let mut prev = 0.0;
    let mut weights = Vec::with_capacity(n);
    for i in 1..=n {
        let cum = inc_beta_regularized(i as f64 / n as f64, a, b);
        weights.push(cum - prev);
        prev = cum;
    }
    Ok(weights)
}

/// Outcome of the bootstrap comparison of inflated-quantile levels between
/// two taxonomy classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapQuantileReport {
    pub class_pair: (usize, usize),
    pub b: usize,
    pub beta: f64,
    pub alpha: f64,
    /// Harrell-Davis levels used for each side (clamped below one).
    pub levels: (f64, f64),
    pub ci: (f64, f64),
    pub rejects: bool,
}

impl BootstrapQuantileReport {
    /// "reject" when 0 lies outside the bootstrap interval, else
    /// "no-evidence".
    pub fn verdict(&self) -> &'static str {
        if self.rejects {
            "reject"
        } else {
            "no-evidence"
        }
    }

    /// Tags the report with the taxonomy classes it compared.
    pub fn labeled(mut self, pair: (usize, usize)) -> Self {
        self.class_pair = pair;
        self
    }
}

fn resample(sample: &[f64], rng: &mut RngStream) -> Vec<f64> {
    (0..sample.len())
        .map(|_| sample[rng.below(sample.len() as u64) as usize])
        .collect()
}

/// Bootstrap confidence interval for the difference of the two classes'
/// critical-quantile levels, estimated with Harrell-Davis on independent
/// resamples; rejects when 0 falls outside the interval.
pub fn bootstrap_quantile_diff(
    s1: &[f64],
    s2: &[f64],
    alpha: f64,
    beta: f64,
    b: usize,
    rng: &RngStream,
) -> Result<BootstrapQuantileReport> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::EmptyGroup("bootstrap sample".into()));
    }
    if b < 100 {
        return Err(Error::InvalidParameter("bootstrap needs B >= 100".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bootstrap level beta {beta} must lie in (0, 1)"
        )));
    }
    let level1 = inflated_level(alpha, s1.len()).min(MAX_HD_LEVEL);
    let level2 = inflated_level(alpha, s2.len()).min(MAX_HD_LEVEL);
    let mut diffs: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng1 = rng.substream(2 * i as u64);
            let mut rng2 = rng.substream(2 * i as u64 + 1);
            let q1 = harrell_davis(&resample(s1, &mut rng1), level1).expect("non-empty resample");
            let q2 = harrell_davis(&resample(s2, &mut rng2), level2).expect("non-empty resample");
            q1 - q2
        })
        .collect();
    diffs.sort_by(|a, b| a.partial_cmp(b).expect("finite differences"));
    let lo_rank = ((b as f64 * beta / 2.0).ceil() as usize).clamp(1, b);
    let hi_rank = ((b as f64 - b as f64 * beta / 2.0).floor() as usize).clamp(1, b);
    let ci = (diffs[lo_rank - 1], diffs[hi_rank - 1]);
    let rejects = 0.0 < ci.0 || 0.0 > ci.1;
    Ok(BootstrapQuantileReport {
        class_pair: (0, 1),
        b,
        beta,
        alpha,
        levels: (level1, level2),
        ci,
        rejects,
    })
}

/// Two-sample Kolmogorov-Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsReport {
    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Two-sample KS test: D = sup |F1 - F2| with ties consolidated, p-value
/// from the asymptotic Kolmogorov distribution at effective size
/// n1 n2 / (n1 + n2). The p-value is approximate for samples below ~30.
pub fn ks_two_sample(s1: &[f64], s2: &[f64]) -> Result<KsReport> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::EmptyGroup("ks sample".into()));
    }
    let mut a = s1.to_vec();
    let mut b = s2.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("scores must not contain NaN"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("scores must not contain NaN"));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    // Advance through the merged distinct values, consuming all ties of a
    // value in both samples before comparing the CDFs.
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let effective = na * nb / (na + nb);
    let p_value = kolmogorov_survival(effective.sqrt() * d);
    Ok(KsReport {
        statistic: d,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_steps() {
        let table = ecdf_by_class(&[(1.0, 0), (2.0, 0), (3.0, 0)]).unwrap();
        let marginal = &table.groups[0];
        assert_eq!(marginal.values, vec![1.0, 2.0, 3.0]);
        let thirds: Vec<f64> = vec![1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (got, expect) in marginal.cum_probs.iter().zip(&thirds) {
            assert!((got - expect).abs() < 1e-15);
        }
        // The single class coincides with the marginal.
        assert_eq!(table.groups[1].values, marginal.values);
        assert_eq!(table.groups[1].cum_probs, marginal.cum_probs);
    }

    #[test]
    fn ecdf_consolidates_ties() {
        let table = ecdf_by_class(&[(1.0, 0), (1.0, 0), (2.0, 0), (2.0, 0)]).unwrap();
        let marginal = &table.groups[0];
        assert_eq!(marginal.values, vec![1.0, 2.0]);
        assert_eq!(marginal.cum_probs, vec![0.5, 1.0]);
    }

    #[test]
    fn ecdf_missing_class_is_an_error() {
        // Class 1 absent while class 2 present.
        assert!(matches!(
            ecdf_by_class(&[(1.0, 0), (2.0, 2)]),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn hd_median_of_three() {
        // Weights are (7/27, 13/27, 7/27).
        let got = harrell_davis(&[1.0, 2.0, 3.0], 0.5).unwrap();
        assert!((got - 2.0).abs() < 1e-12);
        let w = harrell_davis_weights(3, 0.5).unwrap();
        assert!((w[0] - 7.0 / 27.0).abs() < 1e-12);
        assert!((w[1] - 13.0 / 27.0).abs() < 1e-12);
        assert!((w[2] - 7.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn hd_constant_sample() {
        let got = harrell_davis(&[4.2; 17], 0.9).unwrap();
        assert!((got - 4.2).abs() < 1e-12);
    }

    #[test]
    fn hd_weights_sum_to_one() {
        for &n in &[1usize, 10, 1000, 10_000] {
            for &q in &[0.01, 0.25, 0.5, 0.9, 0.99] {
                let sum: f64 = harrell_davis_weights(n, q).unwrap().iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "n={n} q={q}: {sum}");
            }
        }
    }

    #[test]
    fn hd_monotone_in_q_and_affine_equivariant() {
        let mut rng = RngStream::new(5, 5);
        let sample: Vec<f64> = (0..60).map(|_| rng.normal() * 2.0 + 1.0).collect();
        let mut last = f64::NEG_INFINITY;
        for i in 1..20 {
            let q = i as f64 / 20.0;
            let v = harrell_davis(&sample, q).unwrap();
            assert!(v >= last);
            last = v;
        }
        let mapped: Vec<f64> = sample.iter().map(|&x| 3.0 * x - 7.0).collect();
        for &q in &[0.2, 0.5, 0.9] {
            let direct = harrell_davis(&mapped, q).unwrap();
            let derived = 3.0 * harrell_davis(&sample, q).unwrap() - 7.0;
            assert!((direct - derived).abs() < 1e-10);
        }
    }

    #[test]
    fn hd_tracks_order_statistic_quantile() {
        // Consistency on a large uniform sample.
        let mut rng = RngStream::new(31, 0);
        let sample: Vec<f64> = (0..10_000).map(|_| rng.next_f64()).collect();
        let got = harrell_davis(&sample, 0.9).unwrap();
        assert!((got - 0.9).abs() < 0.02, "HD(U(0,1), 0.9) = {got}");
    }

    #[test]
    fn hd_rejects_bad_levels() {
        assert!(harrell_davis(&[1.0], 0.0).is_err());
        assert!(harrell_davis(&[1.0], 1.0).is_err());
        assert!(harrell_davis(&[], 0.5).is_err());
    }

    #[test]
    fn bootstrap_same_sample_does_not_reject() {
        let mut rng = RngStream::new(2, 0);
        let s: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
        let report =
            bootstrap_quantile_diff(&s, &s, 0.1, 0.025, 1000, &RngStream::new(77, 0)).unwrap();
        assert!(!report.rejects, "ci = {:?}", report.ci);
        assert_eq!(report.verdict(), "no-evidence");
    }

    #[test]
    fn bootstrap_location_shift_rejects() {
        let mut rng = RngStream::new(2, 1);
        let s1: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
        let s2: Vec<f64> = s1.iter().map(|&v| v + 100.0).collect();
        let report =
            bootstrap_quantile_diff(&s1, &s2, 0.1, 0.025, 1000, &RngStream::new(78, 0)).unwrap();
        assert!(report.rejects);
        assert!(report.ci.1 < 0.0, "ci = {:?}", report.ci);
        assert_eq!(report.verdict(), "reject");
    }

    #[test]
    fn bootstrap_is_antisymmetric_up_to_noise() {
        let mut rng = RngStream::new(3, 1);
        let s1: Vec<f64> = (0..250).map(|_| rng.normal()).collect();
        let s2: Vec<f64> = (0..250).map(|_| rng.normal() * 1.4).collect();
        let fwd =
            bootstrap_quantile_diff(&s1, &s2, 0.1, 0.05, 3000, &RngStream::new(5, 0)).unwrap();
        let rev =
            bootstrap_quantile_diff(&s2, &s1, 0.1, 0.05, 3000, &RngStream::new(5, 0)).unwrap();
        // Swapping the samples mirrors the interval up to bootstrap noise.
        let spread = (fwd.ci.1 - fwd.ci.0).abs().max(1e-6);
        assert!(((-rev.ci.1) - fwd.ci.0).abs() < 0.35 * spread, "{fwd:?} {rev:?}");
        assert!(((-rev.ci.0) - fwd.ci.1).abs() < 0.35 * spread, "{fwd:?} {rev:?}");
    }

    #[test]
    fn bootstrap_validates_inputs() {
        let s = vec![1.0, 2.0];
        assert!(bootstrap_quantile_diff(&s, &[], 0.1, 0.025, 500, &RngStream::new(0, 0)).is_err());
        assert!(bootstrap_quantile_diff(&s, &s, 0.1, 0.025, 50, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let s: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let same = ks_two_sample(&s, &s).unwrap();
        assert_eq!(same.statistic, 0.0);
        assert!(same.p_value > 0.999_999);

        let hi: Vec<f64> = (0..50).map(|i| 1000.0 + i as f64).collect();
        let apart = ks_two_sample(&s, &hi).unwrap();
        assert_eq!(apart.statistic, 1.0);
        assert!(apart.p_value < 1e-12);
    }

    #[test]
    fn ks_handles_cross_sample_tie_runs() {
        // One 5 in the first sample, three 5s plus a 9 in the second; the
        // CDF gap at 5 is 0.25 only after all ties are consumed.
        let report = ks_two_sample(&[5.0], &[5.0, 5.0, 5.0, 9.0]).unwrap();
        assert!((report.statistic - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ks_statistic_hand_value() {
        // F1 jumps at {1,2}, F2 at {1,3}: D = 1/2 at value 2.
        let report = ks_two_sample(&[1.0, 2.0], &[1.0, 3.0]).unwrap();
        assert!((report.statistic - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ks_null_calibration() {
        // Two standard normal samples: the rejection rate at level 0.05 over
        // 200 seeded runs sits near 5%.
        let mut rejects = 0;
        for seed in 0..200u64 {
            let mut rng = RngStream::new(seed, 900);
            let s1: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
            let s2: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
            if ks_two_sample(&s1, &s2).unwrap().rejects_at(0.05) {
                rejects += 1;
            }
        }
        let rate = rejects as f64 / 200.0;
        assert!(rate > 0.005 && rate < 0.105, "reject rate {rate}");
    }
}
