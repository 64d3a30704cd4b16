//! Empirical coverage and width, marginal and per taxonomy class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conformal::CalibratedPredictor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::taxonomy::Taxonomy;

/// Coverage and width within one taxonomy class.
///
/// `coverage`/`width` are `None` when the class has no test points: an empty
/// cell is missing information, not zero coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCell {
    pub count: usize,
    pub covered: usize,
    pub coverage: Option<f64>,
    #[serde(with = "crate::jsonf::float_opt")]
    pub width: Option<f64>,
    pub infinite: usize,
}

/// Evaluation result of one predictor on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub n_test: usize,
    pub marginal_coverage: f64,
    /// Mean interval width; +inf as soon as any interval is infinite.
    #[serde(with = "crate::jsonf::float")]
    pub marginal_width: f64,
    /// How many intervals had an infinite endpoint.
    pub n_infinite: usize,
    pub per_class: BTreeMap<usize, ClassCell>,
}

/// Evaluates a predictor; per-class cells are grouped by `taxonomy`, which is
/// normally the same fitted taxonomy used at calibration so that taxonomy
/// contamination is measured rather than corrected.
pub fn evaluate(
    predictor: &CalibratedPredictor,
    test: &Dataset,
    taxonomy: &Taxonomy,
    noise: &RngStream,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyTest);
    }
    let ests = predictor.estimator().predict_dataset(test, noise)?;
    let n_classes = taxonomy.n_classes();
    let mut count = vec![0usize; n_classes];
    let mut covered = vec![0usize; n_classes];
    let mut width_sum = vec![0.0f64; n_classes];
    let mut infinite = vec![0usize; n_classes];
    for (obs, est) in test.iter().zip(&ests) {
        let class = taxonomy.classify(&obs.x, est.sigma);
        let interval = predictor.predict_with_estimate(&obs.x, est)?;
        count[class] += 1;
        if interval.contains(obs.y) {
            covered[class] += 1;
        }
        let w = interval.width();
        if w.is_infinite() {
            infinite[class] += 1;
        }
        width_sum[class] += w;
    }
    let n_test = test.len();
    let total_covered: usize = covered.iter().sum();
    let total_infinite: usize = infinite.iter().sum();
    let marginal_width = if total_infinite > 0 {
        f64::INFINITY
    } else {
        width_sum.iter().sum::<f64>() / n_test as f64
    };
    let mut per_class = BTreeMap::new();
    for class in 0..n_classes {
        let cell = if count[class] == 0 {
            ClassCell {
                count: 0,
                covered: 0,
                coverage: None,
                width: None,
                infinite: 0,
            }
        } else {
            let width = if infinite[class] > 0 {
                f64::INFINITY
            } else {
                width_sum[class] / count[class] as f64
            };
            ClassCell {
                count: count[class],
                covered: covered[class],
                coverage: Some(covered[class] as f64 / count[class] as f64),
                width: Some(width),
                infinite: infinite[class],
            }
        };
        per_class.insert(class, cell);
    }
    Ok(EvalReport {
        alpha: predictor.alpha(),
        n_test,
        marginal_coverage: total_covered as f64 / n_test as f64,
        marginal_width,
        n_infinite: total_infinite,
        per_class,
    })
}

/// Mean and sample standard deviation of one metric across reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    #[serde(with = "crate::jsonf::float")]
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    if values.iter().any(|v| v.is_infinite()) {
        return MeanStd {
            mean: f64::INFINITY,
            std: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// Aggregated per-class metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub coverage: Option<MeanStd>,
    pub width: Option<MeanStd>,
    pub mean_count: f64,
}

/// Mean and standard deviation of every metric over repeated evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub alpha: f64,
    pub n_reports: usize,
    pub marginal_coverage: MeanStd,
    pub marginal_width: MeanStd,
    pub per_class: BTreeMap<usize, ClassAggregate>,
}

/// Aggregates evaluation reports; all must share alpha and class set.
pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::InvalidParameter(
            "aggregate needs at least two reports".into(),
        ));
    }
    let alpha = reports[0].alpha;
    let classes: Vec<usize> = reports[0].per_class.keys().copied().collect();
    for r in reports {
        if r.alpha != alpha || r.per_class.keys().copied().collect::<Vec<_>>() != classes {
            return Err(Error::MismatchedClasses);
        }
    }
    let marginal_coverage = mean_std(
        &reports
            .iter()
            .map(|r| r.marginal_coverage)
            .collect::<Vec<_>>(),
    );
    let marginal_width = mean_std(
        &reports
            .iter()
            .map(|r| r.marginal_width)
            .collect::<Vec<_>>(),
    );
    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let coverages: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.per_class[&class].coverage)
            .collect();
        let widths: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.per_class[&class].width)
            .collect();
        let mean_count = reports
            .iter()
            .map(|r| r.per_class[&class].count as f64)
            .sum::<f64>()
            / reports.len() as f64;
        per_class.insert(
            class,
            ClassAggregate {
                coverage: if coverages.is_empty() {
                    None
                } else {
                    Some(mean_std(&coverages))
                },
                width: if widths.is_empty() {
                    None
                } else {
                    Some(mean_std(&widths))
                },
                mean_count,
            },
        );
    }
    Ok(AggregateReport {
        alpha,
        n_reports: reports.len(),
        marginal_coverage,
        marginal_width,
        per_class,
    })
}

impl EvalReport {
    /// Long-format CSV rows `class,metric,value` with `marginal` as the
    /// pseudo-class; infinite widths print as `inf`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("class,metric,value\n");
        let fmt = |v: f64| {
            if v.is_infinite() {
                "inf".to_string()
            } else {
                format!("{v}")
            }
        };
        out.push_str(&format!("marginal,coverage,{}\n", self.marginal_coverage));
        out.push_str(&format!("marginal,width,{}\n", fmt(self.marginal_width)));
        for (class, cell) in &self.per_class {
            if let Some(c) = cell.coverage {
                out.push_str(&format!("{class},coverage,{c}\n"));
            }
            if let Some(w) = cell.width {
                out.push_str(&format!("{class},width,{}\n", fmt(w)));
            }
            out.push_str(&format!("{class},count,{}\n", cell.count));
        }
        out
    }
}

impl AggregateReport {
    /// Long-format CSV `class,metric,mean,std` consumed by external plotting.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("class,metric,mean,std\n");
        let fmt = |v: f64| {
            if v.is_infinite() {
                "inf".to_string()
            } else {
                format!("{v}")
            }
        };
        out.push_str(&format!(
            "marginal,coverage,{},{}\n",
            self.marginal_coverage.mean, self.marginal_coverage.std
        ));
        out.push_str(&format!(
            "marginal,width,{},{}\n",
            fmt(self.marginal_width.mean),
            self.marginal_width.std
        ));
        for (class, agg) in &self.per_class {
            if let Some(c) = agg.coverage {
                out.push_str(&format!("{class},coverage,{},{}\n", c.mean, c.std));
            }
            if let Some(w) = agg.width {
                out.push_str(&format!("{class},width,{},{}\n", fmt(w.mean), w.std));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::calibrate;
    use crate::data::Observation;
    use crate::estimators::EstimatorSpec;
    use crate::nonconformity::Measure;
    use crate::synthetic::GeneratorSpec;

    fn noise() -> RngStream {
        RngStream::new(1, 1)
    }

    fn simple_predictor(calib_ys: &[f64], alpha: f64) -> CalibratedPredictor {
        let calib = Dataset::new(
            calib_ys
                .iter()
                .map(|&y| Observation { x: vec![0.5], y })
                .collect(),
        )
        .unwrap();
        let estimator = EstimatorSpec::constant(0.0, 1.0).fit(None, None).unwrap();
        calibrate(Measure::Residual, estimator, &calib, alpha, None, &noise()).unwrap()
    }

    #[test]
    fn marginal_coverage_fraction() {
        // a* = 8 (ys 1..9 at alpha 0.2); test points 0..10: y in [-8, 8]
        // covers 0..=8, so coverage is 9/11.
        let p = simple_predictor(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], 0.2);
        let test = Dataset::new(
            (0..11)
                .map(|i| Observation { x: vec![0.7], y: i as f64 })
                .collect(),
        )
        .unwrap();
        let taxonomy = Taxonomy::FeatureThreshold { dim: 0, xi: 1.0 };
        let report = evaluate(&p, &test, &taxonomy, &noise()).unwrap();
        assert!((report.marginal_coverage - 9.0 / 11.0).abs() < 1e-12);
        // Residual widths are constant: 2 a*.
        assert!((report.marginal_width - 16.0).abs() < 1e-12);
        assert_eq!(report.n_infinite, 0);
    }

    #[test]
    fn infinite_intervals_propagate() {
        let p = simple_predictor(&[1.0], 0.1); // a* = +inf
        let test = Dataset::new(vec![Observation { x: vec![0.0], y: 5.0 }]).unwrap();
        let taxonomy = Taxonomy::FeatureThreshold { dim: 0, xi: 1.0 };
        let report = evaluate(&p, &test, &taxonomy, &noise()).unwrap();
        assert_eq!(report.marginal_coverage, 1.0);
        assert_eq!(report.marginal_width, f64::INFINITY);
        assert_eq!(report.n_infinite, 1);
    }

    #[test]
    fn empty_class_reported_as_missing() {
        let p = simple_predictor(&[1.0, 2.0, 3.0], 0.2);
        let test = Dataset::new(
            (0..5)
                .map(|i| Observation { x: vec![0.9], y: i as f64 })
                .collect(),
        )
        .unwrap();
        // Class 1 is x[0] <= 0.5: no test points there.
        let taxonomy = Taxonomy::FeatureThreshold { dim: 0, xi: 0.5 };
        let report = evaluate(&p, &test, &taxonomy, &noise()).unwrap();
        assert_eq!(report.per_class[&1].count, 0);
        assert_eq!(report.per_class[&1].coverage, None);
        assert_eq!(report.per_class[&0].count, 5);
    }

    #[test]
    fn coverage_equals_weighted_class_mean() {
        let generator = GeneratorSpec::example21(800, 5).build().unwrap();
        let (data, _) = generator.generate().unwrap();
        let (calib, test) = {
            let idx: Vec<usize> = (0..400).collect();
            let idx2: Vec<usize> = (400..800).collect();
            (data.subset(&idx).unwrap(), data.subset(&idx2).unwrap())
        };
        let estimator = EstimatorSpec::oracle().fit(None, Some(&generator)).unwrap();
        let p = calibrate(
            Measure::normalized(),
            estimator,
            &calib,
            0.1,
            None,
            &noise(),
        )
        .unwrap();
        let taxonomy = Taxonomy::FeatureThreshold { dim: 1, xi: 0.5 };
        let report = evaluate(&p, &test, &taxonomy, &noise()).unwrap();
        let weighted: f64 = report
            .per_class
            .values()
            .filter(|cell| cell.count > 0)
            .map(|cell| cell.coverage.unwrap() * cell.count as f64)
            .sum::<f64>()
            / report.n_test as f64;
        assert!((report.marginal_coverage - weighted).abs() < 1e-12);
        let total: usize = report.per_class.values().map(|c| c.count).sum();
        assert_eq!(total, report.n_test);
    }

    #[test]
    fn aggregate_identical_reports_has_zero_std() {
        let p = simple_predictor(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.2);
        let test = Dataset::new(
            (0..6)
                .map(|i| Observation { x: vec![0.1], y: i as f64 })
                .collect(),
        )
        .unwrap();
        let taxonomy = Taxonomy::FeatureThreshold { dim: 0, xi: 1.0 };
        let report = evaluate(&p, &test, &taxonomy, &noise()).unwrap();
        let agg = aggregate(&[report.clone(), report]).unwrap();
        assert_eq!(agg.marginal_coverage.std, 0.0);
        assert_eq!(agg.n_reports, 2);
    }

    #[test]
    fn aggregate_rejects_mismatched_classes() {
        let p = simple_predictor(&[1.0, 2.0, 3.0], 0.2);
        let test = Dataset::new(vec![Observation { x: vec![0.1], y: 0.0 }]).unwrap();
        let t2 = Taxonomy::FeatureThreshold { dim: 0, xi: 1.0 };
        let r1 = evaluate(&p, &test, &t2, &noise()).unwrap();
        let mut r2 = r1.clone();
        r2.per_class.remove(&1);
        assert!(matches!(aggregate(&[r1, r2]), Err(Error::MismatchedClasses)));
    }

    #[test]
    fn report_json_round_trip() {
        let p = simple_predictor(&[1.0], 0.1);
        let test = Dataset::new(vec![Observation { x: vec![0.0], y: 5.0 }]).unwrap();
        let taxonomy = Taxonomy::FeatureThreshold { dim: 0, xi: 1.0 };
        let report = evaluate(&p, &test, &taxonomy, &noise()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.marginal_width, f64::INFINITY);
        assert_eq!(back, report);
    }
}
