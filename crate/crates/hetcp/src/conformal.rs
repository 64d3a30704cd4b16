//! Split conformal prediction and its Mondrian (class-conditional) variant.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Interval};
use crate::error::{Error, Result};
use crate::estimators::{FittedEstimator, MeanVarEstimate};
use crate::nonconformity::{invert, prediction_for, score, Measure};
use crate::quantile::{finite_quantile, inflated_level};
use crate::rng::RngStream;
use crate::taxonomy::Taxonomy;

/// Critical nonconformity score(s): one global value or one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum Critical {
    Global {
        #[serde(with = "crate::jsonf::float")]
        a_star: f64,
    },
    PerClass {
        #[serde(with = "crate::jsonf::float_vec")]
        a_star: Vec<f64>,
    },
}

impl Critical {
    pub fn is_mondrian(&self) -> bool {
        matches!(self, Critical::PerClass { .. })
    }

    fn for_class(&self, class: usize) -> f64 {
        match self {
            Critical::Global { a_star } => *a_star,
            Critical::PerClass { a_star } => a_star.get(class).copied().unwrap_or(f64::INFINITY),
        }
    }
}

/// A calibrated conformal predictor: the measure, the fitted estimator, the
/// critical score(s) and, when present, the taxonomy used for conditioning
/// and conditional evaluation. Immutable after calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratedPredictor {
    measure: Measure,
    estimator: FittedEstimator,
    alpha: f64,
    critical: Critical,
    taxonomy: Option<Taxonomy>,
    calib_sizes: Vec<usize>,
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha { alpha })
    }
}

/// Nonconformity scores of a dataset under a measure, one substream of
/// `noise` per point index.
pub fn calibration_scores(
    measure: &Measure,
    estimator: &FittedEstimator,
    data: &Dataset,
    alpha: f64,
    noise: &RngStream,
) -> Result<Vec<f64>> {
    let ests = estimator.predict_dataset(data, noise)?;
    data.iter()
        .zip(&ests)
        .map(|(obs, est)| score(measure, &prediction_for(measure, est, alpha), obs.y))
        .collect()
}

/// Calibrates a global (non-Mondrian) predictor.
///
/// A taxonomy may still be attached; it is stored for conditional evaluation
/// but does not affect the critical score.
pub fn calibrate(
    measure: Measure,
    estimator: FittedEstimator,
    calib: &Dataset,
    alpha: f64,
    taxonomy: Option<Taxonomy>,
    noise: &RngStream,
) -> Result<CalibratedPredictor> {
    validate_alpha(alpha)?;
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let scores = calibration_scores(&measure, &estimator, calib, alpha, noise)?;
    let a_star = finite_quantile(&scores, inflated_level(alpha, scores.len()))?;
    Ok(CalibratedPredictor {
        measure,
        estimator,
        alpha,
        critical: Critical::Global { a_star },
        taxonomy,
        calib_sizes: vec![calib.len()],
    })
}

/// Calibrates one conformal predictor per taxonomy class.
///
/// Classes with no calibration points get an infinite critical score, so
/// their predictions degrade to the whole real line instead of failing.
pub fn calibrate_mondrian(
    measure: Measure,
    estimator: FittedEstimator,
    calib: &Dataset,
    alpha: f64,
    taxonomy: Taxonomy,
    noise: &RngStream,
) -> Result<CalibratedPredictor> {
    validate_alpha(alpha)?;
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let ests = estimator.predict_dataset(calib, noise)?;
    let n_classes = taxonomy.n_classes();
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
    for (obs, est) in calib.iter().zip(&ests) {
        let class = taxonomy.classify(&obs.x, est.sigma);
        let s = score(&measure, &prediction_for(&measure, est, alpha), obs.y)?;
        per_class[class].push(s);
    }
    let calib_sizes: Vec<usize> = per_class.iter().map(Vec::len).collect();
    let a_star = per_class
        .iter()
        .map(|scores| {
            if scores.is_empty() {
                Ok(f64::INFINITY)
            } else {
                finite_quantile(scores, inflated_level(alpha, scores.len()))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CalibratedPredictor {
        measure,
        estimator,
        alpha,
        critical: Critical::PerClass { a_star },
        taxonomy: Some(taxonomy),
        calib_sizes,
    })
}

impl CalibratedPredictor {
    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn estimator(&self) -> &FittedEstimator {
        &self.estimator
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn critical(&self) -> &Critical {
        &self.critical
    }

    pub fn taxonomy(&self) -> Option<&Taxonomy> {
        self.taxonomy.as_ref()
    }

    pub fn is_mondrian(&self) -> bool {
        self.critical.is_mondrian()
    }

    /// Calibration points per class (a single entry for global predictors).
    pub fn calib_sizes(&self) -> &[usize] {
        &self.calib_sizes
    }

    /// Prediction interval for a feature point; `noise` drives the
    /// estimator's misspecification wrappers, one substream per point.
    pub fn predict(&self, x: &[f64], noise: &mut RngStream) -> Result<Interval> {
        let est = self.estimator.predict(x, noise)?;
        self.predict_with_estimate(x, &est)
    }

    /// Interval given an already computed estimate; the same estimate drives
    /// both class selection and inversion so each point draws its
    /// misspecification noise exactly once.
    pub fn predict_with_estimate(&self, x: &[f64], est: &MeanVarEstimate) -> Result<Interval> {
        let class = match (&self.critical, &self.taxonomy) {
            (Critical::PerClass { .. }, Some(taxonomy)) => taxonomy.classify(x, est.sigma),
            _ => 0,
        };
        let a_star = self.critical.for_class(class);
        invert(&self.measure, &prediction_for(&self.measure, est, self.alpha), a_star)
    }

    /// Intervals for a whole dataset with per-index noise substreams.
    pub fn predict_dataset(&self, data: &Dataset, noise: &RngStream) -> Result<Vec<Interval>> {
        data.iter()
            .enumerate()
            .map(|(i, obs)| {
                let mut stream = noise.substream(i as u64);
                self.predict(&obs.x, &mut stream)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let p: CalibratedPredictor = serde_json::from_str(json)?;
        if p.critical.is_mondrian() && p.taxonomy.is_none() {
            return Err(Error::InvalidParameter(
                "per-class critical scores require a taxonomy".into(),
            ));
        }
        Ok(p)
    }
}
