//! Nonconformity measures and their interval inversions.
//!
//! Four measures are supported:
//! - residual: |mu - y|
//! - interval: max(y - y_plus, y_minus - y) for band predictors
//! - normalized: |mu - y| / (sigma + epsilon)
//! - standardized: (y - mu) / (sigma + epsilon), signed; used for pivotality
//!   diagnostics only and deliberately not invertible into an interval.
//!
//! For every invertible measure, y lies in `invert(m, pred, a)` exactly when
//! `score(m, pred, y) <= a`.

use serde::{Deserialize, Serialize};

use crate::data::Interval;
use crate::dist::normal_quantile;
use crate::error::{Error, Result};
use crate::estimators::{mv_interval, IntervalEstimate, MeanVarEstimate};

/// Default stabilizer added to sigma in the normalized measure.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// A nonconformity score.
pub type Score = f64;

/// Nonconformity measure selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measure {
    #[serde(rename = "res")]
    Residual,
    #[serde(rename = "int")]
    Interval,
    #[serde(rename = "norm")]
    Normalized { epsilon: f64 },
    #[serde(rename = "std")]
    Standardized { epsilon: f64 },
}

impl Measure {
    pub fn normalized() -> Self {
        Measure::Normalized {
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn standardized() -> Self {
        Measure::Standardized { epsilon: 0.0 }
    }

    /// Short config name: res, int, norm or std.
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Residual => "res",
            Measure::Interval => "int",
            Measure::Normalized { .. } => "norm",
            Measure::Standardized { .. } => "std",
        }
    }

    /// Parses a config name, using the default stabilizer where one applies.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "res" => Ok(Measure::Residual),
            "int" => Ok(Measure::Interval),
            "norm" => Ok(Measure::normalized()),
            "std" => Ok(Measure::standardized()),
            other => Err(Error::InvalidParameter(format!(
                "unknown measure `{other}` (expected res, int, norm or std)"
            ))),
        }
    }
}

/// Model output a measure scores against: a mean/variance estimate or a band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    MeanVar(MeanVarEstimate),
    Band(IntervalEstimate),
}

impl Prediction {
    fn mean_var(&self) -> Result<&MeanVarEstimate> {
        match self {
            Prediction::MeanVar(est) => Ok(est),
            Prediction::Band(_) => Err(Error::MeasureMismatch {
                expected: "mean/variance",
                got: "interval",
            }),
        }
    }

    fn band(&self) -> Result<&IntervalEstimate> {
        match self {
            Prediction::Band(band) => Ok(band),
            Prediction::MeanVar(_) => Err(Error::MeasureMismatch {
                expected: "interval",
                got: "mean/variance",
            }),
        }
    }
}

/// Builds the prediction a measure consumes from a mean/variance estimate;
/// the interval measure uses the parametric normal band at level alpha.
pub fn prediction_for(measure: &Measure, est: &MeanVarEstimate, alpha: f64) -> Prediction {
    match measure {
        Measure::Interval => Prediction::Band(mv_interval(est, alpha)),
        _ => Prediction::MeanVar(*est),
    }
}

/// Nonconformity score of (x, y) given the model output at x.
pub fn score(measure: &Measure, pred: &Prediction, y: f64) -> Result<Score> {
    match measure {
        Measure::Residual => {
            let est = pred.mean_var()?;
            Ok((est.mu - y).abs())
        }
        Measure::Interval => {
            let band = pred.band()?;
            Ok((y - band.y_plus).max(band.y_minus - y))
        }
        Measure::Normalized { epsilon } => {
            let est = pred.mean_var()?;
            let denom = est.sigma + epsilon;
            if denom <= 0.0 {
                return Err(Error::DegenerateDifficulty);
            }
            Ok((est.mu - y).abs() / denom)
        }
        Measure::Standardized { epsilon } => {
            let est = pred.mean_var()?;
            let denom = est.sigma + epsilon;
            if denom <= 0.0 {
                return Err(Error::DegenerateDifficulty);
            }
            Ok((y - est.mu) / denom)
        }
    }
}

/// All y whose score does not exceed the critical value.
pub fn invert(measure: &Measure, pred: &Prediction, a_star: f64) -> Result<Interval> {
    match measure {
        Measure::Standardized { .. } => Err(Error::DiagnosticOnly),
        Measure::Residual => {
            let est = pred.mean_var()?;
            if a_star.is_infinite() && a_star > 0.0 {
                return Ok(Interval::full());
            }
            Ok(Interval::new(est.mu - a_star, est.mu + a_star))
        }
        Measure::Interval => {
            let band = pred.band()?;
            if a_star.is_infinite() && a_star > 0.0 {
                return Ok(Interval::full());
            }
            Ok(Interval::new(band.y_minus - a_star, band.y_plus + a_star))
        }
        Measure::Normalized { epsilon } => {
            let est = pred.mean_var()?;
            if a_star.is_infinite() && a_star > 0.0 {
                return Ok(Interval::full());
            }
            let half = a_star * (est.sigma + epsilon);
            Ok(Interval::new(est.mu - half, est.mu + half))
        }
    }
}

/// Both sides of the band-score identity
/// max(y_minus - y, y - y_plus) = |mu - y| - z^alpha sigma
/// for the parametric normal band; used as a test oracle.
pub fn interval_identity_check(est: &MeanVarEstimate, alpha: f64, y: f64) -> (f64, f64) {
    let band = mv_interval(est, alpha);
    let lhs = (band.y_minus - y).max(y - band.y_plus);
    let z = normal_quantile(1.0 - alpha / 2.0);
    let rhs = (est.mu - y).abs() - z * est.sigma;
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn mv(mu: f64, sigma: f64) -> Prediction {
        Prediction::MeanVar(MeanVarEstimate::new(mu, sigma))
    }

    fn band(lo: f64, hi: f64) -> Prediction {
        Prediction::Band(IntervalEstimate {
            y_minus: lo,
            y_plus: hi,
        })
    }

    #[test]
    fn residual_score() {
        assert_eq!(score(&Measure::Residual, &mv(3.0, 1.0), 3.0).unwrap(), 0.0);
        assert_eq!(score(&Measure::Residual, &mv(3.0, 1.0), 5.5).unwrap(), 2.5);
    }

    #[test]
    fn interval_score_signs() {
        let m = Measure::Interval;
        assert_eq!(score(&m, &band(1.0, 4.0), 5.0).unwrap(), 1.0);
        assert_eq!(score(&m, &band(1.0, 4.0), 2.0).unwrap(), -1.0);
    }

    #[test]
    fn normalized_score() {
        let m = Measure::Normalized { epsilon: 0.0 };
        assert_eq!(score(&m, &mv(0.0, 2.0), 3.0).unwrap(), 1.5);
    }

    #[test]
    fn zero_denominator_is_degenerate() {
        let m = Measure::Normalized { epsilon: 0.0 };
        assert!(matches!(
            score(&m, &mv(0.0, 0.0), 1.0),
            Err(Error::DegenerateDifficulty)
        ));
    }

    #[test]
    fn invert_examples() {
        let iv = invert(&Measure::Residual, &mv(2.0, 1.0), 0.5).unwrap();
        assert_eq!((iv.lower(), iv.upper()), (1.5, 2.5));

        let iv = invert(&Measure::Normalized { epsilon: 0.0 }, &mv(2.0, 0.5), 1.8).unwrap();
        assert!((iv.lower() - 1.1).abs() < 1e-12);
        assert!((iv.upper() - 2.9).abs() < 1e-12);

        // Negative critical scores shrink bands.
        let iv = invert(&Measure::Interval, &band(1.0, 4.0), -0.25).unwrap();
        assert_eq!((iv.lower(), iv.upper()), (1.25, 3.75));

        let full = invert(&Measure::Residual, &mv(0.0, 1.0), f64::INFINITY).unwrap();
        assert_eq!(full, Interval::full());
    }

    #[test]
    fn standardized_is_not_invertible() {
        assert!(matches!(
            invert(&Measure::standardized(), &mv(0.0, 1.0), 1.0),
            Err(Error::DiagnosticOnly)
        ));
    }

    #[test]
    fn membership_score_duality_on_random_grids() {
        let mut rng = RngStream::new(123, 0);
        let measures = [
            Measure::Residual,
            Measure::Interval,
            Measure::Normalized { epsilon: 1e-8 },
        ];
        for _ in 0..400 {
            let est = MeanVarEstimate::new(rng.uniform(-5.0, 5.0), rng.uniform(0.01, 3.0));
            let alpha = rng.uniform(0.02, 0.5);
            for measure in &measures {
                let pred = prediction_for(measure, &est, alpha);
                let a_star = rng.uniform(-2.0, 4.0);
                let iv = invert(measure, &pred, a_star).unwrap();
                for _ in 0..25 {
                    let y = rng.uniform(-12.0, 12.0);
                    let s = score(measure, &pred, y).unwrap();
                    assert_eq!(
                        iv.contains(y),
                        s <= a_star,
                        "{measure:?} a*={a_star} y={y} s={s} iv=[{}, {}]",
                        iv.lower(),
                        iv.upper()
                    );
                }
            }
        }
    }

    #[test]
    fn identity_check_examples() {
        let z90 = normal_quantile(0.95);
        let (lhs, rhs) = interval_identity_check(&MeanVarEstimate::new(0.0, 1.0), 0.1, 2.0);
        assert!((lhs - (2.0 - z90)).abs() < 1e-12);
        assert!((lhs - rhs).abs() < 1e-12);

        // sigma = 0 collapses to the residual.
        let (lhs, rhs) = interval_identity_check(&MeanVarEstimate::new(1.0, 0.0), 0.2, 4.0);
        assert_eq!(lhs, 3.0);
        assert_eq!(rhs, 3.0);

        // At the center the score is -z sigma.
        let (lhs, rhs) = interval_identity_check(&MeanVarEstimate::new(2.0, 1.5), 0.1, 2.0);
        assert!((lhs + z90 * 1.5).abs() < 1e-12);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identity_holds_on_random_inputs() {
        let mut rng = RngStream::new(7, 3);
        for _ in 0..10_000 {
            let est = MeanVarEstimate::new(rng.uniform(-10.0, 10.0), rng.uniform(0.0, 5.0));
            let alpha = rng.uniform(0.01, 0.99);
            let y = rng.uniform(-20.0, 20.0);
            let (lhs, rhs) = interval_identity_check(&est, alpha, y);
            assert!((lhs - rhs).abs() <= 1e-12, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn measure_names_round_trip() {
        for name in ["res", "int", "norm", "std"] {
            assert_eq!(Measure::parse(name).unwrap().name(), name);
        }
        assert!(Measure::parse("bogus").is_err());
    }

    #[test]
    fn measure_json() {
        let m: Measure = serde_json::from_str(r#"{"kind":"norm","epsilon":1e-6}"#).unwrap();
        assert_eq!(m, Measure::Normalized { epsilon: 1e-6 });
        let m: Measure = serde_json::from_str(r#"{"kind":"res"}"#).unwrap();
        assert_eq!(m, Measure::Residual);
    }
}
