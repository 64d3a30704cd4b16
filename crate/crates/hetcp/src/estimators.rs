//! Mean/variance estimators: exact oracles for synthetic generators, a k-NN
//! estimator for real data, and the misspecification wrappers used to study
//! what happens when the estimates deviate from the truth.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::normal_quantile;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::synthetic::Generator;

/// Per-instance estimate of the conditional mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVarEstimate {
    pub mu: f64,
    pub sigma: f64,
}

impl MeanVarEstimate {
    pub fn new(mu: f64, sigma: f64) -> Self {
        debug_assert!(sigma >= 0.0);
        MeanVarEstimate { mu, sigma }
    }
}

/// Symmetric parametric interval derived from a mean/variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub y_minus: f64,
    pub y_plus: f64,
}

/// [mu - z sigma, mu + z sigma] with z the (1 - alpha/2) normal quantile.
pub fn mv_interval(est: &MeanVarEstimate, alpha: f64) -> IntervalEstimate {
    let z = normal_quantile(1.0 - alpha / 2.0);
    IntervalEstimate {
        y_minus: est.mu - z * est.sigma,
        y_plus: est.mu + z * est.sigma,
    }
}

/// A single estimate distortion; wrappers are applied in configured order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MisspecOp {
    /// sigma <- max(sigma + e, 0), e ~ N(0, lambda^2)
    SigmaShift { lambda: f64 },
    /// sigma <- factor * sigma
    SigmaScale { factor: f64 },
    /// mu <- mu + e, e ~ N(0, lambda^2)
    MuShiftConst { lambda: f64 },
    /// mu <- mu + e, e ~ N(0, lambda^2 sigma^2)
    MuShiftProp { lambda: f64 },
    /// sigma^2 <- 5 (sigma^2 - 0.5)^2 + 0.5, mu unchanged
    QuadraticSigma,
}

impl MisspecOp {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            MisspecOp::SigmaShift { lambda }
            | MisspecOp::MuShiftConst { lambda }
            | MisspecOp::MuShiftProp { lambda } => lambda.is_finite() && *lambda >= 0.0,
            MisspecOp::SigmaScale { factor } => factor.is_finite() && *factor > 0.0,
            MisspecOp::QuadraticSigma => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "misspecification parameter out of range: {self:?}"
            )))
        }
    }
}

/// Applies one distortion to an estimate; random shifts draw from `rng`.
pub fn apply_misspec(op: &MisspecOp, est: MeanVarEstimate, rng: &mut RngStream) -> MeanVarEstimate {
    match op {
        MisspecOp::SigmaShift { lambda } => {
            let eps = lambda * rng.normal();
            MeanVarEstimate::new(est.mu, (est.sigma + eps).max(0.0))
        }
        MisspecOp::SigmaScale { factor } => MeanVarEstimate::new(est.mu, factor * est.sigma),
        MisspecOp::MuShiftConst { lambda } => {
            let eps = lambda * rng.normal();
            MeanVarEstimate::new(est.mu + eps, est.sigma)
        }
        MisspecOp::MuShiftProp { lambda } => {
            let eps = lambda * est.sigma * rng.normal();
            MeanVarEstimate::new(est.mu + eps, est.sigma)
        }
        MisspecOp::QuadraticSigma => {
            let s2 = est.sigma * est.sigma;
            let distorted = 5.0 * (s2 - 0.5) * (s2 - 0.5) + 0.5;
            MeanVarEstimate::new(est.mu, distorted.sqrt())
        }
    }
}

/// Which base estimator to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// The generator's true (mu, sigma); only available for synthetic data.
    Oracle,
    /// k-nearest-neighbour mean and unbiased sample standard deviation over
    /// standardized features.
    Knn { k: usize },
    /// A fixed estimate, independent of the features.
    Constant { mu: f64, sigma: f64 },
}

/// Estimator configuration: a base estimator plus ordered distortions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    #[serde(flatten)]
    pub kind: EstimatorKind,
    #[serde(default)]
    pub wrappers: Vec<MisspecOp>,
}

impl EstimatorSpec {
    pub fn oracle() -> Self {
        EstimatorSpec {
            kind: EstimatorKind::Oracle,
            wrappers: Vec::new(),
        }
    }

    pub fn knn(k: usize) -> Self {
        EstimatorSpec {
            kind: EstimatorKind::Knn { k },
            wrappers: Vec::new(),
        }
    }

    pub fn constant(mu: f64, sigma: f64) -> Self {
        EstimatorSpec {
            kind: EstimatorKind::Constant { mu, sigma },
            wrappers: Vec::new(),
        }
    }

    pub fn with_wrappers(mut self, wrappers: Vec<MisspecOp>) -> Self {
        self.wrappers = wrappers;
        self
    }

    /// Fits the estimator. The oracle needs its generator attached; k-NN
    /// needs a training set.
    pub fn fit(
        &self,
        train: Option<&Dataset>,
        generator: Option<&Generator>,
    ) -> Result<FittedEstimator> {
        for w in &self.wrappers {
            w.validate()?;
        }
        let base = match &self.kind {
            EstimatorKind::Oracle => {
                let generator = generator.ok_or(Error::Unfitted(
                    "oracle estimator requires an attached generator",
                ))?;
                FittedBase::Oracle(generator.clone())
            }
            EstimatorKind::Knn { k } => {
                if *k == 0 {
                    return Err(Error::InvalidParameter("knn k must be >= 1".into()));
                }
                let train =
                    train.ok_or(Error::Unfitted("knn estimator requires a training set"))?;
                FittedBase::Knn(KnnModel::fit(train, *k)?)
            }
            EstimatorKind::Constant { mu, sigma } => {
                if !mu.is_finite() || !sigma.is_finite() || *sigma < 0.0 {
                    return Err(Error::InvalidParameter(
                        "constant estimator needs finite mu and sigma >= 0".into(),
                    ));
                }
                FittedBase::Constant {
                    mu: *mu,
                    sigma: *sigma,
                }
            }
        };
        Ok(FittedEstimator {
            base,
            wrappers: self.wrappers.clone(),
        })
    }
}

/// k-NN regression model over standardized features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    feat_mean: Vec<f64>,
    feat_scale: Vec<f64>,
    points: Vec<(Vec<f64>, f64)>,
}

impl KnnModel {
    fn fit(train: &Dataset, k: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = train.dim();
        let n = train.len() as f64;
        let mut feat_mean = vec![0.0; dim];
        for obs in train.iter() {
            for (m, &v) in feat_mean.iter_mut().zip(&obs.x) {
                *m += v / n;
            }
        }
        let mut feat_var = vec![0.0; dim];
        for obs in train.iter() {
            for ((var, &m), &v) in feat_var.iter_mut().zip(&feat_mean).zip(&obs.x) {
                *var += (v - m) * (v - m) / n;
            }
        }
        let feat_scale: Vec<f64> = feat_var
            .iter()
            .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        let points = train
            .iter()
            .map(|obs| {
                let z: Vec<f64> = obs
                    .x
                    .iter()
                    .zip(&feat_mean)
                    .zip(&feat_scale)
                    .map(|((&v, &m), &s)| (v - m) / s)
                    .collect();
                (z, obs.y)
            })
            .collect();
        Ok(KnnModel {
            k: k.min(train.len()),
            feat_mean,
            feat_scale,
            points,
        })
    }

    fn predict(&self, x: &[f64]) -> Result<MeanVarEstimate> {
        if x.len() != self.feat_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feat_mean.len(),
                got: x.len(),
            });
        }
        let z: Vec<f64> = x
            .iter()
            .zip(&self.feat_mean)
            .zip(&self.feat_scale)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect();
        // Distance ties break on the response value, so predictions depend
        // only on the training multiset, not its order.
        let mut dists: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, (p, _))| {
                let d2: f64 = p.iter().zip(&z).map(|(&a, &b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        dists.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(self.points[a.1].1.partial_cmp(&self.points[b.1].1).unwrap())
        });
        let neighbors = &dists[..self.k];
        let mean: f64 = neighbors.iter().map(|&(_, i)| self.points[i].1).sum::<f64>() / self.k as f64;
        let sigma = if self.k > 1 {
            let ss: f64 = neighbors
                .iter()
                .map(|&(_, i)| {
                    let d = self.points[i].1 - mean;
                    d * d
                })
                .sum();
            (ss / (self.k - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(MeanVarEstimate::new(mean, sigma))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum FittedBase {
    Oracle(Generator),
    Knn(KnnModel),
    Constant { mu: f64, sigma: f64 },
}

/// A fitted estimator; immutable and shareable across threads.
///
/// Random misspecification wrappers draw one epsilon per query from the
/// caller-provided stream, so evaluating a dataset with per-index substreams
/// is reproducible regardless of evaluation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedEstimator {
    base: FittedBase,
    wrappers: Vec<MisspecOp>,
}

impl FittedEstimator {
    /// Point estimate with wrappers applied; `noise` drives random wrappers.
    pub fn predict(&self, x: &[f64], noise: &mut RngStream) -> Result<MeanVarEstimate> {
        let mut est = self.predict_base(x)?;
        for op in &self.wrappers {
            est = apply_misspec(op, est, noise);
        }
        Ok(est)
    }

    /// Base estimate before any misspecification wrapper.
    pub fn predict_base(&self, x: &[f64]) -> Result<MeanVarEstimate> {
        match &self.base {
            FittedBase::Oracle(generator) => {
                let truth = generator.truth(x)?;
                Ok(MeanVarEstimate::new(truth.mu, truth.sigma))
            }
            FittedBase::Knn(model) => model.predict(x),
            FittedBase::Constant { mu, sigma } => Ok(MeanVarEstimate::new(*mu, *sigma)),
        }
    }

    /// Estimates for a whole dataset, one substream per point index.
    pub fn predict_dataset(&self, data: &Dataset, base: &RngStream) -> Result<Vec<MeanVarEstimate>> {
        data.iter()
            .enumerate()
            .map(|(i, obs)| {
                let mut noise = base.substream(i as u64);
                self.predict(&obs.x, &mut noise)
            })
            .collect()
    }

    pub fn wrappers(&self) -> &[MisspecOp] {
        &self.wrappers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::synthetic::GeneratorSpec;

    fn rng() -> RngStream {
        RngStream::new(7, 0)
    }

    #[test]
    fn constant_estimator() {
        let est = EstimatorSpec::constant(0.0, 1.0).fit(None, None).unwrap();
        let got = est.predict(&[3.0, -4.0], &mut rng()).unwrap();
        assert_eq!(got, MeanVarEstimate::new(0.0, 1.0));
    }

    #[test]
    fn oracle_on_toy_model() {
        // Constant coefficient of variation: sigma = 0.1 mu.
        let generator = GeneratorSpec::toy_cv(1, 10, 3).build().unwrap();
        let est = EstimatorSpec::oracle().fit(None, Some(&generator)).unwrap();
        let got = est.predict(&[10.0], &mut rng()).unwrap();
        assert!((got.mu - 10.0).abs() < 1e-12);
        assert!((got.sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_without_generator_is_unfitted() {
        assert!(matches!(
            EstimatorSpec::oracle().fit(None, None),
            Err(Error::Unfitted(_))
        ));
    }

    #[test]
    fn knn_hand_example() {
        // Three points, k = 3: mu is the mean, sigma the unbiased sample std.
        let data = Dataset::new(vec![
            Observation { x: vec![0.0], y: 1.0 },
            Observation { x: vec![1.0], y: 2.0 },
            Observation { x: vec![2.0], y: 3.0 },
        ])
        .unwrap();
        let est = EstimatorSpec::knn(3).fit(Some(&data), None).unwrap();
        let got = est.predict(&[1.0], &mut rng()).unwrap();
        assert!((got.mu - 2.0).abs() < 1e-12);
        assert!((got.sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn knn_is_invariant_to_training_order() {
        let mut observations: Vec<Observation> = (0..40)
            .map(|i| Observation {
                x: vec![(i % 7) as f64, (i % 5) as f64],
                y: (i as f64).sin() * 3.0,
            })
            .collect();
        let forward = Dataset::new(observations.clone()).unwrap();
        observations.reverse();
        let reversed = Dataset::new(observations).unwrap();
        let a = EstimatorSpec::knn(5).fit(Some(&forward), None).unwrap();
        let b = EstimatorSpec::knn(5).fit(Some(&reversed), None).unwrap();
        for q in [[0.0, 0.0], [3.0, 2.0], [6.5, 4.5]] {
            let ya = a.predict(&q, &mut rng()).unwrap();
            let yb = b.predict(&q, &mut rng()).unwrap();
            assert!((ya.mu - yb.mu).abs() < 1e-12);
            assert!((ya.sigma - yb.sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_sigma_fixed_point_and_arithmetic() {
        let mut r = rng();
        // sigma^2 = 0.5 is the fixed point.
        let at_half = apply_misspec(
            &MisspecOp::QuadraticSigma,
            MeanVarEstimate::new(1.0, 0.5f64.sqrt()),
            &mut r,
        );
        assert!((at_half.sigma * at_half.sigma - 0.5).abs() < 1e-12);
        // sigma^2 = 1 maps to 1.75.
        let at_one = apply_misspec(
            &MisspecOp::QuadraticSigma,
            MeanVarEstimate::new(1.0, 1.0),
            &mut r,
        );
        assert!((at_one.sigma * at_one.sigma - 1.75).abs() < 1e-12);
        assert_eq!(at_one.mu, 1.0);
    }

    #[test]
    fn quadratic_sigma_is_deterministic() {
        let est = MeanVarEstimate::new(0.3, 1.7);
        let a = apply_misspec(&MisspecOp::QuadraticSigma, est, &mut rng());
        let b = apply_misspec(&MisspecOp::QuadraticSigma, est, &mut RngStream::new(99, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_scale() {
        let got = apply_misspec(
            &MisspecOp::SigmaScale { factor: 5.0 },
            MeanVarEstimate::new(0.0, 2.0),
            &mut rng(),
        );
        assert_eq!(got, MeanVarEstimate::new(0.0, 10.0));
    }

    #[test]
    fn sigma_shift_clips_at_zero() {
        let mut r = rng();
        for _ in 0..200 {
            let got = apply_misspec(
                &MisspecOp::SigmaShift { lambda: 5.0 },
                MeanVarEstimate::new(0.0, 0.1),
                &mut r,
            );
            assert!(got.sigma >= 0.0);
        }
    }

    #[test]
    fn mv_interval_examples() {
        let iv = mv_interval(&MeanVarEstimate::new(0.0, 1.0), 0.1);
        assert!((iv.y_plus - 1.644_853_626_951_472_2).abs() < 1e-10);
        assert!((iv.y_minus + 1.644_853_626_951_472_2).abs() < 1e-10);

        let degenerate = mv_interval(&MeanVarEstimate::new(5.0, 0.0), 0.37);
        assert_eq!((degenerate.y_minus, degenerate.y_plus), (5.0, 5.0));

        let scaled = mv_interval(&MeanVarEstimate::new(2.0, 0.5), 0.1);
        assert!((scaled.y_minus - (2.0 - 0.822_426_813_475_736_1)).abs() < 1e-10);
        assert!((scaled.y_plus - (2.0 + 0.822_426_813_475_736_1)).abs() < 1e-10);
    }

    #[test]
    fn estimator_spec_json_round_trip() {
        let json = r#"{"kind":"oracle","wrappers":[{"op":"sigma_shift","lambda":0.1}]}"#;
        let spec: EstimatorSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.kind, EstimatorKind::Oracle);
        assert_eq!(spec.wrappers, vec![MisspecOp::SigmaShift { lambda: 0.1 }]);
        let back = serde_json::to_string(&spec).unwrap();
        let again: EstimatorSpec = serde_json::from_str(&back).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn per_point_noise_is_order_independent() {
        let generator = GeneratorSpec::toy_cv(2, 64, 5).build().unwrap();
        let (data, _) = generator.generate().unwrap();
        let spec = EstimatorSpec::oracle().with_wrappers(vec![MisspecOp::SigmaShift { lambda: 0.3 }]);
        let est = spec.fit(None, Some(&generator)).unwrap();
        let base = RngStream::new(11, 44);
        let all = est.predict_dataset(&data, &base).unwrap();
        // Point 17 evaluated on its own must match the batch result.
        let mut noise = base.substream(17);
        let single = est.predict(&data.get(17).x, &mut noise).unwrap();
        assert_eq!(all[17], single);
    }
}
