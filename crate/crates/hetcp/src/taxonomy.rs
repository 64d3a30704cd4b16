//! Taxonomy functions: map feature vectors to a finite set of class ids,
//! either by thresholding a coordinate or by binning a difficulty estimate.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Ascending bin edges defining `len + 1` half-open cells
/// (-inf, e_0), [e_0, e_1), ..., [e_last, +inf).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateBinning);
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::DegenerateBinning);
        }
        Ok(BinEdges { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_classes(&self) -> usize {
        self.edges.len() + 1
    }

    /// Index of the cell containing `value`; the upper cells are left-closed,
    /// the last cell extends to +inf.
    pub fn classify(&self, value: f64) -> usize {
        self.edges.partition_point(|&e| e <= value)
    }
}

/// Equal-frequency bin edges at the j/n_bins empirical quantiles of `values`
/// (right-continuous convention, so each edge is the first value of the next
/// class and fit-data class populations differ by at most one).
pub fn fit_equal_frequency_bins(values: &[f64], n_bins: usize) -> Result<BinEdges> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be >= 1".into()));
    }
    if values.len() < n_bins {
        return Err(Error::DegenerateBinning);
    }
    if n_bins == 1 {
        return BinEdges::new(Vec::new());
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("values must not contain NaN"));
    let n = sorted.len();
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[0] < w[1] {
            distinct += 1;
        }
    }
    if distinct < n_bins {
        return Err(Error::DegenerateBinning);
    }
    let mut edges = Vec::with_capacity(n_bins - 1);
    for j in 1..n_bins {
        let m = (j * n).div_ceil(n_bins);
        edges.push(sorted[m.min(n - 1)]);
    }
    let edges = BinEdges::new(edges)?;
    // Ties at the low end can starve the first cell.
    if sorted[0] >= edges.edges[0] {
        return Err(Error::DegenerateBinning);
    }
    Ok(edges)
}

/// Taxonomy configuration as it appears in CLI/JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaxonomySpec {
    /// Class 1 when x[dim] lies in [0, xi], class 0 otherwise.
    FeatureThreshold { dim: usize, xi: f64 },
    /// Equal-frequency bins over the difficulty estimate sigma_hat.
    DifficultyBins { n_bins: usize },
}

impl TaxonomySpec {
    /// Fits the taxonomy; difficulty binning needs the sigma_hat values of
    /// the split the edges are fitted on (the calibration split by default).
    pub fn fit(&self, sigma_hats: &[f64]) -> Result<Taxonomy> {
        match self {
            TaxonomySpec::FeatureThreshold { dim, xi } => Ok(Taxonomy::FeatureThreshold {
                dim: *dim,
                xi: *xi,
            }),
            TaxonomySpec::DifficultyBins { n_bins } => Ok(Taxonomy::DifficultyBins {
                edges: fit_equal_frequency_bins(sigma_hats, *n_bins)?,
            }),
        }
    }
}

/// A fitted taxonomy; classification depends on the features (and the
/// feature-derived difficulty estimate) only, never on the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Taxonomy {
    FeatureThreshold { dim: usize, xi: f64 },
    DifficultyBins { edges: BinEdges },
}

impl Taxonomy {
    pub fn n_classes(&self) -> usize {
        match self {
            Taxonomy::FeatureThreshold { .. } => 2,
            Taxonomy::DifficultyBins { edges } => edges.n_classes(),
        }
    }

    /// Class id of a point; `sigma_hat` is the difficulty estimate at x and
    /// is ignored by feature-threshold taxonomies.
    pub fn classify(&self, x: &[f64], sigma_hat: f64) -> usize {
        match self {
            Taxonomy::FeatureThreshold { dim, xi } => {
                let v = x.get(*dim).copied().unwrap_or(f64::NAN);
                usize::from(v >= 0.0 && v <= *xi)
            }
            Taxonomy::DifficultyBins { edges } => edges.classify(sigma_hat),
        }
    }

    /// Class counts over a dataset; `sigma_hats` must parallel the dataset
    /// for difficulty taxonomies and may be empty for feature thresholds.
    pub fn class_histogram(&self, data: &Dataset, sigma_hats: &[f64]) -> Result<Vec<usize>> {
        if matches!(self, Taxonomy::DifficultyBins { .. }) && sigma_hats.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                got: sigma_hats.len(),
            });
        }
        let mut counts = vec![0usize; self.n_classes()];
        for (i, obs) in data.iter().enumerate() {
            let sigma = sigma_hats.get(i).copied().unwrap_or(0.0);
            counts[self.classify(&obs.x, sigma)] += 1;
        }
        Ok(counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::rng::RngStream;

    #[test]
    fn equal_thirds_on_distinct_values() {
        let values: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let edges = fit_equal_frequency_bins(&values, 3).unwrap();
        // Each class receives exactly three of the fit values.
        let mut counts = vec![0usize; 3];
        for &v in &values {
            counts[edges.classify(v)] += 1;
        }
        assert_eq!(counts, vec![3, 3, 3]);
        assert_eq!(edges.classify(1.0), 0);
        assert_eq!(edges.classify(3.0), 0);
        assert_eq!(edges.classify(4.0), 1);
        assert_eq!(edges.classify(6.0), 1);
        assert_eq!(edges.classify(9.0), 2);
    }

    #[test]
    fn single_bin_has_no_edges() {
        let edges = fit_equal_frequency_bins(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(edges.n_classes(), 1);
        assert_eq!(edges.classify(-100.0), 0);
        assert_eq!(edges.classify(100.0), 0);
    }

    #[test]
    fn duplicated_quantiles_are_degenerate() {
        assert!(matches!(
            fit_equal_frequency_bins(&[1.0, 1.0, 1.0, 2.0], 3),
            Err(Error::DegenerateBinning)
        ));
        // Heavy ties at the bottom starve the first cell.
        assert!(matches!(
            fit_equal_frequency_bins(&[1.0, 1.0, 1.0, 1.0, 2.0, 3.0], 3),
            Err(Error::DegenerateBinning)
        ));
    }

    #[test]
    fn given_edges_boundary_convention() {
        // Cells around explicit edges [3, 6]: left-closed upper cells.
        let edges = BinEdges::new(vec![3.0, 6.0]).unwrap();
        assert_eq!(edges.classify(3.0), 1);
        assert_eq!(edges.classify(100.0), 2);
        assert_eq!(edges.classify(2.999), 0);
        assert_eq!(edges.classify(6.0), 2);
    }

    #[test]
    fn feature_threshold_classify() {
        let t = Taxonomy::FeatureThreshold { dim: 1, xi: 0.2 };
        assert_eq!(t.classify(&[0.7, 0.1], 0.0), 1);
        assert_eq!(t.classify(&[0.7, 0.5], 0.0), 0);
        assert_eq!(t.classify(&[0.7, -0.1], 0.0), 0);
    }

    #[test]
    fn histogram_sums_and_threshold_mass() {
        // Uniform [0,1]^2 with xi = 0.2: about 20% land in class 1.
        let mut rng = RngStream::new(4, 4);
        let n = 20_000;
        let observations = (0..n)
            .map(|_| Observation {
                x: vec![rng.next_f64(), rng.next_f64()],
                y: 0.0,
            })
            .collect();
        let data = Dataset::new(observations).unwrap();
        let t = Taxonomy::FeatureThreshold { dim: 1, xi: 0.2 };
        let counts = t.class_histogram(&data, &[]).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), n);
        let frac = counts[1] as f64 / n as f64;
        assert!((frac - 0.2).abs() < 0.01, "class-1 mass {frac}");
    }

    #[test]
    fn refit_frequencies_on_fresh_sample() {
        // Edges fitted on one sample keep near-equal mass on an i.i.d. one.
        let mut rng = RngStream::new(9, 1);
        let fit_values: Vec<f64> = (0..4000).map(|_| rng.normal().exp()).collect();
        let edges = fit_equal_frequency_bins(&fit_values, 4).unwrap();
        let n = 4000;
        let fresh: Vec<f64> = (0..n).map(|_| rng.normal().exp()).collect();
        let mut counts = vec![0usize; 4];
        for v in fresh {
            counts[edges.classify(v)] += 1;
        }
        let bound = 3.0 / (n as f64).sqrt();
        for &c in &counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.25).abs() < bound, "counts {counts:?}");
        }
    }

    #[test]
    fn classification_invariant_under_monotone_rescaling() {
        let values: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 4.0 + 5.0).collect();
        let edges = fit_equal_frequency_bins(&values, 5).unwrap();
        let rescaled =
            BinEdges::new(edges.edges().iter().map(|&e| 2.5 * e + 7.0).collect()).unwrap();
        for &v in &values {
            assert_eq!(edges.classify(v), rescaled.classify(2.5 * v + 7.0));
        }
        // A nonlinear strictly increasing map works too (values positive).
        let exp_edges = BinEdges::new(edges.edges().iter().map(|&e| e.exp()).collect()).unwrap();
        for &v in &values {
            assert_eq!(edges.classify(v), exp_edges.classify(v.exp()));
        }
    }

    #[test]
    fn taxonomy_spec_json() {
        let t: TaxonomySpec = serde_json::from_str(r#"{"kind":"difficulty_bins","n_bins":3}"#).unwrap();
        assert_eq!(t, TaxonomySpec::DifficultyBins { n_bins: 3 });
        let t: TaxonomySpec =
            serde_json::from_str(r#"{"kind":"feature_threshold","dim":1,"xi":0.2}"#).unwrap();
        assert_eq!(t, TaxonomySpec::FeatureThreshold { dim: 1, xi: 0.2 });
    }
}
