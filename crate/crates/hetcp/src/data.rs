//! Core data types: observations, datasets, intervals and dataset splitting.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::synthetic::OracleTruth;

/// A single (feature vector, response) pair. All coordinates are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self> {
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0 });
        }
        Ok(Observation { x, y })
    }
}

/// An ordered collection of observations sharing one feature dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    dim: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let dim = match observations.first() {
            Some(obs) => obs.x.len(),
            None => return Err(Error::EmptyDataset),
        };
        for (row, obs) in observations.iter().enumerate() {
            if obs.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: obs.x.len(),
                });
            }
            if !obs.y.is_finite() || obs.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: row + 1 });
            }
        }
        Ok(Dataset { observations, dim })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Dataset restricted to the given indices (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let observations = indices
            .iter()
            .map(|&i| self.observations[i].clone())
            .collect();
        Dataset::new(observations)
    }

    /// Splits into (train, calibration, test) by a seeded shuffle.
    ///
    /// The test set takes `test_fraction` of the data (rounded, clamped so no
    /// part is empty); the calibration set takes `calibration_fraction_of_train`
    /// of the remainder. The three parts are disjoint and cover the input.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
        spec.validate()?;
        let n = self.len();
        if n < 4 {
            return Err(Error::DatasetTooSmall { n, min: 4 });
        }
        let n_test = ((spec.test_fraction * n as f64).round() as usize).clamp(1, n - 2);
        let n_rest = n - n_test;
        let n_calib =
            ((spec.calibration_fraction_of_train * n_rest as f64).round() as usize).clamp(1, n_rest - 1);
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = RngStream::new(spec.seed, SPLIT_STREAM);
        rng.shuffle(&mut indices);
        let test = self.subset(&indices[..n_test])?;
        let calib = self.subset(&indices[n_test..n_test + n_calib])?;
        let train = self.subset(&indices[n_test + n_calib..])?;
        Ok((train, calib, test))
    }
}

const SPLIT_STREAM: u64 = 0x51;

/// How to split a dataset into train / calibration / test parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub calibration_fraction_of_train: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(test_fraction: f64, calibration_fraction_of_train: f64, seed: u64) -> Self {
        SplitSpec {
            test_fraction,
            calibration_fraction_of_train,
            seed,
        }
    }

    /// 20% test, calibration = half of the remaining training data.
    pub fn with_defaults(seed: u64) -> Self {
        SplitSpec::new(0.2, 0.5, seed)
    }

    fn validate(&self) -> Result<()> {
        for value in [self.test_fraction, self.calibration_fraction_of_train] {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::InvalidFraction { value });
            }
        }
        Ok(())
    }
}

/// A closed prediction interval; endpoints may be infinite.
///
/// The canonical empty interval is (+inf, -inf): it contains nothing and has
/// zero width. It arises only when a negative interval-measure critical score
/// shrinks a prediction band past its midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lower: f64,
    upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        if lower <= upper {
            Interval { lower, upper }
        } else {
            Interval::empty()
        }
    }

    pub fn full() -> Self {
        Interval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn empty() -> Self {
        Interval {
            lower: f64::INFINITY,
            upper: f64::NEG_INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.lower > self.upper
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    /// Width; zero when empty, `+inf` when either endpoint is infinite.
    pub fn width(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.upper - self.lower
        }
    }
}

/// Reads a dataset from CSV with header `x0,..,x{d-1},y` and optional
/// trailing `mu,sigma` truth columns. Rows with non-finite values are
/// rejected with their 1-based row number.
pub fn read_csv(path: &Path) -> Result<(Dataset, Option<Vec<OracleTruth>>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let y_pos = names
        .iter()
        .position(|&h| h == "y")
        .ok_or_else(|| Error::InvalidParameter("csv header must contain a `y` column".into()))?;
    let has_truth = names.contains(&"mu") && names.contains(&"sigma");
    let mu_pos = names.iter().position(|&h| h == "mu");
    let sigma_pos = names.iter().position(|&h| h == "sigma");
    let feature_pos: Vec<usize> = (0..names.len())
        .filter(|&i| i != y_pos && Some(i) != mu_pos && Some(i) != sigma_pos)
        .collect();

    let mut observations = Vec::new();
    let mut truths = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            let field = record
                .get(i)
                .ok_or(Error::NonFinite { row })?
                .trim();
            let v: f64 = field.parse().map_err(|_| Error::NonFinite { row })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row });
            }
            Ok(v)
        };
        let x: Vec<f64> = feature_pos
            .iter()
            .map(|&i| parse(i))
            .collect::<Result<_>>()?;
        let y = parse(y_pos)?;
        observations.push(Observation { x, y });
        if has_truth {
            truths.push(OracleTruth {
                mu: parse(mu_pos.unwrap())?,
                sigma: parse(sigma_pos.unwrap())?,
            });
        }
    }
    let dataset = Dataset::new(observations)?;
    Ok((dataset, if has_truth { Some(truths) } else { None }))
}

/// Reads feature rows from CSV; the `y`, `mu` and `sigma` columns are
/// optional and ignored when present. Used by prediction on fresh inputs.
pub fn read_features_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let feature_pos: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != "y" && *h != "mu" && *h != "sigma")
        .map(|(i, _)| i)
        .collect();
    if feature_pos.is_empty() {
        return Err(Error::InvalidParameter(
            "csv contains no feature columns".into(),
        ));
    }
    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        let x: Vec<f64> = feature_pos
            .iter()
            .map(|&i| {
                let v: f64 = record
                    .get(i)
                    .ok_or(Error::NonFinite { row })?
                    .trim()
                    .parse()
                    .map_err(|_| Error::NonFinite { row })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite { row })
                }
            })
            .collect::<Result<_>>()?;
        rows.push(x);
    }
    Ok(rows)
}

/// Writes a dataset as CSV, optionally with `mu,sigma` truth columns.
pub fn write_csv(path: &Path, dataset: &Dataset, truths: Option<&[OracleTruth]>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<String> = (0..dataset.dim()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    if truths.is_some() {
        header.push("mu".into());
        header.push("sigma".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, obs) in dataset.iter().enumerate() {
        let mut fields: Vec<String> = obs.x.iter().map(|v| format!("{v}")).collect();
        fields.push(format!("{}", obs.y));
        if let Some(truths) = truths {
            fields.push(format!("{}", truths[i].mu));
            fields.push(format!("{}", truths[i].sigma));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}
