//! Distribution-free prediction intervals for heteroskedastic regression.
//!
//! This crate implements split conformal prediction with the residual,
//! interval, normalized and standardized nonconformity measures, Mondrian
//! (class-conditional) calibration over uncertainty-derived taxonomies,
//! synthetic location-scale data generators with exact oracles, a
//! misspecification harness, and statistical diagnostics that predict
//! whether a marginal conformal predictor will be conditionally valid.
//!
//! # Module map
//!
//! - [`data`]: observations, datasets, intervals, splitting, CSV I/O
//! - [`rng`]: deterministic counter-based random streams
//! - [`quantile`]: the finite-set quantile behind critical scores
//! - [`estimators`]: oracle / k-NN / constant estimators and
//!   misspecification wrappers
//! - [`nonconformity`]: the four measures and their interval inversions
//! - [`taxonomy`]: feature thresholds and equal-frequency difficulty bins
//! - [`conformal`]: global and Mondrian calibration and prediction
//! - [`synthetic`]: data-generating processes and pivotal families
//! - [`metrics`]: marginal and per-class coverage/width reports
//! - [`diagnostics`]: ECDF export, Harrell-Davis bootstrap test, KS test
//! - [`cli`]: the command implementations behind the `hetcp` binary
//!
//! # Determinism
//!
//! Every stochastic step draws from [`rng::RngStream`], a SplitMix64-style
//! counter generator, so any (seed, stream) pair reproduces bit-identical
//! results on every platform. Normal draws go through the inverse CDF.

pub mod cli;
pub mod conformal;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod estimators;
mod jsonf;
pub mod metrics;
pub mod nonconformity;
pub mod quantile;
pub mod rng;
pub mod synthetic;
pub mod taxonomy;

pub use conformal::{calibrate, calibrate_mondrian, CalibratedPredictor, Critical};
pub use data::{read_csv, write_csv, Dataset, Interval, Observation, SplitSpec};
pub use error::{Error, Result};
pub use estimators::{
    apply_misspec, mv_interval, EstimatorKind, EstimatorSpec, FittedEstimator, IntervalEstimate,
    MeanVarEstimate, MisspecOp,
};
pub use metrics::{aggregate, evaluate, AggregateReport, EvalReport};
pub use nonconformity::{
    interval_identity_check, invert, prediction_for, score, Measure, Prediction, Score,
};
pub use quantile::{finite_quantile, inflated_level};
pub use rng::RngStream;
pub use synthetic::{
    moments_check, sample_pivot, Generator, GeneratorKind, GeneratorSpec, OracleTruth,
    PivotalFamily,
};
pub use taxonomy::{fit_equal_frequency_bins, BinEdges, Taxonomy, TaxonomySpec};
