//! Command implementations behind the `hetcp` binary.
//!
//! Every command is deterministic given `--seed`: reruns produce identical
//! output files. Outputs are CSV (long format, one observation per row) and
//! JSON summaries; `--json` additionally prints the summary to stdout.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conformal::{calibrate, calibrate_mondrian, CalibratedPredictor};
use crate::data::{read_csv, read_features_csv, write_csv, Dataset, SplitSpec};
use crate::diagnostics::{bootstrap_quantile_diff, ecdf_by_class, ks_two_sample};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, MisspecOp};
use crate::metrics::{aggregate, evaluate, AggregateReport, EvalReport};
use crate::nonconformity::Measure;
use crate::rng::RngStream;
use crate::synthetic::{Generator, GeneratorKind, GeneratorSpec, PivotalFamily};
use crate::taxonomy::TaxonomySpec;

// Stream ids for the run phases, so calibration, evaluation and diagnostics
// never share draws.
const STREAM_CALIBRATION: u64 = 0xCA;
const STREAM_EVALUATION: u64 = 0xE7;
const STREAM_BOOTSTRAP: u64 = 0xB0;

// Fixed protocol behind `hetcp table`: the constant-coefficient-of-variation
// toy process with features uniform on (0, 2 sqrt(50))^14, so the noise
// variance has median 0.5 and ~15% relative spread across the instance
// space. Three equal-frequency variance classes, alpha = 0.1.
const TABLE_DIM: usize = 14;
const TABLE_UPPER: f64 = 14.142135623730951;
const TABLE_CALIB: usize = 7999;

/// Conformal prediction intervals for heteroskedastic regression.
#[derive(Debug, Parser)]
#[command(name = "hetcp", version, about)]
pub struct Cli {
    /// JSON run-configuration file; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print a machine-readable JSON summary to stdout.
    #[arg(long, global = true)]
    pub json: bool,

    /// Directory for output files (default: $HETCP_OUT_DIR or `.`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV (with mu,sigma truth columns).
    Synth(SynthArgs),
    /// Split a dataset, fit an estimator and calibrate a conformal predictor.
    Calibrate(CalibrateArgs),
    /// Predict intervals for new feature rows with a saved predictor.
    Predict(PredictArgs),
    /// Evaluate a saved predictor on a test CSV.
    Evaluate(EvaluateArgs),
    /// Reproduce the toy-model coverage table (oracle or quadratic misspec).
    Table(TableArgs),
    /// Conditional-coverage sweep over data types and misspecifications.
    Sweep(SweepArgs),
    /// Conditional-validity diagnostics: ECDFs, bootstrap and KS verdicts.
    Diagnose(DiagnoseArgs),
}

/// Optional JSON run configuration; any field may be omitted.
#[derive(Debug, Default, Clone, Deserialize)]
pub struct RunConfig {
    pub generator: Option<GeneratorSpec>,
    pub csv: Option<PathBuf>,
    pub estimator: Option<EstimatorSpec>,
    pub measure: Option<String>,
    pub measures: Option<Vec<String>>,
    pub alpha: Option<f64>,
    pub taxonomy: Option<TaxonomySpec>,
    pub mondrian: Option<bool>,
    pub n_repetitions: Option<usize>,
    pub n_test: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Data type: type1 | type2 | type3 | type4 | example21 | toy_cv | fig1.
    #[arg(long = "type")]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise family: normal | laplace | uniform | triangular | exponential.
    #[arg(long)]
    pub family: Option<String>,
    /// Mean multiplier for type2/type4.
    #[arg(long)]
    pub mean_scale: Option<f64>,
    /// Feature-cube upper bound for toy_cv.
    #[arg(long)]
    pub upper: Option<f64>,
    /// Output CSV path (default: synth.csv in the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the mu,sigma truth columns.
    #[arg(long)]
    pub no_truth: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Input dataset CSV; alternatively configure a generator.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generator JSON (exactly one of --data / --generator).
    #[arg(long)]
    pub generator: Option<String>,
    /// Nonconformity measure: res | int | norm | std.
    #[arg(long)]
    pub measure: Option<String>,
    /// Stabilizer added to sigma in the normalized/standardized measures.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Estimator JSON, e.g. {"kind":"knn","k":50} or
    /// {"kind":"oracle","wrappers":[{"op":"sigma_shift","lambda":0.1}]}.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Taxonomy JSON, e.g. {"kind":"difficulty_bins","n_bins":3}.
    #[arg(long)]
    pub taxonomy: Option<String>,
    /// Calibrate one predictor per taxonomy class.
    #[arg(long)]
    pub mondrian: bool,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub calib_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Predictor output path (default: predictor.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the held-out test split to this CSV.
    #[arg(long)]
    pub emit_test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    /// Feature CSV; a y column is ignored if present.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Misspecification: none | quadratic.
    #[arg(long)]
    pub misspec: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated data types (default: type1,type2,type3,type4).
    #[arg(long)]
    pub types: Option<String>,
    /// Comma-separated measures (default: res,int,norm).
    #[arg(long)]
    pub measures: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub n_calib: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generator JSON instead of a CSV.
    #[arg(long)]
    pub generator: Option<String>,
    /// Precomputed scores CSV with header `score,class`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Comma-separated measures to diagnose (default: res,norm).
    #[arg(long)]
    pub measures: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Estimator JSON (default: oracle for generators, knn otherwise).
    #[arg(long)]
    pub estimator: Option<String>,
    /// Bootstrap resamples.
    #[arg(long)]
    pub b: Option<usize>,
    /// Bootstrap confidence level beta.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs a parsed command line; returns the JSON summary that `--json`
/// prints.
pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os("HETCP_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    match &cli.command {
        Command::Synth(args) => cmd_synth(args, &config, &out_dir),
        Command::Calibrate(args) => cmd_calibrate(args, &config, &out_dir),
        Command::Predict(args) => cmd_predict(args, &config, &out_dir),
        Command::Evaluate(args) => cmd_evaluate(args, &config, &out_dir),
        Command::Table(args) => {
            let table = cmd_table(args, &config, &out_dir)?;
            Ok(serde_json::to_value(&table)?)
        }
        Command::Sweep(args) => {
            let sweep = cmd_sweep(args, &config, &out_dir)?;
            Ok(serde_json::to_value(&sweep)?)
        }
        Command::Diagnose(args) => cmd_diagnose(args, &config, &out_dir),
    }
}

fn parse_family(name: &str) -> Result<PivotalFamily> {
    PivotalFamily::ALL
        .into_iter()
        .find(|f| f.name() == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown family `{name}`")))
}

fn parse_kind(name: &str, mean_scale: Option<f64>, upper: Option<f64>) -> Result<GeneratorKind> {
    let kind = match name {
        "type1" | "type1_const_mean" => GeneratorKind::Type1ConstMean,
        "type2" | "type2_functional" => GeneratorKind::Type2Functional {
            mean_scale: mean_scale.unwrap_or(20.0),
        },
        "type3" | "type3_lowdim" => GeneratorKind::Type3LowDim,
        "type4" | "type4_bimodal" => GeneratorKind::Type4Bimodal {
            mean_scale: mean_scale.unwrap_or(4.0),
        },
        "example21" => GeneratorKind::Example21,
        "toy_cv" => GeneratorKind::ToyCv {
            upper: upper.unwrap_or(100.0),
        },
        "fig1" | "fig1_demo" => GeneratorKind::Fig1Demo,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown data type `{other}`"
            )))
        }
    };
    Ok(kind)
}

fn measure_from(name: &str, epsilon: Option<f64>) -> Result<Measure> {
    let measure = Measure::parse(name)?;
    Ok(match (measure, epsilon) {
        (Measure::Normalized { .. }, Some(e)) => Measure::Normalized { epsilon: e },
        (Measure::Standardized { .. }, Some(e)) => Measure::Standardized { epsilon: e },
        (m, _) => m,
    })
}

fn cmd_synth(args: &SynthArgs, config: &RunConfig, out_dir: &Path) -> Result<serde_json::Value> {
    let spec = match (&args.kind, &config.generator) {
        (Some(kind), _) => {
            let mut spec = GeneratorSpec {
                kind: parse_kind(kind, args.mean_scale, args.upper)?,
                family: PivotalFamily::Normal,
                dim: args.dim.unwrap_or(2),
                n: args.n.unwrap_or(1000),
                seed: args.seed.or(config.seed).unwrap_or(0),
            };
            if let Some(family) = &args.family {
                spec.family = parse_family(family)?;
            }
            spec
        }
        (None, Some(spec)) => {
            let mut spec = spec.clone();
            if let Some(n) = args.n {
                spec.n = n;
            }
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec
        }
        (None, None) => {
            return Err(Error::InvalidParameter(
                "synth needs --type or a generator in --config".into(),
            ))
        }
    };
    let generator = spec.build()?;
    let (dataset, truths) = generator.generate()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join("synth.csv"));
    write_csv(
        &out,
        &dataset,
        if args.no_truth { None } else { Some(&truths) },
    )?;
    println!(
        "wrote {} rows (dim {}) to {}",
        dataset.len(),
        dataset.dim(),
        out.display()
    );
    Ok(json!({
        "command": "synth",
        "path": out,
        "n": dataset.len(),
        "dim": dataset.dim(),
        "seed": spec.seed,
    }))
}

/// Everything `calibrate` produces besides the saved file; reused by tests.
struct CalibrationBundle {
    predictor: CalibratedPredictor,
    test: Dataset,
    generator: Option<Generator>,
}

fn build_calibration(args: &CalibrateArgs, config: &RunConfig) -> Result<CalibrationBundle> {
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let generator_spec: Option<GeneratorSpec> = match (&args.generator, &config.generator) {
        (Some(json), _) => Some(serde_json::from_str(json)?),
        (None, Some(spec)) => Some(spec.clone()),
        (None, None) => None,
    };
    let csv_path = args.data.clone().or_else(|| config.csv.clone());
    let (data, generator) = match (&csv_path, &generator_spec) {
        (Some(path), None) => (read_csv(path)?.0, None),
        (None, Some(spec)) => {
            let generator = spec.build()?;
            let (data, _) = generator.generate()?;
            (data, Some(generator))
        }
        (Some(_), Some(_)) => {
            return Err(Error::InvalidParameter(
                "exactly one data source: --data or --generator".into(),
            ))
        }
        (None, None) => {
            return Err(Error::InvalidParameter(
                "calibrate needs --data or --generator".into(),
            ))
        }
    };
    let split = SplitSpec::new(
        args.test_fraction.unwrap_or(0.2),
        args.calib_fraction.unwrap_or(0.5),
        seed,
    );
    let (train, calib, test) = data.split(&split)?;

    let estimator_spec: EstimatorSpec = match (&args.estimator, &config.estimator) {
        (Some(json), _) => serde_json::from_str(json)?,
        (None, Some(spec)) => spec.clone(),
        (None, None) => {
            if generator.is_some() {
                EstimatorSpec::oracle()
            } else {
                EstimatorSpec::knn(50)
            }
        }
    };
    let estimator = estimator_spec.fit(Some(&train), generator.as_ref())?;

    let measure_name = args
        .measure
        .clone()
        .or_else(|| config.measure.clone())
        .unwrap_or_else(|| "norm".into());
    let measure = measure_from(&measure_name, args.epsilon)?;
    let alpha = args.alpha.or(config.alpha).unwrap_or(0.1);

    let taxonomy_spec: TaxonomySpec = match (&args.taxonomy, &config.taxonomy) {
        (Some(json), _) => serde_json::from_str(json)?,
        (None, Some(spec)) => spec.clone(),
        (None, None) => TaxonomySpec::DifficultyBins { n_bins: 3 },
    };
    let cal_noise = RngStream::new(seed, STREAM_CALIBRATION);
    let sigma_hats: Vec<f64> = estimator
        .predict_dataset(&calib, &cal_noise)?
        .iter()
        .map(|e| e.sigma)
        .collect();
    let taxonomy = taxonomy_spec.fit(&sigma_hats)?;

    let mondrian = args.mondrian || config.mondrian.unwrap_or(false);
    let predictor = if mondrian {
        calibrate_mondrian(measure, estimator, &calib, alpha, taxonomy, &cal_noise)?
    } else {
        calibrate(measure, estimator, &calib, alpha, Some(taxonomy), &cal_noise)?
    };
    Ok(CalibrationBundle {
        predictor,
        test,
        generator,
    })
}

fn cmd_calibrate(
    args: &CalibrateArgs,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<serde_json::Value> {
    let bundle = build_calibration(args, config)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join("predictor.json"));
    std::fs::write(&out, bundle.predictor.to_json()?)?;
    if let Some(test_path) = &args.emit_test {
        let truths = bundle
            .generator
            .as_ref()
            .map(|generator| {
                bundle
                    .test
                    .iter()
                    .map(|obs| generator.truth(&obs.x))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        write_csv(test_path, &bundle.test, truths.as_deref())?;
    }
    println!(
        "calibrated {} predictor (alpha {}) on classes {:?} -> {}",
        bundle.predictor.measure().name(),
        bundle.predictor.alpha(),
        bundle.predictor.calib_sizes(),
        out.display()
    );
    Ok(json!({
        "command": "calibrate",
        "predictor": out,
        "measure": bundle.predictor.measure().name(),
        "alpha": bundle.predictor.alpha(),
        "mondrian": bundle.predictor.is_mondrian(),
        "calib_sizes": bundle.predictor.calib_sizes(),
        "n_test_heldout": bundle.test.len(),
    }))
}

fn format_endpoint(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn cmd_predict(
    args: &PredictArgs,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<serde_json::Value> {
    let predictor = CalibratedPredictor::from_json(&std::fs::read_to_string(&args.predictor)?)?;
    let rows = read_features_csv(&args.input)?;
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let noise = RngStream::new(seed, STREAM_EVALUATION);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join("intervals.csv"));
    let mut writer = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(writer, "lower,upper")?;
    for (i, x) in rows.iter().enumerate() {
        let mut stream = noise.substream(i as u64);
        let interval = predictor.predict(x, &mut stream)?;
        writeln!(
            writer,
            "{},{}",
            format_endpoint(interval.lower()),
            format_endpoint(interval.upper())
        )?;
    }
    writer.flush()?;
    println!("wrote {} intervals to {}", rows.len(), out.display());
    Ok(json!({
        "command": "predict",
        "path": out,
        "n": rows.len(),
    }))
}

fn cmd_evaluate(
    args: &EvaluateArgs,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<serde_json::Value> {
    let predictor = CalibratedPredictor::from_json(&std::fs::read_to_string(&args.predictor)?)?;
    let (test, _) = read_csv(&args.test)?;
    let taxonomy = predictor
        .taxonomy()
        .ok_or_else(|| {
            Error::InvalidParameter(
                "predictor has no taxonomy; conditional evaluation needs one".into(),
            )
        })?
        .clone();
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let noise = RngStream::new(seed, STREAM_EVALUATION);
    let report = evaluate(&predictor, &test, &taxonomy, &noise)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join("report.json"));
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    let csv_out = out.with_extension("csv");
    std::fs::write(&csv_out, report.to_long_csv())?;
    println!(
        "marginal coverage {:.4}, width {} over {} test points -> {}",
        report.marginal_coverage,
        format_endpoint(report.marginal_width),
        report.n_test,
        out.display()
    );
    Ok(serde_json::to_value(&report)?)
}

/// One aggregated table row: a measure/conditioning pair with the marginal
/// and per-class coverage cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub measure: String,
    pub mondrian: bool,
    /// marginal, then one entry per class in ascending difficulty order.
    pub cells: Vec<TableCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableCell {
    pub label: String,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    #[serde(with = "crate::jsonf::float")]
    pub width_mean: f64,
    pub width_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableOutput {
    pub alpha: f64,
    pub repetitions: usize,
    pub n_test: usize,
    pub misspec: String,
    pub rows: Vec<TableRow>,
}

fn cell_labels(n_classes: usize) -> Vec<String> {
    if n_classes == 3 {
        vec!["low".into(), "medium".into(), "high".into()]
    } else {
        (0..n_classes).map(|c| format!("class_{c}")).collect()
    }
}

fn rows_from_reports(
    measure_name: &str,
    mondrian: bool,
    reports: &[EvalReport],
) -> Result<TableRow> {
    let agg: AggregateReport = aggregate(reports)?;
    let n_classes = agg.per_class.len();
    let labels = cell_labels(n_classes);
    let mut cells = vec![TableCell {
        label: "marginal".into(),
        coverage_mean: agg.marginal_coverage.mean,
        coverage_std: agg.marginal_coverage.std,
        width_mean: agg.marginal_width.mean,
        width_std: agg.marginal_width.std,
    }];
    for (class, aggregate) in &agg.per_class {
        let coverage = aggregate.coverage.ok_or_else(|| {
            Error::EmptyGroup(format!("class {class} never observed in evaluation"))
        })?;
        let width = aggregate.width.unwrap();
        cells.push(TableCell {
            label: labels[*class].clone(),
            coverage_mean: coverage.mean,
            coverage_std: coverage.std,
            width_mean: width.mean,
            width_std: width.std,
        });
    }
    Ok(TableRow {
        measure: measure_name.into(),
        mondrian,
        cells,
    })
}

/// The toy-model table protocol; also used directly by the acceptance suite.
pub fn cmd_table(args: &TableArgs, config: &RunConfig, out_dir: &Path) -> Result<TableOutput> {
    let alpha = args.alpha.or(config.alpha).unwrap_or(0.1);
    let repetitions = args
        .repetitions
        .or(config.n_repetitions)
        .unwrap_or(20)
        .max(2);
    let n_test = args.n_test.or(config.n_test).unwrap_or(1000);
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let misspec = args.misspec.clone().unwrap_or_else(|| "none".into());
    let wrappers = match misspec.as_str() {
        "none" => Vec::new(),
        "quadratic" => vec![MisspecOp::QuadraticSigma],
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown misspec `{other}` (expected none or quadratic)"
            )))
        }
    };

    let calib_generator =
        GeneratorSpec::toy_cv_with_upper(TABLE_DIM, TABLE_CALIB, seed, TABLE_UPPER).build()?;
    let test_generator =
        GeneratorSpec::toy_cv_with_upper(TABLE_DIM, n_test, seed, TABLE_UPPER).build()?;
    let (calib, _) = calib_generator.generate()?;
    let estimator = EstimatorSpec::oracle()
        .with_wrappers(wrappers)
        .fit(None, Some(&calib_generator))?;

    let cal_noise = RngStream::new(seed, STREAM_CALIBRATION);
    let sigma_hats: Vec<f64> = estimator
        .predict_dataset(&calib, &cal_noise)?
        .iter()
        .map(|e| e.sigma)
        .collect();
    let taxonomy = TaxonomySpec::DifficultyBins { n_bins: 3 }.fit(&sigma_hats)?;

    let configs = [
        (Measure::Residual, false),
        (Measure::normalized(), false),
        (Measure::Residual, true),
        (Measure::normalized(), true),
    ];
    let mut predictors = Vec::new();
    for (measure, mondrian) in configs {
        let predictor = if mondrian {
            calibrate_mondrian(
                measure,
                estimator.clone(),
                &calib,
                alpha,
                taxonomy.clone(),
                &cal_noise,
            )?
        } else {
            calibrate(
                measure,
                estimator.clone(),
                &calib,
                alpha,
                Some(taxonomy.clone()),
                &cal_noise,
            )?
        };
        predictors.push((measure, mondrian, predictor));
    }

    // One fresh test set per repetition, shared by all four predictors.
    let rep_seeds: Vec<u64> = {
        let mut stream = RngStream::new(seed, STREAM_EVALUATION);
        (0..repetitions).map(|_| stream.next_u64()).collect()
    };
    let per_config: Vec<Result<Vec<EvalReport>>> = predictors
        .par_iter()
        .map(|(_, _, predictor)| {
            rep_seeds
                .iter()
                .map(|&rep_seed| {
                    let (test, _) = test_generator.generate_seeded(rep_seed)?;
                    let noise = RngStream::new(rep_seed, STREAM_EVALUATION);
                    evaluate(predictor, &test, &taxonomy, &noise)
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for ((measure, mondrian, _), reports) in predictors.iter().zip(per_config) {
        rows.push(rows_from_reports(measure.name(), *mondrian, &reports?)?);
    }
    let output = TableOutput {
        alpha,
        repetitions,
        n_test,
        misspec,
        rows,
    };

    let out = args.out.clone().unwrap_or_else(|| out_dir.join("table.csv"));
    let mut writer = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(
        writer,
        "measure,mondrian,cell,coverage_mean,coverage_std,width_mean,width_std"
    )?;
    for row in &output.rows {
        for cell in &row.cells {
            writeln!(
                writer,
                "{},{},{},{},{},{},{}",
                row.measure,
                row.mondrian,
                cell.label,
                cell.coverage_mean,
                cell.coverage_std,
                format_endpoint(cell.width_mean),
                cell.width_std
            )?;
        }
    }
    writer.flush()?;
    println!("wrote coverage table ({} rows) to {}", output.rows.len(), out.display());
    Ok(output)
}

/// The misspecification grid of the conditional-coverage sweep.
pub fn sweep_misspec_grid() -> Vec<(String, Vec<MisspecOp>)> {
    vec![
        ("oracle".into(), vec![]),
        ("sigma_shift_0.01".into(), vec![MisspecOp::SigmaShift { lambda: 0.01 }]),
        ("sigma_shift_0.1".into(), vec![MisspecOp::SigmaShift { lambda: 0.1 }]),
        ("sigma_shift_1".into(), vec![MisspecOp::SigmaShift { lambda: 1.0 }]),
        ("sigma_scale_5".into(), vec![MisspecOp::SigmaScale { factor: 5.0 }]),
        ("mu_shift_const_1".into(), vec![MisspecOp::MuShiftConst { lambda: 1.0 }]),
        ("mu_shift_prop_1".into(), vec![MisspecOp::MuShiftProp { lambda: 1.0 }]),
    ]
}

/// One sweep cell: conditional coverage of a (type, misspec, measure,
/// conditioning, class) combination aggregated over repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub data_type: String,
    pub misspec: String,
    pub measure: String,
    pub mondrian: bool,
    pub class: String,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    #[serde(with = "crate::jsonf::float")]
    pub width_mean: f64,
    pub count_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutput {
    pub alpha: f64,
    pub repetitions: usize,
    pub rows: Vec<SweepRow>,
}

fn sweep_generator(name: &str, dim: usize, n: usize, seed: u64) -> Result<Generator> {
    let spec = match name {
        "type1" => GeneratorSpec::type1(dim, n, seed),
        "type2" => GeneratorSpec::type2(dim, n, seed),
        "type3" => GeneratorSpec::type3(dim, n, seed),
        "type4" => GeneratorSpec::type4(dim, n, seed),
        "example21" => GeneratorSpec::example21(n, seed),
        "toy_cv" => GeneratorSpec::toy_cv(dim, n, seed),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown sweep type `{other}`"
            )))
        }
    };
    spec.build()
}

/// Conditional coverage for every (type, misspecification, measure,
/// global/Mondrian) combination; the heart of the synthetic study.
pub fn cmd_sweep(args: &SweepArgs, config: &RunConfig, out_dir: &Path) -> Result<SweepOutput> {
    let alpha = args.alpha.or(config.alpha).unwrap_or(0.1);
    let repetitions = args.repetitions.or(config.n_repetitions).unwrap_or(10).max(2);
    let n_calib = args.n_calib.unwrap_or(2000);
    let n_test = args.n_test.or(config.n_test).unwrap_or(2000);
    let dim = args.dim.unwrap_or(2);
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let types: Vec<String> = args
        .types
        .clone()
        .unwrap_or_else(|| "type1,type2,type3,type4".into())
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let measures: Vec<Measure> = args
        .measures
        .clone()
        .unwrap_or_else(|| "res,int,norm".into())
        .split(',')
        .map(|s| Measure::parse(s.trim()))
        .collect::<Result<_>>()?;

    // (type, misspec) cells run in parallel; each derives its own seeds.
    let grid = sweep_misspec_grid();
    let mut cells = Vec::new();
    for type_name in &types {
        for (misspec_name, wrappers) in &grid {
            cells.push((type_name.clone(), misspec_name.clone(), wrappers.clone()));
        }
    }
    let results: Vec<Result<Vec<SweepRow>>> = cells
        .par_iter()
        .enumerate()
        .map(|(cell_idx, (type_name, misspec_name, wrappers))| {
            sweep_cell(
                type_name,
                misspec_name,
                wrappers,
                &measures,
                alpha,
                repetitions,
                n_calib,
                n_test,
                dim,
                RngStream::new(seed, 0x53).substream(cell_idx as u64),
            )
        })
        .collect();
    let mut rows = Vec::new();
    for result in results {
        rows.extend(result?);
    }

    let out = args.out.clone().unwrap_or_else(|| out_dir.join("sweep.csv"));
    let mut writer = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(
        writer,
        "data_type,misspec,measure,mondrian,class,coverage_mean,coverage_std,width_mean,count_mean"
    )?;
    for row in &rows {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{},{}",
            row.data_type,
            row.misspec,
            row.measure,
            row.mondrian,
            row.class,
            row.coverage_mean,
            row.coverage_std,
            format_endpoint(row.width_mean),
            row.count_mean
        )?;
    }
    writer.flush()?;
    println!("wrote {} sweep rows to {}", rows.len(), out.display());
    Ok(SweepOutput {
        alpha,
        repetitions,
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    type_name: &str,
    misspec_name: &str,
    wrappers: &[MisspecOp],
    measures: &[Measure],
    alpha: f64,
    repetitions: usize,
    n_calib: usize,
    n_test: usize,
    dim: usize,
    stream: RngStream,
) -> Result<Vec<SweepRow>> {
    // Heavy misspecification can clip a third or more of the sigma estimates
    // to exactly zero, which makes equal-frequency tertiles degenerate; the
    // cell then degrades to fewer difficulty classes instead of aborting.
    for n_bins in (1..=3usize).rev() {
        match sweep_cell_binned(
            type_name,
            misspec_name,
            wrappers,
            measures,
            alpha,
            repetitions,
            n_calib,
            n_test,
            dim,
            n_bins,
            stream.clone(),
        ) {
            Err(Error::DegenerateBinning) if n_bins > 1 => continue,
            other => return other,
        }
    }
    unreachable!("single-class binning cannot degenerate")
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell_binned(
    type_name: &str,
    misspec_name: &str,
    wrappers: &[MisspecOp],
    measures: &[Measure],
    alpha: f64,
    repetitions: usize,
    n_calib: usize,
    n_test: usize,
    dim: usize,
    n_bins: usize,
    stream: RngStream,
) -> Result<Vec<SweepRow>> {
    // reports[(measure, mondrian)] across repetitions
    let mut reports: BTreeMap<(String, bool), Vec<EvalReport>> = BTreeMap::new();
    let mut seeder = stream.clone();
    for _rep in 0..repetitions {
        let data_seed = seeder.next_u64();
        let calib_generator = sweep_generator(type_name, dim, n_calib, data_seed)?;
        let test_generator = sweep_generator(type_name, dim, n_test, data_seed ^ 0x7E57)?;
        let (calib, _) = calib_generator.generate()?;
        let (test, _) = test_generator.generate()?;
        let estimator = EstimatorSpec::oracle()
            .with_wrappers(wrappers.to_vec())
            .fit(None, Some(&calib_generator))?;
        let cal_noise = RngStream::new(data_seed, STREAM_CALIBRATION);
        let eval_noise = RngStream::new(data_seed, STREAM_EVALUATION);
        let sigma_hats: Vec<f64> = estimator
            .predict_dataset(&calib, &cal_noise)?
            .iter()
            .map(|e| e.sigma)
            .collect();
        let taxonomy = TaxonomySpec::DifficultyBins { n_bins }.fit(&sigma_hats)?;
        for measure in measures {
            for mondrian in [false, true] {
                let predictor = if mondrian {
                    calibrate_mondrian(
                        *measure,
                        estimator.clone(),
                        &calib,
                        alpha,
                        taxonomy.clone(),
                        &cal_noise,
                    )?
                } else {
                    calibrate(
                        *measure,
                        estimator.clone(),
                        &calib,
                        alpha,
                        Some(taxonomy.clone()),
                        &cal_noise,
                    )?
                };
                let report = evaluate(&predictor, &test, &taxonomy, &eval_noise)?;
                reports
                    .entry((measure.name().into(), mondrian))
                    .or_default()
                    .push(report);
            }
        }
    }
    let mut rows = Vec::new();
    for ((measure_name, mondrian), reps) in reports {
        let agg = aggregate(&reps)?;
        let labels = cell_labels(agg.per_class.len());
        rows.push(SweepRow {
            data_type: type_name.into(),
            misspec: misspec_name.into(),
            measure: measure_name.clone(),
            mondrian,
            class: "marginal".into(),
            coverage_mean: agg.marginal_coverage.mean,
            coverage_std: agg.marginal_coverage.std,
            width_mean: agg.marginal_width.mean,
            count_mean: n_test as f64,
        });
        for (class, cell) in &agg.per_class {
            let Some(coverage) = cell.coverage else {
                continue;
            };
            rows.push(SweepRow {
                data_type: type_name.into(),
                misspec: misspec_name.into(),
                measure: measure_name.clone(),
                mondrian,
                class: labels[*class].clone(),
                coverage_mean: coverage.mean,
                coverage_std: coverage.std,
                width_mean: cell.width.map(|w| w.mean).unwrap_or(f64::INFINITY),
                count_mean: cell.mean_count,
            });
        }
    }
    Ok(rows)
}

fn cmd_diagnose(
    args: &DiagnoseArgs,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<serde_json::Value> {
    let alpha = args.alpha.or(config.alpha).unwrap_or(0.1);
    let bins = args.bins.unwrap_or(3);
    let b = args.b.unwrap_or(2000);
    let beta = args.beta.unwrap_or(0.025);
    let seed = args.seed.or(config.seed).unwrap_or(0);

    // Scores per measure: either precomputed or derived from a data source.
    let measure_scores: Vec<(String, Vec<(f64, usize)>)> = if let Some(path) = &args.scores {
        vec![("scores".into(), read_scores_csv(path)?)]
    } else {
        let generator_spec: Option<GeneratorSpec> = match (&args.generator, &config.generator) {
            (Some(json), _) => Some(serde_json::from_str(json)?),
            (None, Some(spec)) => Some(spec.clone()),
            (None, None) => None,
        };
        let (data, generator) = match (&args.data, &generator_spec) {
            (Some(path), None) => (read_csv(path)?.0, None),
            (None, Some(spec)) => {
                let generator = spec.build()?;
                let (data, _) = generator.generate()?;
                (data, Some(generator))
            }
            _ => {
                return Err(Error::InvalidParameter(
                    "diagnose needs exactly one of --data, --generator or --scores".into(),
                ))
            }
        };
        let (train, calib, _) = data.split(&SplitSpec::with_defaults(seed))?;
        let estimator_spec: EstimatorSpec = match (&args.estimator, &config.estimator) {
            (Some(json), _) => serde_json::from_str(json)?,
            (None, Some(spec)) => spec.clone(),
            (None, None) => {
                if generator.is_some() {
                    EstimatorSpec::oracle()
                } else {
                    EstimatorSpec::knn(50)
                }
            }
        };
        let estimator = estimator_spec.fit(Some(&train), generator.as_ref())?;
        let cal_noise = RngStream::new(seed, STREAM_CALIBRATION);
        let ests = estimator.predict_dataset(&calib, &cal_noise)?;
        let sigma_hats: Vec<f64> = ests.iter().map(|e| e.sigma).collect();
        let taxonomy = TaxonomySpec::DifficultyBins { n_bins: bins }.fit(&sigma_hats)?;
        let classes: Vec<usize> = calib
            .iter()
            .zip(&ests)
            .map(|(obs, est)| taxonomy.classify(&obs.x, est.sigma))
            .collect();
        let measure_names: Vec<String> = args
            .measures
            .clone()
            .unwrap_or_else(|| "res,norm".into())
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut out = Vec::new();
        for name in measure_names {
            let measure = measure_from(&name, None)?;
            let scored: Vec<(f64, usize)> = calib
                .iter()
                .zip(&ests)
                .zip(&classes)
                .map(|((obs, est), &class)| {
                    crate::nonconformity::score(
                        &measure,
                        &crate::nonconformity::prediction_for(&measure, est, alpha),
                        obs.y,
                    )
                    .map(|s| (s, class))
                })
                .collect::<Result<_>>()?;
            out.push((name, scored));
        }
        out
    };

    let mut measures_json = Vec::new();
    for (name, scores) in &measure_scores {
        let table = ecdf_by_class(scores)?;
        let ecdf_path = out_dir.join(format!("ecdf_{name}.csv"));
        table.write_csv(&ecdf_path)?;

        let n_classes = scores.iter().map(|&(_, c)| c).max().unwrap_or(0) + 1;
        let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
        for &(s, c) in scores {
            by_class[c].push(s);
        }
        let mut pair_reports = Vec::new();
        for c1 in 0..n_classes {
            for c2 in (c1 + 1)..n_classes {
                let rng = RngStream::new(seed, STREAM_BOOTSTRAP)
                    .substream((c1 * n_classes + c2) as u64);
                let bootstrap =
                    bootstrap_quantile_diff(&by_class[c1], &by_class[c2], alpha, beta, b, &rng)?
                        .labeled((c1, c2));
                let ks = ks_two_sample(&by_class[c1], &by_class[c2])?;
                pair_reports.push(json!({
                    "classes": [c1, c2],
                    "bootstrap": {
                        "ci": bootstrap.ci,
                        "levels": bootstrap.levels,
                        "b": bootstrap.b,
                        "beta": bootstrap.beta,
                        "verdict": bootstrap.verdict(),
                    },
                    "ks": {
                        "statistic": ks.statistic,
                        "p_value": ks.p_value,
                        "verdict": if ks.rejects_at(0.01) { "reject" } else { "no-evidence" },
                    },
                }));
            }
        }
        measures_json.push(json!({
            "measure": name,
            "ecdf_csv": ecdf_path,
            "pairs": pair_reports,
        }));
    }
    let summary = json!({
        "command": "diagnose",
        "alpha": alpha,
        "bins": bins,
        "measures": measures_json,
    });
    let out = out_dir.join("diagnostics.json");
    std::fs::write(&out, serde_json::to_string_pretty(&summary)?)?;
    println!("wrote diagnostics to {}", out.display());
    Ok(summary)
}

/// Reads a `score,class` CSV produced by an external scorer.
fn read_scores_csv(path: &Path) -> Result<Vec<(f64, usize)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        let score: f64 = record
            .get(0)
            .ok_or(Error::NonFinite { row })?
            .trim()
            .parse()
            .map_err(|_| Error::NonFinite { row })?;
        let class: usize = record
            .get(1)
            .ok_or(Error::NonFinite { row })?
            .trim()
            .parse()
            .map_err(|_| Error::NonFinite { row })?;
        if !score.is_finite() {
            return Err(Error::NonFinite { row });
        }
        out.push((score, class));
    }
    if out.is_empty() {
        return Err(Error::EmptyGroup("scores".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misspec_grid_has_seven_columns() {
        let grid = sweep_misspec_grid();
        assert_eq!(grid.len(), 7);
        assert_eq!(grid[0].0, "oracle");
        assert!(grid[0].1.is_empty());
    }

    #[test]
    fn kind_parsing() {
        assert!(parse_kind("toy_cv", None, None).is_ok());
        assert!(parse_kind("type4", Some(3.0), None).is_ok());
        assert!(parse_kind("nope", None, None).is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!(parse_family("laplace").unwrap(), PivotalFamily::Laplace);
        assert!(parse_family("cauchy").is_err());
    }

    #[test]
    fn measure_epsilon_override() {
        let m = measure_from("norm", Some(0.5)).unwrap();
        assert_eq!(m, Measure::Normalized { epsilon: 0.5 });
        let m = measure_from("res", Some(0.5)).unwrap();
        assert_eq!(m, Measure::Residual);
    }
}
