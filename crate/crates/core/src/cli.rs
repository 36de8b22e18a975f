//! Command-line workflows: `synth`, `fit`, `sweep`, `pr` and `route`.
//!
//! Every command is a pure function of its inputs and `--seed`; JSON outputs
//! are written with a fixed field order so reruns are byte-identical.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstention::{
    cost_savings_estimate, fit_abstention_classifier, label_abstentions, precision_recall, roc_auc,
    AbstentionClassifier, AbstentionError, CostSavings, PRCurve, DEFAULT_COST_RATIO,
};
use crate::calibration::CalibrationModel;
use crate::cascade::{
    empirical_loss, evaluate_empirical, route, step_action, validate_thresholds, Architecture,
    CascadeError, CascadeSpec, PerformanceVector, QueryRecord, StepAction, ThresholdVector,
};
use crate::data::{
    apply_dataset_calibration, fit_dataset_calibration, generate_synthetic, load_dataset,
    read_text, save_dataset, split_dataset, CascadeConfig, DataError, SchemaMode, ScoreDataset,
    SyntheticSpec,
};
use crate::joint::{
    fit_markov_model, JointError, JointFitOptions, JointFitReport, MarkovJointModel,
};
use crate::optimize::{
    compare_architectures, smooth_threshold_grid, sweep_preference_grid, ArchitectureComparison,
    OptimizeError, OptimizerOptions, PreferenceGrid, SweepResult, DEFAULT_SMOOTHING_R,
};

/// Confidences are clamped into `[ε, 1 − ε]` before density fitting.
pub const FIT_CLAMP_EPS: f64 = 1e-6;
pub const DEFAULT_TRAIN_N: usize = 300;
pub const DEFAULT_RATES: [f64; 2] = [0.2, 0.3];
/// Recall at which the cost-savings estimate is reported.
pub const SAVINGS_RECALL: f64 = 0.2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("model fit failed: {0}")]
    Joint(#[from] JointError),
    #[error("abstention predictor: {0}")]
    Abstention(#[from] AbstentionError),
    #[error("optimization failed: {0}")]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

impl CliError {
    /// 2 usage/config, 3 i/o, 4 schema, 5 fitting, 6 optimization, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Cascade(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(d) => match d {
                DataError::Io { .. } => 3,
                DataError::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 3,
                DataError::Csv(_)
                | DataError::MissingColumn(_)
                | DataError::InconsistentK { .. }
                | DataError::Value { .. }
                | DataError::DuplicateId { .. } => 4,
                DataError::Config(_)
                | DataError::Split(_)
                | DataError::Synthetic(_)
                | DataError::Cascade(_) => 2,
                DataError::Joint(_) | DataError::Calibration { .. } => 5,
            },
            CliError::Joint(_) | CliError::Abstention(_) => 5,
            CliError::Optimize(_) => 6,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cascade-tuner",
    version,
    about = "Deferral and abstention threshold tuning for model cascades"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic score dataset from a ground-truth joint model.
    Synth(SynthArgs),
    /// Calibrate (raw mode) and fit the joint confidence model on the train split.
    Fit(FitArgs),
    /// Optimize thresholds over the preference grid and compare architectures.
    Sweep(SweepArgs),
    /// Fit the early-abstention predictor and write precision-recall curves.
    Pr(PrArgs),
    /// Trace the routing decision of one query.
    Route(RouteArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchChoice {
    Early,
    Final,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Raw,
    Calibrated,
}

impl From<ModeChoice> for SchemaMode {
    fn from(m: ModeChoice) -> Self {
        match m {
            ModeChoice::Raw => SchemaMode::Raw,
            ModeChoice::Calibrated => SchemaMode::Calibrated,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec JSON (also usable as the cascade config).
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of queries.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Score dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Run config JSON: models, architecture, grid, optimizer, seed.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Column schema; defaults to the config's `mode` or calibrated.
    #[arg(long, value_enum)]
    pub mode: Option<ModeChoice>,
    /// Size of the train split; the remainder is the test split.
    #[arg(long)]
    pub train_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed number of beta-mixture components per marginal.
    #[arg(long)]
    pub components: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset for test-split evaluation (split as in `fit`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid shape `ROWSxCOLS` (cost x abstention).
    #[arg(long)]
    pub grid: Option<String>,
    /// Outlier ratio for smoothing; 0 disables smoothing.
    #[arg(long)]
    pub smooth_r: Option<f64>,
    #[arg(long, value_enum, default_value = "both")]
    pub architecture: ArchChoice,
}

#[derive(Debug, Args)]
pub struct PrArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Target abstention rate (repeatable).
    #[arg(long)]
    pub rate: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    /// Cascade config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Deferral thresholds, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub phi: Vec<f64>,
    /// Abstention thresholds, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub xi: Vec<f64>,
    /// Per-model confidences, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub conf: Vec<f64>,
    /// Per-model correctness (0/1), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub correct: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    Explicit {
        lambdas_cost: Vec<f64>,
        lambdas_abs: Vec<f64>,
    },
    Shape {
        n_cost: usize,
        n_abs: usize,
    },
}

/// One JSON document per run; command-line flags override its fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub mode: Option<SchemaMode>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub train_n: Option<usize>,
    #[serde(default)]
    pub components: Option<usize>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub optimizer: Option<OptimizerOptions>,
    #[serde(default)]
    pub smooth_r: Option<f64>,
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
    /// Small-to-final cost ratio for the savings estimate.
    #[serde(default)]
    pub cost_ratio: Option<f64>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| DataError::Config(format!("{}: {e}", path.display())).into())
}

/// Output of `fit`, consumed by `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub benchmark: String,
    pub mode: SchemaMode,
    pub seed: u64,
    pub train_n: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub components_override: Option<usize>,
    /// Per-model maps from raw signal to confidence (raw mode only).
    pub calibration: Option<Vec<CalibrationModel>>,
    pub model: MarkovJointModel,
    pub diagnostics: JointFitReport,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

/// Dataset loaded and split as shared by `fit`, `sweep` and `pr`.
struct Prepared {
    train: ScoreDataset,
    test: ScoreDataset,
    seed: u64,
    train_n: usize,
}

fn prepare(
    data: &Path,
    cfg: &RunConfig,
    spec: &CascadeSpec,
    mode: SchemaMode,
    seed: u64,
    train_n: usize,
) -> Result<Prepared, CliError> {
    let ds = load_dataset(data, mode, spec)?;
    let (mut train, mut test) = split_dataset(&ds, train_n, seed)?;
    if let Some(b) = &cfg.cascade.benchmark {
        train.benchmark.clone_from(b);
        test.benchmark.clone_from(b);
    }
    log::info!(
        "loaded {} queries ({} train, {} test)",
        ds.len(),
        train.len(),
        test.len()
    );
    Ok(Prepared {
        train,
        test,
        seed,
        train_n,
    })
}

fn resolve_mode(flag: Option<ModeChoice>, cfg: &RunConfig) -> SchemaMode {
    flag.map(SchemaMode::from)
        .or(cfg.mode)
        .unwrap_or(SchemaMode::Calibrated)
}

fn clamp_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| {
            r.into_iter()
                .map(|v| v.clamp(FIT_CLAMP_EPS, 1.0 - FIT_CLAMP_EPS))
                .collect()
        })
        .collect()
}

pub fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut spec: SyntheticSpec = serde_json::from_str(&read_text(&args.config)?)
        .map_err(|e| DataError::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.n {
        spec.n = n;
    }
    let ds = generate_synthetic(&spec)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_dataset(&ds, &args.out)?;
    log::info!(
        "wrote {} synthetic queries to {}",
        ds.len(),
        args.out.display()
    );
    Ok(())
}

pub fn run_fit(args: &FitArgs) -> Result<FitArtifact, CliError> {
    let cfg = load_run_config(&args.data.config)?;
    let spec = cfg.cascade.to_spec()?;
    let mode = resolve_mode(args.data.mode, &cfg);
    let seed = args.data.seed.or(cfg.seed).unwrap_or(0);
    let train_n = args.data.train_n.or(cfg.train_n).unwrap_or(DEFAULT_TRAIN_N);
    let p = prepare(&args.data.data, &cfg, &spec, mode, seed, train_n)?;
    let (calibration, train) = match mode {
        SchemaMode::Raw => {
            let maps = fit_dataset_calibration(&p.train)?;
            let cal = apply_dataset_calibration(&p.train, &maps);
            (Some(maps), cal)
        }
        SchemaMode::Calibrated => (None, p.train.clone()),
    };
    let components = args.components.or(cfg.components);
    let mut opts = JointFitOptions {
        components,
        ..JointFitOptions::default()
    };
    opts.em.seed = seed;
    let (model, diagnostics) = fit_markov_model(&clamp_rows(train.score_rows(spec.len())), &opts)?;
    let artifact = FitArtifact {
        benchmark: train.benchmark.clone(),
        mode,
        seed,
        train_n: p.train_n,
        n_train: p.train.len(),
        n_test: p.test.len(),
        components_override: components,
        calibration,
        model,
        diagnostics,
    };
    write_file(&args.out, &to_json(&artifact))?;
    Ok(artifact)
}

/// Parses `ROWSxCOLS`.
pub fn parse_grid_shape(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--grid expects ROWSxCOLS, got {s:?}"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn build_grid(
    flag: Option<&str>,
    cfg: &RunConfig,
    spec: &CascadeSpec,
) -> Result<PreferenceGrid, CliError> {
    if let Some(s) = flag {
        let (r, c) = parse_grid_shape(s)?;
        return Ok(PreferenceGrid::default_for(spec, r, c)?);
    }
    Ok(match &cfg.grid {
        Some(GridConfig::Explicit {
            lambdas_cost,
            lambdas_abs,
        }) => PreferenceGrid::new(lambdas_cost.clone(), lambdas_abs.clone())?,
        Some(GridConfig::Shape { n_cost, n_abs }) => {
            PreferenceGrid::default_for(spec, *n_cost, *n_abs)?
        }
        None => PreferenceGrid::default_for(spec, 10, 10)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCell {
    pub lc: f64,
    pub la: f64,
    pub loss: f64,
    pub performance: PerformanceVector,
}

/// Empirical test-split performance of every cell of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub architecture: Architecture,
    pub n_test: usize,
    pub cells: Vec<Vec<TestCell>>,
    pub overall_loss: f64,
}

fn evaluate_on_test(
    sweep: &SweepResult,
    spec: &CascadeSpec,
    test: &[QueryRecord],
) -> Result<TestEvaluation, CliError> {
    let spec = spec.with_architecture(sweep.architecture);
    let mut total = 0.0;
    let mut n = 0usize;
    let cells = sweep
        .cells
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| {
                    let performance = evaluate_empirical(&spec, &c.thresholds(), test)?;
                    let loss = empirical_loss(&performance, c.lc, c.la)?;
                    total += loss;
                    n += 1;
                    Ok(TestCell {
                        lc: c.lc,
                        la: c.la,
                        loss,
                        performance,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TestEvaluation {
        architecture: sweep.architecture,
        n_test: test.len(),
        cells,
        overall_loss: total / n as f64,
    })
}

fn pct(new: f64, old: f64) -> Option<f64> {
    (old != 0.0).then(|| 100.0 * (new - old) / old)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCellComparison {
    pub lc: f64,
    pub la: f64,
    pub early_loss: f64,
    pub final_loss: f64,
    pub pct_delta_loss: Option<f64>,
    pub pct_delta_error: Option<f64>,
    pub pct_delta_cost: Option<f64>,
    pub delta_abstention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestComparison {
    pub n_test: usize,
    pub early_overall_loss: f64,
    pub final_overall_loss: f64,
    pub overall_pct_delta: Option<f64>,
    pub cells: Vec<Vec<TestCellComparison>>,
}

fn compare_on_test(early: &TestEvaluation, fin: &TestEvaluation) -> TestComparison {
    let cells = early
        .cells
        .iter()
        .zip(&fin.cells)
        .map(|(er, fr)| {
            er.iter()
                .zip(fr)
                .map(|(e, f)| TestCellComparison {
                    lc: e.lc,
                    la: e.la,
                    early_loss: e.loss,
                    final_loss: f.loss,
                    pct_delta_loss: pct(e.loss, f.loss),
                    pct_delta_error: pct(e.performance.error, f.performance.error),
                    pct_delta_cost: pct(e.performance.cost, f.performance.cost),
                    delta_abstention: e.performance.abstention - f.performance.abstention,
                })
                .collect()
        })
        .collect();
    TestComparison {
        n_test: early.n_test,
        early_overall_loss: early.overall_loss,
        final_overall_loss: fin.overall_loss,
        overall_pct_delta: pct(early.overall_loss, fin.overall_loss),
        cells,
    }
}

/// `comparison.json`: train-side comparison plus test-split evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub benchmark: String,
    pub seed: u64,
    pub smooth_r: Option<f64>,
    pub train: ArchitectureComparison,
    pub test: Option<TestComparison>,
}

/// Per-architecture sweep file: the sweep plus its test evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub benchmark: String,
    pub seed: u64,
    pub sweep: SweepResult,
    pub test: Option<TestEvaluation>,
}

pub fn load_fit_artifact(path: &Path) -> Result<FitArtifact, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| DataError::Config(format!("model file {}: {e}", path.display())).into())
}

pub fn run_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = load_run_config(&args.config)?;
    let spec = cfg.cascade.to_spec()?;
    let fit = load_fit_artifact(&args.model)?;
    if fit.model.k() != spec.len() {
        return Err(CliError::Usage(format!(
            "model has {} marginals but the config lists {} models",
            fit.model.k(),
            spec.len()
        )));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(fit.seed);
    let mut opts = cfg.optimizer.clone().unwrap_or_default();
    opts.seed = seed;
    opts.validate()?;
    let grid = build_grid(args.grid.as_deref(), &cfg, &spec)?;
    let r = args
        .smooth_r
        .or(cfg.smooth_r)
        .unwrap_or(DEFAULT_SMOOTHING_R);
    let smooth_r = (r > 0.0 && grid.rows() >= 2 && grid.cols() >= 2).then_some(r);
    let test = match &args.data {
        Some(path) => {
            let ds = load_dataset(path, fit.mode, &spec)?;
            let (_, test) = split_dataset(&ds, fit.train_n, fit.seed)?;
            Some(match &fit.calibration {
                Some(maps) => apply_dataset_calibration(&test, maps),
                None => test,
            })
        }
        None => None,
    };
    ensure_dir(&args.out)?;
    let benchmark = cfg
        .cascade
        .benchmark
        .clone()
        .unwrap_or_else(|| fit.benchmark.clone());
    let eval = |s: &SweepResult| {
        test.as_ref()
            .map(|t| evaluate_on_test(s, &spec, &t.records))
            .transpose()
    };
    let write_sweep = |s: &SweepResult, t: Option<TestEvaluation>| {
        let name = format!("sweep_{}.json", s.architecture.short_name());
        let report = SweepReport {
            benchmark: benchmark.clone(),
            seed,
            sweep: s.clone(),
            test: t,
        };
        write_file(&args.out.join(name), &to_json(&report))
    };
    log::info!(
        "sweeping a {}x{} grid ({:?})",
        grid.rows(),
        grid.cols(),
        args.architecture
    );
    match args.architecture {
        ArchChoice::Both => {
            let cmp = compare_architectures(&fit.model, &spec, &grid, &opts, smooth_r)?;
            if !cmp.nesting_violations.is_empty() {
                log::warn!(
                    "{} cells violate early <= final",
                    cmp.nesting_violations.len()
                );
            }
            let te = eval(&cmp.early)?;
            let tf = eval(&cmp.final_model)?;
            let test_cmp = te
                .as_ref()
                .zip(tf.as_ref())
                .map(|(e, f)| compare_on_test(e, f));
            write_sweep(&cmp.early, te)?;
            write_sweep(&cmp.final_model, tf)?;
            let report = ComparisonReport {
                benchmark: benchmark.clone(),
                seed,
                smooth_r,
                train: cmp,
                test: test_cmp,
            };
            write_file(&args.out.join("comparison.json"), &to_json(&report))?;
        }
        ArchChoice::Early | ArchChoice::Final => {
            let arch = if args.architecture == ArchChoice::Early {
                Architecture::EarlyAbstention
            } else {
                Architecture::FinalModelAbstention
            };
            let s = spec.with_architecture(arch);
            let mut res = sweep_preference_grid(&fit.model, &s, &grid, &opts)?;
            if let Some(r) = smooth_r {
                res = smooth_threshold_grid(&fit.model, &s, &res, r)?;
            }
            let t = eval(&res)?;
            write_sweep(&res, t)?;
        }
    }
    Ok(())
}

/// One `pr_<rate>.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrReport {
    pub benchmark: String,
    pub seed: u64,
    pub target_rate: f64,
    pub xi_k: f64,
    pub train_abstention_rate: f64,
    pub test_abstention_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub classifier: AbstentionClassifier,
    pub roc_auc: f64,
    pub precision_at_recall_20: f64,
    pub average_precision: f64,
    pub cost_ratio: f64,
    pub cost_savings_at_recall_20: Option<CostSavings>,
    pub curve: PRCurve,
}

pub fn run_pr(args: &PrArgs) -> Result<Vec<PrReport>, CliError> {
    let cfg = load_run_config(&args.data.config)?;
    let spec = cfg.cascade.to_spec()?;
    let k = spec.len();
    if k < 2 {
        return Err(CliError::Usage(
            "abstention prediction needs at least two models".into(),
        ));
    }
    let mode = resolve_mode(args.data.mode, &cfg);
    let seed = args.data.seed.or(cfg.seed).unwrap_or(0);
    let train_n = args.data.train_n.or(cfg.train_n).unwrap_or(DEFAULT_TRAIN_N);
    let p = prepare(&args.data.data, &cfg, &spec, mode, seed, train_n)?;
    // final-model confidences come from the calibrated scores; features stay raw
    let (cal_train, cal_test) = match mode {
        SchemaMode::Raw => {
            let maps = fit_dataset_calibration(&p.train)?;
            (
                apply_dataset_calibration(&p.train, &maps),
                apply_dataset_calibration(&p.test, &maps),
            )
        }
        SchemaMode::Calibrated => (p.train.clone(), p.test.clone()),
    };
    let cost_ratio = cfg.cost_ratio.unwrap_or_else(|| cost_ratio_from(&spec));
    let rates: Vec<f64> = if !args.rate.is_empty() {
        args.rate.clone()
    } else {
        cfg.rates.clone().unwrap_or_else(|| DEFAULT_RATES.to_vec())
    };
    ensure_dir(&args.out)?;
    let mut reports = Vec::with_capacity(rates.len());
    for rate in rates {
        let labeling = label_abstentions(&cal_train.scores(k - 1), rate)?;
        let clf = fit_abstention_classifier(&p.train.score_rows(k - 1), &labeling)?;
        let test_labels = labeling.apply(&cal_test.scores(k - 1));
        let test_rows = p.test.score_rows(k - 1);
        let curve = precision_recall(&clf, &test_rows, &test_labels)?;
        let scores: Vec<f64> = test_rows.iter().map(|r| clf.score(r)).collect();
        let prec = curve.precision_at_recall(SAVINGS_RECALL);
        let savings = cost_savings_estimate(curve.baseline, SAVINGS_RECALL, prec, cost_ratio).ok();
        let report = PrReport {
            benchmark: p.train.benchmark.clone(),
            seed: p.seed,
            target_rate: rate,
            xi_k: labeling.xi_k,
            train_abstention_rate: labeling.realized_rate(),
            test_abstention_rate: curve.baseline,
            n_train: p.train.len(),
            n_test: p.test.len(),
            roc_auc: roc_auc(&scores, &test_labels),
            precision_at_recall_20: prec,
            average_precision: curve.average_precision(),
            cost_ratio,
            cost_savings_at_recall_20: savings,
            classifier: clf,
            curve,
        };
        write_file(
            &args.out.join(format!("pr_{}.json", rate_tag(rate))),
            &to_json(&report),
        )?;
        reports.push(report);
    }
    Ok(reports)
}

/// First-to-last expected cost ratio, or the default when it is undefined.
fn cost_ratio_from(spec: &CascadeSpec) -> f64 {
    let c = spec.expected_costs();
    let (first, last) = (c[0], c[c.len() - 1]);
    if last > 0.0 && first > 0.0 && first <= last {
        first / last
    } else {
        DEFAULT_COST_RATIO
    }
}

/// `0.3` → `"0.30"`; finer rates keep their full decimal form.
fn rate_tag(rate: f64) -> String {
    let two = format!("{rate:.2}");
    if two.parse::<f64>() == Ok(rate) {
        two
    } else {
        format!("{rate}")
    }
}

/// Human-readable decision path for one query.
pub fn trace_route(
    spec: &CascadeSpec,
    t: &ThresholdVector,
    rec: &QueryRecord,
) -> Result<Vec<String>, CliError> {
    validate_thresholds(spec, t)?;
    rec.validate(spec.len())?;
    let k = spec.len();
    let mut lines = Vec::new();
    let mut cost = 0.0;
    for i in 0..k {
        let name = &spec.models()[i].name;
        let c = rec.confidences[i];
        cost += rec.costs[i];
        let action = step_action(t, i, c);
        let rule = match action {
            StepAction::Abstain => format!("{c} < xi_{} = {}", i + 1, t.abstention[i]),
            StepAction::Answer if i + 1 == k => format!("{c} >= xi_{} = {}", k, t.abstention[i]),
            StepAction::Answer => format!("{c} > phi_{} = {}", i + 1, t.deferral[i]),
            StepAction::Defer => {
                format!(
                    "xi_{0} = {1} <= {c} <= phi_{0} = {2}",
                    i + 1,
                    t.abstention[i],
                    t.deferral[i]
                )
            }
        };
        let verb = match action {
            StepAction::Abstain => "abstain",
            StepAction::Answer => "answer",
            StepAction::Defer => "defer",
        };
        lines.push(format!(
            "model {} ({name}): {rule} -> {verb} (cumulative cost {cost})",
            i + 1
        ));
        if action != StepAction::Defer {
            break;
        }
    }
    let out = route(spec, t, rec);
    lines.push(format!(
        "outcome: {:?}, cumulative cost {}, error {}",
        out.decision, out.cumulative_cost, out.was_error
    ));
    Ok(lines)
}

pub fn run_route(args: &RouteArgs) -> Result<Vec<String>, CliError> {
    let cfg = load_run_config(&args.config)?;
    let spec = cfg.cascade.to_spec()?;
    let k = spec.len();
    if args.conf.len() != k {
        return Err(CliError::Usage(format!(
            "--conf needs {k} values, got {}",
            args.conf.len()
        )));
    }
    let correct = if args.correct.is_empty() {
        vec![true; k]
    } else if args.correct.len() == k && args.correct.iter().all(|&c| c <= 1) {
        args.correct.iter().map(|&c| c == 1).collect()
    } else {
        return Err(CliError::Usage(format!(
            "--correct needs {k} values of 0 or 1"
        )));
    };
    let t = ThresholdVector::new(args.phi.clone(), args.xi.clone());
    let rec = QueryRecord {
        query_id: "cli".into(),
        confidences: args.conf.clone(),
        correct,
        costs: spec.expected_costs(),
    };
    trace_route(&spec, &t, &rec)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Fit(a) => run_fit(a).map(|_| ()),
        Command::Sweep(a) => run_sweep(a),
        Command::Pr(a) => run_pr(a).map(|_| ()),
        Command::Route(a) => {
            for line in run_route(a)? {
                println!("{line}");
            }
            Ok(())
        }
    }
}
