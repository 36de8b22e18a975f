//! Score datasets: CSV ingestion and export, synthetic generation from a
//! ground-truth joint model, calibration of raw signals and train/test splits.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{apply_calibration, fit_calibration, CalibrationError, CalibrationModel};
use crate::cascade::{Architecture, CascadeError, CascadeSpec, ModelProfile, QueryRecord};
use crate::joint::{BetaMixture, JointError, MarkovJointModel, PairCopula};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("header has {found} models but the cascade has {expected}")]
    InconsistentK { expected: usize, found: usize },
    #[error("row {row}, column {column}: {reason} (value {value:?})")]
    Value {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("row {row}: duplicate query_id {id:?} (first seen in row {first_row})")]
    DuplicateId {
        row: usize,
        id: String,
        first_row: usize,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("synthetic spec error: {0}")]
    Synthetic(String),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error("calibration of model {model}: {source}")]
    Calibration {
        model: usize,
        source: CalibrationError,
    },
}

/// Whether per-model score columns hold raw signals or calibrated confidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaMode {
    Raw,
    Calibrated,
}

impl SchemaMode {
    fn column(self, i: usize) -> String {
        match self {
            SchemaMode::Raw => format!("praw_{i}"),
            SchemaMode::Calibrated => format!("conf_{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unsplit,
}

/// Per-query scores for a cascade. In raw mode `QueryRecord::confidences`
/// holds the raw signals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDataset {
    pub benchmark: String,
    pub cascade: CascadeSpec,
    pub mode: SchemaMode,
    pub records: Vec<QueryRecord>,
    pub split: Split,
}

impl ScoreDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn k(&self) -> usize {
        self.cascade.len()
    }

    /// Score column `i` (0-based model index).
    pub fn scores(&self, i: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.confidences[i]).collect()
    }

    /// Score rows restricted to the first `m` models.
    pub fn score_rows(&self, m: usize) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.confidences[..m].to_vec())
            .collect()
    }
}

/// Sidecar cascade description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    #[serde(default)]
    pub benchmark: Option<String>,
    pub models: Vec<ModelProfile>,
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
}

fn default_architecture() -> Architecture {
    Architecture::EarlyAbstention
}

impl CascadeConfig {
    pub fn to_spec(&self) -> Result<CascadeSpec, DataError> {
        Ok(CascadeSpec::new(self.models.clone(), self.architecture)?)
    }

    pub fn from_spec(spec: &CascadeSpec, benchmark: Option<String>) -> Self {
        Self {
            benchmark,
            models: spec.models().to_vec(),
            architecture: spec.architecture(),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn load_config(path: &Path) -> Result<CascadeConfig, DataError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| DataError::Config(e.to_string()))
}

fn parse_unit(row: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    let err = |reason: &str| DataError::Value {
        row,
        column: column.to_string(),
        value: raw.to_string(),
        reason: reason.to_string(),
    };
    let v: f64 = raw.trim().parse().map_err(|_| err("not a number"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(err("must lie in [0, 1]"));
    }
    Ok(v)
}

fn parse_bool(row: usize, column: &str, raw: &str) -> Result<bool, DataError> {
    match raw.trim() {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" => Ok(false),
        _ => Err(DataError::Value {
            row,
            column: column.to_string(),
            value: raw.to_string(),
            reason: "expected 0 or 1".into(),
        }),
    }
}

fn parse_cost(row: usize, column: &str, raw: &str, fallback: f64) -> Result<f64, DataError> {
    if raw.trim().is_empty() {
        return Ok(fallback);
    }
    let v: f64 = raw.trim().parse().map_err(|_| DataError::Value {
        row,
        column: column.to_string(),
        value: raw.to_string(),
        reason: "not a number".into(),
    })?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(DataError::Value {
            row,
            column: column.to_string(),
            value: raw.to_string(),
            reason: "must be a nonnegative finite number".into(),
        });
    }
    Ok(v)
}

/// Parses the wide CSV schema. Rows are numbered from 1 (first data row).
pub fn read_dataset<R: Read>(
    reader: R,
    mode: SchemaMode,
    cascade: &CascadeSpec,
    benchmark: &str,
) -> Result<ScoreDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("query_id").ok_or_else(|| DataError::MissingColumn("query_id".into()))?;
    let prefix = match mode {
        SchemaMode::Raw => "praw_",
        SchemaMode::Calibrated => "conf_",
    };
    let found = header
        .iter()
        .filter(|h| {
            h.strip_prefix(prefix)
                .is_some_and(|d| d.parse::<usize>().is_ok())
        })
        .count();
    let k = cascade.len();
    if found != k {
        if found == 0 {
            return Err(DataError::MissingColumn(mode.column(1)));
        }
        return Err(DataError::InconsistentK { expected: k, found });
    }
    let mut cols = Vec::with_capacity(k);
    for i in 1..=k {
        let score = mode.column(i);
        let correct = format!("correct_{i}");
        let cost = format!("cost_{i}");
        let s = col(&score).ok_or_else(|| DataError::MissingColumn(score.clone()))?;
        let c = col(&correct).ok_or_else(|| DataError::MissingColumn(correct.clone()))?;
        cols.push((s, score, c, correct, col(&cost), cost));
    }
    let costs = cascade.expected_costs();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let id = get(id_col).to_string();
        if let Some(&first_row) = seen.get(&id) {
            return Err(DataError::DuplicateId { row, id, first_row });
        }
        seen.insert(id.clone(), row);
        let mut confidences = Vec::with_capacity(k);
        let mut correct = Vec::with_capacity(k);
        let mut cost_v = Vec::with_capacity(k);
        for (i, (s, sname, c, cname, cc, ccname)) in cols.iter().enumerate() {
            confidences.push(parse_unit(row, sname, get(*s))?);
            correct.push(parse_bool(row, cname, get(*c))?);
            cost_v.push(match cc {
                Some(cc) => parse_cost(row, ccname, get(*cc), costs[i])?,
                None => costs[i],
            });
        }
        records.push(QueryRecord {
            query_id: id,
            confidences,
            correct,
            costs: cost_v,
        });
    }
    Ok(ScoreDataset {
        benchmark: benchmark.to_string(),
        cascade: cascade.clone(),
        mode,
        records,
        split: Split::Unsplit,
    })
}

pub fn load_dataset(
    path: &Path,
    mode: SchemaMode,
    cascade: &CascadeSpec,
) -> Result<ScoreDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_dataset(std::io::BufReader::new(file), mode, cascade, &name)
}

pub fn write_dataset<W: Write>(ds: &ScoreDataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let k = ds.k();
    let mut header = vec!["query_id".to_string()];
    for i in 1..=k {
        header.push(ds.mode.column(i));
        header.push(format!("correct_{i}"));
        header.push(format!("cost_{i}"));
    }
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row = vec![r.query_id.clone()];
        for i in 0..k {
            row.push(format!("{}", r.confidences[i]));
            row.push(if r.correct[i] { "1".into() } else { "0".into() });
            row.push(format!("{}", r.costs[i]));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn save_dataset(ds: &ScoreDataset, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_dataset(ds, std::io::BufWriter::new(file))
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub models: Vec<ModelProfile>,
    /// Ground-truth marginal per model.
    pub marginals: Vec<BetaMixture>,
    /// Copula correlation between consecutive models.
    pub rhos: Vec<f64>,
    /// 0 gives calibrated confidences; `m > 0` reports
    /// `σ((1 + m)·logit Φ)` (overconfident), `−1 < m < 0` underconfident.
    #[serde(default)]
    pub miscalibration: f64,
    #[serde(default = "default_calibrated")]
    pub mode: SchemaMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub benchmark: Option<String>,
}

fn default_calibrated() -> SchemaMode {
    SchemaMode::Calibrated
}

impl SyntheticSpec {
    /// Ground-truth joint model.
    pub fn joint_model(&self) -> Result<MarkovJointModel, DataError> {
        let copulas = self
            .rhos
            .iter()
            .map(|&r| PairCopula::gaussian(r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MarkovJointModel::new(self.marginals.clone(), copulas)?)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Samples confidences from the ground-truth model and draws each model's
/// correctness as Bernoulli(Φ_i).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<ScoreDataset, DataError> {
    let k = spec.models.len();
    if spec.n == 0 {
        return Err(DataError::Synthetic("n must be positive".into()));
    }
    if spec.marginals.len() != k || spec.rhos.len() + 1 != k {
        return Err(DataError::Synthetic(format!(
            "{k} models need {k} marginals and {} rhos (got {} and {})",
            k.saturating_sub(1),
            spec.marginals.len(),
            spec.rhos.len()
        )));
    }
    if !(spec.miscalibration > -1.0 && spec.miscalibration.is_finite()) {
        return Err(DataError::Synthetic(
            "miscalibration must be finite and > -1".into(),
        ));
    }
    let cascade = CascadeSpec::new(spec.models.clone(), Architecture::EarlyAbstention)?;
    let model = spec.joint_model()?;
    let phis = model.sample_joint(spec.n, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_C0DE_0000_0001);
    let costs = cascade.expected_costs();
    let width = spec.n.to_string().len();
    let records = phis
        .into_iter()
        .enumerate()
        .map(|(q, phi)| {
            let correct = phi.iter().map(|&p| rng.random_bool(p)).collect();
            let confidences = phi
                .iter()
                .map(|&p| {
                    if spec.miscalibration == 0.0 {
                        p
                    } else {
                        crate::calibration::sigmoid((1.0 + spec.miscalibration) * logit(p))
                    }
                })
                .collect();
            QueryRecord {
                query_id: format!("q{q:0width$}"),
                confidences,
                correct,
                costs: costs.clone(),
            }
        })
        .collect();
    Ok(ScoreDataset {
        benchmark: spec.benchmark.clone().unwrap_or_else(|| "synthetic".into()),
        cascade,
        mode: spec.mode,
        records,
        split: Split::Unsplit,
    })
}

/// Uniform shuffle by `seed`; the first `train_n` records form the train split.
pub fn split_dataset(
    ds: &ScoreDataset,
    train_n: usize,
    seed: u64,
) -> Result<(ScoreDataset, ScoreDataset), DataError> {
    if train_n == 0 || train_n >= ds.len() {
        return Err(DataError::Split(format!(
            "train_n must lie in 1..{}, got {train_n}",
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ids: &[usize], split| ScoreDataset {
        benchmark: ds.benchmark.clone(),
        cascade: ds.cascade.clone(),
        mode: ds.mode,
        records: ids.iter().map(|&i| ds.records[i].clone()).collect(),
        split,
    };
    Ok((
        pick(&idx[..train_n], Split::Train),
        pick(&idx[train_n..], Split::Test),
    ))
}

/// Fits one calibration map per model on a raw-mode dataset.
pub fn fit_dataset_calibration(ds: &ScoreDataset) -> Result<Vec<CalibrationModel>, DataError> {
    (0..ds.k())
        .map(|i| {
            let pairs: Vec<(f64, bool)> = ds
                .records
                .iter()
                .map(|r| (r.confidences[i], r.correct[i]))
                .collect();
            fit_calibration(&pairs).map_err(|source| DataError::Calibration {
                model: i + 1,
                source,
            })
        })
        .collect()
}

/// Maps raw signals to calibrated confidences.
pub fn apply_dataset_calibration(ds: &ScoreDataset, maps: &[CalibrationModel]) -> ScoreDataset {
    let mut out = ds.clone();
    out.mode = SchemaMode::Calibrated;
    for r in &mut out.records {
        for (c, m) in r.confidences.iter_mut().zip(maps) {
            *c = apply_calibration(m, *c);
        }
    }
    out
}
