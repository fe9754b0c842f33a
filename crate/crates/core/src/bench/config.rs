//! Benchmark configuration and dataset materialisation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BenchError, Result};
use crate::constraints::{parse_constraints, DenialConstraint};
use crate::detect::DetectorSpec;
use crate::inject::{inject, make_synthetic, ErrorClass, ErrorEntry, ErrorProfile, InjectionReport, SyntheticSpec};
use crate::model::{ModelSpec, Task};
use crate::repair::RepairSpec;
use crate::tabular::{diff_cells, load_csv, Dataset, DatasetPair, Schema};

/// Value every config file must carry in `config_schema`.
pub const CONFIG_SCHEMA: &str = "cleanbench/1";
pub const DEFAULT_TIMEOUT_SECS: u64 = 600;
pub const DEFAULT_TEST_FRACTION: f64 = 0.3;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4, Scenario::S5];

    /// Whether training / test data come from the ground truth.
    pub fn uses_gt(self) -> (bool, bool) {
        match self {
            Scenario::S1 | Scenario::S5 => (false, false),
            Scenario::S2 => (false, true),
            Scenario::S3 => (true, false),
            Scenario::S4 => (true, true),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Scenario {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| BenchError::Config(format!("unknown scenario `{s}`")))
    }
}

/// A detector given either as a short string (`"sd:n=2"`) or a full table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectorEntry {
    Short(String),
    Full(DetectorSpec),
}

impl DetectorEntry {
    pub fn resolve(&self) -> Result<DetectorSpec> {
        match self {
            DetectorEntry::Short(s) => Ok(s.parse()?),
            DetectorEntry::Full(d) => {
                d.validate()?;
                Ok(d.clone())
            }
        }
    }
}

impl From<&str> for DetectorEntry {
    fn from(s: &str) -> Self {
        DetectorEntry::Short(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RepairEntry {
    Short(String),
    Full(RepairSpec),
}

impl RepairEntry {
    pub fn resolve(&self) -> Result<RepairSpec> {
        match self {
            RepairEntry::Short(s) => Ok(s.parse()?),
            RepairEntry::Full(r) => {
                r.validate()?;
                Ok(r.clone())
            }
        }
    }
}

impl From<&str> for RepairEntry {
    fn from(s: &str) -> Self {
        RepairEntry::Short(s.to_string())
    }
}

/// Where a benchmark dataset comes from. Exactly one of `path` and
/// `synthetic` must be set; `dirty_path` supplies pre-corrupted data instead
/// of running the injector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub dirty_path: Option<PathBuf>,
    /// Column predicted by the downstream models.
    #[serde(default)]
    pub target: Option<String>,
    /// Inferred from the target column when absent.
    #[serde(default)]
    pub task: Option<Task>,
    /// Label column for mislabel detection (defaults to a categorical target).
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub schema: Option<Schema>,
    /// Error classes declared for externally supplied dirty data.
    #[serde(default)]
    pub tags: Option<BTreeSet<ErrorClass>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub error_rates: Vec<f64>,
    #[serde(default)]
    pub outlier_degrees: Vec<f64>,
    #[serde(default)]
    pub fractions: Vec<f64>,
    /// Detectors used by sweeps; the benchmark detectors when empty.
    #[serde(default)]
    pub detectors: Vec<DetectorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub config_schema: String,
    #[serde(default = "default_name")]
    pub name: String,
    pub datasets: Vec<DatasetSource>,
    #[serde(default)]
    pub profile: Vec<ErrorEntry>,
    pub detectors: Vec<DetectorEntry>,
    pub repairs: Vec<RepairEntry>,
    /// Short model specs (`knn`, `dt`, `ridge`, ...), resolved per task.
    pub models: Vec<String>,
    pub scenarios: Vec<Scenario>,
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub constraints: Option<PathBuf>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_name() -> String {
    "bench".into()
}
fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}
fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl BenchmarkConfig {
    /// A config with one dataset and the given grid axes; remaining fields
    /// take their defaults.
    pub fn new(dataset: DatasetSource, detectors: &[&str], repairs: &[&str], models: &[&str], scenarios: &[Scenario], repeats: usize) -> Self {
        BenchmarkConfig {
            config_schema: CONFIG_SCHEMA.into(),
            name: default_name(),
            datasets: vec![dataset],
            profile: Vec::new(),
            detectors: detectors.iter().map(|&d| d.into()).collect(),
            repairs: repairs.iter().map(|&r| r.into()).collect(),
            models: models.iter().map(|m| m.to_string()).collect(),
            scenarios: scenarios.to_vec(),
            repeats,
            master_seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
            constraints: None,
            sweep: SweepConfig::default(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            workers: None,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn error_profile(&self) -> ErrorProfile {
        ErrorProfile::new(self.profile.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.config_schema != CONFIG_SCHEMA {
            return bad(format!("config_schema `{}` is not supported (expected `{CONFIG_SCHEMA}`)", self.config_schema));
        }
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.detectors.is_empty() || self.repairs.is_empty() || self.models.is_empty() {
            return bad("detectors, repairs and models must each be non-empty".into());
        }
        if self.scenarios.is_empty() {
            return bad("scenario set must be non-empty".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return bad(format!("dataset name `{}` used twice", d.name));
            }
            if d.path.is_some() == d.synthetic.is_some() {
                return bad(format!("dataset `{}` needs exactly one of `path` and `synthetic`", d.name));
            }
        }
        self.error_profile().validate()?;
        for d in &self.detectors {
            d.resolve()?;
        }
        for r in &self.repairs {
            r.resolve()?;
        }
        for f in &self.sweep.fractions {
            if !(*f > 0.0 && *f <= 1.0) {
                return bad(format!("sweep fraction {f} outside (0, 1]"));
            }
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            d.path.as_mut().map(fix);
            d.dirty_path.as_mut().map(fix);
        }
        self.constraints.as_mut().map(fix);
    }

    pub fn detector_specs(&self) -> Result<Vec<DetectorSpec>> {
        self.detectors.iter().map(DetectorEntry::resolve).collect()
    }

    pub fn repair_specs(&self) -> Result<Vec<RepairSpec>> {
        self.repairs.iter().map(RepairEntry::resolve).collect()
    }

    pub fn sweep_detectors(&self) -> Result<Vec<DetectorSpec>> {
        if self.sweep.detectors.is_empty() {
            self.detector_specs()
        } else {
            self.sweep.detectors.iter().map(DetectorEntry::resolve).collect()
        }
    }

    pub fn model_specs(&self, task: Task) -> Result<Vec<ModelSpec>> {
        self.models.iter().map(|m| Ok(ModelSpec::parse(m, task)?)).collect()
    }
}

/// Derives an independent 64-bit seed from the master seed and a key, so a
/// cell's randomness never depends on scheduling order.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// A dataset ready for the benchmark: clean and dirty versions plus the
/// facts the planner needs.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub name: String,
    pub pair: DatasetPair,
    pub report: Option<InjectionReport>,
    pub tags: BTreeSet<ErrorClass>,
    pub constraints: Vec<DenialConstraint>,
    pub target: Option<String>,
    pub task: Task,
    pub label_column: Option<String>,
}

impl PreparedDataset {
    pub fn error_rate(&self) -> f64 {
        match &self.report {
            Some(r) => r.achieved_rate,
            None => self.pair.error_mask.len() as f64 / self.pair.dirty.cell_count().max(1) as f64,
        }
    }
}

pub fn load_ground_truth(src: &DatasetSource) -> Result<Dataset> {
    let mut ds = match (&src.path, &src.synthetic) {
        (Some(p), None) => load_csv(p, src.schema.as_ref())?,
        (None, Some(s)) => make_synthetic(s)?,
        _ => return Err(BenchError::Config(format!("dataset `{}` needs exactly one of `path` and `synthetic`", src.name))),
    };
    ds.name = src.name.clone();
    Ok(ds)
}

pub fn load_constraints(path: Option<&Path>, ds: &Dataset) -> Result<Vec<DenialConstraint>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| BenchError::Io(format!("{}: {e}", p.display())))?;
            Ok(parse_constraints(&text, &ds.column_names())?)
        }
    }
}

/// Resolves target, task and label column for a loaded dataset.
pub fn dataset_roles(src: &DatasetSource, gt: &Dataset) -> Result<(Option<String>, Task, Option<String>)> {
    let target = src.target.clone().or_else(|| src.synthetic.as_ref().map(|s| s.target_column().to_string()));
    let target_numeric = match &target {
        Some(t) => Some(gt.column(gt.col_index(t)?).is_numeric()),
        None => None,
    };
    let task = match (src.task, target_numeric) {
        (Some(t), _) => t,
        (None, Some(true)) => Task::Regression,
        (None, Some(false)) => Task::Classification,
        (None, None) => Task::Clustering,
    };
    if task != Task::Clustering && target.is_none() {
        return Err(BenchError::Config(format!("dataset `{}`: {task} needs a target column", src.name)));
    }
    if task == Task::Regression && target_numeric == Some(false) {
        return Err(BenchError::Config(format!("dataset `{}`: regression target is not numeric", src.name)));
    }
    if task == Task::Classification && target_numeric == Some(true) {
        return Err(BenchError::Config(format!("dataset `{}`: classification target is numeric", src.name)));
    }
    let label = src.label_column.clone().or_else(|| (task != Task::Regression && target_numeric == Some(false)).then(|| target.clone()).flatten());
    Ok((target, task, label))
}

/// Loads or generates the clean data and produces its dirty counterpart.
pub fn prepare_dataset(src: &DatasetSource, cfg: &BenchmarkConfig) -> Result<PreparedDataset> {
    let gt = load_ground_truth(src)?;
    let constraints = load_constraints(cfg.constraints.as_deref(), &gt)?;
    let (target, task, label_column) = dataset_roles(src, &gt)?;
    let (pair, report, tags) = match &src.dirty_path {
        Some(p) => {
            let schema: Schema = gt.columns().iter().map(|c| (c.name.clone(), c.declared_type)).collect();
            let mut dirty = load_csv(p, Some(&schema))?;
            dirty.name = src.name.clone();
            let mask = diff_cells(&gt, &dirty)?;
            let tags = src.tags.clone().unwrap_or_default();
            (DatasetPair { ground_truth: gt, dirty, error_mask: mask, provenance: None }, None, tags)
        }
        None => {
            let seed = derive_seed(cfg.master_seed, &format!("inject/{}", src.name));
            let (pair, report) = inject(&gt, &cfg.error_profile(), seed, &constraints)?;
            let mut tags = report.classes();
            if let Some(extra) = &src.tags {
                tags.extend(extra.iter().copied());
            }
            (pair, Some(report), tags)
        }
    };
    Ok(PreparedDataset { name: src.name.clone(), pair, report, tags, constraints, target, task, label_column })
}
