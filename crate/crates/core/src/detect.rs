//! Error detectors and detector ensembles.
//!
//! Every detector maps a dataset to a [`DetectionMask`]. Row-level detectors
//! (isolation forest, key collision) project their rows onto cells so all
//! detectors can be scored cell by cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{find_violations, ConstraintError, DenialConstraint};
use crate::inject::{CATEGORICAL_DISGUISE_TOKENS, NUMERIC_DISGUISE_CODES};
use crate::model::{self, ModelError, ModelSpec, Task};
use crate::tabular::{CellRef, Dataset, DetectionMask, TabularError};

/// Fence multiplier used by the disguised-value detector for numeric codes.
pub const DISGUISE_FENCE_K: f64 = 3.0;
/// Robust z-score above which a flagged row's cell is blamed.
pub const ROBUST_Z_LIMIT: f64 = 3.0;
pub const DEFAULT_CONTAMINATION: f64 = 0.1;
/// Sampled precision needed for a max-entropy round to accept a detector.
pub const MAX_ENTROPY_ACCEPT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid detector spec: {0}")]
    InvalidSpec(String),
    #[error("no numeric columns to score")]
    NoNumericColumns,
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("label column `{0}` is not categorical")]
    NotCategorical(String),
    #[error("label column `{column}` has {classes} classes, need at least 2")]
    TooFewClasses { column: String, classes: usize },
    #[error("class `{class}` has {count} members, fewer than {folds} folds")]
    ClassTooSmall { class: String, count: usize, folds: usize },
    #[error("{0} needs a label column")]
    MissingLabelColumn(String),
    #[error("max-entropy ensemble needs an oracle mask")]
    MissingOracle,
    #[error("no constraints available for the rule detector")]
    NoConstraints,
    #[error("unknown constraint id `{0}`")]
    UnknownConstraint(String),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DetectError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum DetectorSpec {
    Mvd,
    Disguised,
    Sd {
        n: f64,
    },
    Iqr {
        k: f64,
    },
    Iforest {
        trees: usize,
        subsample: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        contamination: Option<f64>,
    },
    /// Empty `ids` selects every loaded constraint.
    Rule {
        #[serde(default)]
        ids: Vec<String>,
    },
    /// Empty `key_columns` keys on every column.
    KeyCollision {
        #[serde(default)]
        key_columns: Vec<String>,
    },
    Mislabel {
        folds: usize,
        base: String,
        #[serde(default)]
        label_column: Option<String>,
    },
    MinK {
        k: usize,
        base: Vec<DetectorSpec>,
    },
    MaxEntropy {
        base: Vec<DetectorSpec>,
        label_budget: usize,
    },
}

impl DetectorSpec {
    pub fn short_name(&self) -> &'static str {
        match self {
            DetectorSpec::Mvd => "mvd",
            DetectorSpec::Disguised => "fahes",
            DetectorSpec::Sd { .. } => "sd",
            DetectorSpec::Iqr { .. } => "iqr",
            DetectorSpec::Iforest { .. } => "if",
            DetectorSpec::Rule { .. } => "rule",
            DetectorSpec::KeyCollision { .. } => "dedup",
            DetectorSpec::Mislabel { .. } => "cl",
            DetectorSpec::MinK { .. } => "mink",
            DetectorSpec::MaxEntropy { .. } => "maxent",
        }
    }

    pub fn is_ensemble(&self) -> bool {
        matches!(self, DetectorSpec::MinK { .. } | DetectorSpec::MaxEntropy { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DetectError::InvalidSpec(m.to_string()));
        match self {
            DetectorSpec::Sd { n } if !(*n > 0.0) => bad("sd needs n > 0"),
            DetectorSpec::Iqr { k } if !(*k > 0.0) => bad("iqr needs k > 0"),
            DetectorSpec::Iforest { trees, subsample, contamination, .. } => {
                if *trees == 0 || *subsample < 2 {
                    bad("if needs trees >= 1 and subsample >= 2")
                } else if contamination.is_some_and(|c| !(0.0..=1.0).contains(&c)) {
                    bad("if contamination must lie in [0, 1]")
                } else {
                    Ok(())
                }
            }
            DetectorSpec::Mislabel { folds, base, .. } => {
                if *folds < 2 {
                    return bad("cl needs folds >= 2");
                }
                ModelSpec::parse(base, Task::Classification)?;
                Ok(())
            }
            DetectorSpec::MinK { k, base } => {
                if *k == 0 || *k > base.len() {
                    return bad("mink needs 1 <= k <= number of base detectors");
                }
                base.iter().try_for_each(DetectorSpec::validate)
            }
            DetectorSpec::MaxEntropy { base, label_budget } => {
                if base.is_empty() {
                    return bad("maxent needs at least one base detector");
                }
                if *label_budget < base.len() {
                    return bad("maxent label_budget must be >= number of base detectors");
                }
                base.iter().try_for_each(DetectorSpec::validate)
            }
            _ => Ok(()),
        }
    }
}

fn default_base() -> Vec<DetectorSpec> {
    vec![
        DetectorSpec::Mvd,
        DetectorSpec::Disguised,
        DetectorSpec::Sd { n: 3.0 },
        DetectorSpec::Iqr { k: 1.5 },
    ]
}

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(sep)
}

impl fmt::Display for DetectorSpec {
    /// Short form accepted by [`FromStr`]. Ensemble bases are `+`-joined and
    /// use their default parameters when parsed back.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.short_name();
        match self {
            DetectorSpec::Mvd | DetectorSpec::Disguised => f.write_str(name),
            DetectorSpec::Sd { n } => write!(f, "sd:n={n}"),
            DetectorSpec::Iqr { k } => write!(f, "iqr:k={k}"),
            DetectorSpec::Iforest { trees, subsample, seed, contamination } => {
                write!(f, "if:trees={trees},subsample={subsample}")?;
                if let Some(s) = seed {
                    write!(f, ",seed={s}")?;
                }
                if let Some(c) = contamination {
                    write!(f, ",contamination={c}")?;
                }
                Ok(())
            }
            DetectorSpec::Rule { ids } if ids.is_empty() => f.write_str("rule"),
            DetectorSpec::Rule { ids } => write!(f, "rule:ids={}", ids.join("+")),
            DetectorSpec::KeyCollision { key_columns } if key_columns.is_empty() => f.write_str("dedup"),
            DetectorSpec::KeyCollision { key_columns } => write!(f, "dedup:keys={}", key_columns.join("+")),
            DetectorSpec::Mislabel { folds, base, label_column } => {
                write!(f, "cl:folds={folds},model={base}")?;
                if let Some(l) = label_column {
                    write!(f, ",label={l}")?;
                }
                Ok(())
            }
            DetectorSpec::MinK { k, base } => write!(f, "mink:k={k},base={}", join(base, "+")),
            DetectorSpec::MaxEntropy { base, label_budget } => {
                write!(f, "maxent:budget={label_budget},base={}", join(base, "+"))
            }
        }
    }
}

impl FromStr for DetectorSpec {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = crate::parse_spec_string(s).map_err(DetectError::InvalidSpec)?;
        let allowed: &[&str] = match name.as_str() {
            "mvd" | "fahes" => &[],
            "sd" => &["n"],
            "iqr" => &["k"],
            "if" => &["trees", "subsample", "seed", "contamination"],
            "rule" => &["ids"],
            "dedup" => &["keys"],
            "cl" => &["folds", "model", "label"],
            "mink" => &["k", "base"],
            "maxent" => &["budget", "base"],
            other => return Err(DetectError::InvalidSpec(format!("unknown detector `{other}`"))),
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(DetectError::InvalidSpec(format!("unknown parameter `{k}` for `{name}`")));
        }
        let num = |key: &str, default: f64| -> Result<f64> {
            params.get(key).map_or(Ok(default), |v| {
                v.parse().map_err(|_| DetectError::InvalidSpec(format!("`{key}={v}` is not a number")))
            })
        };
        let int = |key: &str, default: usize| -> Result<usize> {
            params.get(key).map_or(Ok(default), |v| {
                v.parse().map_err(|_| DetectError::InvalidSpec(format!("`{key}={v}` is not a non-negative integer")))
            })
        };
        let list = |key: &str| -> Vec<String> {
            params.get(key).map_or(Vec::new(), |v| v.split('+').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        };
        let base = || -> Result<Vec<DetectorSpec>> {
            match params.get("base") {
                None => Ok(default_base()),
                Some(_) => list("base").iter().map(|b| b.parse()).collect(),
            }
        };
        let spec = match name.as_str() {
            "mvd" => DetectorSpec::Mvd,
            "fahes" => DetectorSpec::Disguised,
            "sd" => DetectorSpec::Sd { n: num("n", 3.0)? },
            "iqr" => DetectorSpec::Iqr { k: num("k", 1.5)? },
            "if" => DetectorSpec::Iforest {
                trees: int("trees", 100)?,
                subsample: int("subsample", 256)?,
                seed: params.contains_key("seed").then(|| int("seed", 0)).transpose()?.map(|s| s as u64),
                contamination: params.contains_key("contamination").then(|| num("contamination", 0.0)).transpose()?,
            },
            "rule" => DetectorSpec::Rule { ids: list("ids") },
            "dedup" => DetectorSpec::KeyCollision { key_columns: list("keys") },
            "cl" => DetectorSpec::Mislabel {
                folds: int("folds", 5)?,
                base: params.get("model").cloned().unwrap_or_else(|| "logit".into()),
                label_column: params.get("label").cloned(),
            },
            "mink" => DetectorSpec::MinK { k: int("k", 2)?, base: base()? },
            _ => {
                let base = base()?;
                let budget = int("budget", 20 * base.len())?;
                DetectorSpec::MaxEntropy { base, label_budget: budget }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Inputs some detectors need beyond the dataset itself.
#[derive(Clone, Debug, Default)]
pub struct DetectionContext {
    pub constraints: Vec<DenialConstraint>,
    /// Ground-truth labels for cells (max-entropy sampling).
    pub oracle: Option<DetectionMask>,
    pub label_column: Option<String>,
    /// Known injected error rate, used as the isolation-forest contamination.
    pub error_rate: Option<f64>,
    /// Fallback seed for randomized detectors without an explicit one.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxEntropyRound {
    pub round: usize,
    pub detector: String,
    pub sampled: usize,
    pub sampled_precision: f64,
    pub entropy: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorRun {
    pub spec: DetectorSpec,
    pub mask: DetectionMask,
    /// Wall-clock seconds.
    pub runtime: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<MaxEntropyRound>,
}

pub fn run_detector(ds: &Dataset, spec: &DetectorSpec, ctx: &DetectionContext) -> Result<DetectorRun> {
    spec.validate()?;
    let start = Instant::now();
    let mut rounds = Vec::new();
    let mut mask = match spec {
        DetectorSpec::Mvd => detect_missing(ds),
        DetectorSpec::Disguised => detect_disguised(ds),
        DetectorSpec::Sd { n } => detect_outliers_sd(ds, *n),
        DetectorSpec::Iqr { k } => detect_outliers_iqr(ds, *k),
        DetectorSpec::Iforest { trees, subsample, seed, contamination } => detect_outliers_iforest(
            ds,
            *trees,
            *subsample,
            seed.unwrap_or(ctx.seed),
            contamination.or(ctx.error_rate).unwrap_or(DEFAULT_CONTAMINATION),
        )?,
        DetectorSpec::Rule { ids } => {
            if ctx.constraints.is_empty() {
                return Err(DetectError::NoConstraints);
            }
            let chosen: Vec<DenialConstraint> = if ids.is_empty() {
                ctx.constraints.clone()
            } else {
                ids.iter()
                    .map(|id| {
                        ctx.constraints
                            .iter()
                            .find(|c| &c.id == id)
                            .cloned()
                            .ok_or_else(|| DetectError::UnknownConstraint(id.clone()))
                    })
                    .collect::<Result<_>>()?
            };
            find_violations(ds, &chosen)?
        }
        DetectorSpec::KeyCollision { key_columns } => {
            let keys: Vec<String> = if key_columns.is_empty() {
                ds.column_names().iter().map(|s| s.to_string()).collect()
            } else {
                key_columns.clone()
            };
            detect_duplicates(ds, &keys)?
        }
        DetectorSpec::Mislabel { folds, base, label_column } => {
            let label = label_column
                .as_deref()
                .or(ctx.label_column.as_deref())
                .ok_or_else(|| DetectError::MissingLabelColumn("cl".into()))?;
            let model = ModelSpec::parse(base, Task::Classification)?;
            detect_mislabels(ds, label, *folds, &model, ctx.seed)?
        }
        DetectorSpec::MinK { k, base } => {
            let masks = base.iter().map(|b| run_detector(ds, b, ctx).map(|r| r.mask)).collect::<Result<Vec<_>>>()?;
            ensemble_min_k(&masks, *k)?
        }
        DetectorSpec::MaxEntropy { base, label_budget } => {
            let oracle = ctx.oracle.as_ref().ok_or(DetectError::MissingOracle)?;
            let runs = base.iter().map(|b| run_detector(ds, b, ctx)).collect::<Result<Vec<_>>>()?;
            let named: Vec<(String, DetectionMask)> = runs.into_iter().map(|r| (r.spec.to_string(), r.mask)).collect();
            let (mask, log) = ensemble_max_entropy(&named, oracle, *label_budget, ctx.seed)?;
            rounds = log;
            mask
        }
    };
    mask.source = spec.to_string();
    Ok(DetectorRun { spec: spec.clone(), mask, runtime: start.elapsed().as_secs_f64(), rounds })
}

pub fn detect_missing(ds: &Dataset) -> DetectionMask {
    DetectionMask::from_cells("mvd", ds.all_cells().filter(|c| ds.cell(*c).is_empty()))
}

/// Linear interpolation between order statistics at index `p * (n - 1)`.
/// `sorted` must be non-empty and ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `[Q1 - k * IQR, Q3 + k * IQR]`, or `None` for an empty column.
pub fn iqr_fence(values: &[f64], k: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile(&s, 0.25);
    let q3 = quantile(&s, 0.75);
    let iqr = q3 - q1;
    Some((q1 - k * iqr, q3 + k * iqr))
}

/// `-?d{2,}` with a single repeated digit, e.g. `99999` or `-111`.
pub fn is_repeated_digit(raw: &str) -> bool {
    let body = raw.trim().strip_prefix('-').unwrap_or(raw.trim());
    let mut chars = body.chars();
    match chars.next() {
        Some(first) if first.is_ascii_digit() => body.len() >= 2 && chars.all(|c| c == first),
        _ => false,
    }
}

/// Known placeholder strings, numeric codes, or one character repeated 3+ times.
pub fn is_disguise_token(raw: &str) -> bool {
    let t = raw.trim();
    if CATEGORICAL_DISGUISE_TOKENS.iter().any(|tok| tok.eq_ignore_ascii_case(t)) || NUMERIC_DISGUISE_CODES.contains(&t) {
        return true;
    }
    let mut chars = t.chars();
    match chars.next() {
        Some(first) => t.chars().count() >= 3 && chars.all(|c| c == first),
        None => false,
    }
}

pub fn detect_disguised(ds: &Dataset) -> DetectionMask {
    let mut mask = DetectionMask::new("fahes");
    for (j, col) in ds.columns().iter().enumerate() {
        if col.is_numeric() {
            let Some((lo, hi)) = iqr_fence(&col.parsed_values(), DISGUISE_FENCE_K) else { continue };
            for (i, c) in col.cells().iter().enumerate() {
                if let Some(v) = c.parsed() {
                    if is_repeated_digit(c.raw()) && (v < lo || v > hi) {
                        mask.insert(CellRef::new(i, j));
                    }
                }
            }
        } else {
            for (i, c) in col.cells().iter().enumerate() {
                if is_disguise_token(c.raw()) {
                    mask.insert(CellRef::new(i, j));
                }
            }
        }
    }
    mask
}

fn flag_numeric(ds: &Dataset, source: &str, min_parsed: usize, mut outside: impl FnMut(&[f64]) -> Box<dyn Fn(f64) -> bool>) -> DetectionMask {
    let mut mask = DetectionMask::new(source);
    for j in ds.numeric_columns() {
        let col = ds.column(j);
        let values = col.parsed_values();
        if values.len() < min_parsed {
            continue;
        }
        let test = outside(&values);
        for (i, c) in col.cells().iter().enumerate() {
            let flagged = match c.parsed() {
                Some(v) => test(v),
                None => c.is_unparsable(),
            };
            if flagged {
                mask.insert(CellRef::new(i, j));
            }
        }
    }
    mask
}

pub fn detect_outliers_sd(ds: &Dataset, n: f64) -> DetectionMask {
    flag_numeric(ds, "sd", 3, |v| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        Box::new(move |x| (x - mean).abs() > n * std)
    })
}

pub fn detect_outliers_iqr(ds: &Dataset, k: f64) -> DetectionMask {
    flag_numeric(ds, "iqr", 1, |v| {
        let (lo, hi) = iqr_fence(v, k).expect("non-empty column");
        Box::new(move |x| x < lo || x > hi)
    })
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn harmonic(i: usize) -> f64 {
    if i < 64 {
        (1..=i).map(|j| 1.0 / j as f64).sum()
    } else {
        let x = i as f64;
        x.ln() + EULER_GAMMA + 1.0 / (2.0 * x) - 1.0 / (12.0 * x * x)
    }
}

/// Average unsuccessful-search path length in a BST of `n` points.
pub fn avg_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        _ => 2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64,
    }
}

enum ITree {
    Leaf(usize),
    Split { feature: usize, threshold: f64, left: Box<ITree>, right: Box<ITree> },
}

fn build_itree(x: &[Vec<f64>], idx: &mut [usize], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> ITree {
    if depth >= limit || idx.len() <= 1 {
        return ITree::Leaf(idx.len());
    }
    let d = x[0].len();
    let ranges: Vec<(usize, f64, f64)> = (0..d)
        .filter_map(|f| {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(x[i][f]), hi.max(x[i][f])));
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    let Some(&(feature, lo, hi)) = ranges.choose(rng) else {
        return ITree::Leaf(idx.len());
    };
    let threshold = rng.random_range(lo..hi);
    let mut split = 0;
    for i in 0..idx.len() {
        if x[idx[i]][feature] < threshold {
            idx.swap(i, split);
            split += 1;
        }
    }
    let (l, r) = idx.split_at_mut(split);
    ITree::Split {
        feature,
        threshold,
        left: Box::new(build_itree(x, l, depth + 1, limit, rng)),
        right: Box::new(build_itree(x, r, depth + 1, limit, rng)),
    }
}

fn path_length(tree: &ITree, p: &[f64]) -> f64 {
    let mut node = tree;
    let mut depth = 0.0;
    loop {
        match node {
            ITree::Leaf(size) => return depth + avg_path_length(*size),
            ITree::Split { feature, threshold, left, right } => {
                node = if p[*feature] < *threshold { left } else { right };
                depth += 1.0;
            }
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    quantile(sorted, 0.5)
}

/// Anomaly score `2^(-E[h(x)] / c(psi))` per row over the numeric columns,
/// unparsable or empty values imputed with the column median.
pub fn iforest_scores(ds: &Dataset, trees: usize, subsample: usize, seed: u64) -> Result<Vec<f64>> {
    let cols = ds.numeric_columns();
    if cols.is_empty() {
        return Err(DetectError::NoNumericColumns);
    }
    let n = ds.row_count();
    if n < 2 {
        return Err(DetectError::TooFewRows { needed: 2, found: n });
    }
    let medians: Vec<f64> = cols
        .iter()
        .map(|&j| {
            let mut v = ds.column(j).parsed_values();
            v.sort_by(f64::total_cmp);
            if v.is_empty() { 0.0 } else { median(&v) }
        })
        .collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| cols.iter().zip(&medians).map(|(&j, m)| ds.cell(CellRef::new(i, j)).parsed().unwrap_or(*m)).collect())
        .collect();
    let psi = subsample.min(n);
    let limit = (psi as f64).log2().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forest: Vec<ITree> = (0..trees)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, n, psi).into_vec();
            build_itree(&x, &mut idx, 0, limit, &mut rng)
        })
        .collect();
    let c = avg_path_length(psi);
    Ok(x
        .iter()
        .map(|p| {
            let h = forest.iter().map(|t| path_length(t, p)).sum::<f64>() / trees as f64;
            if c > 0.0 { 2f64.powf(-h / c) } else { 0.5 }
        })
        .collect())
}

pub fn detect_outliers_iforest(ds: &Dataset, trees: usize, subsample: usize, seed: u64, contamination: f64) -> Result<DetectionMask> {
    let scores = iforest_scores(ds, trees, subsample, seed)?;
    let n = scores.len();
    let count = ((contamination * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let cols = ds.numeric_columns();
    let robust: Vec<(f64, f64)> = cols
        .iter()
        .map(|&j| {
            let mut v = ds.column(j).parsed_values();
            if v.is_empty() {
                return (0.0, 0.0);
            }
            v.sort_by(f64::total_cmp);
            let med = median(&v);
            let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
            dev.sort_by(f64::total_cmp);
            (med, median(&dev))
        })
        .collect();
    let mut mask = DetectionMask::new("if");
    for &row in order.iter().take(count.min(n)) {
        let blamed: Vec<usize> = cols
            .iter()
            .zip(&robust)
            .filter(|(&j, &(med, mad))| {
                ds.cell(CellRef::new(row, j)).parsed().is_some_and(|x| {
                    if mad == 0.0 { x != med } else { (x - med).abs() / (1.4826 * mad) > ROBUST_Z_LIMIT }
                })
            })
            .map(|(&j, _)| j)
            .collect();
        let chosen = if blamed.is_empty() { &cols } else { &blamed };
        for &j in chosen {
            mask.insert(CellRef::new(row, j));
        }
    }
    Ok(mask)
}

/// Flags all cells of every row whose key tuple was already seen.
pub fn detect_duplicates(ds: &Dataset, key_columns: &[String]) -> Result<DetectionMask> {
    if key_columns.is_empty() {
        return Err(DetectError::InvalidSpec("key collision needs at least one key column".into()));
    }
    let keys = key_columns.iter().map(|k| ds.col_index(k)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut seen: HashMap<Vec<&str>, usize> = HashMap::new();
    let mut mask = DetectionMask::new("dedup");
    for r in 0..ds.row_count() {
        let key: Vec<&str> = keys.iter().map(|&j| ds.raw(r, j)).collect();
        if seen.insert(key, r).is_some() {
            mask.cells.extend((0..ds.col_count()).map(|c| CellRef::new(r, c)));
        }
    }
    Ok(mask)
}

/// Mean predicted probability of each class over the samples labelled with it.
/// Classes without members get an infinite threshold (never used).
pub fn class_thresholds(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_classes];
    let mut count = vec![0usize; n_classes];
    for (p, &y) in probs.iter().zip(labels) {
        sum[y] += p[y];
        count[y] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| if c == 0 { f64::INFINITY } else { s / c as f64 }).collect()
}

/// Confident-learning rule: a sample is suspect when its given label's
/// probability is under that class's threshold and another class wins.
pub fn flag_by_thresholds(probs: &[Vec<f64>], labels: &[usize], thresholds: &[f64]) -> Vec<bool> {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let mut best = 0;
            for k in 1..p.len() {
                if p[k] > p[best] {
                    best = k;
                }
            }
            p[y] < thresholds[y] && best != y
        })
        .collect()
}

/// Out-of-fold class probabilities by stratified k-fold cross-fitting.
/// Returns `(rows used, labels, classes, probabilities)`.
pub fn cross_val_proba(
    ds: &Dataset,
    label_column: &str,
    folds: usize,
    base: &ModelSpec,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<String>, Vec<Vec<f64>>)> {
    let lc = ds.col_index(label_column)?;
    let col = ds.column(lc);
    if col.is_numeric() {
        return Err(DetectError::NotCategorical(label_column.into()));
    }
    let rows: Vec<usize> = (0..ds.row_count()).filter(|&r| !col.cells()[r].is_empty()).collect();
    let classes: Vec<String> = rows.iter().map(|&r| ds.raw(r, lc).to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(DetectError::TooFewClasses { column: label_column.into(), classes: classes.len() });
    }
    let labels: Vec<usize> = rows.iter().map(|&r| classes.binary_search(&ds.raw(r, lc).to_string()).unwrap()).collect();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &y) in labels.iter().enumerate() {
        members.entry(y).or_default().push(pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; rows.len()];
    for (y, m) in &mut members {
        if m.len() < folds {
            return Err(DetectError::ClassTooSmall { class: classes[*y].clone(), count: m.len(), folds });
        }
        m.shuffle(&mut rng);
        for (i, &pos) in m.iter().enumerate() {
            fold_of[pos] = i % folds;
        }
    }
    let labelled = ds.select_rows(&rows);
    let mut probs = vec![Vec::new(); rows.len()];
    for f in 0..folds {
        let test_pos: Vec<usize> = (0..rows.len()).filter(|&p| fold_of[p] == f).collect();
        let train_pos: Vec<usize> = (0..rows.len()).filter(|&p| fold_of[p] != f).collect();
        let (tr, te) = model::encode(&labelled.select_rows(&train_pos), &labelled.select_rows(&test_pos), Some(label_column))?;
        let fitted = model::fit(base, &tr)?;
        let p = model::predict_proba(&fitted, &te)?;
        // Fold class lists can be narrower than the full list; remap by name.
        let fold_classes = match &tr.target {
            model::EncodedTarget::Classes { classes: c, .. } => c.clone(),
            _ => unreachable!("categorical label column"),
        };
        for (local, &pos) in test_pos.iter().enumerate() {
            let mut full = vec![0.0; classes.len()];
            for (k, name) in fold_classes.iter().enumerate() {
                full[classes.binary_search(name).unwrap()] = p[local][k];
            }
            probs[pos] = full;
        }
    }
    Ok((rows, labels, classes, probs))
}

pub fn detect_mislabels(ds: &Dataset, label_column: &str, folds: usize, base: &ModelSpec, seed: u64) -> Result<DetectionMask> {
    let (rows, labels, classes, probs) = cross_val_proba(ds, label_column, folds, base, seed)?;
    let thresholds = class_thresholds(&probs, &labels, classes.len());
    let lc = ds.col_index(label_column)?;
    let flags = flag_by_thresholds(&probs, &labels, &thresholds);
    Ok(DetectionMask::from_cells(
        "cl",
        rows.iter().zip(flags).filter(|(_, f)| *f).map(|(&r, _)| CellRef::new(r, lc)),
    ))
}

pub fn ensemble_min_k(masks: &[DetectionMask], k: usize) -> Result<DetectionMask> {
    if k == 0 || k > masks.len() {
        return Err(DetectError::InvalidSpec(format!("min-k needs 1 <= k <= {}, got {k}", masks.len())));
    }
    let mut counts: BTreeMap<CellRef, usize> = BTreeMap::new();
    for m in masks {
        for c in m.iter() {
            *counts.entry(*c).or_default() += 1;
        }
    }
    Ok(DetectionMask::from_cells("mink", counts.into_iter().filter(|(_, n)| *n >= k).map(|(c, _)| c)))
}

fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Greedy budgeted ordering of base detectors. Each round samples up to
/// `label_budget / |base|` undecided cells from every remaining detector,
/// runs the one whose sample has the highest clean/dirty entropy, and keeps
/// its detections iff the sampled precision reaches [`MAX_ENTROPY_ACCEPT`].
pub fn ensemble_max_entropy(
    base: &[(String, DetectionMask)],
    oracle: &DetectionMask,
    label_budget: usize,
    seed: u64,
) -> Result<(DetectionMask, Vec<MaxEntropyRound>)> {
    if base.is_empty() {
        return Err(DetectError::InvalidSpec("max-entropy needs at least one base detector".into()));
    }
    let per_round = (label_budget / base.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decided: BTreeSet<CellRef> = BTreeSet::new();
    let mut remaining: Vec<usize> = (0..base.len()).collect();
    let mut out = DetectionMask::new("maxent");
    let mut log = Vec::new();
    while !remaining.is_empty() {
        let mut best: Option<(usize, f64, f64, usize)> = None; // (position in remaining, entropy, precision, sampled)
        for (pos, &d) in remaining.iter().enumerate() {
            let undecided: Vec<CellRef> = base[d].1.iter().filter(|c| !decided.contains(c)).copied().collect();
            let sample: Vec<CellRef> = undecided.choose_multiple(&mut rng, per_round).copied().collect();
            let dirty = sample.iter().filter(|c| oracle.contains(c)).count();
            let precision = if sample.is_empty() { 0.0 } else { dirty as f64 / sample.len() as f64 };
            let entropy = if sample.is_empty() { 0.0 } else { binary_entropy(precision) };
            if best.is_none_or(|(_, e, _, _)| entropy > e) {
                best = Some((pos, entropy, precision, sample.len()));
            }
        }
        let (pos, entropy, precision, sampled) = best.expect("remaining is non-empty");
        let d = remaining.remove(pos);
        let accepted = sampled > 0 && precision >= MAX_ENTROPY_ACCEPT;
        if accepted {
            out.union_with(&base[d].1);
        }
        decided.extend(base[d].1.iter().copied());
        log.push(MaxEntropyRound {
            round: log.len(),
            detector: base[d].0.clone(),
            sampled,
            sampled_precision: precision,
            entropy,
            accepted,
        });
    }
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{read_csv, NullTokens};

    fn ds(text: &str) -> Dataset {
        read_csv(text.as_bytes(), "t", None, NullTokens::default()).unwrap()
    }

    fn column(values: &[&str]) -> Dataset {
        ds(&format!("x\n{}\n", values.join("\n")))
    }

    fn rows(m: &DetectionMask) -> Vec<usize> {
        m.iter().map(|c| c.row).collect()
    }

    #[test]
    fn missing_flags_empty_and_nan() {
        let d = ds("a,b\n1,\nNaN,x\n3,y\n");
        assert_eq!(detect_missing(&d).len(), 2);
        assert!(detect_missing(&ds("a\n1\n")).is_empty());
    }

    #[test]
    fn sd_worked_example() {
        let d = column(&["1", "1", "1", "1", "1", "1", "1", "1", "1", "11"]);
        assert_eq!(rows(&detect_outliers_sd(&d, 2.0)), vec![9]);
        assert!(detect_outliers_sd(&column(&["5", "5", "5", "5"]), 1.0).is_empty());
    }

    #[test]
    fn sd_flags_unparsable_in_numeric_column() {
        let vals: Vec<String> = (0..10).map(|i| i.to_string()).chain(["abc".to_string()]).collect();
        let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
        assert_eq!(rows(&detect_outliers_sd(&column(&refs), 10.0)), vec![10]);
    }

    #[test]
    fn iqr_worked_example() {
        let mut s = vec![2.0, 4.0, 4.0, 5.0, 5.0, 5.0, 6.0, 6.0, 9.0, 50.0];
        s.sort_by(f64::total_cmp);
        assert_eq!(quantile(&s, 0.25), 4.25);
        assert_eq!(quantile(&s, 0.75), 6.0);
        assert_eq!(iqr_fence(&s, 1.5), Some((1.625, 8.625)));
        let d = column(&["2", "4", "4", "5", "5", "5", "6", "6", "9", "50"]);
        assert_eq!(rows(&detect_outliers_iqr(&d, 1.5)), vec![8, 9]);
        assert!(detect_outliers_iqr(&column(&["5", "5", "5", "5"]), 1.5).is_empty());
    }

    #[test]
    fn disguised_examples() {
        let d = column(&["10", "12", "11", "13", "9999"]);
        assert_eq!(rows(&detect_disguised(&d)), vec![4]);
        let plain: Vec<String> = (0..=100).step_by(7).map(|v| v.to_string()).chain(["42".into()]).collect();
        let refs: Vec<&str> = plain.iter().map(String::as_str).collect();
        assert!(detect_disguised(&column(&refs)).is_empty());
        let phones = ds("phone\n555-1234\n555-9876\n99999\n555-0000\n");
        assert_eq!(rows(&detect_disguised(&phones)), vec![2]);
        let cats = ds("c\nred\nnone\nxxx\nblue\n");
        assert_eq!(rows(&detect_disguised(&cats)), vec![1, 2]);
    }

    #[test]
    fn repeated_digit_shapes() {
        assert!(is_repeated_digit("99999") && is_repeated_digit("-111"));
        assert!(!is_repeated_digit("9") && !is_repeated_digit("990") && !is_repeated_digit("9.9"));
    }

    #[test]
    fn duplicates_flag_second_occurrence() {
        let d = ds("k,v\na,1\nb,2\na,3\n");
        let m = detect_duplicates(&d, &["k".into()]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows().into_iter().collect::<Vec<_>>(), vec![2]);
        assert!(detect_duplicates(&d, &["k".into(), "v".into()]).unwrap().is_empty());
        assert!(detect_duplicates(&d, &[]).is_err());
    }

    #[test]
    fn confident_learning_toy_example() {
        let probs = vec![vec![0.1, 0.9], vec![0.9, 0.1], vec![0.7, 0.3]];
        let labels = vec![0, 0, 0];
        let thresholds = vec![0.8, 0.5];
        assert_eq!(flag_by_thresholds(&probs, &labels, &thresholds), vec![true, false, false]);
        let t = class_thresholds(&probs, &labels, 2);
        assert!((t[0] - 1.7 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn min_k_counting() {
        let c = |r| CellRef::new(r, 0);
        let masks = vec![
            DetectionMask::from_cells("a", [c(1), c(2), c(3)]),
            DetectionMask::from_cells("b", [c(1), c(3)]),
            DetectionMask::from_cells("c", [c(1)]),
        ];
        assert_eq!(ensemble_min_k(&masks, 2).unwrap().cells, BTreeSet::from([c(1), c(3)]));
        assert_eq!(ensemble_min_k(&masks, 1).unwrap().len(), 3);
        assert!(ensemble_min_k(&masks, 4).is_err());
    }

    #[test]
    fn max_entropy_single_and_noise_cases() {
        let c = |r| CellRef::new(r, 0);
        let signal = DetectionMask::from_cells("s", (0..10).map(c));
        let noise = DetectionMask::from_cells("n", (10..20).map(c));
        let oracle = signal.clone();
        let (m, _) = ensemble_max_entropy(&[("s".into(), signal.clone())], &oracle, 5, 0).unwrap();
        assert_eq!(m.cells, signal.cells);
        let (m, log) = ensemble_max_entropy(&[("n".into(), noise.clone()), ("s".into(), signal.clone())], &oracle, 20, 0).unwrap();
        assert_eq!(m.cells, signal.cells);
        assert_eq!(log.len(), 2);
        let (m, _) = ensemble_max_entropy(&[("n".into(), noise)], &oracle, 5, 0).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn avg_path_length_small_cases() {
        assert_eq!(avg_path_length(1), 0.0);
        assert_eq!(avg_path_length(2), 1.0);
        assert!((avg_path_length(256) - 10.248689925634562).abs() < 1e-9);
    }

    #[test]
    fn iforest_zero_contamination_and_identical_rows() {
        let mut text = String::from("a,b\n");
        for i in 0..30 {
            text.push_str(&format!("{},{}\n", i % 5, (i % 5) * 3 + i / 10));
        }
        let d = ds(&text);
        assert!(detect_outliers_iforest(&d, 50, 16, 1, 0.0).unwrap().is_empty());
        let s = iforest_scores(&d, 50, 16, 1).unwrap();
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        // rows 0 and 5 hold the same values
        assert_eq!(d.row_raw(0), d.row_raw(5));
        assert_eq!(s[0], s[5]);
        assert!(matches!(iforest_scores(&ds("c\nx\ny\n"), 10, 8, 0), Err(DetectError::NoNumericColumns)));
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["mvd", "fahes", "sd:n=2", "iqr:k=1.5", "if:trees=10,subsample=64,seed=3", "rule:ids=c1+c2", "dedup:keys=a+b", "cl:folds=3,model=knn"] {
            let spec: DetectorSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
            assert_eq!(spec.to_string().parse::<DetectorSpec>().unwrap(), spec);
        }
        assert!("sd:n=0".parse::<DetectorSpec>().is_err());
        assert!("mink:k=5,base=sd+iqr".parse::<DetectorSpec>().is_err());
        assert!("bogus".parse::<DetectorSpec>().is_err());
    }
}
