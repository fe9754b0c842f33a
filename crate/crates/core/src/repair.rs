//! Repair strategies: turn a dirty dataset plus a detection mask into a
//! repaired dataset. Only flagged cells are rewritten, except by `delete`,
//! which drops whole rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, EncodedTarget, ModelError, ModelSpec, Predictions};
use crate::tabular::{format_number, CellRef, Dataset, DatasetPair, DetectionMask, TabularError};

/// Rows without any flagged cell that the iterative imputer requires.
pub const ITERATIVE_MIN_CLEAN_ROWS: usize = 10;
/// RMS change in imputed numeric values below which iteration stops.
pub const ITERATIVE_TOLERANCE: f64 = 1e-4;
pub const ITERATIVE_TREE_DEPTH: usize = 16;

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("invalid repair spec: {0}")]
    InvalidSpec(String),
    #[error("no donor rows for cell ({row}, {col})")]
    NoDonors { row: usize, col: usize },
    #[error("iterative imputation needs {needed} rows without flagged cells, found {found}")]
    InsufficientCleanRows { needed: usize, found: usize },
    #[error("ground-truth repair of duplicate rows needs provenance")]
    MissingProvenance,
    #[error("ground-truth repair needs the clean dataset")]
    MissingGroundTruth,
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, RepairError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericStat {
    Mean,
    Median,
    Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "repair", rename_all = "snake_case")]
pub enum RepairSpec {
    Delete,
    ImputeStat { stat: NumericStat },
    ImputeKnn { k: usize },
    ImputeIterative { max_rounds: usize },
    GroundTruth,
}

impl RepairSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RepairSpec::ImputeKnn { k: 0 } => Err(RepairError::InvalidSpec("knn needs k >= 1".into())),
            RepairSpec::ImputeIterative { max_rounds: 0 } => Err(RepairError::InvalidSpec("iter needs max_rounds >= 1".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RepairSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepairSpec::Delete => f.write_str("delete"),
            RepairSpec::ImputeStat { stat: NumericStat::Mean } => f.write_str("mean"),
            RepairSpec::ImputeStat { stat: NumericStat::Median } => f.write_str("median"),
            RepairSpec::ImputeStat { stat: NumericStat::Mode } => f.write_str("mode"),
            RepairSpec::ImputeKnn { k } => write!(f, "knn:k={k}"),
            RepairSpec::ImputeIterative { max_rounds } => write!(f, "iter:max_rounds={max_rounds}"),
            RepairSpec::GroundTruth => f.write_str("gt"),
        }
    }
}

impl FromStr for RepairSpec {
    type Err = RepairError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = crate::parse_spec_string(s).map_err(RepairError::InvalidSpec)?;
        let allowed: &[&str] = match name.as_str() {
            "knn" => &["k"],
            "iter" => &["max_rounds"],
            _ => &[],
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(RepairError::InvalidSpec(format!("unknown parameter `{k}` for `{name}`")));
        }
        let int = |key: &str, default: usize| -> Result<usize> {
            params.get(key).map_or(Ok(default), |v| {
                v.parse().map_err(|_| RepairError::InvalidSpec(format!("`{key}={v}` is not a non-negative integer")))
            })
        };
        let spec = match name.as_str() {
            "delete" => RepairSpec::Delete,
            "mean" => RepairSpec::ImputeStat { stat: NumericStat::Mean },
            "median" => RepairSpec::ImputeStat { stat: NumericStat::Median },
            "mode" => RepairSpec::ImputeStat { stat: NumericStat::Mode },
            "knn" => RepairSpec::ImputeKnn { k: int("k", 5)? },
            "iter" => RepairSpec::ImputeIterative { max_rounds: int("max_rounds", 10)? },
            "gt" => RepairSpec::GroundTruth,
            other => return Err(RepairError::InvalidSpec(format!("unknown repair `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairedDataset {
    pub data: Dataset,
    pub spec: RepairSpec,
    /// Wall-clock seconds.
    pub runtime: f64,
    /// Cells rewritten, in input coordinates (for `delete`: cells of removed rows).
    pub repaired_cells: DetectionMask,
    pub warnings: Vec<String>,
    /// Input row index of every output row.
    pub row_origin: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub round: usize,
    pub rms_change: f64,
    pub categorical_changes: usize,
}

/// Dispatches `spec`. Ground-truth repair needs `pair`, whose dirty side must
/// be `ds`.
pub fn run_repair(ds: &Dataset, mask: &DetectionMask, spec: &RepairSpec, pair: Option<&DatasetPair>) -> Result<RepairedDataset> {
    spec.validate()?;
    mask.validate(ds.row_count(), ds.col_count())?;
    let start = Instant::now();
    let mut out = match spec {
        RepairSpec::Delete => repair_delete(ds, mask),
        RepairSpec::ImputeStat { stat } => repair_impute_stat(ds, mask, *stat),
        RepairSpec::ImputeKnn { k } => repair_impute_knn(ds, mask, *k)?,
        RepairSpec::ImputeIterative { max_rounds } => repair_impute_iterative(ds, mask, *max_rounds)?,
        RepairSpec::GroundTruth => repair_ground_truth(pair.ok_or(RepairError::MissingGroundTruth)?, mask)?,
    };
    out.spec = spec.clone();
    out.runtime = start.elapsed().as_secs_f64();
    Ok(out)
}

fn finish(data: Dataset, spec: RepairSpec, repaired: BTreeSet<CellRef>, warnings: Vec<String>, row_origin: Vec<usize>) -> RepairedDataset {
    RepairedDataset {
        data,
        repaired_cells: DetectionMask { cells: repaired, source: spec.to_string() },
        spec,
        runtime: 0.0,
        warnings,
        row_origin,
    }
}

pub fn repair_delete(ds: &Dataset, mask: &DetectionMask) -> RepairedDataset {
    let flagged = mask.rows();
    let keep: Vec<usize> = (0..ds.row_count()).filter(|r| !flagged.contains(r)).collect();
    let mut warnings = Vec::new();
    if keep.is_empty() && ds.row_count() > 0 {
        warnings.push("every row was flagged; the repaired dataset is empty".into());
    }
    let removed = flagged.iter().flat_map(|&r| (0..ds.col_count()).map(move |c| CellRef::new(r, c))).collect();
    finish(ds.select_rows(&keep), RepairSpec::Delete, removed, warnings, keep)
}

fn flagged_by_column(mask: &DetectionMask) -> BTreeMap<usize, Vec<usize>> {
    let mut by_col: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in mask.iter() {
        by_col.entry(c.col).or_default().push(c.row);
    }
    by_col
}

/// Most frequent string; ties go to the lexicographically smallest.
pub fn mode_of<'a>(values: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (v, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v)
}

fn numeric_stat(values: &mut [f64], stat: NumericStat) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(match stat {
        NumericStat::Mean => values.iter().sum::<f64>() / values.len() as f64,
        NumericStat::Median => crate::detect::quantile(values, 0.5),
        NumericStat::Mode => {
            // sorted, so the first run of maximal length holds the smallest value
            let (mut best, mut best_n, mut i) = (values[0], 0, 0);
            while i < values.len() {
                let j = values[i..].iter().take_while(|v| **v == values[i]).count();
                if j > best_n {
                    best = values[i];
                    best_n = j;
                }
                i += j;
            }
            best
        }
    })
}

/// Replacement value for each flagged column, from its unflagged cells.
fn column_fills(ds: &Dataset, by_col: &BTreeMap<usize, Vec<usize>>, stat: NumericStat) -> BTreeMap<usize, Option<String>> {
    by_col
        .iter()
        .map(|(&j, rows)| {
            let flagged: BTreeSet<usize> = rows.iter().copied().collect();
            let col = ds.column(j);
            let clean = col.cells().iter().enumerate().filter(|(i, _)| !flagged.contains(i)).map(|(_, c)| c);
            let fill = if col.is_numeric() {
                let mut v: Vec<f64> = clean.filter_map(|c| c.parsed()).collect();
                numeric_stat(&mut v, stat).map(format_number)
            } else {
                mode_of(clean.filter(|c| !c.is_empty()).map(|c| c.raw())).map(str::to_string)
            };
            (j, fill)
        })
        .collect()
}

pub fn repair_impute_stat(ds: &Dataset, mask: &DetectionMask, stat: NumericStat) -> RepairedDataset {
    let by_col = flagged_by_column(mask);
    let fills = column_fills(ds, &by_col, stat);
    let mut data = ds.clone();
    let mut repaired = BTreeSet::new();
    let mut warnings = Vec::new();
    for (j, rows) in &by_col {
        match &fills[j] {
            Some(v) => {
                for &r in rows {
                    data.set_raw(CellRef::new(r, *j), v.clone());
                    repaired.insert(CellRef::new(r, *j));
                }
            }
            None => {
                warnings.push(format!("column `{}` has no usable unflagged values; {} cells left empty", ds.column(*j).name, rows.len()));
                for &r in rows {
                    data.set_raw(CellRef::new(r, *j), "");
                }
            }
        }
    }
    finish(data, RepairSpec::ImputeStat { stat }, repaired, warnings, (0..ds.row_count()).collect())
}

pub fn repair_impute_knn(ds: &Dataset, mask: &DetectionMask, k: usize) -> Result<RepairedDataset> {
    let numeric = ds.numeric_columns();
    let flagged = |r: usize, c: usize| mask.contains(&CellRef::new(r, c));
    let value = |r: usize, c: usize| if flagged(r, c) { None } else { ds.cell(CellRef::new(r, c)).parsed() };
    // z-score each numeric column by its unflagged values
    let scale: BTreeMap<usize, (f64, f64)> = numeric
        .iter()
        .map(|&j| {
            let v: Vec<f64> = (0..ds.row_count()).filter_map(|r| value(r, j)).collect();
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            (j, (mean, if std > 0.0 { std } else { 1.0 }))
        })
        .collect();
    let mut data = ds.clone();
    let mut repaired = BTreeSet::new();
    for cell in mask.iter() {
        let (r, j) = (cell.row, cell.col);
        let is_num = ds.column(j).is_numeric();
        let donors: Vec<usize> = (0..ds.row_count())
            .filter(|&s| s != r && !flagged(s, j))
            .filter(|&s| {
                let c = ds.cell(CellRef::new(s, j));
                if is_num { c.parsed().is_some() } else { !c.is_empty() }
            })
            .collect();
        if donors.is_empty() {
            return Err(RepairError::NoDonors { row: r, col: j });
        }
        let mut dist: Vec<(f64, usize)> = donors
            .iter()
            .map(|&s| {
                let d: f64 = numeric
                    .iter()
                    .filter(|&&d| d != j)
                    .filter_map(|&d| {
                        let (a, b) = (value(r, d)?, value(s, d)?);
                        let std = scale[&d].1;
                        Some(((a - b) / std).powi(2))
                    })
                    .sum();
                (d, s)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest: Vec<usize> = dist.iter().take(k).map(|(_, s)| *s).collect();
        let fill = if is_num {
            let vals: Vec<f64> = nearest.iter().map(|&s| ds.cell(CellRef::new(s, j)).parsed().unwrap()).collect();
            format_number(vals.iter().sum::<f64>() / vals.len() as f64)
        } else {
            mode_of(nearest.iter().map(|&s| ds.raw(s, j))).unwrap().to_string()
        };
        data.set_raw(*cell, fill);
        repaired.insert(*cell);
    }
    Ok(finish(data, RepairSpec::ImputeKnn { k }, repaired, Vec::new(), (0..ds.row_count()).collect()))
}

pub fn repair_impute_iterative(ds: &Dataset, mask: &DetectionMask, max_rounds: usize) -> Result<RepairedDataset> {
    impute_iterative_with_trace(ds, mask, max_rounds).map(|(r, _)| r)
}

/// Stat initialisation followed by per-column tree refits, returning the
/// change recorded after each round.
pub fn impute_iterative_with_trace(ds: &Dataset, mask: &DetectionMask, max_rounds: usize) -> Result<(RepairedDataset, Vec<IterationTrace>)> {
    if max_rounds == 0 {
        return Err(RepairError::InvalidSpec("iter needs max_rounds >= 1".into()));
    }
    let dirty_rows = mask.rows();
    let clean = ds.row_count() - dirty_rows.len();
    if clean < ITERATIVE_MIN_CLEAN_ROWS {
        return Err(RepairError::InsufficientCleanRows { needed: ITERATIVE_MIN_CLEAN_ROWS, found: clean });
    }
    let init = repair_impute_stat(ds, mask, NumericStat::Mean);
    let mut data = init.data;
    let mut warnings = init.warnings;
    let by_col = flagged_by_column(mask);
    let mut order: Vec<(usize, Vec<usize>)> = by_col.into_iter().collect();
    order.sort_by_key(|(j, rows)| (rows.len(), *j));

    let mut trace = Vec::new();
    let mut fallback: BTreeSet<usize> = BTreeSet::new();
    for round in 0..max_rounds {
        let mut sq = 0.0;
        let mut n_num = 0usize;
        let mut cat_changes = 0usize;
        for (j, rows) in &order {
            if fallback.contains(j) {
                continue;
            }
            let flagged: BTreeSet<usize> = rows.iter().copied().collect();
            let col = ds.column(*j);
            let target = col.name.clone();
            let train_rows: Vec<usize> = (0..ds.row_count()).filter(|r| !flagged.contains(r)).collect();
            let encoded = model::encode(&data.select_rows(&train_rows), &data.select_rows(rows), Some(&target));
            let (tr, te) = match encoded {
                Ok(pair) if !pair.0.target.is_empty() => pair,
                Ok(_) | Err(ModelError::NoFeatures) | Err(ModelError::EmptyTraining) => {
                    warnings.push(format!("column `{target}`: no usable training data, kept statistical imputation"));
                    fallback.insert(*j);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let spec = if col.is_numeric() {
                ModelSpec::TreeRegressor { max_depth: ITERATIVE_TREE_DEPTH, min_leaf: 1 }
            } else {
                ModelSpec::TreeClassifier { max_depth: ITERATIVE_TREE_DEPTH, min_leaf: 1 }
            };
            let fitted = model::fit(&spec, &tr)?;
            let preds = model::predict(&fitted, &te)?;
            for (local, &pos) in te.rows.iter().enumerate() {
                let at = CellRef::new(rows[pos], *j);
                match (&preds, &tr.target) {
                    (Predictions::Values(v), _) => {
                        let old = data.cell(at).parsed();
                        if let Some(o) = old {
                            sq += (v[local] - o).powi(2);
                            n_num += 1;
                        }
                        data.set_raw(at, format_number(v[local]));
                    }
                    (Predictions::Classes(c), EncodedTarget::Classes { classes, .. }) => {
                        let new = &classes[c[local]];
                        if data.raw(at.row, at.col) != new {
                            cat_changes += 1;
                        }
                        data.set_raw(at, new.clone());
                    }
                    _ => unreachable!("tree task matches the column type"),
                }
            }
        }
        let rms = if n_num == 0 { 0.0 } else { (sq / n_num as f64).sqrt() };
        trace.push(IterationTrace { round: round + 1, rms_change: rms, categorical_changes: cat_changes });
        if rms < ITERATIVE_TOLERANCE && cat_changes == 0 {
            break;
        }
    }
    let repaired: BTreeSet<CellRef> = mask.iter().filter(|c| !data.cell(**c).is_empty()).copied().collect();
    let out = finish(data, RepairSpec::ImputeIterative { max_rounds }, repaired, warnings, (0..ds.row_count()).collect());
    Ok((out, trace))
}

/// Replaces flagged cells with their clean values. Flagged duplicate rows
/// (rows the injector appended) are removed instead.
pub fn repair_ground_truth(pair: &DatasetPair, mask: &DetectionMask) -> Result<RepairedDataset> {
    let gt = &pair.ground_truth;
    let dirty = &pair.dirty;
    let gt_rows = gt.row_count();
    if dirty.row_count() > gt_rows && pair.provenance.is_none() {
        return Err(RepairError::MissingProvenance);
    }
    let mut data = dirty.clone();
    let mut repaired = BTreeSet::new();
    let mut drop: BTreeSet<usize> = BTreeSet::new();
    for cell in mask.iter() {
        if cell.row < gt_rows {
            data.set_raw(*cell, gt.raw(cell.row, cell.col).to_string());
            repaired.insert(*cell);
        } else {
            drop.insert(cell.row);
        }
    }
    for &r in &drop {
        repaired.extend((0..dirty.col_count()).map(|c| CellRef::new(r, c)));
    }
    let keep: Vec<usize> = (0..dirty.row_count()).filter(|r| !drop.contains(r)).collect();
    let data = if drop.is_empty() { data } else { data.select_rows(&keep) };
    Ok(finish(data, RepairSpec::GroundTruth, repaired, Vec::new(), keep))
}
