//! Detection, repair and model scoring.
//!
//! Precision, recall and F1 use the 0/0 → 0 convention throughout.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{silhouette, EncodedMatrix, EncodedTarget, ModelError, Predictions, Task};
use crate::tabular::{Dataset, DetectionMask};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("datasets are not aligned: {0}")]
    ShapeMismatch(String),
    #[error("predictions ({predictions}) and truth ({truth}) differ in length")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("prediction kind does not match task {0}")]
    TaskMismatch(Task),
    #[error("no test rows to score")]
    EmptyTruth,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DetectionScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        DetectionScore { tp, fp, fn_, precision, recall, f1: f1(precision, recall) }
    }
}

pub fn detection_metrics(detected: &DetectionMask, truth: &DetectionMask) -> DetectionScore {
    let tp = detected.intersection_len(truth);
    DetectionScore::from_counts(tp, detected.len() - tp, truth.len() - tp)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouScore {
    pub value: f64,
    /// Neither detector found a true positive; `value` is then 1 by convention.
    pub both_empty: bool,
}

/// Overlap of the true positives of `a` and `b`.
pub fn iou(a: &DetectionMask, b: &DetectionMask, truth: &DetectionMask) -> IouScore {
    let ta = a.intersect(truth);
    let tb = b.intersect(truth);
    let inter = ta.intersection_len(&tb);
    let union = ta.len() + tb.len() - inter;
    if union == 0 {
        IouScore { value: 1.0, both_empty: true }
    } else {
        IouScore { value: inter as f64 / union as f64, both_empty: false }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    pub fn new(precision: f64, recall: f64) -> Self {
        PrfScore { precision, recall, f1: f1(precision, recall) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericRepairScore {
    /// RMSE over z-scored values; absent when nothing was comparable.
    pub rmse: Option<f64>,
    pub compared: usize,
    /// Repaired cells that no longer parse as numbers.
    pub unparsable: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalRepairScore {
    pub score: PrfScore,
    pub correct: usize,
    pub repaired: usize,
    pub erroneous: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairScore {
    pub numeric: NumericRepairScore,
    pub categorical: CategoricalRepairScore,
}

fn check_aligned(repaired: &Dataset, gt: &Dataset) -> Result<()> {
    if repaired.shape() != gt.shape() || !repaired.same_schema(gt) {
        return Err(EvalError::ShapeMismatch(format!(
            "repaired {:?} vs ground truth {:?}",
            repaired.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// RMSE over truth cells in numeric columns that were repaired or still
/// parse. Residuals are divided by the ground-truth column's sample std
/// (1 when the column is constant or too short).
pub fn repair_metrics_numeric(
    repaired: &Dataset,
    gt: &Dataset,
    truth_mask: &DetectionMask,
    repaired_mask: &DetectionMask,
) -> Result<NumericRepairScore> {
    check_aligned(repaired, gt)?;
    let mut scale: BTreeMap<usize, f64> = BTreeMap::new();
    for j in gt.numeric_columns() {
        let v = gt.column(j).parsed_values();
        let s = if v.len() >= 2 {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        scale.insert(j, if s > 0.0 { s } else { 1.0 });
    }
    let mut sum = 0.0;
    let mut compared = 0;
    let mut unparsable = 0;
    for cell in truth_mask.iter() {
        let Some(std) = scale.get(&cell.col) else { continue };
        let after = repaired.cell(*cell).parsed();
        let was_repaired = repaired_mask.contains(cell);
        match (after, gt.cell(*cell).parsed()) {
            (Some(r), Some(g)) => {
                let z = (r - g) / std;
                sum += z * z;
                compared += 1;
            }
            (None, _) if was_repaired => unparsable += 1,
            _ => {}
        }
    }
    let rmse = (compared > 0).then(|| (sum / compared as f64).sqrt());
    Ok(NumericRepairScore { rmse, compared, unparsable })
}

pub fn repair_metrics_categorical(
    repaired: &Dataset,
    gt: &Dataset,
    truth_mask: &DetectionMask,
    repaired_mask: &DetectionMask,
) -> Result<CategoricalRepairScore> {
    check_aligned(repaired, gt)?;
    let categorical: BTreeSet<usize> = (0..gt.col_count()).filter(|&j| !gt.column(j).is_numeric()).collect();
    let in_cat = |m: &DetectionMask| m.iter().filter(|c| categorical.contains(&c.col)).count();
    let correct = repaired_mask
        .iter()
        .filter(|c| categorical.contains(&c.col) && truth_mask.contains(c) && repaired.cell(**c).raw() == gt.cell(**c).raw())
        .count();
    let repaired_n = in_cat(repaired_mask);
    let erroneous = in_cat(truth_mask);
    Ok(CategoricalRepairScore {
        score: PrfScore::new(ratio(correct, repaired_n), ratio(correct, erroneous)),
        correct,
        repaired: repaired_n,
        erroneous,
    })
}

pub fn repair_metrics(
    repaired: &Dataset,
    gt: &Dataset,
    truth_mask: &DetectionMask,
    repaired_mask: &DetectionMask,
) -> Result<RepairScore> {
    Ok(RepairScore {
        numeric: repair_metrics_numeric(repaired, gt, truth_mask, repaired_mask)?,
        categorical: repair_metrics_categorical(repaired, gt, truth_mask, repaired_mask)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    F1Macro,
    Rmse,
    Silhouette,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::F1Macro => "f1_macro",
            MetricKind::Rmse => "rmse",
            MetricKind::Silhouette => "silhouette",
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => MetricKind::F1Macro,
            Task::Regression => MetricKind::Rmse,
            Task::Clustering => MetricKind::Silhouette,
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Rmse)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub metric_kind: MetricKind,
    pub value: f64,
    /// Per-class F1 (classification only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class: BTreeMap<String, f64>,
}

/// Macro F1 over the classes that occur in `truth`.
pub fn macro_f1(predicted: &[usize], truth: &[usize], classes: &[String]) -> Result<ModelScore> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch { predictions: predicted.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let present: BTreeSet<usize> = truth.iter().copied().collect();
    let mut per_class = BTreeMap::new();
    for &c in &present {
        let tp = predicted.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count();
        let pc = predicted.iter().filter(|p| **p == c).count();
        let tc = truth.iter().filter(|t| **t == c).count();
        let name = classes.get(c).cloned().unwrap_or_else(|| c.to_string());
        per_class.insert(name, f1(ratio(tp, pc), ratio(tp, tc)));
    }
    let value = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(ModelScore { metric_kind: MetricKind::F1Macro, value, per_class })
}

pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch { predictions: predicted.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let s: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((s / truth.len() as f64).sqrt())
}

/// Scores predictions against the encoded test set's target (or, for
/// clustering, its feature matrix).
pub fn model_metrics(task: Task, predictions: &Predictions, test: &EncodedMatrix) -> Result<ModelScore> {
    match (task, predictions, &test.target) {
        (Task::Classification, Predictions::Classes(p), EncodedTarget::Classes { labels, classes }) => {
            macro_f1(p, labels, classes)
        }
        (Task::Regression, Predictions::Values(p), EncodedTarget::Numeric(y)) => {
            Ok(ModelScore { metric_kind: MetricKind::Rmse, value: rmse(p, y)?, per_class: BTreeMap::new() })
        }
        (Task::Clustering, Predictions::Clusters(a), _) => Ok(ModelScore {
            metric_kind: MetricKind::Silhouette,
            value: silhouette(&test.features, a)?,
            per_class: BTreeMap::new(),
        }),
        _ => Err(EvalError::TaskMismatch(task)),
    }
}
