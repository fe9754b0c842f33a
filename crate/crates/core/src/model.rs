//! Downstream models and the feature encoder.
//!
//! All models work on an [`EncodedMatrix`]: numeric columns z-scored with the
//! training mean and sample standard deviation, categorical columns one-hot
//! encoded over the 20 most frequent training categories. Distances are
//! Euclidean everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{Dataset, TabularError};

/// Categories kept per column before bucketing the rest into `other`.
pub const MAX_CATEGORIES: usize = 20;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension mismatch: model expects {expected}, data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("target is incompatible with {0}")]
    IncompatibleTarget(String),
    #[error("singular linear system (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("every feature column was dropped during encoding")]
    NoFeatures,
    #[error("training data is empty")]
    EmptyTraining,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("silhouette needs at least two clusters, found {0}")]
    SingleCluster(usize),
    #[error(transparent)]
    Tabular(#[from] TabularError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged matrix rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EncodedTarget {
    None,
    Numeric(Vec<f64>),
    Classes { labels: Vec<usize>, classes: Vec<String> },
}

impl EncodedTarget {
    pub fn len(&self) -> Option<usize> {
        match self {
            EncodedTarget::None => None,
            EncodedTarget::Numeric(v) => Some(v.len()),
            EncodedTarget::Classes { labels, .. } => Some(labels.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    fn select(&self, idx: &[usize]) -> EncodedTarget {
        match self {
            EncodedTarget::None => EncodedTarget::None,
            EncodedTarget::Numeric(v) => EncodedTarget::Numeric(idx.iter().map(|&i| v[i]).collect()),
            EncodedTarget::Classes { labels, classes } => EncodedTarget::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: classes.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub column: String,
    pub categories: Vec<String>,
    /// Whether the column has an `other` bucket for rarer training categories.
    pub other: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub numeric: Vec<NumericFeature>,
    pub categorical: Vec<CategoricalFeature>,
    pub dropped: Vec<String>,
    pub feature_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub features: Matrix,
    pub target: EncodedTarget,
    pub encoder: EncoderState,
    /// Source rows kept (rows with an unusable target are dropped).
    pub rows: Vec<usize>,
}

impl EncodedMatrix {
    pub fn new(features: Matrix, target: EncodedTarget) -> Self {
        let rows = (0..features.nrows()).collect();
        EncodedMatrix { features, target, encoder: EncoderState::default(), rows }
    }

    pub fn select_rows(&self, idx: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            features: self.features.select_rows(idx),
            target: self.target.select(idx),
            encoder: self.encoder.clone(),
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
        }
    }
}

fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.len() < 2 {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    Some((mean, var.sqrt()))
}

/// Fits the encoder on `train` and applies it to both sets.
pub fn encode(train: &Dataset, test: &Dataset, target: Option<&str>) -> Result<(EncodedMatrix, EncodedMatrix)> {
    if !train.same_schema(test) {
        return Err(TabularError::ShapeMismatch("train and test columns differ".into()).into());
    }
    if train.row_count() == 0 {
        return Err(ModelError::EmptyTraining);
    }
    let target_col = target.map(|t| train.col_index(t)).transpose()?;

    let mut state = EncoderState::default();
    let mut plan: Vec<(usize, bool, usize)> = Vec::new(); // (column, numeric, index into state vec)
    for (j, col) in train.columns().iter().enumerate() {
        if Some(j) == target_col {
            continue;
        }
        if col.is_numeric() {
            match mean_std(&col.parsed_values()) {
                Some((mean, std)) if std > 0.0 => {
                    plan.push((j, true, state.numeric.len()));
                    state.feature_names.push(col.name.clone());
                    state.numeric.push(NumericFeature { column: col.name.clone(), mean, std });
                }
                _ => state.dropped.push(col.name.clone()),
            }
        } else {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for c in col.cells().iter().filter(|c| !c.is_empty()) {
                *counts.entry(c.raw()).or_default() += 1;
            }
            if counts.is_empty() {
                state.dropped.push(col.name.clone());
                continue;
            }
            let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            let other = ranked.len() > MAX_CATEGORIES;
            let categories: Vec<String> = ranked.iter().take(MAX_CATEGORIES).map(|(s, _)| s.to_string()).collect();
            for c in &categories {
                state.feature_names.push(format!("{}={c}", col.name));
            }
            if other {
                state.feature_names.push(format!("{}=<other>", col.name));
            }
            plan.push((j, false, state.categorical.len()));
            state.categorical.push(CategoricalFeature { column: col.name.clone(), categories, other });
        }
    }
    if state.feature_names.is_empty() {
        return Err(ModelError::NoFeatures);
    }

    // Class list spans both sets so test labels unseen in training still score.
    let classes: Option<Vec<String>> = target_col.filter(|&t| !train.column(t).is_numeric()).map(|t| {
        let set: BTreeSet<String> = [train, test]
            .iter()
            .flat_map(|d| d.column(t).cells().iter())
            .filter(|c| !c.is_empty())
            .map(|c| c.raw().to_string())
            .collect();
        set.into_iter().collect()
    });
    let seen: Vec<BTreeSet<&str>> = state
        .categorical
        .iter()
        .map(|f| {
            let col = train.col_index(&f.column).expect("encoded column exists");
            train.column(col).cells().iter().filter(|c| !c.is_empty()).map(|c| c.raw()).collect()
        })
        .collect();

    let apply = |ds: &Dataset| -> EncodedMatrix {
        let width = state.feature_names.len();
        let mut keep = Vec::new();
        let mut num_target = Vec::new();
        let mut labels = Vec::new();
        for r in 0..ds.row_count() {
            match target_col {
                None => keep.push(r),
                Some(t) => {
                    let cell = ds.column(t).cells()[r].clone();
                    if let Some(classes) = &classes {
                        if !cell.is_empty() {
                            keep.push(r);
                            labels.push(classes.binary_search(&cell.raw().to_string()).expect("class indexed"));
                        }
                    } else if let Some(v) = cell.parsed() {
                        keep.push(r);
                        num_target.push(v);
                    }
                }
            }
        }
        let mut m = Matrix::zeros(keep.len(), width);
        for (i, &r) in keep.iter().enumerate() {
            let mut offset = 0;
            for &(j, numeric, k) in &plan {
                let cell = &ds.column(j).cells()[r];
                if numeric {
                    let f = &state.numeric[k];
                    let v = cell.parsed().map_or(0.0, |x| (x - f.mean) / f.std);
                    m.set(i, offset, v);
                    offset += 1;
                } else {
                    let f = &state.categorical[k];
                    if !cell.is_empty() {
                        if let Some(p) = f.categories.iter().position(|c| c == cell.raw()) {
                            m.set(i, offset + p, 1.0);
                        } else if f.other && seen[k].contains(cell.raw()) {
                            m.set(i, offset + f.categories.len(), 1.0);
                        }
                    }
                    offset += f.categories.len() + usize::from(f.other);
                }
            }
        }
        let target = match (&classes, target_col) {
            (_, None) => EncodedTarget::None,
            (Some(classes), Some(_)) => EncodedTarget::Classes { labels, classes: classes.clone() },
            (None, Some(_)) => EncodedTarget::Numeric(num_target),
        };
        EncodedMatrix { features: m, target, encoder: state.clone(), rows: keep }
    };
    Ok((apply(train), apply(test)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
    Clustering,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
            Task::Clustering => "clustering",
        })
    }
}

impl FromStr for Task {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            "clustering" => Ok(Task::Clustering),
            other => Err(ModelError::InvalidSpec(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    KnnClassifier { k: usize },
    KnnRegressor { k: usize },
    TreeClassifier { max_depth: usize, min_leaf: usize },
    TreeRegressor { max_depth: usize, min_leaf: usize },
    Logistic { lr: f64, epochs: usize, l2: f64 },
    Ridge { lambda: f64 },
    KMeans { k: usize, max_iter: usize, restarts: usize, seed: u64 },
}

impl ModelSpec {
    pub fn task(&self) -> Task {
        match self {
            ModelSpec::KnnClassifier { .. } | ModelSpec::TreeClassifier { .. } | ModelSpec::Logistic { .. } => {
                Task::Classification
            }
            ModelSpec::KnnRegressor { .. } | ModelSpec::TreeRegressor { .. } | ModelSpec::Ridge { .. } => {
                Task::Regression
            }
            ModelSpec::KMeans { .. } => Task::Clustering,
        }
    }

    /// Short family name (`knn`, `dt`, `logit`, `ridge`, `kmeans`).
    pub fn short_name(&self) -> &'static str {
        match self {
            ModelSpec::KnnClassifier { .. } | ModelSpec::KnnRegressor { .. } => "knn",
            ModelSpec::TreeClassifier { .. } | ModelSpec::TreeRegressor { .. } => "dt",
            ModelSpec::Logistic { .. } => "logit",
            ModelSpec::Ridge { .. } => "ridge",
            ModelSpec::KMeans { .. } => "kmeans",
        }
    }

    /// Replaces the seed of seeded models; others are returned unchanged.
    pub fn with_seed(&self, seed: u64) -> ModelSpec {
        match self {
            ModelSpec::KMeans { k, max_iter, restarts, .. } => {
                ModelSpec::KMeans { k: *k, max_iter: *max_iter, restarts: *restarts, seed }
            }
            other => other.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        match self {
            ModelSpec::KnnClassifier { k } | ModelSpec::KnnRegressor { k } if *k == 0 => bad("knn k must be >= 1".into()),
            ModelSpec::TreeClassifier { max_depth, min_leaf } | ModelSpec::TreeRegressor { max_depth, min_leaf }
                if *max_depth == 0 || *min_leaf == 0 =>
            {
                bad("tree max_depth and min_leaf must be >= 1".into())
            }
            ModelSpec::Logistic { lr, epochs, l2 } if !(*lr > 0.0) || *epochs == 0 || !(*l2 >= 0.0) => {
                bad("logit needs lr > 0, epochs >= 1, l2 >= 0".into())
            }
            ModelSpec::Ridge { lambda } if !(*lambda >= 0.0) => bad("ridge lambda must be >= 0".into()),
            ModelSpec::KMeans { k, max_iter, restarts, .. } if *k < 2 || *max_iter == 0 || *restarts == 0 => {
                bad("kmeans needs k >= 2, max_iter >= 1, restarts >= 1".into())
            }
            _ => Ok(()),
        }
    }

    /// Parses `name[:param=value,...]`, resolving `knn` and `dt` by task.
    /// Unspecified parameters take the benchmark defaults.
    pub fn parse(s: &str, task: Task) -> Result<ModelSpec> {
        let (name, params) = crate::parse_spec_string(s).map_err(ModelError::InvalidSpec)?;
        let get = |key: &str, default: f64| -> Result<f64> {
            match params.get(key) {
                None => Ok(default),
                Some(v) => v.parse::<f64>().map_err(|_| ModelError::InvalidSpec(format!("`{key}={v}` is not a number"))),
            }
        };
        let int = |key: &str, default: usize| -> Result<usize> {
            let v = get(key, default as f64)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(ModelError::InvalidSpec(format!("`{key}` must be a non-negative integer")));
            }
            Ok(v as usize)
        };
        for key in params.keys() {
            let allowed: &[&str] = match name.as_str() {
                "knn" => &["k"],
                "dt" => &["max_depth", "min_leaf"],
                "logit" => &["lr", "epochs", "l2"],
                "ridge" => &["lambda"],
                "kmeans" => &["k", "max_iter", "restarts", "seed"],
                _ => &[],
            };
            if !allowed.contains(&key.as_str()) {
                return Err(ModelError::InvalidSpec(format!("unknown parameter `{key}` for `{name}`")));
            }
        }
        let spec = match (name.as_str(), task) {
            ("knn", Task::Classification) => ModelSpec::KnnClassifier { k: int("k", 5)? },
            ("knn", Task::Regression) => ModelSpec::KnnRegressor { k: int("k", 5)? },
            ("dt", Task::Classification) => {
                ModelSpec::TreeClassifier { max_depth: int("max_depth", 8)?, min_leaf: int("min_leaf", 5)? }
            }
            ("dt", Task::Regression) => {
                ModelSpec::TreeRegressor { max_depth: int("max_depth", 8)?, min_leaf: int("min_leaf", 5)? }
            }
            ("logit", Task::Classification) => {
                ModelSpec::Logistic { lr: get("lr", 0.1)?, epochs: int("epochs", 500)?, l2: get("l2", 1e-3)? }
            }
            ("ridge", Task::Regression) => ModelSpec::Ridge { lambda: get("lambda", 1.0)? },
            ("kmeans", Task::Clustering) => ModelSpec::KMeans {
                k: int("k", 2)?,
                max_iter: int("max_iter", 100)?,
                restarts: int("restarts", 5)?,
                seed: match params.get("seed") {
                    None => 0,
                    Some(v) => v.parse().map_err(|_| ModelError::InvalidSpec(format!("`seed={v}` is not a u64")))?,
                },
            },
            (n, t) => return Err(ModelError::InvalidSpec(format!("model `{n}` is not available for {t}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    /// Short form accepted by [`ModelSpec::parse`] for the spec's task.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::KnnClassifier { k } | ModelSpec::KnnRegressor { k } => write!(f, "knn:k={k}"),
            ModelSpec::TreeClassifier { max_depth, min_leaf } | ModelSpec::TreeRegressor { max_depth, min_leaf } => {
                write!(f, "dt:max_depth={max_depth},min_leaf={min_leaf}")
            }
            ModelSpec::Logistic { lr, epochs, l2 } => write!(f, "logit:lr={lr},epochs={epochs},l2={l2}"),
            ModelSpec::Ridge { lambda } => write!(f, "ridge:lambda={lambda}"),
            ModelSpec::KMeans { k, max_iter, restarts, seed } => {
                write!(f, "kmeans:k={k},max_iter={max_iter},restarts={restarts},seed={seed}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf { value: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// CART tree stored as an arena; node 0 is the root. Leaves hold the mean
/// (regression) or class frequencies (classification).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    classification: bool,
}

impl Tree {
    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y_num: &'a [f64],
    y_cls: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn classification(&self) -> bool {
        self.n_classes > 0
    }

    fn leaf_value(&self, idx: &[usize]) -> Vec<f64> {
        if self.classification() {
            let mut counts = vec![0.0; self.n_classes];
            for &i in idx {
                counts[self.y_cls[i]] += 1.0;
            }
            let n = idx.len() as f64;
            counts.iter().map(|c| c / n).collect()
        } else {
            vec![idx.iter().map(|&i| self.y_num[i]).sum::<f64>() / idx.len() as f64]
        }
    }

    /// Impurity times sample count (Gini * n or SSE).
    fn weighted_impurity_cls(counts: &[f64], n: f64) -> f64 {
        if n == 0.0 {
            return 0.0;
        }
        n - counts.iter().map(|c| c * c).sum::<f64>() / n
    }

    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let mut best: Option<(usize, f64, f64)> = None;
        let parent = if self.classification() {
            let mut counts = vec![0.0; self.n_classes];
            for &i in idx {
                counts[self.y_cls[i]] += 1.0;
            }
            Self::weighted_impurity_cls(&counts, n as f64)
        } else {
            let s: f64 = idx.iter().map(|&i| self.y_num[i]).sum();
            let ss: f64 = idx.iter().map(|&i| self.y_num[i] * self.y_num[i]).sum();
            ss - s * s / n as f64
        };
        if parent <= 1e-12 {
            return None;
        }
        let mut order = idx.to_vec();
        for f in 0..self.x.ncols() {
            order.sort_by(|&a, &b| self.x.get(a, f).total_cmp(&self.x.get(b, f)).then(a.cmp(&b)));
            let mut lc = vec![0.0; self.n_classes];
            let mut rc = vec![0.0; self.n_classes];
            let (mut ls, mut lss, mut rs, mut rss) = (0.0, 0.0, 0.0, 0.0);
            if self.classification() {
                for &i in &order {
                    rc[self.y_cls[i]] += 1.0;
                }
            } else {
                for &i in &order {
                    rs += self.y_num[i];
                    rss += self.y_num[i] * self.y_num[i];
                }
            }
            for pos in 0..n - 1 {
                let i = order[pos];
                if self.classification() {
                    lc[self.y_cls[i]] += 1.0;
                    rc[self.y_cls[i]] -= 1.0;
                } else {
                    let y = self.y_num[i];
                    ls += y;
                    lss += y * y;
                    rs -= y;
                    rss -= y * y;
                }
                let nl = pos + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let (a, b) = (self.x.get(i, f), self.x.get(order[pos + 1], f));
                if a == b {
                    continue;
                }
                let child = if self.classification() {
                    Self::weighted_impurity_cls(&lc, nl as f64) + Self::weighted_impurity_cls(&rc, nr as f64)
                } else {
                    (lss - ls * ls / nl as f64) + (rss - rs * rs / nr as f64)
                };
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g + 1e-12) {
                    best = Some((f, a + (b - a) / 2.0, gain));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: self.leaf_value(idx) });
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return id;
        }
        if let Some((feature, threshold, _)) = self.best_split(idx) {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x.get(i, feature) <= threshold);
            let left = self.build(&l, depth + 1);
            let right = self.build(&r, depth + 1);
            self.nodes[id] = TreeNode::Split { feature, threshold, left, right };
        }
        id
    }
}

fn fit_tree(x: &Matrix, target: &EncodedTarget, max_depth: usize, min_leaf: usize, classification: bool) -> Result<Tree> {
    let idx: Vec<usize> = (0..x.nrows()).collect();
    let (y_num, y_cls, n_classes): (&[f64], &[usize], usize) = match (target, classification) {
        (EncodedTarget::Numeric(v), false) => (v, &[], 0),
        (EncodedTarget::Classes { labels, classes }, true) => (&[], labels, classes.len()),
        _ => return Err(ModelError::IncompatibleTarget("decision tree".into())),
    };
    let mut b = TreeBuilder { x, y_num, y_cls, n_classes, max_depth, min_leaf, nodes: Vec::new() };
    b.build(&idx, 0);
    Ok(Tree { nodes: b.nodes, classification })
}

/// Multinomial logistic loss and gradient. `w` is laid out class-major with
/// `d + 1` entries per class (bias last); the bias is not penalised.
///
/// loss = -(1/n) sum_i log p(y_i | x_i) + (l2 / 2) |W|^2
pub fn logistic_loss_grad(x: &Matrix, y: &[usize], n_classes: usize, w: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let d = x.ncols();
    let stride = d + 1;
    let n = x.nrows() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    let mut logits = vec![0.0; n_classes];
    for i in 0..x.nrows() {
        let row = x.row(i);
        softmax_into(row, w, n_classes, &mut logits);
        loss -= logits[y[i]].max(1e-300).ln();
        for k in 0..n_classes {
            let delta = logits[k] - if k == y[i] { 1.0 } else { 0.0 };
            let base = k * stride;
            for j in 0..d {
                grad[base + j] += delta * row[j];
            }
            grad[base + d] += delta;
        }
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    for k in 0..n_classes {
        for j in 0..d {
            let wk = w[k * stride + j];
            loss += 0.5 * l2 * wk * wk;
            grad[k * stride + j] += l2 * wk;
        }
    }
    (loss, grad)
}

fn softmax_into(row: &[f64], w: &[f64], n_classes: usize, out: &mut [f64]) {
    let d = row.len();
    let stride = d + 1;
    for k in 0..n_classes {
        let base = k * stride;
        out[k] = w[base + d] + row.iter().zip(&w[base..base + d]).map(|(a, b)| a * b).sum::<f64>();
    }
    let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in out.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in out.iter_mut() {
        *v /= z;
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// `a` is `n x n` row-major. Pivots below `1e-12 * max|A|` are singular.
pub fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        let pivot = a[p * n + col];
        if pivot.abs() <= 1e-12 * scale {
            return Err(ModelError::Singular { column: col, pivot });
        }
        if p != col {
            for j in 0..n {
                a.swap(p * n + j, col * n + j);
            }
            b.swap(p, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[r * n + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Ok(x)
}

/// Ridge regression with an unpenalised intercept: centres `x` and `y`, then
/// solves `(XᵀX + λI) w = Xᵀy`. Returns `(w, intercept)`.
pub fn ridge_solve(x: &Matrix, y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let (n, d) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(ModelError::EmptyTraining);
    }
    let xm: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for i in 0..n {
        let row = x.row(i);
        let yc = y[i] - ym;
        for a in 0..d {
            let xa = row[a] - xm[a];
            xty[a] += xa * yc;
            for b in a..d {
                xtx[a * d + b] += xa * (row[b] - xm[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[a * d + b] = xtx[b * d + a];
        }
        xtx[a * d + a] += lambda;
    }
    let w = solve_linear(xtx, xty)?;
    let intercept = ym - w.iter().zip(&xm).map(|(a, b)| a * b).sum::<f64>();
    Ok((w, intercept))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

pub fn nearest_center(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

fn kmeans_once(x: &Matrix, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let n = x.nrows();
    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
    while centers.len() < k {
        let d2: Vec<f64> = (0..n).map(|i| centers.iter().map(|c| sq_dist(x.row(i), c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        };
        centers.push(x.row(pick).to_vec());
    }
    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let a = nearest_center(x.row(i), &centers);
            inertia += sq_dist(x.row(i), &centers[a]);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let d = x.ncols();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), &centers[nearest_center(x.row(i), &centers)])).sum();
    KMeansFit { centers, inertia, inertia_history: history }
}

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia.
pub fn kmeans(x: &Matrix, k: usize, max_iter: usize, restarts: usize, seed: u64) -> Result<KMeansFit> {
    if x.nrows() < k {
        return Err(ModelError::InvalidSpec(format!("kmeans with k={k} on {} rows", x.nrows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts {
        let fit = kmeans_once(x, k, max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Knn { x: Matrix, y: EncodedTarget, k: usize },
    Tree(Tree),
    Logistic { weights: Vec<f64>, n_classes: usize },
    Ridge { weights: Vec<f64>, intercept: f64 },
    KMeans(KMeansFit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub n_features: usize,
    /// Number of classes for classifiers, 0 otherwise.
    pub n_classes: usize,
    pub train_runtime: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictions {
    Classes(Vec<usize>),
    Values(Vec<f64>),
    Clusters(Vec<usize>),
}

pub fn fit(spec: &ModelSpec, train: &EncodedMatrix) -> Result<FittedModel> {
    spec.validate()?;
    let start = Instant::now();
    let x = &train.features;
    if x.nrows() == 0 {
        return Err(ModelError::EmptyTraining);
    }
    let need_classes = || match &train.target {
        EncodedTarget::Classes { labels, classes } => Ok((labels.as_slice(), classes.len())),
        _ => Err(ModelError::IncompatibleTarget(format!("{spec:?}"))),
    };
    let need_values = || match &train.target {
        EncodedTarget::Numeric(v) => Ok(v.as_slice()),
        _ => Err(ModelError::IncompatibleTarget(format!("{spec:?}"))),
    };
    let mut n_classes = 0;
    let params = match spec {
        ModelSpec::KnnClassifier { k } => {
            n_classes = need_classes()?.1;
            ModelParams::Knn { x: x.clone(), y: train.target.clone(), k: *k }
        }
        ModelSpec::KnnRegressor { k } => {
            need_values()?;
            ModelParams::Knn { x: x.clone(), y: train.target.clone(), k: *k }
        }
        ModelSpec::TreeClassifier { max_depth, min_leaf } => {
            n_classes = need_classes()?.1;
            ModelParams::Tree(fit_tree(x, &train.target, *max_depth, *min_leaf, true)?)
        }
        ModelSpec::TreeRegressor { max_depth, min_leaf } => {
            ModelParams::Tree(fit_tree(x, &train.target, *max_depth, *min_leaf, false)?)
        }
        ModelSpec::Logistic { lr, epochs, l2 } => {
            let (labels, k) = need_classes()?;
            n_classes = k;
            let mut w = vec![0.0; k * (x.ncols() + 1)];
            for _ in 0..*epochs {
                let (_, g) = logistic_loss_grad(x, labels, k, &w, *l2);
                for (wi, gi) in w.iter_mut().zip(&g) {
                    *wi -= lr * gi;
                }
            }
            ModelParams::Logistic { weights: w, n_classes: k }
        }
        ModelSpec::Ridge { lambda } => {
            let y = need_values()?;
            let (weights, intercept) = ridge_solve(x, y, *lambda)?;
            ModelParams::Ridge { weights, intercept }
        }
        ModelSpec::KMeans { k, max_iter, restarts, seed } => ModelParams::KMeans(kmeans(x, *k, *max_iter, *restarts, *seed)?),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        params,
        n_features: x.ncols(),
        n_classes,
        train_runtime: start.elapsed().as_secs_f64(),
    })
}

/// Indices of the `k` nearest training rows, ties broken by lower index.
fn neighbours(train: &Matrix, q: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..train.nrows()).map(|i| (sq_dist(train.row(i), q), i)).collect();
    let k = k.min(d.len());
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut top: Vec<(f64, usize)> = d[..k].to_vec();
    top.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    top.into_iter().map(|(_, i)| i).collect()
}

fn check_dims(model: &FittedModel, data: &EncodedMatrix) -> Result<()> {
    if data.features.ncols() != model.n_features {
        return Err(ModelError::DimensionMismatch { expected: model.n_features, found: data.features.ncols() });
    }
    Ok(())
}

/// Class probabilities for classifiers (rows sum to 1).
pub fn predict_proba(model: &FittedModel, data: &EncodedMatrix) -> Result<Vec<Vec<f64>>> {
    check_dims(model, data)?;
    let x = &data.features;
    let k = model.n_classes;
    match &model.params {
        ModelParams::Knn { x: tx, y: EncodedTarget::Classes { labels, .. }, k: nn } => Ok((0..x.nrows())
            .map(|i| {
                let nb = neighbours(tx, x.row(i), *nn);
                let mut p = vec![0.0; k];
                for j in &nb {
                    p[labels[*j]] += 1.0 / nb.len() as f64;
                }
                p
            })
            .collect()),
        ModelParams::Tree(t) if t.classification => Ok((0..x.nrows()).map(|i| t.leaf(x.row(i)).to_vec()).collect()),
        ModelParams::Logistic { weights, n_classes } => Ok((0..x.nrows())
            .map(|i| {
                let mut p = vec![0.0; *n_classes];
                softmax_into(x.row(i), weights, *n_classes, &mut p);
                p
            })
            .collect()),
        _ => Err(ModelError::IncompatibleTarget("predict_proba on a non-classifier".into())),
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &FittedModel, data: &EncodedMatrix) -> Result<Predictions> {
    check_dims(model, data)?;
    let x = &data.features;
    Ok(match (&model.params, model.spec.task()) {
        (_, Task::Classification) => Predictions::Classes(predict_proba(model, data)?.iter().map(|p| argmax(p)).collect()),
        (ModelParams::Knn { x: tx, y: EncodedTarget::Numeric(y), k }, _) => Predictions::Values(
            (0..x.nrows())
                .map(|i| {
                    let nb = neighbours(tx, x.row(i), *k);
                    nb.iter().map(|&j| y[j]).sum::<f64>() / nb.len() as f64
                })
                .collect(),
        ),
        (ModelParams::Tree(t), _) => Predictions::Values((0..x.nrows()).map(|i| t.leaf(x.row(i))[0]).collect()),
        (ModelParams::Ridge { weights, intercept }, _) => Predictions::Values(
            (0..x.nrows())
                .map(|i| intercept + x.row(i).iter().zip(weights).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
        ),
        (ModelParams::KMeans(fit), _) => {
            Predictions::Clusters((0..x.nrows()).map(|i| nearest_center(x.row(i), &fit.centers)).collect())
        }
        _ => return Err(ModelError::IncompatibleTarget("model parameters do not match task".into())),
    })
}

/// Mean silhouette width. Singleton clusters contribute 0.
pub fn silhouette(data: &Matrix, assignments: &[usize]) -> Result<f64> {
    if data.nrows() != assignments.len() {
        return Err(ModelError::DimensionMismatch { expected: data.nrows(), found: assignments.len() });
    }
    let labels: BTreeSet<usize> = assignments.iter().copied().collect();
    if labels.len() < 2 {
        return Err(ModelError::SingleCluster(labels.len()));
    }
    let index: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let k = labels.len();
    let mut sizes = vec![0usize; k];
    for a in assignments {
        sizes[index[a]] += 1;
    }
    let n = data.nrows();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[index[&assignments[j]]] += euclidean(data.row(i), data.row(j));
            }
        }
        let own = index[&assignments[i]];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{read_csv, NullTokens};

    fn ds(text: &str) -> Dataset {
        read_csv(text.as_bytes(), "t", None, NullTokens::default()).unwrap()
    }

    #[test]
    fn encode_zscores_with_sample_std() {
        let train = ds("a,y\n0,1\n10,2\n");
        let (tr, _) = encode(&train, &train, Some("y")).unwrap();
        let s = 50f64.sqrt();
        assert!((tr.features.get(0, 0) + 5.0 / s).abs() < 1e-12);
        assert!((tr.features.get(1, 0) - 5.0 / s).abs() < 1e-12);
        assert!((tr.features.get(1, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn encode_one_hot_and_unseen_category() {
        let train = ds("c,y\na,1\nb,2\n");
        let test = ds("c,y\nz,1\nb,2\n");
        let (tr, te) = encode(&train, &test, Some("y")).unwrap();
        assert_eq!(tr.features.ncols(), 2);
        assert_eq!(te.features.row(0), &[0.0, 0.0]);
        assert_eq!(te.features.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn encode_drops_constant_and_errors_when_nothing_left() {
        let train = ds("a,y\n3,1\n3,2\n");
        assert!(matches!(encode(&train, &train, Some("y")), Err(ModelError::NoFeatures)));
    }

    #[test]
    fn encode_imputes_unparsable_with_mean() {
        let mut schema = crate::tabular::Schema::new();
        schema.insert("a".into(), crate::tabular::ColumnType::Numeric);
        let train = read_csv("a,y\n0,1\n10,2\n".as_bytes(), "t", Some(&schema), NullTokens::default()).unwrap();
        let test = read_csv("a,y\nabc,1\n,2\n".as_bytes(), "t", Some(&schema), NullTokens::default()).unwrap();
        let (_, te) = encode(&train, &test, Some("y")).unwrap();
        assert_eq!(te.features.row(0), &[0.0]);
        assert_eq!(te.features.row(1), &[0.0]);
    }

    #[test]
    fn other_bucket_for_rare_categories() {
        let mut text = String::from("c,y\n");
        for i in 0..25 {
            text.push_str(&format!("k{i:02},1\n"));
        }
        let train = ds(&text);
        let (tr, _) = encode(&train, &train, Some("y")).unwrap();
        assert_eq!(tr.features.ncols(), 21);
        // the last five categories (lexicographically) fall into `other`
        assert_eq!(tr.features.get(24, 20), 1.0);
    }

    #[test]
    fn tree_finds_single_perfect_split() {
        let x = Matrix::from_rows(&[vec![0.0, 5.0], vec![1.0, 3.0], vec![2.0, 5.0], vec![3.0, 3.0]]);
        let y = EncodedTarget::Classes { labels: vec![0, 0, 1, 1], classes: vec!["a".into(), "b".into()] };
        let m = fit(&ModelSpec::TreeClassifier { max_depth: 8, min_leaf: 1 }, &EncodedMatrix::new(x.clone(), y)).unwrap();
        let ModelParams::Tree(t) = &m.params else { panic!() };
        assert_eq!(t.depth(), 1);
        let p = predict(&m, &EncodedMatrix::new(x, EncodedTarget::None)).unwrap();
        assert_eq!(p, Predictions::Classes(vec![0, 0, 1, 1]));
    }

    #[test]
    fn tree_respects_min_leaf_and_depth() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
        let m = fit(
            &ModelSpec::TreeRegressor { max_depth: 2, min_leaf: 3 },
            &EncodedMatrix::new(Matrix::from_rows(&rows), EncodedTarget::Numeric(y)),
        )
        .unwrap();
        let ModelParams::Tree(t) = &m.params else { panic!() };
        assert!(t.depth() <= 2);
    }

    #[test]
    fn knn_k1_reproduces_training_labels() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0], vec![9.0]]);
        let y = EncodedTarget::Classes { labels: vec![1, 0, 1, 0], classes: vec!["a".into(), "b".into()] };
        let train = EncodedMatrix::new(x, y);
        let m = fit(&ModelSpec::KnnClassifier { k: 1 }, &train).unwrap();
        assert_eq!(predict(&m, &train).unwrap(), Predictions::Classes(vec![1, 0, 1, 0]));
    }

    #[test]
    fn ridge_recovers_exact_linear_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 2.0 * r[1]).collect();
        let train = EncodedMatrix::new(Matrix::from_rows(&rows), EncodedTarget::Numeric(y.clone()));
        let m = fit(&ModelSpec::Ridge { lambda: 1e-10 }, &train).unwrap();
        let ModelParams::Ridge { weights, .. } = &m.params else { panic!() };
        assert!((weights[0] - 3.0).abs() < 1e-6 && (weights[1] + 2.0).abs() < 1e-6);
        let Predictions::Values(p) = predict(&m, &train).unwrap() else { panic!() };
        assert!(p.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn ridge_without_penalty_on_collinear_data_is_singular() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = ridge_solve(&Matrix::from_rows(&rows), &y, 0.0);
        assert!(matches!(r, Err(ModelError::Singular { .. })));
    }

    #[test]
    fn kmeans_assignment_ties_go_to_lowest_center() {
        assert_eq!(nearest_center(&[0.0], &[vec![-1.0], vec![1.0]]), 0);
    }

    #[test]
    fn silhouette_worked_example() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]);
        let s = silhouette(&x, &[0, 0, 1, 1]).unwrap();
        let expected = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5) / 2.0;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.8997).abs() < 1e-4);
        assert!(matches!(silhouette(&x, &[0, 0, 0, 0]), Err(ModelError::SingleCluster(1))));
    }

    #[test]
    fn silhouette_of_coincident_clusters_is_not_positive() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]]);
        assert!(silhouette(&x, &[0, 1, 0, 1]).unwrap() <= 0.0);
    }

    #[test]
    fn model_spec_parsing() {
        assert_eq!(ModelSpec::parse("knn", Task::Classification).unwrap(), ModelSpec::KnnClassifier { k: 5 });
        assert_eq!(ModelSpec::parse("knn:k=3", Task::Regression).unwrap(), ModelSpec::KnnRegressor { k: 3 });
        assert_eq!(ModelSpec::parse("ridge:lambda=0.5", Task::Regression).unwrap(), ModelSpec::Ridge { lambda: 0.5 });
        assert!(ModelSpec::parse("ridge", Task::Classification).is_err());
        assert!(ModelSpec::parse("knn:q=1", Task::Classification).is_err());
        assert!(ModelSpec::parse("kmeans:k=1", Task::Clustering).is_err());
        for (s, t) in [("knn:k=3", Task::Regression), ("dt:max_depth=4,min_leaf=2", Task::Classification), ("logit:lr=0.5,epochs=10,l2=0", Task::Classification), ("kmeans:k=3,max_iter=50,restarts=2,seed=9", Task::Clustering)] {
            assert_eq!(ModelSpec::parse(s, t).unwrap().to_string(), s);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let train = EncodedMatrix::new(Matrix::from_rows(&[vec![0.0], vec![1.0]]), EncodedTarget::Numeric(vec![0.0, 1.0]));
        let m = fit(&ModelSpec::Ridge { lambda: 1.0 }, &train).unwrap();
        let other = EncodedMatrix::new(Matrix::from_rows(&[vec![0.0, 1.0]]), EncodedTarget::None);
        assert!(matches!(predict(&m, &other), Err(ModelError::DimensionMismatch { .. })));
    }
}
