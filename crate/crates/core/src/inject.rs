//! Controlled error injection with an exact ledger of the modified cells, and
//! synthetic clean datasets with known generative parameters.
//!
//! Cell-level rates are fractions of the full grid `rows * cols` of the clean
//! dataset. Cells are drawn without replacement across all kinds, so the
//! per-kind masks are disjoint and their union is exactly the set of changed
//! cells. Duplicated rows are row-level and sit outside that budget.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{DenialConstraint, FunctionalDependency};
use crate::tabular::{
    format_number, CellRef, Column, ColumnType, Dataset, DatasetPair, DetectionMask, NullTokens, TabularError,
};

/// Placeholder codes for numeric columns, ascending.
pub const NUMERIC_DISGUISE_CODES: &[&str] = &["-1", "0", "99", "999", "9999", "99999"];
/// Placeholder tokens for categorical and text columns.
pub const CATEGORICAL_DISGUISE_TOKENS: &[&str] = &["NA", "none", "empty", "?"];

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("invalid error profile: {0}")]
    InvalidProfile(String),
    #[error("{kind}: requested {requested} cells but only {available} are eligible")]
    RateInfeasible { kind: String, requested: usize, available: usize },
    #[error("{kind}: no numeric cells to perturb in the targeted columns")]
    NoNumericCells { kind: String },
    #[error("label column `{column}` has {found} classes, need at least 2")]
    MissingClasses { column: String, found: usize },
    #[error("constraint `{0}` is not a functional dependency and cannot be injected")]
    UnsupportedConstraint(String),
    #[error("unknown constraint id `{0}`")]
    UnknownConstraint(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),
    #[error(transparent)]
    Tabular(#[from] TabularError),
}

pub type Result<T> = std::result::Result<T, InjectError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorKind {
    ExplicitMv,
    ImplicitMv,
    GaussianOutlier { degree: f64 },
    KeyboardTypo,
    ValueSwap,
    DuplicateRow { row_fraction: f64 },
    Mislabel { row_fraction: f64, label_column: String },
    RuleViolation {
        #[serde(default)]
        constraints: Vec<String>,
    },
}

/// Coarse error categories attached to dataset versions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Missing,
    ImplicitMissing,
    Outliers,
    Typos,
    Duplicates,
    Mislabels,
    RuleViolations,
    Swaps,
}

impl ErrorKind {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorKind::ExplicitMv => "explicit_mv",
            ErrorKind::ImplicitMv => "implicit_mv",
            ErrorKind::GaussianOutlier { .. } => "gaussian_outlier",
            ErrorKind::KeyboardTypo => "keyboard_typo",
            ErrorKind::ValueSwap => "value_swap",
            ErrorKind::DuplicateRow { .. } => "duplicate_row",
            ErrorKind::Mislabel { .. } => "mislabel",
            ErrorKind::RuleViolation { .. } => "rule_violation",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            ErrorKind::ExplicitMv => ErrorClass::Missing,
            ErrorKind::ImplicitMv => ErrorClass::ImplicitMissing,
            ErrorKind::GaussianOutlier { .. } => ErrorClass::Outliers,
            ErrorKind::KeyboardTypo => ErrorClass::Typos,
            ErrorKind::ValueSwap => ErrorClass::Swaps,
            ErrorKind::DuplicateRow { .. } => ErrorClass::Duplicates,
            ErrorKind::Mislabel { .. } => ErrorClass::Mislabels,
            ErrorKind::RuleViolation { .. } => ErrorClass::RuleViolations,
        }
    }

    /// Kinds whose budget is `rate * rows * cols`.
    pub fn is_cell_level(&self) -> bool {
        !matches!(self, ErrorKind::DuplicateRow { .. } | ErrorKind::Mislabel { .. })
    }

    fn stream_id(&self) -> u64 {
        match self {
            ErrorKind::ExplicitMv => 1,
            ErrorKind::ImplicitMv => 2,
            ErrorKind::GaussianOutlier { .. } => 3,
            ErrorKind::KeyboardTypo => 4,
            ErrorKind::ValueSwap => 5,
            ErrorKind::DuplicateRow { .. } => 6,
            ErrorKind::Mislabel { .. } => 7,
            ErrorKind::RuleViolation { .. } => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    #[serde(flatten)]
    pub kind: ErrorKind,
    /// Fraction of all cells; ignored by row-level kinds.
    #[serde(default)]
    pub rate: f64,
    /// Restricts the kind to these columns. All columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
}

impl ErrorEntry {
    pub fn new(kind: ErrorKind, rate: f64) -> Self {
        ErrorEntry { kind, rate, columns: None }
    }

    pub fn on_columns(mut self, columns: &[&str]) -> Self {
        self.columns = Some(columns.iter().map(|s| s.to_string()).collect());
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    #[serde(default)]
    pub entries: Vec<ErrorEntry>,
}

impl ErrorProfile {
    pub fn new(entries: Vec<ErrorEntry>) -> Self {
        ErrorProfile { entries }
    }

    pub fn cell_rate_sum(&self) -> f64 {
        self.entries.iter().filter(|e| e.kind.is_cell_level()).map(|e| e.rate).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.rate >= 0.0 && e.rate <= 1.0) {
                return Err(InjectError::InvalidProfile(format!("{}: rate {} outside [0,1]", e.kind.name(), e.rate)));
            }
            match &e.kind {
                ErrorKind::GaussianOutlier { degree } if !(*degree > 0.0) => {
                    return Err(InjectError::InvalidProfile(format!("outlier degree {degree} must be > 0")));
                }
                ErrorKind::DuplicateRow { row_fraction } | ErrorKind::Mislabel { row_fraction, .. }
                    if !(*row_fraction >= 0.0 && *row_fraction <= 1.0) =>
                {
                    return Err(InjectError::InvalidProfile(format!(
                        "{}: row fraction {row_fraction} outside [0,1]",
                        e.kind.name()
                    )));
                }
                _ => {}
            }
        }
        if self.cell_rate_sum() > 1.0 + 1e-12 {
            return Err(InjectError::InvalidProfile(format!(
                "cell-level rates sum to {} > 1",
                self.cell_rate_sum()
            )));
        }
        Ok(())
    }

    pub fn classes(&self) -> BTreeSet<ErrorClass> {
        self.entries.iter().map(|e| e.kind.class()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: ErrorKind,
    /// Cells (or, for duplicates, rows) the profile asked for.
    pub requested: usize,
    pub mask: DetectionMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub kinds: Vec<KindReport>,
    /// Cell-level injected cells, duplicates excluded.
    pub injected_cells: usize,
    pub duplicate_rows: usize,
    pub achieved_rate: f64,
    pub seed: u64,
}

impl InjectionReport {
    pub fn classes(&self) -> BTreeSet<ErrorClass> {
        self.kinds.iter().filter(|k| !k.mask.is_empty()).map(|k| k.kind.class()).collect()
    }

    pub fn mask_of(&self, kind_name: &str) -> DetectionMask {
        let mut m = DetectionMask::new(kind_name);
        for k in self.kinds.iter().filter(|k| k.kind.name() == kind_name) {
            m.union_with(&k.mask);
        }
        m
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Number of cells a rate maps to on a grid of `total` cells.
pub fn cells_for_rate(rate: f64, total: usize) -> usize {
    (rate * total as f64).round() as usize
}

struct Injector<'a> {
    gt: &'a Dataset,
    dirty: Dataset,
    used: HashSet<CellRef>,
    constraints: &'a [DenialConstraint],
}

/// Injects the profile's errors into a copy of `gt`.
///
/// `constraints` is only consulted by `rule_violation` entries.
pub fn inject(
    gt: &Dataset,
    profile: &ErrorProfile,
    seed: u64,
    constraints: &[DenialConstraint],
) -> Result<(DatasetPair, InjectionReport)> {
    profile.validate()?;
    let total = gt.cell_count();
    let mut inj = Injector { gt, dirty: gt.clone(), used: HashSet::new(), constraints };
    let mut reports: Vec<Option<KindReport>> = vec![None; profile.entries.len()];
    let mut occurrences: BTreeMap<u64, u64> = BTreeMap::new();
    let mut streams = Vec::with_capacity(profile.entries.len());
    for e in &profile.entries {
        let occ = occurrences.entry(e.kind.stream_id()).or_insert(0);
        streams.push(e.kind.stream_id() * 1024 + *occ);
        *occ += 1;
    }

    // Cell-level kinds and mislabels first, in profile order; duplicates
    // last so copies carry the other errors of their source rows.
    let order = (0..profile.entries.len())
        .filter(|&i| !matches!(profile.entries[i].kind, ErrorKind::DuplicateRow { .. }))
        .chain((0..profile.entries.len()).filter(|&i| matches!(profile.entries[i].kind, ErrorKind::DuplicateRow { .. })));

    let mut provenance = BTreeMap::new();
    for i in order {
        let entry = &profile.entries[i];
        let mut rng = stream_rng(seed, streams[i]);
        let cols = inj.target_columns(entry)?;
        let name = entry.kind.name();
        let (requested, cells) = match &entry.kind {
            ErrorKind::ExplicitMv => {
                let n = cells_for_rate(entry.rate, total);
                (n, inj.explicit_mv(&cols, n, &mut rng)?)
            }
            ErrorKind::ImplicitMv => {
                let n = cells_for_rate(entry.rate, total);
                (n, inj.implicit_mv(&cols, n, &mut rng)?)
            }
            ErrorKind::GaussianOutlier { degree } => {
                let n = cells_for_rate(entry.rate, total);
                (n, inj.gaussian(&cols, n, *degree, &mut rng)?)
            }
            ErrorKind::KeyboardTypo => {
                let n = cells_for_rate(entry.rate, total);
                (n, inj.typos(&cols, n, &mut rng)?)
            }
            ErrorKind::ValueSwap => {
                let n = cells_for_rate(entry.rate, total);
                (n, inj.swaps(&cols, n, &mut rng)?)
            }
            ErrorKind::Mislabel { row_fraction, label_column } => {
                let n = cells_for_rate(*row_fraction, gt.row_count());
                (n, inj.mislabel(label_column, n, &mut rng)?)
            }
            ErrorKind::RuleViolation { constraints } => {
                let n = cells_for_rate(entry.rate, total);
                (n, inj.rule_violations(constraints, n, &mut rng)?)
            }
            ErrorKind::DuplicateRow { row_fraction } => {
                let n = cells_for_rate(*row_fraction, gt.row_count());
                let (cells, prov) = inj.duplicates(n, &cols, &mut rng)?;
                provenance.extend(prov);
                (n, cells)
            }
        };
        reports[i] = Some(KindReport { kind: entry.kind.clone(), requested, mask: DetectionMask::from_cells(name, cells) });
    }

    let kinds: Vec<KindReport> = reports.into_iter().map(|r| r.expect("every entry processed")).collect();
    let mut error_mask = DetectionMask::new("ground_truth");
    for k in &kinds {
        error_mask.union_with(&k.mask);
    }
    let injected_cells = kinds.iter().filter(|k| k.kind.is_cell_level() || matches!(k.kind, ErrorKind::Mislabel { .. })).map(|k| k.mask.len()).sum();
    let duplicate_rows = provenance.len();
    let report = InjectionReport {
        kinds,
        injected_cells,
        duplicate_rows,
        achieved_rate: if total == 0 { 0.0 } else { injected_cells as f64 / total as f64 },
        seed,
    };
    let pair = DatasetPair {
        ground_truth: gt.clone(),
        dirty: inj.dirty,
        error_mask,
        provenance: if provenance.is_empty() { None } else { Some(provenance) },
    };
    Ok((pair, report))
}

impl Injector<'_> {
    fn target_columns(&self, entry: &ErrorEntry) -> Result<Vec<usize>> {
        match &entry.columns {
            None => Ok((0..self.gt.col_count()).collect()),
            Some(names) => names.iter().map(|n| self.gt.col_index(n).map_err(InjectError::from)).collect(),
        }
    }

    /// Unused cells of `cols` (row-major) satisfying `keep`, shuffled.
    fn candidates(&self, cols: &[usize], rng: &mut ChaCha8Rng, keep: impl Fn(CellRef) -> bool) -> Vec<CellRef> {
        let mut v: Vec<CellRef> = (0..self.gt.row_count())
            .flat_map(|r| cols.iter().map(move |&c| CellRef::new(r, c)))
            .filter(|c| !self.used.contains(c) && keep(*c))
            .collect();
        v.shuffle(rng);
        v
    }

    fn write(&mut self, at: CellRef, raw: String) {
        self.dirty.set_raw(at, raw);
        self.used.insert(at);
    }

    fn infeasible(kind: &str, requested: usize, available: usize) -> InjectError {
        InjectError::RateInfeasible { kind: kind.to_string(), requested, available }
    }

    fn explicit_mv(&mut self, cols: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CellRef>> {
        let cands = self.candidates(cols, rng, |c| !self.dirty.cell(c).is_empty());
        if cands.len() < n {
            return Err(Self::infeasible("explicit_mv", n, cands.len()));
        }
        for &c in &cands[..n] {
            self.write(c, String::new());
        }
        Ok(cands[..n].to_vec())
    }

    fn implicit_mv(&mut self, cols: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CellRef>> {
        let codes: Vec<Option<&'static str>> = (0..self.gt.col_count())
            .map(|j| {
                let col = self.gt.column(j);
                if !col.is_numeric() {
                    return None;
                }
                let max = col.parsed_values().into_iter().fold(f64::NEG_INFINITY, f64::max);
                Some(
                    NUMERIC_DISGUISE_CODES
                        .iter()
                        .rev()
                        .find(|code| code.parse::<f64>().unwrap() > max)
                        .copied()
                        .unwrap_or(NUMERIC_DISGUISE_CODES[0]),
                )
            })
            .collect();
        let cands = self.candidates(cols, rng, |c| !self.dirty.cell(c).is_empty());
        let mut out = Vec::with_capacity(n);
        for c in cands {
            if out.len() == n {
                break;
            }
            let current = self.dirty.cell(c).raw().to_string();
            let replacement = match codes[c.col] {
                Some(code) => code.to_string(),
                None => {
                    let options: Vec<&&str> = CATEGORICAL_DISGUISE_TOKENS.iter().filter(|t| **t != current).collect();
                    options.choose(rng).map(|t| t.to_string()).unwrap_or_default()
                }
            };
            if replacement != current {
                self.write(c, replacement);
                out.push(c);
            }
        }
        if out.len() < n {
            return Err(Self::infeasible("implicit_mv", n, out.len()));
        }
        Ok(out)
    }

    fn gaussian(&mut self, cols: &[usize], n: usize, degree: f64, rng: &mut ChaCha8Rng) -> Result<Vec<CellRef>> {
        // Clean-column mean and sample standard deviation.
        let stats: Vec<Option<(f64, f64)>> = (0..self.gt.col_count())
            .map(|j| {
                let col = self.gt.column(j);
                if !col.is_numeric() {
                    return None;
                }
                let v = col.parsed_values();
                if v.len() < 2 {
                    return None;
                }
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                (var > 0.0).then(|| (mean, var.sqrt()))
            })
            .collect();
        if n > 0 && !cols.iter().any(|&c| stats[c].is_some()) {
            return Err(InjectError::NoNumericCells { kind: "gaussian_outlier".into() });
        }
        let cands = self.candidates(cols, rng, |c| {
            stats[c.col].is_some() && self.gt.cell(c).parsed().is_some() && !self.dirty.cell(c).is_empty()
        });
        if cands.len() < n {
            return Err(Self::infeasible("gaussian_outlier", n, cands.len()));
        }
        for &c in &cands[..n] {
            let (mean, std) = stats[c.col].unwrap();
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let g: f64 = StandardNormal.sample(rng);
            let mut value = mean + sign * (degree * std + g.abs() * std);
            // Rounding in `mean + delta` must not pull the value inside the band.
            while (value - mean).abs() < degree * std {
                value += sign * std * 1e-9;
            }
            self.write(c, format_number(value));
        }
        Ok(cands[..n].to_vec())
    }

    fn typos(&mut self, cols: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CellRef>> {
        let cands = self.candidates(cols, rng, |c| !self.dirty.cell(c).raw().is_empty());
        let mut out = Vec::with_capacity(n);
        for c in cands {
            if out.len() == n {
                break;
            }
            let current = self.dirty.cell(c).raw().to_string();
            if let Some(t) = keyboard_typo(&current, rng) {
                self.write(c, t);
                out.push(c);
            }
        }
        if out.len() < n {
            return Err(Self::infeasible("keyboard_typo", n, out.len()));
        }
        Ok(out)
    }

    fn swaps(&mut self, cols: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CellRef>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        // Odd counts use one three-way rotation, so a single cell is impossible.
        if n == 1 || cols.len() < 2 || (n % 2 == 1 && cols.len() < 3) {
            return Err(Self::infeasible("value_swap", n, 0));
        }
        let rows = self.gt.row_count();
        let mut out = Vec::with_capacity(n);
        let budget = 200 * n + 10_000;
        let mut attempts = 0;
        let free = |inj: &Self, c: CellRef| !inj.used.contains(&c);
        if n % 2 == 1 {
            loop {
                attempts += 1;
                if attempts > budget {
                    return Err(Self::infeasible("value_swap", n, out.len()));
                }
                let r = rng.random_range(0..rows);
                let picked: Vec<usize> = cols.choose_multiple(rng, 3).copied().collect();
                let cells: Vec<CellRef> = picked.iter().map(|&c| CellRef::new(r, c)).collect();
                let raws: Vec<String> = cells.iter().map(|&c| self.dirty.cell(c).raw().to_string()).collect();
                if cells.iter().all(|&c| free(self, c))
                    && raws[0] != raws[1]
                    && raws[1] != raws[2]
                    && raws[0] != raws[2]
                {
                    for k in 0..3 {
                        self.write(cells[k], raws[(k + 1) % 3].clone());
                    }
                    out.extend(cells);
                    break;
                }
            }
        }
        while out.len() < n {
            attempts += 1;
            if attempts > budget {
                return Err(Self::infeasible("value_swap", n, out.len()));
            }
            let r = rng.random_range(0..rows);
            let picked: Vec<usize> = cols.choose_multiple(rng, 2).copied().collect();
            let (a, b) = (CellRef::new(r, picked[0]), CellRef::new(r, picked[1]));
            let (ra, rb) = (self.dirty.cell(a).raw().to_string(), self.dirty.cell(b).raw().to_string());
            if free(self, a) && free(self, b) && ra != rb {
                self.write(a, rb);
                self.write(b, ra);
                out.push(a);
                out.push(b);
            }
        }
        Ok(out)
    }

    fn mislabel(&mut self, label: &str, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CellRef>> {
        let col = self.gt.col_index(label)?;
        let classes: Vec<String> = self
            .gt
            .column(col)
            .cells()
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.raw().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if classes.len() < 2 {
            return Err(InjectError::MissingClasses { column: label.to_string(), found: classes.len() });
        }
        let cands = self.candidates(&[col], rng, |c| !self.dirty.cell(c).is_empty());
        if cands.len() < n {
            return Err(Self::infeasible("mislabel", n, cands.len()));
        }
        for &c in &cands[..n] {
            let current = self.dirty.cell(c).raw().to_string();
            let others: Vec<&String> = classes.iter().filter(|k| **k != current).collect();
            let new = (*others.choose(rng).expect("at least one other class")).clone();
            self.write(c, new);
        }
        Ok(cands[..n].to_vec())
    }

    fn rule_violations(&mut self, ids: &[String], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CellRef>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let selected: Vec<&DenialConstraint> = if ids.is_empty() {
            self.constraints.iter().filter(|c| c.fd.is_some()).collect()
        } else {
            ids.iter()
                .map(|id| {
                    self.constraints
                        .iter()
                        .find(|c| &c.id == id)
                        .ok_or_else(|| InjectError::UnknownConstraint(id.clone()))
                })
                .collect::<Result<_>>()?
        };
        let mut fds: Vec<(Vec<usize>, usize)> = Vec::new();
        for dc in selected {
            let FunctionalDependency { lhs, rhs } =
                dc.fd.as_ref().ok_or_else(|| InjectError::UnsupportedConstraint(dc.id.clone()))?;
            let lhs = lhs.iter().map(|c| self.gt.col_index(c)).collect::<std::result::Result<Vec<_>, _>>()?;
            fds.push((lhs, self.gt.col_index(rhs)?));
        }
        if fds.is_empty() {
            return Err(InjectError::InvalidProfile("rule_violation needs at least one functional dependency".into()));
        }
        let rows = self.gt.row_count();
        if rows < 2 {
            return Err(Self::infeasible("rule_violation", n, 0));
        }
        let mut out = Vec::with_capacity(n);
        let budget = 200 * n + 10_000;
        for _ in 0..budget {
            if out.len() == n {
                break;
            }
            let (lhs, rhs) = fds.choose(rng).unwrap();
            let t1 = rng.random_range(0..rows);
            let t2 = rng.random_range(0..rows);
            if t1 == t2 {
                continue;
            }
            let r1 = self.dirty.cell(CellRef::new(t1, *rhs));
            let r2 = self.dirty.cell(CellRef::new(t2, *rhs));
            if r1.is_empty() || r2.is_empty() || r1.raw() == r2.raw() {
                continue;
            }
            if lhs.iter().any(|&c| self.dirty.cell(CellRef::new(t1, c)).is_empty()) {
                continue;
            }
            let changed: Vec<usize> = lhs
                .iter()
                .copied()
                .filter(|&c| self.dirty.raw(t1, c) != self.dirty.raw(t2, c))
                .collect();
            if changed.is_empty()
                || changed.len() > n - out.len()
                || changed.iter().any(|&c| self.used.contains(&CellRef::new(t2, c)))
            {
                continue;
            }
            for c in changed {
                let v = self.dirty.raw(t1, c).to_string();
                self.write(CellRef::new(t2, c), v);
                out.push(CellRef::new(t2, c));
            }
        }
        if out.len() < n {
            return Err(Self::infeasible("rule_violation", n, out.len()));
        }
        Ok(out)
    }

    /// Half of the copies get one typo in a non-empty cell of `cols`.
    fn duplicates(&mut self, n: usize, cols: &[usize], rng: &mut ChaCha8Rng) -> Result<(Vec<CellRef>, BTreeMap<usize, usize>)> {
        let rows = self.gt.row_count();
        if n > rows {
            return Err(Self::infeasible("duplicate_row", n, rows));
        }
        let sources = rand::seq::index::sample(rng, rows, n).into_vec();
        let mut cells = Vec::new();
        let mut prov = BTreeMap::new();
        for src in sources {
            let mut copy: Vec<String> = self.dirty.row_raw(src).iter().map(|s| s.to_string()).collect();
            if rng.random_bool(0.5) {
                let non_empty: Vec<usize> = cols.iter().copied().filter(|&j| !copy[j].is_empty()).collect();
                if let Some(&j) = non_empty.choose(rng) {
                    if let Some(t) = keyboard_typo(&copy[j], rng) {
                        copy[j] = t;
                    }
                }
            }
            let new_row = self.dirty.row_count();
            self.dirty.push_row(&copy)?;
            prov.insert(new_row, src);
            cells.extend((0..copy.len()).map(|c| CellRef::new(new_row, c)));
        }
        Ok((cells, prov))
    }
}

const QWERTY_ROWS: [&str; 4] = ["1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"];

/// Keys physically adjacent to `ch` on a QWERTY layout, case preserved.
pub fn adjacent_keys(ch: char) -> Vec<char> {
    let lower = ch.to_ascii_lowercase();
    let Some((r, i)) = QWERTY_ROWS
        .iter()
        .enumerate()
        .find_map(|(r, row)| row.chars().position(|c| c == lower).map(|i| (r, i)))
    else {
        return Vec::new();
    };
    let at = |r: usize, i: isize| -> Option<char> {
        if i < 0 {
            return None;
        }
        QWERTY_ROWS.get(r).and_then(|row| row.chars().nth(i as usize))
    };
    let i = i as isize;
    let mut out = vec![at(r, i - 1), at(r, i + 1)];
    if r > 0 {
        out.push(at(r - 1, i));
        out.push(at(r - 1, i + 1));
    }
    out.push(at(r + 1, i - 1));
    out.push(at(r + 1, i));
    let upper = ch.is_ascii_uppercase();
    out.into_iter()
        .flatten()
        .map(|c| if upper { c.to_ascii_uppercase() } else { c })
        .collect()
}

/// Applies one random keyboard edit (adjacent-key substitution, insertion,
/// deletion or transposition, chosen uniformly among those applicable).
/// Returns `None` when no edit changes the text.
pub fn keyboard_typo<R: Rng + ?Sized>(raw: &str, rng: &mut R) -> Option<String> {
    let chars: Vec<char> = raw.chars().collect();
    if chars.is_empty() {
        return None;
    }
    let subst: Vec<usize> = (0..chars.len()).filter(|&i| !adjacent_keys(chars[i]).is_empty()).collect();
    let transp: Vec<usize> = (0..chars.len().saturating_sub(1)).filter(|&i| chars[i] != chars[i + 1]).collect();
    let mut ops = vec![1u8];
    if !subst.is_empty() {
        ops.push(0);
    }
    if chars.len() >= 2 {
        ops.push(2);
    }
    if !transp.is_empty() {
        ops.push(3);
    }
    ops.sort_unstable();
    for _ in 0..16 {
        let mut out = chars.clone();
        match *ops.choose(rng).unwrap() {
            0 => {
                let i = *subst.choose(rng).unwrap();
                out[i] = *adjacent_keys(chars[i]).choose(rng).unwrap();
            }
            1 => {
                let pos = rng.random_range(0..=chars.len());
                let anchor = chars[pos.min(chars.len() - 1)];
                let ch = adjacent_keys(anchor)
                    .choose(rng)
                    .copied()
                    .unwrap_or_else(|| (b'a' + rng.random_range(0..26u8)) as char);
                out.insert(pos, ch);
            }
            2 => {
                out.remove(rng.random_range(0..chars.len()));
            }
            _ => {
                let i = *transp.choose(rng).unwrap();
                out.swap(i, i + 1);
            }
        }
        let s: String = out.into_iter().collect();
        if s != raw && !s.trim().is_empty() {
            return Some(s);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// `y = X w + e`, features standard normal, `e ~ N(0, noise^2)`.
    LinearRegression { weights: Vec<f64>, n: usize, noise: f64, seed: u64 },
    /// Isotropic Gaussian clusters, rows assigned round-robin to centers.
    Blobs {
        centers: Vec<Vec<f64>>,
        n: usize,
        #[serde(default = "one")]
        std: f64,
        seed: u64,
    },
    /// Standard normal features labelled by the sign of `w.x + bias`.
    TwoClass {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
        n: usize,
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// Name of the column that carries the target or label.
    pub fn target_column(&self) -> &'static str {
        match self {
            SyntheticSpec::LinearRegression { .. } => "y",
            SyntheticSpec::Blobs { .. } => "cluster",
            SyntheticSpec::TwoClass { .. } => "label",
        }
    }
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let nulls = NullTokens::default();
    let bad = |m: &str| Err(InjectError::InvalidSynthetic(m.to_string()));
    let (name, columns) = match spec {
        SyntheticSpec::LinearRegression { weights, n, noise, seed } => {
            if *n == 0 || weights.is_empty() {
                return bad("linear_regression needs n > 0 and at least one weight");
            }
            if !(*noise >= 0.0) {
                return bad("noise must be non-negative");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let d = weights.len();
            let mut x = vec![Vec::with_capacity(*n); d];
            let mut y = Vec::with_capacity(*n);
            for _ in 0..*n {
                let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let e: f64 = StandardNormal.sample(&mut rng);
                let t = row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + noise * e;
                for (j, v) in row.into_iter().enumerate() {
                    x[j].push(fmt6(v));
                }
                y.push(fmt6(t));
            }
            let mut cols: Vec<Column> = x
                .iter()
                .enumerate()
                .map(|(j, c)| Column::from_raw(format!("x{}", j + 1), ColumnType::Numeric, c, &nulls))
                .collect();
            cols.push(Column::from_raw("y", ColumnType::Numeric, &y, &nulls));
            ("linear_regression", cols)
        }
        SyntheticSpec::Blobs { centers, n, std, seed } => {
            if *n == 0 || centers.is_empty() {
                return bad("blobs needs n > 0 and at least one center");
            }
            let d = centers[0].len();
            if d == 0 || centers.iter().any(|c| c.len() != d) {
                return bad("centers must share a positive dimension");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut x = vec![Vec::with_capacity(*n); d];
            let mut label = Vec::with_capacity(*n);
            for i in 0..*n {
                let k = i % centers.len();
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[j].push(fmt6(centers[k][j] + std * z));
                }
                label.push(format!("c{k}"));
            }
            let mut cols: Vec<Column> = x
                .iter()
                .enumerate()
                .map(|(j, c)| Column::from_raw(format!("x{}", j + 1), ColumnType::Numeric, c, &nulls))
                .collect();
            cols.push(Column::from_raw("cluster", ColumnType::Categorical, &label, &nulls));
            ("blobs", cols)
        }
        SyntheticSpec::TwoClass { weights, bias, n, seed } => {
            if *n == 0 || weights.is_empty() {
                return bad("two_class needs n > 0 and at least one weight");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let d = weights.len();
            let mut x = vec![Vec::with_capacity(*n); d];
            let mut label = Vec::with_capacity(*n);
            for _ in 0..*n {
                let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let s = row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + bias;
                for (j, v) in row.into_iter().enumerate() {
                    x[j].push(fmt6(v));
                }
                label.push(if s > 0.0 { "c1" } else { "c0" }.to_string());
            }
            let mut cols: Vec<Column> = x
                .iter()
                .enumerate()
                .map(|(j, c)| Column::from_raw(format!("x{}", j + 1), ColumnType::Numeric, c, &nulls))
                .collect();
            cols.push(Column::from_raw("label", ColumnType::Categorical, &label, &nulls));
            ("two_class", cols)
        }
    };
    let mut ds = Dataset::new(name, columns)?;
    ds.metadata.insert("generator".into(), serde_json::to_string(spec).expect("spec serializes"));
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::diff_cells;

    fn grid(rows: usize, cols: usize) -> Dataset {
        let nulls = NullTokens::default();
        let columns = (0..cols)
            .map(|j| {
                let raws: Vec<String> = (0..rows).map(|i| format!("{}", i * 7 + j * 3 + 1)).collect();
                Column::from_raw(format!("c{j}"), ColumnType::Numeric, &raws, &nulls)
            })
            .collect();
        Dataset::new("grid", columns).unwrap()
    }

    #[test]
    fn explicit_mv_exact_count() {
        let gt = grid(100, 10);
        let profile = ErrorProfile::new(vec![ErrorEntry::new(ErrorKind::ExplicitMv, 0.1)]);
        let (pair, report) = inject(&gt, &profile, 3, &[]).unwrap();
        assert_eq!(report.injected_cells, 100);
        assert!((report.achieved_rate - 0.1).abs() < 1e-12);
        assert_eq!(diff_cells(&pair.ground_truth, &pair.dirty).unwrap().cells, pair.error_mask.cells);
        assert!(pair.error_mask.iter().all(|&c| pair.dirty.cell(c).is_empty()));
    }

    #[test]
    fn beers_like_count() {
        assert_eq!(cells_for_rate(0.16, 2410 * 11), 4242);
    }

    #[test]
    fn gaussian_outliers_respect_degree() {
        let gt = make_synthetic(&SyntheticSpec::LinearRegression { weights: vec![1.0, 1.0], n: 300, noise: 0.5, seed: 1 })
            .unwrap();
        let profile = ErrorProfile::new(vec![ErrorEntry::new(ErrorKind::GaussianOutlier { degree: 4.0 }, 0.2)]);
        let (pair, report) = inject(&gt, &profile, 9, &[]).unwrap();
        for c in report.mask_of("gaussian_outlier").iter() {
            let v = gt.column(c.col).parsed_values();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            let x = pair.dirty.cell(*c).parsed().unwrap();
            assert!((x - mean).abs() >= 4.0 * sd);
        }
    }

    #[test]
    fn injection_is_deterministic_and_kinds_disjoint() {
        let gt = grid(60, 6);
        let profile = ErrorProfile::new(vec![
            ErrorEntry::new(ErrorKind::ExplicitMv, 0.05),
            ErrorEntry::new(ErrorKind::KeyboardTypo, 0.05),
            ErrorEntry::new(ErrorKind::ValueSwap, 0.05),
            ErrorEntry::new(ErrorKind::ImplicitMv, 0.05),
        ]);
        let (a, ra) = inject(&gt, &profile, 11, &[]).unwrap();
        let (b, _) = inject(&gt, &profile, 11, &[]).unwrap();
        assert_eq!(a.dirty, b.dirty);
        let total: usize = ra.kinds.iter().map(|k| k.mask.len()).sum();
        assert_eq!(total, a.error_mask.len());
        for k in &ra.kinds {
            assert_eq!(k.mask.len(), k.requested, "{}", k.kind.name());
        }
    }

    #[test]
    fn odd_swap_count_uses_rotation() {
        let gt = grid(10, 5);
        // round(0.06 * 50) = 3
        let profile = ErrorProfile::new(vec![ErrorEntry::new(ErrorKind::ValueSwap, 0.06)]);
        let (pair, report) = inject(&gt, &profile, 1, &[]).unwrap();
        assert_eq!(report.injected_cells, 3);
        assert_eq!(diff_cells(&gt, &pair.dirty).unwrap().len(), 3);
    }

    #[test]
    fn implicit_mv_uses_large_code_for_numeric() {
        let gt = grid(20, 2);
        let profile = ErrorProfile::new(vec![ErrorEntry::new(ErrorKind::ImplicitMv, 0.1)]);
        let (pair, report) = inject(&gt, &profile, 5, &[]).unwrap();
        for c in report.mask_of("implicit_mv").iter() {
            assert_eq!(pair.dirty.cell(*c).raw(), "99999");
        }
    }

    #[test]
    fn duplicates_record_provenance() {
        let gt = grid(20, 3);
        let profile = ErrorProfile::new(vec![ErrorEntry::new(ErrorKind::DuplicateRow { row_fraction: 0.25 }, 0.0)]);
        let (pair, report) = inject(&gt, &profile, 2, &[]).unwrap();
        assert_eq!(pair.dirty.row_count(), 25);
        assert_eq!(report.duplicate_rows, 5);
        assert_eq!(report.injected_cells, 0);
        let prov = pair.provenance.as_ref().unwrap();
        assert_eq!(prov.len(), 5);
        assert_eq!(pair.error_mask.len(), 15);
        assert!(prov.keys().all(|&r| r >= 20));
    }

    #[test]
    fn mislabel_changes_class() {
        let gt = make_synthetic(&SyntheticSpec::TwoClass { weights: vec![1.0, -1.0], bias: 0.0, n: 100, seed: 4 }).unwrap();
        let profile = ErrorProfile::new(vec![ErrorEntry::new(
            ErrorKind::Mislabel { row_fraction: 0.1, label_column: "label".into() },
            0.0,
        )]);
        let (pair, report) = inject(&gt, &profile, 4, &[]).unwrap();
        let m = report.mask_of("mislabel");
        assert_eq!(m.len(), 10);
        for c in m.iter() {
            assert_ne!(pair.dirty.cell(*c).raw(), gt.cell(*c).raw());
        }
    }

    #[test]
    fn mislabel_needs_two_classes() {
        let gt = grid(10, 2);
        let nulls = NullTokens::default();
        let mut cols: Vec<Column> = gt.columns().to_vec();
        cols.push(Column::from_raw("lab", ColumnType::Categorical, &vec!["a"; 10], &nulls));
        let gt = Dataset::new("g", cols).unwrap();
        let profile = ErrorProfile::new(vec![ErrorEntry::new(
            ErrorKind::Mislabel { row_fraction: 0.1, label_column: "lab".into() },
            0.0,
        )]);
        assert!(matches!(inject(&gt, &profile, 1, &[]), Err(InjectError::MissingClasses { .. })));
    }

    #[test]
    fn rule_violations_create_fd_conflicts() {
        use crate::constraints::{find_violations, parse_constraints};
        let nulls = NullTokens::default();
        let zips: Vec<String> = (0..40).map(|i| format!("{}", i % 8)).collect();
        let cities: Vec<String> = (0..40).map(|i| format!("city{}", i % 8)).collect();
        let gt = Dataset::new(
            "z",
            vec![
                Column::from_raw("zip", ColumnType::Categorical, &zips, &nulls),
                Column::from_raw("city", ColumnType::Categorical, &cities, &nulls),
            ],
        )
        .unwrap();
        let dcs = parse_constraints("FD: zip -> city", &["zip", "city"]).unwrap();
        assert!(find_violations(&gt, &dcs).unwrap().is_empty());
        let profile = ErrorProfile::new(vec![ErrorEntry::new(ErrorKind::RuleViolation { constraints: vec![] }, 0.05)]);
        let (pair, report) = inject(&gt, &profile, 8, &dcs).unwrap();
        assert_eq!(report.injected_cells, 4);
        let found = find_violations(&pair.dirty, &dcs).unwrap();
        assert!(pair.error_mask.iter().all(|c| found.contains(c)));
    }

    #[test]
    fn infeasible_rates_are_errors() {
        let gt = grid(5, 2);
        let profile = ErrorProfile::new(vec![
            ErrorEntry::new(ErrorKind::ExplicitMv, 0.7),
            ErrorEntry::new(ErrorKind::KeyboardTypo, 0.5),
        ]);
        assert!(matches!(inject(&gt, &profile, 1, &[]), Err(InjectError::InvalidProfile(_))));
        let profile = ErrorProfile::new(vec![ErrorEntry::new(ErrorKind::GaussianOutlier { degree: 0.0 }, 0.1)]);
        assert!(inject(&gt, &profile, 1, &[]).is_err());
    }

    #[test]
    fn typo_changes_text_and_adjacency_is_symmetric_enough() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in ["a", "hello", "12", "Zz", "x-y"] {
            let t = keyboard_typo(s, &mut rng).unwrap();
            assert_ne!(t, s);
        }
        assert!(adjacent_keys('s').contains(&'a'));
        assert!(adjacent_keys('S').contains(&'D'));
        assert!(adjacent_keys('-').is_empty());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::LinearRegression { weights: vec![3.0, -2.0], n: 1000, noise: 0.1, seed: 7 };
        let a = make_synthetic(&spec).unwrap();
        assert_eq!(a, make_synthetic(&spec).unwrap());
        assert_eq!(a.shape(), (1000, 3));
        assert!(make_synthetic(&SyntheticSpec::LinearRegression { weights: vec![1.0], n: 0, noise: 0.1, seed: 7 }).is_err());
        let blobs = make_synthetic(&SyntheticSpec::Blobs {
            centers: vec![vec![0.0, 0.0], vec![10.0, 10.0]],
            n: 100,
            std: 1.0,
            seed: 1,
        })
        .unwrap();
        assert_eq!(blobs.shape(), (100, 3));
    }

    #[test]
    fn profile_round_trips_through_json() {
        let p = ErrorProfile::new(vec![
            ErrorEntry::new(ErrorKind::GaussianOutlier { degree: 4.0 }, 0.3).on_columns(&["x1"]),
            ErrorEntry::new(ErrorKind::Mislabel { row_fraction: 0.1, label_column: "y".into() }, 0.0),
        ]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<ErrorProfile>(&s).unwrap(), p);
    }
}
