//! Typed tabular data: cells, columns, datasets, CSV I/O, cell masks and
//! seeded train/test splitting.
//!
//! Every cell keeps the raw text it was read with. Numeric interpretation is
//! layered on top (`CellValue::parsed`) so that dirty values such as `"12x"`
//! survive untouched through injection, detection and repair.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Null tokens recognised by default when reading cells.
pub const DEFAULT_NULL_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "null", "NULL", "?"];

/// Share of non-empty cells that must parse as numbers for a column to be
/// inferred numeric.
pub const NUMERIC_INFERENCE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("missing header row")]
    MissingHeader,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{name}` has {found} cells, expected {expected}")]
    ColumnLength { name: String, expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("malformed mask record at line {line}: {reason}")]
    MaskFormat { line: usize, reason: String },
    #[error("cell ({row}, {col}) is outside a {rows}x{cols} grid")]
    CellOutOfBounds { row: usize, col: usize, rows: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, TabularError>;

fn io_err(path: &Path, source: std::io::Error) -> TabularError {
    TabularError::Io { path: path.display().to_string(), source }
}

/// The set of raw strings treated as empty. `""` is always a null token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullTokens(Vec<String>);

impl NullTokens {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if !v.iter().any(|t| t.is_empty()) {
            v.push(String::new());
        }
        v.sort();
        v.dedup();
        NullTokens(v)
    }

    pub fn is_null(&self, raw: &str) -> bool {
        let t = raw.trim();
        t.is_empty() || self.0.iter().any(|n| n == t)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }
}

impl Default for NullTokens {
    fn default() -> Self {
        NullTokens::new(DEFAULT_NULL_TOKENS.iter().copied())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Numeric,
    Categorical,
    Text,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Numeric)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Numeric => "numeric",
            ColumnType::Categorical => "categorical",
            ColumnType::Text => "text",
        })
    }
}

/// Parses `raw` as a finite decimal number (surrounding whitespace ignored).
pub fn parse_number(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() {
        return None;
    }
    // `f64::from_str` also accepts "inf" and "nan"; only finite values count.
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Shortest text that parses back to exactly `v`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    raw: String,
    parsed: Option<f64>,
    is_empty: bool,
}

impl CellValue {
    pub fn new(raw: impl Into<String>, nulls: &NullTokens) -> Self {
        let raw = raw.into();
        let is_empty = nulls.is_null(&raw);
        let parsed = if is_empty { None } else { parse_number(&raw) };
        CellValue { raw, parsed, is_empty }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn parsed(&self) -> Option<f64> {
        self.parsed
    }

    pub fn is_empty(&self) -> bool {
        self.is_empty
    }

    /// Non-empty but not a number.
    pub fn is_unparsable(&self) -> bool {
        !self.is_empty && self.parsed.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub declared_type: ColumnType,
    cells: Vec<CellValue>,
    /// Fraction of non-empty cells that parsed as numbers when the type was
    /// inferred; `None` when the type came from a schema.
    pub inference_ratio: Option<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, declared_type: ColumnType, cells: Vec<CellValue>) -> Self {
        Column { name: name.into(), declared_type, cells, inference_ratio: None }
    }

    pub fn from_raw<S: AsRef<str>>(
        name: impl Into<String>,
        declared_type: ColumnType,
        raws: &[S],
        nulls: &NullTokens,
    ) -> Self {
        let cells = raws.iter().map(|r| CellValue::new(r.as_ref(), nulls)).collect();
        Column::new(name, declared_type, cells)
    }

    pub fn cells(&self) -> &[CellValue] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn is_numeric(&self) -> bool {
        self.declared_type.is_numeric()
    }

    /// All parsed values in row order.
    pub fn parsed_values(&self) -> Vec<f64> {
        self.cells.iter().filter_map(CellValue::parsed).collect()
    }
}

/// Infers a column type from raw cells: numeric iff at least 90% of the
/// non-empty cells parse. Returns the type and the observed ratio.
pub fn infer_type(cells: &[CellValue]) -> (ColumnType, f64) {
    let non_empty = cells.iter().filter(|c| !c.is_empty()).count();
    if non_empty == 0 {
        return (ColumnType::Categorical, 0.0);
    }
    let numeric = cells.iter().filter(|c| c.parsed().is_some()).count();
    let ratio = numeric as f64 / non_empty as f64;
    let ty = if ratio >= NUMERIC_INFERENCE_THRESHOLD { ColumnType::Numeric } else { ColumnType::Categorical };
    (ty, ratio)
}

/// Declared column types keyed by column name. Columns not listed are inferred.
pub type Schema = BTreeMap<String, ColumnType>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    pub row: usize,
    pub col: usize,
}

impl CellRef {
    pub fn new(row: usize, col: usize) -> Self {
        CellRef { row, col }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    columns: Vec<Column>,
    row_count: usize,
    nulls: NullTokens,
    /// Free-form provenance (generator parameters, source path, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        Self::with_nulls(name, columns, NullTokens::default())
    }

    pub fn with_nulls(name: impl Into<String>, columns: Vec<Column>, nulls: NullTokens) -> Result<Self> {
        let row_count = columns.first().map_or(0, Column::len);
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(TabularError::DuplicateColumn(c.name.clone()));
            }
            if c.len() != row_count {
                return Err(TabularError::ColumnLength {
                    name: c.name.clone(),
                    expected: row_count,
                    found: c.len(),
                });
            }
        }
        Ok(Dataset { name: name.into(), columns, row_count, nulls, metadata: BTreeMap::new() })
    }

    /// Builds a dataset from a header and row-major raw text. Types come from
    /// `schema` where given and are inferred otherwise.
    pub fn from_rows<S: AsRef<str>>(
        name: impl Into<String>,
        headers: &[S],
        rows: &[Vec<String>],
        schema: Option<&Schema>,
        nulls: NullTokens,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for h in headers {
            if !seen.insert(h.as_ref()) {
                return Err(TabularError::DuplicateColumn(h.as_ref().to_string()));
            }
        }
        if let Some(schema) = schema {
            for key in schema.keys() {
                if !seen.contains(key.as_str()) {
                    return Err(TabularError::UnknownColumn(key.clone()));
                }
            }
        }
        let mut columns = Vec::with_capacity(headers.len());
        for (j, h) in headers.iter().enumerate() {
            let mut cells = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let raw = row.get(j).ok_or(TabularError::RaggedRow {
                    line: i as u64 + 2,
                    expected: headers.len(),
                    found: row.len(),
                })?;
                cells.push(CellValue::new(raw.as_str(), &nulls));
            }
            let mut col = match schema.and_then(|s| s.get(h.as_ref())) {
                Some(ty) => Column::new(h.as_ref(), *ty, cells),
                None => {
                    let (ty, ratio) = infer_type(&cells);
                    let mut c = Column::new(h.as_ref(), ty, cells);
                    c.inference_ratio = Some(ratio);
                    c
                }
            };
            col.name = h.as_ref().to_string();
            columns.push(col);
        }
        let mut ds = Dataset::with_nulls(name, columns, nulls)?;
        ds.row_count = rows.len();
        Ok(ds)
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn col_count(&self) -> usize {
        self.columns.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_count, self.columns.len())
    }

    pub fn cell_count(&self) -> usize {
        self.row_count * self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, col: usize) -> &Column {
        &self.columns[col]
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn col_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| TabularError::UnknownColumn(name.to_string()))
    }

    pub fn nulls(&self) -> &NullTokens {
        &self.nulls
    }

    pub fn cell(&self, at: CellRef) -> &CellValue {
        &self.columns[at.col].cells[at.row]
    }

    pub fn raw(&self, row: usize, col: usize) -> &str {
        self.columns[col].cells[row].raw()
    }

    pub fn contains(&self, at: CellRef) -> bool {
        at.row < self.row_count && at.col < self.columns.len()
    }

    pub fn row_raw(&self, row: usize) -> Vec<&str> {
        self.columns.iter().map(|c| c.cells[row].raw()).collect()
    }

    /// Overwrites one cell's raw text, re-deriving its parsed form.
    pub fn set_raw(&mut self, at: CellRef, raw: impl Into<String>) {
        let cell = CellValue::new(raw, &self.nulls);
        self.columns[at.col].cells[at.row] = cell;
    }

    /// Appends a row given as raw text, one entry per column.
    pub fn push_row<S: AsRef<str>>(&mut self, raws: &[S]) -> Result<()> {
        if raws.len() != self.columns.len() {
            return Err(TabularError::ShapeMismatch(format!(
                "row has {} fields, dataset has {} columns",
                raws.len(),
                self.columns.len()
            )));
        }
        for (c, r) in self.columns.iter_mut().zip(raws) {
            c.cells.push(CellValue::new(r.as_ref(), &self.nulls));
        }
        self.row_count += 1;
        Ok(())
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                declared_type: c.declared_type,
                cells: rows.iter().map(|&r| c.cells[r].clone()).collect(),
                inference_ratio: c.inference_ratio,
            })
            .collect();
        Dataset {
            name: self.name.clone(),
            columns,
            row_count: rows.len(),
            nulls: self.nulls.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Same name, columns and types; requires identical schema for comparisons.
    pub fn same_schema(&self, other: &Dataset) -> bool {
        self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|(a, b)| a.name == b.name)
    }

    pub fn numeric_columns(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&j| self.columns[j].is_numeric()).collect()
    }

    /// Every cell of the grid, row-major.
    pub fn all_cells(&self) -> impl Iterator<Item = CellRef> + '_ {
        let cols = self.columns.len();
        (0..self.row_count).flat_map(move |r| (0..cols).map(move |c| CellRef::new(r, c)))
    }
}

/// Reads a CSV file with a mandatory header row.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let mut ds = read_csv(file, &name, schema, NullTokens::default())?;
    ds.metadata.insert("source".into(), path.display().to_string());
    Ok(ds)
}

pub fn read_csv<R: Read>(reader: R, name: &str, schema: Option<&Schema>, nulls: NullTokens) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(map_csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(TabularError::MissingHeader);
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(map_csv_err)?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    Dataset::from_rows(name, &headers, &rows, schema, nulls)
}

fn map_csv_err(e: csv::Error) -> TabularError {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => TabularError::RaggedRow {
            line: pos.as_ref().map_or(0, |p| p.line()),
            expected: *expected_len as usize,
            found: *len as usize,
        },
        _ => TabularError::Csv(e.to_string()),
    }
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_csv(ds, file)
}

pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Necessary).from_writer(writer);
    w.write_record(ds.column_names()).map_err(map_csv_err)?;
    for r in 0..ds.row_count() {
        w.write_record(ds.row_raw(r)).map_err(map_csv_err)?;
    }
    w.flush().map_err(|e| TabularError::Csv(e.to_string()))
}

/// A set of flagged cells together with the identifier of whatever produced it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionMask {
    pub cells: BTreeSet<CellRef>,
    pub source: String,
}

impl DetectionMask {
    pub fn new(source: impl Into<String>) -> Self {
        DetectionMask { cells: BTreeSet::new(), source: source.into() }
    }

    pub fn from_cells(source: impl Into<String>, cells: impl IntoIterator<Item = CellRef>) -> Self {
        DetectionMask { cells: cells.into_iter().collect(), source: source.into() }
    }

    pub fn insert(&mut self, cell: CellRef) -> bool {
        self.cells.insert(cell)
    }

    pub fn contains(&self, cell: &CellRef) -> bool {
        self.cells.contains(cell)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CellRef> {
        self.cells.iter()
    }

    pub fn rows(&self) -> BTreeSet<usize> {
        self.cells.iter().map(|c| c.row).collect()
    }

    pub fn union_with(&mut self, other: &DetectionMask) {
        self.cells.extend(other.cells.iter().copied());
    }

    pub fn intersection_len(&self, other: &DetectionMask) -> usize {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.cells.iter().filter(|c| large.cells.contains(c)).count()
    }

    pub fn intersect(&self, other: &DetectionMask) -> DetectionMask {
        DetectionMask {
            cells: self.cells.intersection(&other.cells).copied().collect(),
            source: self.source.clone(),
        }
    }

    /// Checks every cell lies inside a `rows x cols` grid.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        match self.cells.iter().find(|c| c.row >= rows || c.col >= cols) {
            Some(c) => Err(TabularError::CellOutOfBounds { row: c.row, col: c.col, rows, cols }),
            None => Ok(()),
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for c in &self.cells {
            w.write_record([c.row.to_string(), c.col.to_string(), self.source.clone()])
                .map_err(map_csv_err)?;
        }
        w.flush().map_err(|e| TabularError::Csv(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write(file)
    }

    /// Reads `row,col,source` records. The source of the first record names
    /// the mask; an empty file yields an empty mask with an empty source.
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut mask = DetectionMask::new("");
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(map_csv_err)?;
            if rec.len() < 2 {
                return Err(TabularError::MaskFormat { line, reason: "expected row,col[,source]".into() });
            }
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| TabularError::MaskFormat { line, reason: e.to_string() })
            };
            let cell = CellRef::new(parse(&rec[0])?, parse(&rec[1])?);
            if i == 0 {
                mask.source = rec.get(2).unwrap_or("").to_string();
            }
            mask.insert(cell);
        }
        Ok(mask)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        Self::read(file)
    }
}

/// Cells whose raw text differs between two equally shaped datasets.
pub fn diff_cells(gt: &Dataset, dirty: &Dataset) -> Result<DetectionMask> {
    if gt.shape() != dirty.shape() {
        return Err(TabularError::ShapeMismatch(format!(
            "ground truth is {:?}, dirty is {:?}",
            gt.shape(),
            dirty.shape()
        )));
    }
    if !gt.same_schema(dirty) {
        return Err(TabularError::ShapeMismatch("column names differ".into()));
    }
    let mut mask = DetectionMask::new("diff");
    for (j, (a, b)) in gt.columns.iter().zip(&dirty.columns).enumerate() {
        for (i, (x, y)) in a.cells.iter().zip(&b.cells).enumerate() {
            if x.raw() != y.raw() {
                mask.insert(CellRef::new(i, j));
            }
        }
    }
    Ok(mask)
}

/// A clean dataset, its dirty counterpart and the exact set of corrupted cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPair {
    pub ground_truth: Dataset,
    pub dirty: Dataset,
    pub error_mask: DetectionMask,
    /// Appended duplicate row index (in `dirty`) to the row it copies.
    pub provenance: Option<BTreeMap<usize, usize>>,
}

impl DatasetPair {
    /// Maps every dirty row to the ground-truth row it stands for.
    pub fn row_origin(&self) -> Vec<usize> {
        origin_map(self.ground_truth.row_count(), self.dirty.row_count(), self.provenance.as_ref())
    }
}

pub(crate) fn origin_map(gt_rows: usize, rows: usize, provenance: Option<&BTreeMap<usize, usize>>) -> Vec<usize> {
    (0..rows)
        .map(|r| {
            if r < gt_rows {
                r
            } else {
                let mut src = provenance.and_then(|p| p.get(&r).copied()).unwrap_or(r);
                // Chained duplicates resolve to the first original row.
                while src >= gt_rows {
                    match provenance.and_then(|p| p.get(&src).copied()) {
                        Some(s) if s != src => src = s,
                        _ => break,
                    }
                }
                src
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Deterministic shuffled partition of `0..n` into (train, test), each sorted.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(TabularError::InvalidSplit(format!("need at least 2 rows, got {n}")));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(TabularError::InvalidSplit(format!("test fraction {} not in (0,1)", spec.test_fraction)));
    }
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(TabularError::InvalidSplit(format!(
            "fraction {} of {n} rows leaves an empty partition",
            spec.test_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.row_count(), spec)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}
