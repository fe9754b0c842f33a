//! Line-delimited JSON results store.
//!
//! Each table is an append-only `<table>.jsonl` file. Records are keyed;
//! a later line with the same key supersedes the earlier one, so re-running
//! a config upserts instead of duplicating. `index.json` maps every live key
//! to its line number.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::Scenario;
use super::{BenchError, Result};
use crate::eval::{DetectionScore, MetricKind, RepairScore};
use crate::stats::AbTestResult;

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    Timeout,
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub trait Record: Serialize + DeserializeOwned + Clone {
    const TABLE: &'static str;
    fn key(&self) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub detector: String,
    pub repair: String,
    pub model: String,
    pub scenario: Scenario,
    /// Train/test split seed (the pairing key for A/B tests).
    pub seed: u64,
    pub seed_index: usize,
    pub metric_kind: MetricKind,
    pub metric_value: Option<f64>,
    pub detect_runtime: f64,
    pub repair_runtime: f64,
    pub train_runtime: f64,
    pub timestamp: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Record for ExperimentRecord {
    const TABLE: &'static str = "experiments";
    fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{:?}",
            self.dataset, self.detector, self.repair, self.model, self.scenario, self.seed, self.metric_kind
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Detect,
    Repair,
}

/// Detection or repair quality of one strategy on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRecord {
    pub dataset: String,
    pub stage: Stage,
    pub detector: String,
    /// Absent for detection records.
    #[serde(default)]
    pub repair: Option<String>,
    #[serde(default)]
    pub detection: Option<DetectionScore>,
    #[serde(default)]
    pub repair_score: Option<RepairScore>,
    pub flagged_cells: usize,
    pub runtime: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub timestamp: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Record for StrategyRecord {
    const TABLE: &'static str = "strategies";
    fn key(&self) -> String {
        format!("{}|{:?}|{}|{}", self.dataset, self.stage, self.detector, self.repair.as_deref().unwrap_or("-"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouRecord {
    pub dataset: String,
    pub detector_a: String,
    pub detector_b: String,
    pub value: f64,
    pub both_empty: bool,
}

impl Record for IouRecord {
    const TABLE: &'static str = "iou";
    fn key(&self) -> String {
        format!("{}|{}|{}", self.dataset, self.detector_a, self.detector_b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ErrorRate,
    OutlierDegree,
    Fraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub dataset: String,
    pub axis: SweepAxis,
    pub value: f64,
    pub detector: String,
    pub seed_index: usize,
    pub rows: usize,
    #[serde(default)]
    pub score: Option<DetectionScore>,
    pub runtime: f64,
    pub timestamp: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Record for SweepRecord {
    const TABLE: &'static str = "sweeps";
    fn key(&self) -> String {
        format!("{}|{:?}|{}|{}|{}", self.dataset, self.axis, self.value, self.detector, self.seed_index)
    }
}

/// One side of an A/B comparison: a strategy evaluated in a scenario.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbSide {
    pub detector: String,
    pub repair: String,
    pub scenario: Scenario,
}

impl AbSide {
    /// S4 is stored under the ground-truth id regardless of strategy.
    pub fn new(detector: &str, repair: &str, scenario: Scenario) -> Self {
        if scenario == Scenario::S4 {
            AbSide { detector: super::plan::GT_ID.into(), repair: super::plan::GT_ID.into(), scenario }
        } else {
            AbSide { detector: detector.into(), repair: repair.into(), scenario }
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.detector, self.repair, self.scenario)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbTestRecord {
    pub dataset: String,
    pub model: String,
    pub side_a: AbSide,
    pub side_b: AbSide,
    pub result: AbTestResult,
    pub timestamp: u64,
}

impl Record for AbTestRecord {
    const TABLE: &'static str = "abtests";
    fn key(&self) -> String {
        format!("{}|{}|{}|{}", self.dataset, self.model, self.side_a.label(), self.side_b.label())
    }
}

#[derive(Clone, Debug)]
pub struct Table<R: Record> {
    path: Option<PathBuf>,
    records: BTreeMap<String, R>,
    lines: BTreeMap<String, usize>,
    line_count: usize,
}

impl<R: Record> Table<R> {
    fn in_memory() -> Self {
        Table { path: None, records: BTreeMap::new(), lines: BTreeMap::new(), line_count: 0 }
    }

    fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(format!("{}.jsonl", R::TABLE));
        let mut t = Table { path: Some(path.clone()), ..Table::in_memory() };
        if path.exists() {
            let f = File::open(&path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
                t.line_count = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let r: R = serde_json::from_str(&line)
                    .map_err(|e| BenchError::Store(format!("{}:{}: {e}", path.display(), i + 1)))?;
                let k = r.key();
                t.lines.insert(k.clone(), i);
                t.records.insert(k, r);
            }
        }
        Ok(t)
    }

    /// Inserts or replaces records by key, appending them to the table file.
    pub fn upsert_all(&mut self, records: impl IntoIterator<Item = R>) -> Result<()> {
        let mut writer = match &self.path {
            Some(p) => Some(BufWriter::new(
                OpenOptions::new().create(true).append(true).open(p).map_err(|e| BenchError::Io(format!("{}: {e}", p.display())))?,
            )),
            None => None,
        };
        for r in records {
            if let Some(w) = writer.as_mut() {
                let line = serde_json::to_string(&r).map_err(|e| BenchError::Store(e.to_string()))?;
                writeln!(w, "{line}").map_err(|e| BenchError::Io(e.to_string()))?;
            }
            let k = r.key();
            self.lines.insert(k.clone(), self.line_count);
            self.line_count += 1;
            self.records.insert(k, r);
        }
        if let Some(mut w) = writer {
            w.flush().map_err(|e| BenchError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn upsert(&mut self, record: R) -> Result<()> {
        self.upsert_all([record])
    }

    /// Live records in key order.
    pub fn records(&self) -> impl Iterator<Item = &R> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&R> {
        self.records.get(key)
    }

    fn index(&self) -> serde_json::Value {
        serde_json::json!({ "lines": self.line_count, "records": self.records.len(), "keys": self.lines })
    }
}

#[derive(Clone, Debug)]
pub struct ResultsStore {
    dir: Option<PathBuf>,
    pub experiments: Table<ExperimentRecord>,
    pub strategies: Table<StrategyRecord>,
    pub iou: Table<IouRecord>,
    pub sweeps: Table<SweepRecord>,
    pub abtests: Table<AbTestRecord>,
}

impl ResultsStore {
    pub fn in_memory() -> Self {
        ResultsStore {
            dir: None,
            experiments: Table::in_memory(),
            strategies: Table::in_memory(),
            iou: Table::in_memory(),
            sweeps: Table::in_memory(),
            abtests: Table::in_memory(),
        }
    }

    /// Opens (creating if needed) a store directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?;
        Ok(ResultsStore {
            dir: Some(dir.to_path_buf()),
            experiments: Table::open(dir)?,
            strategies: Table::open(dir)?,
            iou: Table::open(dir)?,
            sweeps: Table::open(dir)?,
            abtests: Table::open(dir)?,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Rewrites the index sidecar.
    pub fn flush(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let index = serde_json::json!({
            ExperimentRecord::TABLE: self.experiments.index(),
            StrategyRecord::TABLE: self.strategies.index(),
            IouRecord::TABLE: self.iou.index(),
            SweepRecord::TABLE: self.sweeps.index(),
            AbTestRecord::TABLE: self.abtests.index(),
        });
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index).map_err(|e| BenchError::Store(e.to_string()))?;
        fs::write(&path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
    }

    /// Experiment records that failed or timed out.
    pub fn failures(&self) -> usize {
        self.experiments.records().filter(|r| r.status != Status::Ok).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: u64, value: f64) -> ExperimentRecord {
        ExperimentRecord {
            dataset: "d".into(),
            detector: "mvd".into(),
            repair: "mean".into(),
            model: "ridge".into(),
            scenario: Scenario::S1,
            seed,
            seed_index: 0,
            metric_kind: MetricKind::Rmse,
            metric_value: Some(value),
            detect_runtime: 0.0,
            repair_runtime: 0.0,
            train_runtime: 0.0,
            timestamp: 0,
            status: Status::Ok,
            error: None,
        }
    }

    #[test]
    fn upsert_replaces_by_key_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = ResultsStore::open(dir.path()).unwrap();
            s.experiments.upsert_all([record(1, 1.0), record(2, 2.0), record(1, 3.0)]).unwrap();
            s.flush().unwrap();
            assert_eq!(s.experiments.len(), 2);
        }
        let s = ResultsStore::open(dir.path()).unwrap();
        assert_eq!(s.experiments.len(), 2);
        let r = s.experiments.get(&record(1, 0.0).key()).unwrap();
        assert_eq!(r.metric_value, Some(3.0));
        let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap()).unwrap();
        assert_eq!(index["experiments"]["lines"], 3);
        assert_eq!(index["experiments"]["records"], 2);
    }

    #[test]
    fn s4_sides_ignore_strategy() {
        assert_eq!(AbSide::new("mvd", "mean", Scenario::S4), AbSide::new("sd", "knn", Scenario::S4));
        assert_ne!(AbSide::new("mvd", "mean", Scenario::S1), AbSide::new("sd", "knn", Scenario::S1));
    }
}
