//! Grid execution: detection, repair, then per-scenario model runs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, prepare_dataset, BenchmarkConfig, PreparedDataset, Scenario};
use super::plan::{plan_experiments, ExperimentGrid, PlanContext, PlannedCell, Skip, VersionRef};
use super::store::{now_secs, AbSide, AbTestRecord, ExperimentRecord, IouRecord, ResultsStore, Stage, Status, StrategyRecord};
use super::{BenchError, Result};
use crate::detect::{run_detector, DetectionContext, DetectorRun};
use crate::eval::{detection_metrics, iou, model_metrics, repair_metrics, MetricKind, RepairScore};
use crate::model::{self, ModelSpec, Task};
use crate::repair::{run_repair, RepairedDataset};
use crate::stats::{wilcoxon_signed_rank, PairedSample, WilcoxonMode};
use crate::tabular::{split_indices, CellRef, Dataset, DatasetPair, DetectionMask, SplitSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads; rayon's default when absent.
    pub workers: Option<usize>,
    /// Per-cell wall-clock limit.
    pub timeout: Option<Duration>,
}

impl RunOptions {
    pub fn from_config(cfg: &BenchmarkConfig) -> Self {
        RunOptions { workers: cfg.workers, timeout: (cfg.timeout_secs > 0).then(|| Duration::from_secs(cfg.timeout_secs)) }
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            b = b.num_threads(w.max(1));
        }
        b.build().map_err(|e| BenchError::Config(format!("worker pool: {e}")))
    }
}

/// Runs `f` on its own thread and gives up after `timeout`. A timed-out
/// thread is detached and left to finish in the background.
pub fn with_timeout<T: Send + 'static>(
    timeout: Option<Duration>,
    f: impl FnOnce() -> T + Send + 'static,
) -> std::result::Result<T, (Status, String)> {
    let Some(limit) = timeout else { return Ok(f()) };
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let _ = tx.send(f());
    });
    match rx.recv_timeout(limit) {
        Ok(v) => Ok(v),
        Err(mpsc::RecvTimeoutError::Timeout) => Err((Status::Timeout, format!("exceeded {:.3}s", limit.as_secs_f64()))),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err((Status::Failed, "worker panicked".into())),
    }
}

fn flatten<T, E: std::fmt::Display>(r: std::result::Result<std::result::Result<T, E>, (Status, String)>) -> std::result::Result<T, (Status, String)> {
    match r {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err((Status::Failed, e.to_string())),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub planned: usize,
    pub versioned_total: usize,
    pub s4_total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub skipped: Vec<Skip>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub datasets: Vec<DatasetSummary>,
}

impl BenchSummary {
    pub fn planned(&self) -> usize {
        self.datasets.iter().map(|d| d.planned).sum()
    }

    pub fn failed(&self) -> usize {
        self.datasets.iter().map(|d| d.failed).sum()
    }
}

/// Scores a repair against the clean data, matching rows through their
/// origin. Rows the injector appended are left out.
pub fn aligned_repair_score(pair: &DatasetPair, repaired: &RepairedDataset) -> Result<RepairScore> {
    let gt_rows = pair.ground_truth.row_count();
    let kept: Vec<(usize, usize)> = repaired
        .row_origin
        .iter()
        .enumerate()
        .filter(|(_, &dirty_row)| dirty_row < gt_rows)
        .map(|(i, &d)| (i, d))
        .collect();
    let new_index: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(n, &(_, d))| (d, n)).collect();
    let remap = |m: &DetectionMask| {
        DetectionMask::from_cells(
            m.source.clone(),
            m.iter().filter_map(|c| new_index.get(&c.row).map(|&r| CellRef::new(r, c.col))),
        )
    };
    let data = repaired.data.select_rows(&kept.iter().map(|&(i, _)| i).collect::<Vec<_>>());
    let gt = pair.ground_truth.select_rows(&kept.iter().map(|&(_, d)| d).collect::<Vec<_>>());
    Ok(repair_metrics(&data, &gt, &remap(&pair.error_mask), &remap(&repaired.repaired_cells))?)
}

/// A data version with the ground-truth row behind each of its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DataVersion {
    pub data: Dataset,
    pub origin: Vec<usize>,
}

impl DataVersion {
    pub fn ground_truth(pair: &DatasetPair) -> Self {
        DataVersion { data: pair.ground_truth.clone(), origin: (0..pair.ground_truth.row_count()).collect() }
    }

    pub fn dirty(pair: &DatasetPair) -> Self {
        DataVersion { data: pair.dirty.clone(), origin: pair.row_origin() }
    }

    pub fn repaired(pair: &DatasetPair, repaired: &RepairedDataset) -> Self {
        let dirty_origin = pair.row_origin();
        DataVersion { data: repaired.data.clone(), origin: repaired.row_origin.iter().map(|&r| dirty_origin[r]).collect() }
    }

    fn rows_in(&self, member: &[bool]) -> Dataset {
        let rows: Vec<usize> = (0..self.data.row_count()).filter(|&r| member[self.origin[r]]).collect();
        self.data.select_rows(&rows)
    }
}

/// Inputs shared by every model evaluation on one dataset.
#[derive(Clone, Debug)]
pub struct EvalSetup {
    pub gt: DataVersion,
    pub dirty: DataVersion,
    pub target: Option<String>,
    pub task: Task,
    pub test_fraction: f64,
}

/// Seeded models get a per-split seed so restarts differ across repeats.
pub fn seeded_for_split(spec: &ModelSpec, split_seed: u64) -> ModelSpec {
    match spec {
        ModelSpec::KMeans { seed, .. } => spec.with_seed(derive_seed(*seed, &format!("model/{split_seed}"))),
        other => other.clone(),
    }
}

/// Splits the ground-truth rows with `split_seed`, picks the scenario's
/// train and test versions, fits `spec` and scores it on the test side.
/// Returns the metric value and the training time.
pub fn evaluate_scenario(
    setup: &EvalSetup,
    version: &DataVersion,
    scenario: Scenario,
    spec: &ModelSpec,
    split_seed: u64,
) -> Result<(f64, f64)> {
    let gt_rows = setup.gt.data.row_count();
    let (train_idx, test_idx) = split_indices(gt_rows, SplitSpec { test_fraction: setup.test_fraction, seed: split_seed })?;
    let mut in_train = vec![false; gt_rows];
    let mut in_test = vec![false; gt_rows];
    train_idx.iter().for_each(|&r| in_train[r] = true);
    test_idx.iter().for_each(|&r| in_test[r] = true);
    let (train_src, test_src) = match scenario {
        Scenario::S1 => (version, version),
        Scenario::S2 => (version, &setup.gt),
        Scenario::S3 => (&setup.gt, version),
        Scenario::S4 => (&setup.gt, &setup.gt),
        Scenario::S5 => (version, &setup.dirty),
    };
    let train = train_src.rows_in(&in_train);
    let test = test_src.rows_in(&in_test);
    let (tr, te) = model::encode(&train, &test, setup.target.as_deref())?;
    let fitted = model::fit(&seeded_for_split(spec, split_seed), &tr)?;
    let pred = model::predict(&fitted, &te)?;
    let score = model_metrics(setup.task, &pred, &te)?;
    Ok((score.value, fitted.train_runtime))
}

/// The detection context the benchmark hands every detector of a dataset.
pub fn detection_context(prep: &PreparedDataset, master_seed: u64) -> DetectionContext {
    DetectionContext {
        constraints: prep.constraints.clone(),
        oracle: Some(prep.pair.error_mask.clone()),
        label_column: prep.label_column.clone(),
        error_rate: Some(prep.error_rate()),
        seed: derive_seed(master_seed, &format!("detect/{}", prep.name)),
    }
}

struct Version {
    data: Arc<DataVersion>,
    detect_runtime: f64,
    repair_runtime: f64,
}

struct CellInputs {
    versions: Vec<Option<Arc<Version>>>,
    setup: Arc<EvalSetup>,
    dirty: Arc<DataVersion>,
    gt: Arc<DataVersion>,
    models: Vec<ModelSpec>,
}

fn run_cell(inputs: &CellInputs, cell: &PlannedCell, timeout: Option<Duration>) -> std::result::Result<(f64, f64), (Status, String)> {
    let version = match cell.version {
        VersionRef::Dirty => inputs.dirty.clone(),
        VersionRef::GroundTruth => inputs.gt.clone(),
        VersionRef::Strategy(i) => {
            inputs.versions[i].as_ref().ok_or((Status::Failed, "upstream detection or repair failed".to_string()))?.data.clone()
        }
    };
    let setup = inputs.setup.clone();
    let spec = inputs.models[cell.model_index].clone();
    let (scenario, split_seed) = (cell.scenario, cell.split_seed);
    flatten(with_timeout(timeout, move || evaluate_scenario(&setup, &version, scenario, &spec, split_seed)))
}

/// Executes a planned grid and writes every record into `store`.
pub fn run_grid(prep: &PreparedDataset, grid: &ExperimentGrid, store: &mut ResultsStore, opts: &RunOptions, cfg: &BenchmarkConfig) -> Result<DatasetSummary> {
    let pool = opts.pool()?;
    let pair = Arc::new(prep.pair.clone());
    let ctx = Arc::new(detection_context(prep, cfg.master_seed));

    // Detection: once per detector.
    let detections: Vec<std::result::Result<DetectorRun, (Status, String)>> = pool.install(|| {
        grid.detectors
            .par_iter()
            .map(|d| {
                let (pair, ctx, d) = (pair.clone(), ctx.clone(), d.clone());
                flatten(with_timeout(opts.timeout, move || run_detector(&pair.dirty, &d, &ctx)))
            })
            .collect()
    });
    let ts = now_secs();
    let mut strategy_records = Vec::new();
    for (d, res) in grid.detectors.iter().zip(&detections) {
        let (status, error, detection, flagged, runtime) = match res {
            Ok(run) => (Status::Ok, None, Some(detection_metrics(&run.mask, &prep.pair.error_mask)), run.mask.len(), run.runtime),
            Err((s, e)) => (*s, Some(e.clone()), None, 0, 0.0),
        };
        strategy_records.push(StrategyRecord {
            dataset: prep.name.clone(),
            stage: Stage::Detect,
            detector: d.to_string(),
            repair: None,
            detection,
            repair_score: None,
            flagged_cells: flagged,
            runtime,
            warnings: Vec::new(),
            timestamp: ts,
            status,
            error,
        });
    }
    let ok_runs: Vec<(String, &DetectorRun)> =
        grid.detectors.iter().zip(&detections).filter_map(|(d, r)| r.as_ref().ok().map(|r| (d.to_string(), r))).collect();
    let iou_records: Vec<IouRecord> = ok_runs
        .iter()
        .flat_map(|(a, ra)| {
            ok_runs.iter().map(move |(b, rb)| {
                let s = iou(&ra.mask, &rb.mask, &prep.pair.error_mask);
                IouRecord { dataset: prep.name.clone(), detector_a: a.clone(), detector_b: b.clone(), value: s.value, both_empty: s.both_empty }
            })
        })
        .collect();

    // Repair: once per strategy whose detector succeeded.
    let det_index: BTreeMap<String, usize> = grid.detectors.iter().enumerate().map(|(i, d)| (d.to_string(), i)).collect();
    let repairs: Vec<std::result::Result<RepairedDataset, (Status, String)>> = pool.install(|| {
        grid.strategies
            .par_iter()
            .map(|s| {
                let run = detections[det_index[&s.detector.to_string()]].as_ref().map_err(|_| (Status::Failed, "detector failed".to_string()))?;
                let (pair, mask, spec) = (pair.clone(), run.mask.clone(), s.repair.clone());
                flatten(with_timeout(opts.timeout, move || run_repair(&pair.dirty, &mask, &spec, Some(&pair))))
            })
            .collect()
    });
    let mut versions: Vec<Option<Arc<Version>>> = Vec::new();
    for (s, res) in grid.strategies.iter().zip(&repairs) {
        let (det_id, rep_id) = s.ids();
        let det_runtime = detections[det_index[&det_id]].as_ref().map_or(0.0, |r| r.runtime);
        let mut rec = StrategyRecord {
            dataset: prep.name.clone(),
            stage: Stage::Repair,
            detector: det_id,
            repair: Some(rep_id),
            detection: None,
            repair_score: None,
            flagged_cells: 0,
            runtime: 0.0,
            warnings: Vec::new(),
            timestamp: ts,
            status: Status::Ok,
            error: None,
        };
        match res {
            Ok(rep) => {
                rec.runtime = rep.runtime;
                rec.flagged_cells = rep.repaired_cells.len();
                rec.warnings = rep.warnings.clone();
                match aligned_repair_score(&prep.pair, rep) {
                    Ok(score) => rec.repair_score = Some(score),
                    Err(e) => rec.warnings.push(format!("repair scoring failed: {e}")),
                }
                versions.push(Some(Arc::new(Version {
                    data: Arc::new(DataVersion::repaired(&prep.pair, rep)),
                    detect_runtime: det_runtime,
                    repair_runtime: rep.runtime,
                })));
            }
            Err((status, e)) => {
                rec.status = *status;
                rec.error = Some(e.clone());
                versions.push(None);
            }
        }
        strategy_records.push(rec);
    }
    store.strategies.upsert_all(strategy_records)?;
    store.iou.upsert_all(iou_records)?;

    let setup = EvalSetup {
        gt: DataVersion::ground_truth(&prep.pair),
        dirty: DataVersion::dirty(&prep.pair),
        target: prep.target.clone(),
        task: grid.task,
        test_fraction: cfg.test_fraction,
    };
    let inputs = CellInputs {
        versions,
        dirty: Arc::new(setup.dirty.clone()),
        gt: Arc::new(setup.gt.clone()),
        setup: Arc::new(setup),
        models: grid.models.clone(),
    };
    let outcomes: Vec<std::result::Result<(f64, f64), (Status, String)>> = pool.install(|| {
        grid.cells
            .par_iter()
            .map(|cell| run_cell(&inputs, cell, opts.timeout))
            .collect()
    });
    let kind = MetricKind::for_task(grid.task);
    let ts = now_secs();
    let mut succeeded = 0;
    let mut failed = 0;
    let records: Vec<ExperimentRecord> = grid
        .cells
        .iter()
        .zip(outcomes)
        .map(|(cell, outcome)| {
            let (det_rt, rep_rt) = match cell.version {
                VersionRef::Strategy(i) => inputs.versions[i].as_ref().map_or((0.0, 0.0), |v| (v.detect_runtime, v.repair_runtime)),
                _ => (0.0, 0.0),
            };
            let (value, train_rt, status, error) = match outcome {
                Ok((v, t)) => {
                    succeeded += 1;
                    (Some(v), t, Status::Ok, None)
                }
                Err((s, e)) => {
                    failed += 1;
                    (None, 0.0, s, Some(e))
                }
            };
            ExperimentRecord {
                dataset: prep.name.clone(),
                detector: cell.detector.clone(),
                repair: cell.repair.clone(),
                model: grid.models[cell.model_index].to_string(),
                scenario: cell.scenario,
                seed: cell.split_seed,
                seed_index: cell.seed_index,
                metric_kind: kind,
                metric_value: value,
                detect_runtime: det_rt,
                repair_runtime: rep_rt,
                train_runtime: train_rt,
                timestamp: ts,
                status,
                error,
            }
        })
        .collect();
    store.experiments.upsert_all(records)?;
    store.flush()?;
    Ok(DatasetSummary {
        dataset: prep.name.clone(),
        planned: grid.total,
        versioned_total: grid.versioned_total,
        s4_total: grid.s4_total,
        succeeded,
        failed,
        skipped: grid.skipped.clone(),
    })
}

pub fn plan_context(prep: &PreparedDataset) -> PlanContext {
    PlanContext {
        tags: prep.tags.clone(),
        has_label_column: prep.label_column.is_some(),
        has_constraints: !prep.constraints.is_empty(),
        task: prep.task,
    }
}

/// Prepares every dataset, plans its grid and runs it.
pub fn run_benchmark(cfg: &BenchmarkConfig, store: &mut ResultsStore, opts: &RunOptions) -> Result<BenchSummary> {
    cfg.validate()?;
    let mut summary = BenchSummary::default();
    for src in &cfg.datasets {
        let prep = prepare_dataset(src, cfg)?;
        let grid = plan_experiments(cfg, &prep.name, &plan_context(&prep))?;
        summary.datasets.push(run_grid(&prep, &grid, store, opts, cfg)?);
    }
    Ok(summary)
}

/// Pairs the two sides' successful records by split seed and runs the
/// two-tailed Wilcoxon signed-rank test. The result is stored.
pub fn ab_compare(
    store: &mut ResultsStore,
    dataset: &str,
    model: &str,
    side_a: &AbSide,
    side_b: &AbSide,
    alpha: f64,
    mode: WilcoxonMode,
) -> Result<AbTestRecord> {
    let values = |side: &AbSide| -> BTreeMap<u64, f64> {
        store
            .experiments
            .records()
            .filter(|r| {
                r.dataset == dataset && r.model == model && r.detector == side.detector && r.repair == side.repair && r.scenario == side.scenario
            })
            .filter_map(|r| r.metric_value.filter(|_| r.status == Status::Ok).map(|v| (r.seed, v)))
            .collect()
    };
    let a = values(side_a);
    let b = values(side_b);
    let shared: BTreeSet<u64> = a.keys().filter(|k| b.contains_key(k)).copied().collect();
    if shared.is_empty() {
        return Err(BenchError::NoSharedSeeds(format!("{} vs {}", side_a.label(), side_b.label())));
    }
    let xa: Vec<f64> = shared.iter().map(|s| a[s]).collect();
    let xb: Vec<f64> = shared.iter().map(|s| b[s]).collect();
    let sample = PairedSample::new(&xa, &xb, (&side_a.label(), &side_b.label()));
    let result = wilcoxon_signed_rank(&sample, alpha, mode)?;
    let record = AbTestRecord {
        dataset: dataset.into(),
        model: model.into(),
        side_a: side_a.clone(),
        side_b: side_b.clone(),
        result,
        timestamp: now_secs(),
    };
    store.abtests.upsert(record.clone())?;
    store.flush()?;
    Ok(record)
}
