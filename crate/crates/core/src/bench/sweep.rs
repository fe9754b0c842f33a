//! Robustness and scalability sweeps over the detector suite.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{dataset_roles, derive_seed, load_constraints, load_ground_truth, BenchmarkConfig, DatasetSource};
use super::plan::{skip_reason, PlanContext};
use super::run::RunOptions;
use super::store::{now_secs, ResultsStore, Status, SweepAxis, SweepRecord};
use super::{BenchError, Result};
use crate::constraints::DenialConstraint;
use crate::detect::{run_detector, DetectionContext, DetectorSpec};
use crate::eval::detection_metrics;
use crate::inject::{inject, ErrorEntry, ErrorKind, ErrorProfile};
use crate::tabular::Dataset;

/// Outlier rate used while the degree varies.
pub const DEGREE_SWEEP_RATE: f64 = 0.3;
/// Outlier degree used while the rate varies.
pub const RATE_SWEEP_DEGREE: f64 = 4.0;
/// Smallest row sample a scalability fraction may produce.
pub const MIN_SWEEP_ROWS: usize = 10;

fn outlier_profile(rate: f64, degree: f64) -> ErrorProfile {
    ErrorProfile::new(vec![ErrorEntry { kind: ErrorKind::GaussianOutlier { degree }, rate, columns: None }])
}

struct SweepData {
    name: String,
    gt: Dataset,
    constraints: Vec<DenialConstraint>,
    label_column: Option<String>,
    detectors: Vec<DetectorSpec>,
}

fn load_sweep_data(src: &DatasetSource, cfg: &BenchmarkConfig) -> Result<SweepData> {
    let gt = load_ground_truth(src)?;
    let constraints = load_constraints(cfg.constraints.as_deref(), &gt)?;
    let (_, task, label_column) = dataset_roles(src, &gt)?;
    let ctx = PlanContext {
        tags: Default::default(),
        has_label_column: label_column.is_some(),
        has_constraints: !constraints.is_empty(),
        task,
    };
    let detectors = cfg.sweep_detectors()?.into_iter().filter(|d| skip_reason(d, &ctx).is_none()).collect();
    Ok(SweepData { name: src.name.clone(), gt, constraints, label_column, detectors })
}

struct Job {
    value: f64,
    seed_index: usize,
    data: Arc<Dataset>,
    profile: ErrorProfile,
    inject_seed: u64,
}

fn run_jobs(
    axis: SweepAxis,
    sd: &SweepData,
    jobs: Vec<Job>,
    cfg: &BenchmarkConfig,
    opts: &RunOptions,
) -> Result<Vec<SweepRecord>> {
    let pool = opts.pool()?;
    let constraints = Arc::new(sd.constraints.clone());
    let runs: Vec<(usize, usize, std::result::Result<(Option<crate::eval::DetectionScore>, f64, usize), (Status, String)>)> =
        pool.install(|| {
            jobs.par_iter()
                .enumerate()
                .flat_map(|(ji, job)| {
                    let injected = inject(&job.data, &job.profile, job.inject_seed, &constraints).map(|(p, _)| Arc::new(p));
                    let constraints = constraints.clone();
                    sd.detectors
                        .par_iter()
                        .enumerate()
                        .map(move |(di, d)| {
                            let pair = match &injected {
                                Ok(pair) => pair.clone(),
                                Err(e) => return (ji, di, Err((Status::Failed, e.to_string()))),
                            };
                            let ctx = DetectionContext {
                                constraints: constraints.as_ref().clone(),
                                oracle: Some(pair.error_mask.clone()),
                                label_column: sd.label_column.clone(),
                                error_rate: Some(pair.error_mask.len() as f64 / pair.dirty.cell_count().max(1) as f64),
                                seed: derive_seed(cfg.master_seed, &format!("detect/{}/{}", sd.name, job.seed_index)),
                            };
                            let d = d.clone();
                            let out = super::run::with_timeout(opts.timeout, move || {
                                run_detector(&pair.dirty, &d, &ctx)
                                    .map(|run| (Some(detection_metrics(&run.mask, &pair.error_mask)), run.runtime, pair.dirty.row_count()))
                            });
                            let out = match out {
                                Ok(Ok(v)) => Ok(v),
                                Ok(Err(e)) => Err((Status::Failed, e.to_string())),
                                Err(e) => Err(e),
                            };
                            (ji, di, out)
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        });
    let ts = now_secs();
    Ok(runs
        .into_iter()
        .map(|(ji, di, out)| {
            let job = &jobs[ji];
            let (score, runtime, rows, status, error) = match out {
                Ok((s, r, n)) => (s, r, n, Status::Ok, None),
                Err((st, e)) => (None, 0.0, job.data.row_count(), st, Some(e)),
            };
            SweepRecord {
                dataset: sd.name.clone(),
                axis,
                value: job.value,
                detector: sd.detectors[di].to_string(),
                seed_index: job.seed_index,
                rows,
                score,
                runtime,
                timestamp: ts,
                status,
                error,
            }
        })
        .collect())
}

/// Re-injects gaussian outliers for every value and seed and scores the
/// detector suite. The injection seed depends only on the seed index, so
/// every value of the axis shares one lineage.
pub fn run_robustness_sweep(
    cfg: &BenchmarkConfig,
    store: &mut ResultsStore,
    opts: &RunOptions,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRecord>> {
    if axis == SweepAxis::Fraction {
        return Err(BenchError::Config("robustness sweeps vary the error rate or the outlier degree".into()));
    }
    cfg.validate()?;
    let mut all = Vec::new();
    for src in &cfg.datasets {
        if src.dirty_path.is_some() {
            return Err(BenchError::Config(format!("dataset `{}`: sweeps need a clean dataset to inject into", src.name)));
        }
        let sd = load_sweep_data(src, cfg)?;
        let data = Arc::new(sd.gt.clone());
        let mut jobs = Vec::new();
        for &value in values {
            let profile = match axis {
                SweepAxis::ErrorRate => outlier_profile(value, RATE_SWEEP_DEGREE),
                _ => outlier_profile(DEGREE_SWEEP_RATE, value),
            };
            profile.validate()?;
            for seed_index in 0..cfg.repeats {
                let inject_seed = derive_seed(cfg.master_seed, &format!("sweep/{}/{seed_index}", sd.name));
                jobs.push(Job { value, seed_index, data: data.clone(), profile: profile.clone(), inject_seed });
            }
        }
        let records = run_jobs(axis, &sd, jobs, cfg, opts)?;
        store.sweeps.upsert_all(records.clone())?;
        all.extend(records);
    }
    store.flush()?;
    Ok(all)
}

/// Row sample for a fraction: a seeded shuffle of the rows, then a prefix.
pub fn fraction_rows(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(BenchError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let take = (fraction * n as f64).round() as usize;
    if take < MIN_SWEEP_ROWS {
        return Err(BenchError::TooFewRows(format!("fraction {fraction} of {n} rows leaves {take} < {MIN_SWEEP_ROWS}")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    rows.truncate(take);
    rows.sort_unstable();
    Ok(rows)
}

/// Runs the detector suite on growing row samples with the configured
/// error profile. Timeouts become records, not errors.
pub fn run_scalability_sweep(
    cfg: &BenchmarkConfig,
    store: &mut ResultsStore,
    opts: &RunOptions,
    fractions: &[f64],
) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let profile = cfg.error_profile();
    let mut all = Vec::new();
    for src in &cfg.datasets {
        if src.dirty_path.is_some() {
            return Err(BenchError::Config(format!("dataset `{}`: sweeps need a clean dataset to inject into", src.name)));
        }
        let sd = load_sweep_data(src, cfg)?;
        let shuffle_seed = derive_seed(cfg.master_seed, &format!("fraction/{}", sd.name));
        let inject_seed = derive_seed(cfg.master_seed, &format!("inject/{}", sd.name));
        let mut jobs = Vec::new();
        for &value in fractions {
            let rows = fraction_rows(sd.gt.row_count(), value, shuffle_seed)?;
            jobs.push(Job { value, seed_index: 0, data: Arc::new(sd.gt.select_rows(&rows)), profile: profile.clone(), inject_seed });
        }
        let records = run_jobs(SweepAxis::Fraction, &sd, jobs, cfg, opts)?;
        store.sweeps.upsert_all(records.clone())?;
        all.extend(records);
    }
    store.flush()?;
    Ok(all)
}

/// Runs every sweep listed in the configuration.
pub fn run_sweeps(cfg: &BenchmarkConfig, store: &mut ResultsStore, opts: &RunOptions) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::new();
    if !cfg.sweep.error_rates.is_empty() {
        out.extend(run_robustness_sweep(cfg, store, opts, SweepAxis::ErrorRate, &cfg.sweep.error_rates)?);
    }
    if !cfg.sweep.outlier_degrees.is_empty() {
        out.extend(run_robustness_sweep(cfg, store, opts, SweepAxis::OutlierDegree, &cfg.sweep.outlier_degrees)?);
    }
    if !cfg.sweep.fractions.is_empty() {
        out.extend(run_scalability_sweep(cfg, store, opts, &cfg.sweep.fractions)?);
    }
    Ok(out)
}
