//! `cleanbench` command-line driver.
//!
//! Every verb reads a TOML benchmark config, writes its artifacts under the
//! output directory and finishes with a `manifest-<verb>.json` listing the
//! config hash, seeds and artifact hashes. Exit codes: 0 success, 1 usage,
//! 2 execution failure, 3 partial (some cells failed).

mod config;
mod manifest;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use cleanbench::bench::{
    ab_compare, aligned_repair_score, derive_seed, detection_context, evaluate_scenario, plan_context, prepare_dataset, run_benchmark, run_sweeps,
    split_seeds, with_timeout, AbSide, BenchmarkConfig, DataVersion, EvalSetup, PreparedDataset, ResultsStore, RunOptions, Scenario, Status,
    SweepAxis,
};
use cleanbench::bench::plan::skip_reason;
use cleanbench::detect::{run_detector, DetectorRun, DetectorSpec};
use cleanbench::eval::{detection_metrics, DetectionScore, MetricKind, RepairScore};
use cleanbench::model::{ModelSpec, Task};
use cleanbench::repair::{run_repair, RepairSpec};
use cleanbench::stats::{summarize, WilcoxonMode};
use cleanbench::tabular::save_csv;

use crate::manifest::{sha256_hex, Manifest};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cleanbench", version, about = "Benchmark harness for tabular data cleaning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug)]
struct Global {
    /// Benchmark config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", env = "CLEANBENCH_OUT", default_value = "cleanbench-out")]
    out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Per-cell timeout in seconds (0 disables it).
    #[arg(long, global = true, value_name = "SECS")]
    timeout: Option<u64>,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Inject errors into every dataset and write the clean/dirty pair.
    Inject(DatasetFilter),
    /// Run detectors and score their masks.
    Detect {
        #[command(flatten)]
        filter: DatasetFilter,
        /// Detector spec (e.g. `sd:n=2`); defaults to the config's list.
        #[arg(long = "detector")]
        detectors: Vec<String>,
    },
    /// Run every detector x repair strategy and score the repairs.
    Repair {
        #[command(flatten)]
        filter: DatasetFilter,
        #[arg(long = "detector")]
        detectors: Vec<String>,
        #[arg(long = "repair")]
        repairs: Vec<String>,
    },
    /// Train the config's models on the dirty data in every scenario.
    Model(DatasetFilter),
    /// Run the full experiment grid into the results store.
    Bench,
    /// Run the configured robustness and scalability sweeps.
    Sweep,
    /// Paired Wilcoxon test between two stored strategy/scenario sides.
    Abtest {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        model: String,
        /// Side A as `detector/repair/scenario`, e.g. `none/none/S1`.
        #[arg(long = "a")]
        side_a: String,
        #[arg(long = "b")]
        side_b: String,
        #[arg(long)]
        alpha: Option<f64>,
        /// auto, exact or normal_approx.
        #[arg(long, default_value = "auto")]
        mode: String,
    },
    /// Emit aggregate CSV tables from the results store.
    Report,
}

#[derive(Args, Debug, Clone)]
struct DatasetFilter {
    /// Restrict to one dataset by name.
    #[arg(long)]
    dataset: Option<String>,
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Inject(_) => "inject",
            Verb::Detect { .. } => "detect",
            Verb::Repair { .. } => "repair",
            Verb::Model(_) => "model",
            Verb::Bench => "bench",
            Verb::Sweep => "sweep",
            Verb::Abtest { .. } => "abtest",
            Verb::Report => "report",
        }
    }
}

/// How a verb finished when it did not fail outright.
enum Outcome {
    Ok,
    Partial(String),
}

/// An error the user can fix by changing the invocation.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Ctx {
    out: PathBuf,
    manifest: Manifest,
    cfg: Option<BenchmarkConfig>,
}

impl Ctx {
    fn cfg(&self) -> Result<&BenchmarkConfig> {
        self.cfg.as_ref().ok_or_else(|| usage("this verb needs --config"))
    }

    fn datasets(&self, filter: &DatasetFilter) -> Result<Vec<PreparedDataset>> {
        let cfg = self.cfg()?;
        let sources: Vec<_> = cfg.datasets.iter().filter(|d| filter.dataset.as_ref().is_none_or(|n| &d.name == n)).collect();
        if sources.is_empty() {
            return Err(usage(format!("no dataset named `{}` in the config", filter.dataset.as_deref().unwrap_or_default())));
        }
        sources.into_iter().map(|s| Ok(prepare_dataset(s, cfg)?)).collect()
    }

    fn write_json(&mut self, rel: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.add_artifact(&self.out, &path)
    }

    fn write_csv(&mut self, rel: impl AsRef<Path>, ds: &cleanbench::tabular::Dataset) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        save_csv(ds, &path)?;
        self.manifest.add_artifact(&self.out, &path)
    }

    fn run_options(&self) -> Result<RunOptions> {
        Ok(RunOptions::from_config(self.cfg()?))
    }

    fn record_dataset_seeds(&mut self, prep: &PreparedDataset) -> Result<()> {
        let master = self.cfg()?.master_seed;
        self.manifest.seeds.insert(format!("inject/{}", prep.name), derive_seed(master, &format!("inject/{}", prep.name)));
        self.manifest.seeds.insert(format!("detect/{}", prep.name), derive_seed(master, &format!("detect/{}", prep.name)));
        Ok(())
    }

    fn record_split_seeds(&mut self) -> Result<()> {
        let cfg = self.cfg()?;
        let seeds = split_seeds(cfg.master_seed, cfg.repeats);
        for (i, s) in seeds.into_iter().enumerate() {
            self.manifest.seeds.insert(format!("split/{i}"), s);
        }
        Ok(())
    }

    fn store_dir(&self) -> PathBuf {
        self.out.join("store")
    }
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn timeout_of(cfg: &BenchmarkConfig) -> Option<Duration> {
    (cfg.timeout_secs > 0).then(|| Duration::from_secs(cfg.timeout_secs))
}

fn detector_list(cfg: &BenchmarkConfig, given: &[String]) -> Result<Vec<DetectorSpec>> {
    if given.is_empty() {
        return Ok(cfg.detector_specs()?);
    }
    given.iter().map(|s| s.parse::<DetectorSpec>().map_err(|e| usage(format!("--detector `{s}`: {e}")))).collect()
}

fn repair_list(cfg: &BenchmarkConfig, given: &[String]) -> Result<Vec<RepairSpec>> {
    if given.is_empty() {
        return Ok(cfg.repair_specs()?);
    }
    given.iter().map(|s| s.parse::<RepairSpec>().map_err(|e| usage(format!("--repair `{s}`: {e}")))).collect()
}

/// Result of one detector on one dataset.
enum Detected {
    Ran(DetectorRun),
    Skipped(String),
    Failed(Status, String),
}

#[derive(Serialize)]
struct DetectOutput {
    detector: String,
    /// `ok`, `failed`, `timeout` or `skipped`.
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    runtime: f64,
    score: Option<DetectionScore>,
    flagged_cells: usize,
}

/// Runs the surviving detectors of one dataset under the config timeout.
fn detect_all(prep: &PreparedDataset, cfg: &BenchmarkConfig, detectors: &[DetectorSpec]) -> Vec<(DetectorSpec, Detected)> {
    let pctx = plan_context(prep);
    let dctx = detection_context(prep, cfg.master_seed);
    detectors
        .iter()
        .map(|d| {
            if let Some(reason) = skip_reason(d, &pctx) {
                return (d.clone(), Detected::Skipped(reason));
            }
            let (ds, spec, ctx) = (prep.pair.dirty.clone(), d.clone(), dctx.clone());
            let r = match with_timeout(timeout_of(cfg), move || run_detector(&ds, &spec, &ctx)) {
                Ok(Ok(run)) => Detected::Ran(run),
                Ok(Err(e)) => Detected::Failed(Status::Failed, e.to_string()),
                Err((status, e)) => Detected::Failed(status, e),
            };
            (d.clone(), r)
        })
        .collect()
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Ok => "ok",
        Status::Failed => "failed",
        Status::Timeout => "timeout",
    }
}

fn cmd_inject(ctx: &mut Ctx, filter: &DatasetFilter) -> Result<Outcome> {
    for prep in ctx.datasets(filter)? {
        ctx.record_dataset_seeds(&prep)?;
        let dir = PathBuf::from("inject").join(safe_name(&prep.name));
        ctx.write_csv(dir.join("ground_truth.csv"), &prep.pair.ground_truth)?;
        ctx.write_csv(dir.join("dirty.csv"), &prep.pair.dirty)?;
        ctx.write_json(dir.join("error_mask.json"), &prep.pair.error_mask)?;
        let report = json!({
            "dataset": prep.name,
            "rows": prep.pair.dirty.row_count(),
            "columns": prep.pair.dirty.col_count(),
            "error_cells": prep.pair.error_mask.len(),
            "error_rate": prep.error_rate(),
            "tags": prep.tags,
            "injection": prep.report,
        });
        ctx.write_json(dir.join("report.json"), &report)?;
    }
    Ok(Outcome::Ok)
}

fn cmd_detect(ctx: &mut Ctx, filter: &DatasetFilter, given: &[String]) -> Result<Outcome> {
    let cfg = ctx.cfg()?.clone();
    let detectors = detector_list(&cfg, given)?;
    let mut failed = 0;
    for prep in ctx.datasets(filter)? {
        ctx.record_dataset_seeds(&prep)?;
        let dir = PathBuf::from("detect").join(safe_name(&prep.name));
        let mut summary = Vec::new();
        for (spec, run) in detect_all(&prep, &cfg, &detectors) {
            let out = match run {
                Detected::Ran(run) => {
                    ctx.write_json(dir.join(format!("{}.mask.json", safe_name(&spec.to_string()))), &run.mask)?;
                    DetectOutput {
                        detector: spec.to_string(),
                        status: "ok".into(),
                        error: None,
                        runtime: run.runtime,
                        score: Some(detection_metrics(&run.mask, &prep.pair.error_mask)),
                        flagged_cells: run.mask.len(),
                    }
                }
                Detected::Skipped(reason) => {
                    DetectOutput { detector: spec.to_string(), status: "skipped".into(), error: Some(reason), runtime: 0.0, score: None, flagged_cells: 0 }
                }
                Detected::Failed(status, error) => {
                    failed += 1;
                    DetectOutput { detector: spec.to_string(), status: status_name(status).into(), error: Some(error), runtime: 0.0, score: None, flagged_cells: 0 }
                }
            };
            summary.push(out);
        }
        ctx.write_json(dir.join("scores.json"), &summary)?;
    }
    Ok(if failed > 0 { Outcome::Partial(format!("{failed} detector runs failed")) } else { Outcome::Ok })
}

#[derive(Serialize)]
struct RepairOutput {
    detector: String,
    repair: String,
    status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    runtime: f64,
    rows: usize,
    score: Option<RepairScore>,
    warnings: Vec<String>,
}

fn cmd_repair(ctx: &mut Ctx, filter: &DatasetFilter, dets: &[String], reps: &[String]) -> Result<Outcome> {
    let cfg = ctx.cfg()?.clone();
    let detectors = detector_list(&cfg, dets)?;
    let repairs = repair_list(&cfg, reps)?;
    let mut failed = 0;
    for prep in ctx.datasets(filter)? {
        ctx.record_dataset_seeds(&prep)?;
        let dir = PathBuf::from("repair").join(safe_name(&prep.name));
        let mut summary = Vec::new();
        for (dspec, run) in detect_all(&prep, &cfg, &detectors) {
            let run = match run {
                Detected::Ran(r) => r,
                Detected::Skipped(_) => continue,
                Detected::Failed(status, error) => {
                    failed += repairs.len();
                    for r in &repairs {
                        summary.push(RepairOutput {
                            detector: dspec.to_string(),
                            repair: r.to_string(),
                            status,
                            error: Some(format!("detection: {error}")),
                            runtime: 0.0,
                            rows: 0,
                            score: None,
                            warnings: Vec::new(),
                        });
                    }
                    continue;
                }
            };
            for rspec in &repairs {
                let (ds, mask, spec, pair) = (prep.pair.dirty.clone(), run.mask.clone(), rspec.clone(), prep.pair.clone());
                let res = match with_timeout(timeout_of(&cfg), move || run_repair(&ds, &mask, &spec, Some(&pair))) {
                    Ok(Ok(r)) => Ok(r),
                    Ok(Err(e)) => Err((Status::Failed, e.to_string())),
                    Err(e) => Err(e),
                };
                let out = match res {
                    Ok(rep) => {
                        let name = format!("{}__{}.csv", safe_name(&dspec.to_string()), safe_name(&rspec.to_string()));
                        ctx.write_csv(dir.join(name), &rep.data)?;
                        RepairOutput {
                            detector: dspec.to_string(),
                            repair: rspec.to_string(),
                            status: Status::Ok,
                            error: None,
                            runtime: rep.runtime,
                            rows: rep.data.row_count(),
                            score: Some(aligned_repair_score(&prep.pair, &rep)?),
                            warnings: rep.warnings.clone(),
                        }
                    }
                    Err((status, error)) => {
                        failed += 1;
                        RepairOutput {
                            detector: dspec.to_string(),
                            repair: rspec.to_string(),
                            status,
                            error: Some(error),
                            runtime: 0.0,
                            rows: 0,
                            score: None,
                            warnings: Vec::new(),
                        }
                    }
                };
                summary.push(out);
            }
        }
        ctx.write_json(dir.join("scores.json"), &summary)?;
    }
    Ok(if failed > 0 { Outcome::Partial(format!("{failed} repair runs failed")) } else { Outcome::Ok })
}

#[derive(Serialize)]
struct ModelOutput {
    model: String,
    scenario: Scenario,
    metric: &'static str,
    values: Vec<Option<f64>>,
    mean: Option<f64>,
    std: Option<f64>,
    errors: Vec<String>,
}

fn cmd_model(ctx: &mut Ctx, filter: &DatasetFilter) -> Result<Outcome> {
    let cfg = ctx.cfg()?.clone();
    ctx.record_split_seeds()?;
    let seeds = split_seeds(cfg.master_seed, cfg.repeats);
    let mut failed = 0;
    for prep in ctx.datasets(filter)? {
        ctx.record_dataset_seeds(&prep)?;
        let setup = EvalSetup {
            gt: DataVersion::ground_truth(&prep.pair),
            dirty: DataVersion::dirty(&prep.pair),
            target: prep.target.clone(),
            task: prep.task,
            test_fraction: cfg.test_fraction,
        };
        let mut scenarios: Vec<Scenario> = cfg.scenarios.iter().copied().filter(|s| !(prep.task == Task::Clustering && *s == Scenario::S5)).collect();
        if !scenarios.contains(&Scenario::S4) {
            scenarios.push(Scenario::S4);
        }
        scenarios.sort();
        scenarios.dedup();
        let mut rows = Vec::new();
        for spec in cfg.model_specs(prep.task)? {
            for &scenario in &scenarios {
                let mut values = Vec::new();
                let mut errors = Vec::new();
                for &seed in &seeds {
                    match evaluate_scenario(&setup, &setup.dirty, scenario, &spec, seed) {
                        Ok((v, _)) => values.push(Some(v)),
                        Err(e) => {
                            failed += 1;
                            values.push(None);
                            errors.push(e.to_string());
                        }
                    }
                }
                let ok: Vec<f64> = values.iter().flatten().copied().collect();
                let s = summarize(&ok).ok();
                rows.push(ModelOutput {
                    model: spec.to_string(),
                    scenario,
                    metric: MetricKind::for_task(prep.task).name(),
                    values,
                    mean: s.as_ref().map(|s| s.mean),
                    std: s.and_then(|s| s.std),
                    errors,
                });
            }
        }
        ctx.write_json(PathBuf::from("model").join(safe_name(&prep.name)).join("scores.json"), &rows)?;
    }
    Ok(if failed > 0 { Outcome::Partial(format!("{failed} model runs failed")) } else { Outcome::Ok })
}

/// Config hashes ever written into a store, so reports can flag mixing.
const STORE_CONFIGS: &str = "configs.json";

fn note_store_config(store_dir: &Path, hash: &str) -> Result<BTreeSet<String>> {
    let path = store_dir.join(STORE_CONFIGS);
    let mut hashes: BTreeSet<String> = match std::fs::read_to_string(&path) {
        Ok(t) => serde_json::from_str(&t).with_context(|| format!("parsing {}", path.display()))?,
        Err(_) => BTreeSet::new(),
    };
    hashes.insert(hash.to_string());
    std::fs::write(&path, serde_json::to_string_pretty(&hashes)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(hashes)
}

fn cmd_bench(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?.clone();
    ctx.record_split_seeds()?;
    for d in &cfg.datasets {
        ctx.manifest.seeds.insert(format!("inject/{}", d.name), derive_seed(cfg.master_seed, &format!("inject/{}", d.name)));
    }
    let dir = ctx.store_dir();
    let mut store = ResultsStore::open(&dir)?;
    let summary = run_benchmark(&cfg, &mut store, &ctx.run_options()?)?;
    note_store_config(&dir, ctx.manifest.config_sha256.as_deref().unwrap_or_default())?;
    ctx.write_json("summary.json", &summary)?;
    ctx.manifest.hash_tree(&ctx.out.clone(), &dir)?;
    eprintln!("bench: {} planned cells, {} failed", summary.planned(), summary.failed());
    Ok(if summary.failed() > 0 { Outcome::Partial(format!("{} of {} cells failed", summary.failed(), summary.planned())) } else { Outcome::Ok })
}

fn cmd_sweep(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?.clone();
    let s = &cfg.sweep;
    if s.error_rates.is_empty() && s.outlier_degrees.is_empty() && s.fractions.is_empty() {
        return Err(usage("the config has no [sweep] values"));
    }
    let dir = ctx.store_dir();
    let mut store = ResultsStore::open(&dir)?;
    let records = run_sweeps(&cfg, &mut store, &ctx.run_options()?)?;
    note_store_config(&dir, ctx.manifest.config_sha256.as_deref().unwrap_or_default())?;
    let failed = records.iter().filter(|r| r.status != Status::Ok).count();
    let mut per_axis: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        let axis = match r.axis {
            SweepAxis::ErrorRate => "error_rate",
            SweepAxis::OutlierDegree => "outlier_degree",
            SweepAxis::Fraction => "fraction",
        };
        *per_axis.entry(axis.into()).or_default() += 1;
    }
    ctx.write_json("sweep_summary.json", &json!({ "records": records.len(), "failed": failed, "per_axis": per_axis }))?;
    ctx.manifest.hash_tree(&ctx.out.clone(), &dir)?;
    Ok(if failed > 0 { Outcome::Partial(format!("{failed} of {} sweep runs failed", records.len())) } else { Outcome::Ok })
}

/// Maps a user-typed id to the canonical form stored in records.
fn canonical_id(raw: &str, parse: impl Fn(&str) -> Option<String>) -> String {
    match raw {
        "none" | "gt" => raw.to_string(),
        _ => parse(raw).unwrap_or_else(|| raw.to_string()),
    }
}

fn parse_side(raw: &str) -> Result<AbSide> {
    let parts: Vec<&str> = raw.rsplitn(3, '/').collect();
    let [scenario, repair, detector] = parts[..] else {
        return Err(usage(format!("side `{raw}` is not detector/repair/scenario")));
    };
    let scenario: Scenario = scenario.parse().map_err(|e| usage(format!("side `{raw}`: {e}")))?;
    let detector = canonical_id(detector, |s| s.parse::<DetectorSpec>().ok().map(|d| d.to_string()));
    let repair = canonical_id(repair, |s| s.parse::<RepairSpec>().ok().map(|r| r.to_string()));
    Ok(AbSide::new(&detector, &repair, scenario))
}

fn parse_mode(raw: &str) -> Result<WilcoxonMode> {
    serde_json::from_value(json!(raw)).map_err(|_| usage(format!("unknown mode `{raw}` (auto, exact, normal_approx)")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_abtest(ctx: &mut Ctx, dataset: &str, model: &str, a: &str, b: &str, alpha: Option<f64>, mode: &str) -> Result<Outcome> {
    let (side_a, side_b) = (parse_side(a)?, parse_side(b)?);
    let mode = parse_mode(mode)?;
    let alpha = alpha.or_else(|| ctx.cfg.as_ref().map(|c| c.alpha)).unwrap_or(cleanbench::bench::config::DEFAULT_ALPHA);
    let dir = ctx.store_dir();
    if !dir.exists() {
        bail!("no results store at {}; run `bench` first", dir.display());
    }
    let mut store = ResultsStore::open(&dir)?;
    let stored: BTreeSet<&str> = store.experiments.records().filter(|r| r.dataset == dataset).map(|r| r.model.as_str()).collect();
    let model = if stored.contains(model) {
        model.to_string()
    } else {
        [Task::Regression, Task::Classification, Task::Clustering]
            .into_iter()
            .filter_map(|t| ModelSpec::parse(model, t).ok().map(|m| m.to_string()))
            .find(|m| stored.contains(m.as_str()))
            .ok_or_else(|| anyhow!("no records for model `{model}` on dataset `{dataset}`"))?
    };
    let record = ab_compare(&mut store, dataset, &model, &side_a, &side_b, alpha, mode)?;
    let name = format!("abtest/{}__{}__{}__{}.json", safe_name(dataset), safe_name(&model), safe_name(&side_a.label()), safe_name(&side_b.label()));
    ctx.write_json(name, &record)?;
    let r = &record.result;
    println!(
        "{} vs {} ({model}): n={} W={} p={:.6} -> {}",
        side_a.label(),
        side_b.label(),
        r.n_effective,
        r.w_statistic,
        r.p_value,
        if r.reject_h0 { "reject H0" } else { "fail to reject H0" }
    );
    Ok(Outcome::Ok)
}

fn cmd_report(ctx: &mut Ctx) -> Result<Outcome> {
    let dir = ctx.store_dir();
    if !dir.exists() {
        bail!("no results store at {}; run `bench` or `sweep` first", dir.display());
    }
    let store = ResultsStore::open(&dir)?;
    let configs_path = dir.join(STORE_CONFIGS);
    if let Ok(t) = std::fs::read_to_string(&configs_path) {
        let hashes: BTreeSet<String> = serde_json::from_str(&t).unwrap_or_default();
        if hashes.len() > 1 {
            eprintln!("warning: the store mixes results from {} different configs", hashes.len());
        }
        ctx.manifest.add_artifact(&ctx.out.clone(), &configs_path)?;
    }
    for table in ["experiments", "strategies", "iou", "sweeps", "abtests"] {
        let p = dir.join(format!("{table}.jsonl"));
        if p.exists() {
            ctx.manifest.add_artifact(&ctx.out.clone(), &p)?;
        }
    }
    for path in report::emit_report(&store, &ctx.out.join("report"))? {
        ctx.manifest.add_artifact(&ctx.out.clone(), &path)?;
    }
    Ok(Outcome::Ok)
}

fn dispatch(ctx: &mut Ctx, verb: &Verb) -> Result<Outcome> {
    match verb {
        Verb::Inject(f) => cmd_inject(ctx, f),
        Verb::Detect { filter, detectors } => cmd_detect(ctx, filter, detectors),
        Verb::Repair { filter, detectors, repairs } => cmd_repair(ctx, filter, detectors, repairs),
        Verb::Model(f) => cmd_model(ctx, f),
        Verb::Bench => cmd_bench(ctx),
        Verb::Sweep => cmd_sweep(ctx),
        Verb::Abtest { dataset, model, side_a, side_b, alpha, mode } => cmd_abtest(ctx, dataset, model, side_a, side_b, *alpha, mode),
        Verb::Report => cmd_report(ctx),
    }
}

/// Loads the config with CLI flags folded in as overrides.
fn load_config(g: &Global, manifest: &mut Manifest) -> Result<Option<BenchmarkConfig>> {
    let Some(path) = &g.config else { return Ok(None) };
    let mut overrides = g.set.clone();
    if let Some(s) = g.seed {
        overrides.push(format!("master_seed={s}"));
    }
    if let Some(w) = g.workers {
        overrides.push(format!("workers={w}"));
    }
    if let Some(t) = g.timeout {
        overrides.push(format!("timeout_secs={t}"));
    }
    let loaded = config::load(path, &overrides).map_err(|e| usage(format!("{e:#}")))?;
    loaded.config.validate().map_err(|e| usage(e.to_string()))?;
    manifest.config_path = Some(path.clone());
    // The hash covers the file and the overrides, so two runs share a hash
    // only when they ran the same effective config.
    manifest.config_sha256 = Some(sha256_hex(format!("{}\n{}", loaded.text, overrides.join("\n")).as_bytes()));
    manifest.overrides = overrides;
    manifest.master_seed = Some(loaded.config.master_seed);
    Ok(Some(loaded.config))
}

fn write_error(out: &Path, verb: &str, err: &anyhow::Error, code: u8) {
    let record = json!({
        "verb": verb,
        "exit_code": code,
        "kind": if code == EXIT_USAGE { "usage" } else { "failure" },
        "error": err.to_string(),
        "causes": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
    });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("error.json"), serde_json::to_string_pretty(&record).unwrap_or_default() + "\n");
    }
}

fn run(cli: Cli) -> u8 {
    let verb = cli.verb.name();
    let mut manifest = Manifest::new(verb);
    let result = load_config(&cli.global, &mut manifest).and_then(|cfg| {
        std::fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
        let mut ctx = Ctx { out: cli.global.out.clone(), manifest, cfg };
        let outcome = dispatch(&mut ctx, &cli.verb)?;
        Ok((ctx, outcome))
    });
    let (code, ctx) = match result {
        Ok((mut ctx, Outcome::Ok)) => {
            ctx.manifest.status = "ok".into();
            (0, ctx)
        }
        Ok((mut ctx, Outcome::Partial(msg))) => {
            eprintln!("cleanbench {verb}: partial: {msg}");
            ctx.manifest.status = format!("partial: {msg}");
            (EXIT_PARTIAL, ctx)
        }
        Err(e) => {
            let code = if e.downcast_ref::<UsageError>().is_some() { EXIT_USAGE } else { EXIT_FAILURE };
            eprintln!("cleanbench {verb}: error: {e:#}");
            write_error(&cli.global.out, verb, &e, code);
            return code;
        }
    };
    let _ = std::fs::remove_file(ctx.out.join("error.json"));
    if let Err(e) = ctx.manifest.write(&ctx.out) {
        eprintln!("cleanbench {verb}: error: {e:#}");
        return EXIT_FAILURE;
    }
    code
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(cli))
}
