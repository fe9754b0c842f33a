//! Aggregate CSV tables computed from a results store.
//!
//! Every table is a pure function of the store: rows are grouped with
//! ordered maps and numbers use Rust's shortest round-trip formatting, so
//! re-emitting a report yields byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cleanbench::bench::{ResultsStore, Stage, Status, SweepAxis};
use cleanbench::stats::summarize;

struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// `mean, std, n` of the values, with an empty std below two values.
fn agg(values: &[f64]) -> [String; 3] {
    match summarize(values) {
        Ok(s) => [num(s.mean), opt(s.std), s.n.to_string()],
        Err(_) => [String::new(), String::new(), "0".into()],
    }
}

fn experiments_table(store: &ResultsStore) -> Table {
    let mut groups: BTreeMap<(String, String, String, String, String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in store.experiments.records() {
        let key = (
            r.dataset.clone(),
            r.detector.clone(),
            r.repair.clone(),
            r.model.clone(),
            r.scenario.to_string(),
            r.metric_kind.name().to_string(),
        );
        let g = groups.entry(key).or_default();
        match (r.status, r.metric_value) {
            (Status::Ok, Some(v)) => g.0.push(v),
            _ => g.1 += 1,
        }
    }
    let rows = groups
        .into_iter()
        .map(|((d, det, rep, m, s, k), (vals, failed))| {
            let [mean, std, n] = agg(&vals);
            vec![d, det, rep, m, s, k, mean, std, n, failed.to_string()]
        })
        .collect();
    Table {
        name: "experiments".into(),
        header: cols(&["dataset", "detector", "repair", "model", "scenario", "metric", "mean", "std", "n", "failed"]),
        rows,
    }
}

fn detection_table(store: &ResultsStore) -> Table {
    let rows = store
        .strategies
        .records()
        .filter(|r| r.stage == Stage::Detect)
        .map(|r| {
            let (p, rc, f) = r.detection.map_or((None, None, None), |d| (Some(d.precision), Some(d.recall), Some(d.f1)));
            vec![
                r.dataset.clone(),
                r.detector.clone(),
                opt(p),
                opt(rc),
                opt(f),
                r.flagged_cells.to_string(),
                num(r.runtime),
                format!("{:?}", r.status).to_lowercase(),
            ]
        })
        .collect();
    Table {
        name: "detection".into(),
        header: cols(&["dataset", "detector", "precision", "recall", "f1", "flagged_cells", "runtime_s", "status"]),
        rows,
    }
}

fn repair_table(store: &ResultsStore) -> Table {
    let rows = store
        .strategies
        .records()
        .filter(|r| r.stage == Stage::Repair)
        .map(|r| {
            let s = r.repair_score.as_ref();
            vec![
                r.dataset.clone(),
                r.detector.clone(),
                r.repair.clone().unwrap_or_default(),
                opt(s.and_then(|s| s.numeric.rmse)),
                s.map(|s| s.numeric.compared.to_string()).unwrap_or_default(),
                opt(s.map(|s| s.categorical.score.precision)),
                opt(s.map(|s| s.categorical.score.recall)),
                opt(s.map(|s| s.categorical.score.f1)),
                num(r.runtime),
                format!("{:?}", r.status).to_lowercase(),
            ]
        })
        .collect();
    Table {
        name: "repair".into(),
        header: cols(&[
            "dataset",
            "detector",
            "repair",
            "rmse",
            "rmse_cells",
            "categorical_precision",
            "categorical_recall",
            "categorical_f1",
            "runtime_s",
            "status",
        ]),
        rows,
    }
}

fn sweeps_table(store: &ResultsStore) -> Table {
    let axis_name = |a: SweepAxis| match a {
        SweepAxis::ErrorRate => "error_rate",
        SweepAxis::OutlierDegree => "outlier_degree",
        SweepAxis::Fraction => "fraction",
    };
    let mut groups: BTreeMap<(String, &'static str, String, String), (f64, Vec<f64>, Vec<f64>, usize, usize)> = BTreeMap::new();
    for r in store.sweeps.records() {
        // Sweep values are non-negative, so their bit patterns sort numerically.
        let key = (r.dataset.clone(), axis_name(r.axis), format!("{:020}", r.value.to_bits()), r.detector.clone());
        let g = groups.entry(key).or_insert((r.value, Vec::new(), Vec::new(), 0, 0));
        match (r.status, r.score) {
            (Status::Ok, Some(s)) => {
                g.1.push(s.f1);
                g.2.push(r.runtime);
                g.3 = r.rows;
            }
            _ => g.4 += 1,
        }
    }
    let rows = groups
        .into_iter()
        .map(|((d, axis, _, det), (value, f1, rt, rows, failed))| {
            let [mean, std, n] = agg(&f1);
            let [rt_mean, rt_std, _] = agg(&rt);
            vec![d, axis.to_string(), num(value), det, rows.to_string(), mean, std, rt_mean, rt_std, n, failed.to_string()]
        })
        .collect();
    Table {
        name: "sweeps".into(),
        header: cols(&["dataset", "axis", "value", "detector", "rows", "f1_mean", "f1_std", "runtime_mean_s", "runtime_std_s", "n", "failed"]),
        rows,
    }
}

fn abtest_table(store: &ResultsStore) -> Table {
    let rows = store
        .abtests
        .records()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.model.clone(),
                r.side_a.label(),
                r.side_b.label(),
                r.result.n_effective.to_string(),
                num(r.result.w_statistic),
                num(r.result.p_value),
                num(r.result.alpha),
                r.result.reject_h0.to_string(),
                r.result.degenerate.to_string(),
            ]
        })
        .collect();
    Table {
        name: "abtests".into(),
        header: cols(&["dataset", "model", "side_a", "side_b", "n", "w", "p_value", "alpha", "reject_h0", "degenerate"]),
        rows,
    }
}

fn iou_tables(store: &ResultsStore) -> Vec<Table> {
    let mut by_dataset: BTreeMap<String, BTreeMap<(String, String), f64>> = BTreeMap::new();
    for r in store.iou.records() {
        by_dataset.entry(r.dataset.clone()).or_default().insert((r.detector_a.clone(), r.detector_b.clone()), r.value);
    }
    by_dataset
        .into_iter()
        .map(|(dataset, cells)| {
            let detectors: BTreeSet<String> = cells.keys().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
            let rows = detectors
                .iter()
                .map(|a| {
                    let mut row = vec![a.clone()];
                    row.extend(detectors.iter().map(|b| opt(cells.get(&(a.clone(), b.clone())).copied())));
                    row
                })
                .collect();
            let header = std::iter::once("detector".to_string()).chain(detectors.iter().cloned()).collect();
            Table { name: format!("iou_{}", safe_name(&dataset)), header, rows }
        })
        .collect()
}

/// File-system safe rendering of a spec string or dataset name.
pub fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn write_table(dir: &Path, t: &Table) -> Result<PathBuf> {
    let path = dir.join(format!("{}.csv", t.name));
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&t.header)?;
    for row in &t.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path)
}

/// Writes every non-empty table under `dir` and returns the written paths.
pub fn emit_report(store: &ResultsStore, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut tables = vec![experiments_table(store), detection_table(store), repair_table(store), sweeps_table(store), abtest_table(store)];
    tables.extend(iou_tables(store));
    tables.retain(|t| !t.rows.is_empty());
    if tables.is_empty() {
        bail!("the results store is empty; run `bench` or `sweep` first");
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    tables.iter().map(|t| write_table(dir, t)).collect()
}
