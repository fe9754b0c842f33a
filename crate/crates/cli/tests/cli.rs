use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const DESK: &str = r#"
config_schema = "cleanbench/1"
name = "t"
master_seed = 5
repeats = 3
detectors = ["sd:n=2", "iqr"]
repairs = ["mean", "gt"]
models = ["ridge"]
scenarios = ["S1", "S4"]

[[datasets]]
name = "lin"
synthetic = { generator = "linear_regression", weights = [1.5, -2.0], n = 120, noise = 0.3, seed = 9 }

[[profile]]
kind = "gaussian_outlier"
degree = 4.0
rate = 0.1

[sweep]
error_rates = [0.0, 0.1]
outlier_degrees = [2.0]
fractions = [0.5, 1.0]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cleanbench"));
    c.env_remove("CLEANBENCH_OUT");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: Option<&Path>, out: &Path) -> Output {
    let mut c = bin();
    c.args(args).arg("--out").arg(out);
    if let Some(cfg) = cfg {
        c.arg("--config").arg(cfg);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path.as_ref()).unwrap()).unwrap()
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn every_verb_runs_and_manifests_hash_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let out = tmp.path().join("out");
    for verb in ["inject", "detect", "repair", "model", "bench", "sweep"] {
        let o = run(&[verb], Some(&cfg), &out);
        assert_eq!(code(&o), 0, "{verb}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["abtest", "--dataset", "lin", "--model", "ridge", "--a", "none/none/S1", "--b", "gt/gt/S4"], Some(&cfg), &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["report"], None, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for f in ["inject/lin/ground_truth.csv", "inject/lin/dirty.csv", "inject/lin/error_mask.json", "inject/lin/report.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("detect/lin/sd_n_2.mask.json").is_file());
    assert!(out.join("repair/lin/sd_n_2__gt.csv").is_file());
    assert!(out.join("report/experiments.csv").is_file());
    assert!(out.join("report/iou_lin.csv").is_file());

    let summary = json(out.join("summary.json"));
    let d = &summary["datasets"][0];
    // Two detectors x two repairs plus the dirty version, S1 only, 3 seeds; S4 once per seed.
    assert_eq!(d["versioned_total"], 5 * 3);
    assert_eq!(d["s4_total"], 3);
    assert_eq!(d["failed"], 0);

    let m = json(out.join("manifest-bench.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["master_seed"], 5);
    assert_eq!(m["seeds"].as_object().unwrap().keys().filter(|k| k.starts_with("split/")).count(), 3);
    let cfg_hash = m["config_sha256"].as_str().unwrap().to_string();
    assert_eq!(cfg_hash.len(), 64);
    for verb in ["inject", "detect", "repair", "model", "bench", "sweep", "report"] {
        let m = json(out.join(format!("manifest-{verb}.json")));
        let artifacts = m["artifacts"].as_object().unwrap();
        assert!(!artifacts.is_empty(), "{verb} manifest lists no artifacts");
        for (rel, hash) in artifacts {
            let digest = hex::encode(Sha256::digest(std::fs::read(out.join(rel)).unwrap()));
            // The store keeps growing after bench; only files untouched since must match.
            if verb == "report" || !rel.starts_with("store/") {
                assert_eq!(Some(digest.as_str()), hash.as_str(), "{verb}: {rel}");
            }
        }
        if verb != "report" {
            assert_eq!(m["config_sha256"].as_str(), Some(cfg_hash.as_str()), "{verb}");
        }
    }
}

#[test]
fn report_reemission_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["bench"], Some(&cfg), &out)), 0);
    assert_eq!(code(&run(&["report"], None, &out)), 0);
    let first = read_dir_bytes(&out.join("report"));
    assert_eq!(code(&run(&["report"], None, &out)), 0);
    assert_eq!(first, read_dir_bytes(&out.join("report")));

    // Each group aggregates all three seeds.
    let text = String::from_utf8(first["experiments.csv"].clone()).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let n_col = header.iter().position(|h| h == "n").unwrap();
    let recs: Vec<_> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(recs.len(), 5 + 1);
    assert!(recs.iter().all(|r| &r[n_col] == "3"));

    // IoU diagonal is 1 for detectors with true positives.
    let iou = String::from_utf8(first["iou_lin.csv"].clone()).unwrap();
    let lines: Vec<Vec<&str>> = iou.lines().map(|l| l.split(',').collect()).collect();
    for (i, row) in lines.iter().enumerate().skip(1) {
        assert_eq!(row[i], "1", "{iou}");
    }
}

#[test]
fn rerunning_bench_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["bench", "--workers", "1"], Some(&cfg), &out)), 0);
    // The table file is an append-only log; the index names the live line of each key.
    let live = |p: &Path| -> BTreeMap<String, Value> {
        let lines: Vec<Value> = std::fs::read_to_string(p.join("store/experiments.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let index = json(p.join("store/index.json"));
        index["experiments"]["keys"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(k, line)| (k.clone(), lines[line.as_u64().unwrap() as usize]["metric_value"].clone()))
            .collect()
    };
    let first = live(&out);
    assert_eq!(first.len(), 18);
    assert_eq!(code(&run(&["bench", "--workers", "3"], Some(&cfg), &out)), 0);
    assert_eq!(first, live(&out));
    let index = json(out.join("store/index.json"));
    assert_eq!(index["experiments"]["records"], 18);
    assert_eq!(index["experiments"]["lines"], 36);
}

#[test]
fn unknown_verb_and_missing_config_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["frobnicate"], None, &out);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());

    let o = run(&["bench"], None, &out);
    assert_eq!(code(&o), 1);
    let err = json(out.join("error.json"));
    assert_eq!(err["kind"], "usage");
    assert_eq!(err["verb"], "bench");

    let bad = write_config(tmp.path(), &DESK.replace("cleanbench/1", "cleanbench/0"));
    let o = run(&["bench"], Some(&bad), &out);
    assert_eq!(code(&o), 1);
    assert!(json(out.join("error.json"))["error"].as_str().unwrap().contains("config_schema"));

    let o = bin().arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn execution_failure_exits_2_with_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["report"], None, &out);
    assert_eq!(code(&o), 2);
    let err = json(out.join("error.json"));
    assert_eq!(err["kind"], "failure");
    assert_eq!(err["exit_code"], 2);

    // A later success clears the stale error record.
    let cfg = write_config(tmp.path(), DESK);
    assert_eq!(code(&run(&["inject"], Some(&cfg), &out)), 0);
    assert!(!out.join("error.json").exists());
}

#[test]
fn failed_cells_give_partial_exit() {
    // Deleting every row with a missing cell leaves nothing to test on for
    // some splits, so those cells fail while the rest of the grid runs.
    let text = r#"
config_schema = "cleanbench/1"
master_seed = 1
repeats = 4
detectors = ["mvd"]
repairs = ["delete"]
models = ["ridge"]
scenarios = ["S1", "S4"]

[[datasets]]
name = "lin"
synthetic = { generator = "linear_regression", weights = [1.0, 1.0, 1.0], n = 24, noise = 0.1, seed = 2 }

[[profile]]
kind = "explicit_mv"
rate = 0.6
"#;
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    let o = run(&["bench"], Some(&cfg), &out);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(out.join("summary.json"));
    let d = &s["datasets"][0];
    assert!(d["failed"].as_u64().unwrap() > 0);
    assert_eq!(d["succeeded"].as_u64().unwrap() + d["failed"].as_u64().unwrap(), d["planned"].as_u64().unwrap());
    assert!(json(out.join("manifest-bench.json"))["status"].as_str().unwrap().starts_with("partial"));
}

#[test]
fn flags_and_env_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let out = tmp.path().join("env-out");
    let o = bin()
        .env("CLEANBENCH_OUT", &out)
        .args(["inject", "--seed", "77", "--set", "profile.0.rate=0.2"])
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(out.join("manifest-inject.json"));
    assert_eq!(m["master_seed"], 77);
    assert_eq!(m["overrides"].as_array().unwrap().len(), 2);
    let report = json(out.join("inject/lin/report.json"));
    let rate = report["error_rate"].as_f64().unwrap();
    assert!((rate - 0.2).abs() < 0.01, "{rate}");

    let base = tmp.path().join("base");
    assert_eq!(code(&run(&["inject"], Some(&cfg), &base)), 0);
    assert_ne!(json(base.join("manifest-inject.json"))["config_sha256"], m["config_sha256"]);
}
