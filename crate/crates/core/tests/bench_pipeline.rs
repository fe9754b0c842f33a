use std::time::Duration;

use cleanbench::bench::{run_benchmark, BenchmarkConfig, DatasetSource, ResultsStore, RunOptions, Scenario, Status};
use cleanbench::inject::{ErrorClass, ErrorEntry, ErrorKind, SyntheticSpec};

fn cfg() -> BenchmarkConfig {
    let src = DatasetSource {
        name: "blobs".into(),
        synthetic: Some(SyntheticSpec::Blobs { centers: vec![vec![0.0, 0.0], vec![4.0, 4.0]], n: 120, std: 1.0, seed: 3 }),
        task: Some(cleanbench::model::Task::Clustering),
        target: None,
        ..Default::default()
    };
    let mut c = BenchmarkConfig::new(src, &["sd", "if:trees=20,subsample=64"], &["mean", "knn"], &["kmeans:k=2"], &Scenario::ALL, 3);
    c.profile = vec![
        ErrorEntry { kind: ErrorKind::GaussianOutlier { degree: 3.0 }, rate: 0.05, columns: None },
        ErrorEntry { kind: ErrorKind::ExplicitMv, rate: 0.05, columns: None },
    ];
    c.master_seed = 99;
    c
}

fn values(store: &ResultsStore) -> Vec<(String, Option<f64>)> {
    store.experiments.records().map(|r| (format!("{}|{}|{}|{}|{}", r.detector, r.repair, r.model, r.scenario, r.seed), r.metric_value)).collect()
}

#[test]
fn single_and_parallel_workers_agree() {
    let c = cfg();
    let mut one = ResultsStore::in_memory();
    let mut many = ResultsStore::in_memory();
    let s = run_benchmark(&c, &mut one, &RunOptions { workers: Some(1), timeout: None }).unwrap();
    run_benchmark(&c, &mut many, &RunOptions { workers: Some(4), timeout: Some(Duration::from_secs(60)) }).unwrap();
    assert_eq!(values(&one), values(&many));
    // Clustering drops S5 but keeps S4.
    let d = &s.datasets[0];
    assert!(d.skipped.iter().any(|k| k.item == "scenario S5"));
    assert_eq!(d.s4_total, 3);
    assert_eq!(one.experiments.len(), d.planned);
    assert_eq!(d.succeeded + d.failed, d.planned);
    let ok = one.experiments.records().filter(|r| r.status == Status::Ok).count();
    assert_eq!(ok, d.planned - d.failed);
}

#[test]
fn store_persists_and_reopens() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg();
    let first = {
        let mut store = ResultsStore::open(dir.path()).unwrap();
        run_benchmark(&c, &mut store, &RunOptions::default()).unwrap();
        values(&store)
    };
    let mut store = ResultsStore::open(dir.path()).unwrap();
    assert_eq!(values(&store), first);
    run_benchmark(&c, &mut store, &RunOptions::default()).unwrap();
    assert_eq!(values(&store), first);
    assert!(dir.path().join("experiments.jsonl").exists());
    assert!(dir.path().join("index.json").exists());
}

#[test]
fn duplicate_only_dirty_data_keeps_s4() {
    let dir = tempfile::tempdir().unwrap();
    let gt = "a,b\n1,x\n2,y\n3,x\n4,y\n5,x\n6,y\n7,x\n8,y\n9,x\n10,y\n";
    let dirty = "a,b\n1,x\n2,y\n3,x\n4,y\n5,x\n6,y\n7,x\n8,y\n9,x\n10,y\n";
    std::fs::write(dir.path().join("gt.csv"), gt).unwrap();
    std::fs::write(dir.path().join("dirty.csv"), dirty).unwrap();
    let src = DatasetSource {
        name: "dups".into(),
        path: Some(dir.path().join("gt.csv")),
        dirty_path: Some(dir.path().join("dirty.csv")),
        target: Some("a".into()),
        tags: Some([ErrorClass::Duplicates].into_iter().collect()),
        ..Default::default()
    };
    let c = BenchmarkConfig::new(src, &["sd", "dedup"], &["delete"], &["ridge"], &[Scenario::S1, Scenario::S4], 2);
    let mut store = ResultsStore::in_memory();
    let s = run_benchmark(&c, &mut store, &RunOptions::default()).unwrap();
    let d = &s.datasets[0];
    assert_eq!(d.skipped.len(), 1);
    assert_eq!(d.s4_total, 2);
    assert_eq!(d.planned, 2 * 1 * 1 * 2 + 2);
}
