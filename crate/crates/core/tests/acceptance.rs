//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cleanbench::bench::{
    ab_compare, plan_experiments, prepare_dataset, run_benchmark, run_robustness_sweep, AbSide, BenchmarkConfig, DatasetSource,
    ResultsStore, RunOptions, Scenario, Status, SweepAxis,
};
use cleanbench::bench::run::plan_context;
use cleanbench::constraints::{find_violations, parse_constraints};
use cleanbench::detect::{detect_missing, ensemble_min_k};
use cleanbench::eval::{detection_metrics, iou, repair_metrics};
use cleanbench::inject::{inject, make_synthetic, ErrorEntry, ErrorKind, ErrorProfile, SyntheticSpec};
use cleanbench::model::{logistic_loss_grad, silhouette, Matrix};
use cleanbench::repair::repair_ground_truth;
use cleanbench::stats::{wilcoxon_signed_rank, PairedSample, WilcoxonMode};
use cleanbench::tabular::{diff_cells, CellRef, ColumnType, Dataset, DetectionMask, NullTokens};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> DetectionMask {
    let mut m = DetectionMask::new("r");
    for r in 0..rows {
        for c in 0..cols {
            if rng.random::<f64>() < p {
                m.insert(CellRef::new(r, c));
            }
        }
    }
    m
}

fn to_grid(m: &DetectionMask, rows: usize, cols: usize) -> Vec<Vec<bool>> {
    let mut g = vec![vec![false; cols]; rows];
    for c in m.iter() {
        g[c.row][c.col] = true;
    }
    g
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

// Criterion 1 oracles.

fn oracle_prf(det: &[Vec<bool>], truth: &[Vec<bool>]) -> (usize, usize, usize, f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (dr, tr) in det.iter().zip(truth) {
        for (&d, &t) in dr.iter().zip(tr) {
            match (d, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (tp, fp, fn_, p, r, f)
}

fn oracle_iou(a: &[Vec<bool>], b: &[Vec<bool>], t: &[Vec<bool>]) -> f64 {
    let (mut inter, mut uni) = (0, 0);
    for i in 0..t.len() {
        for j in 0..t[i].len() {
            let x = a[i][j] && t[i][j];
            let y = b[i][j] && t[i][j];
            inter += (x && y) as usize;
            uni += (x || y) as usize;
        }
    }
    if uni == 0 {
        1.0
    } else {
        inter as f64 / uni as f64
    }
}

fn oracle_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..points.len() {
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own == 1 {
            continue;
        }
        let mean_to = |c: usize| {
            let mut s = 0.0;
            let mut n = 0;
            for j in 0..points.len() {
                if j != i && labels[j] == c {
                    s += dist(&points[i], &points[j]);
                    n += 1;
                }
            }
            s / n as f64
        };
        let a = mean_to(labels[i]);
        let b = clusters.iter().filter(|&&c| c != labels[i]).map(|&c| mean_to(c)).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    total / points.len() as f64
}

/// Rows are `(a, b, c)` with `a`, `b` integers or empty and `c` a short code.
fn oracle_violations(rows: &[(Option<i64>, Option<i64>, Option<String>)]) -> BTreeSet<CellRef> {
    let mut out = BTreeSet::new();
    let n = rows.len();
    // DC: t1.a < 0
    for (r, row) in rows.iter().enumerate() {
        if matches!(row.0, Some(a) if a < 0) {
            out.insert(CellRef::new(r, 0));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (x, y) = (&rows[i], &rows[j]);
            // FD: c -> b
            if let (Some(c1), Some(c2), Some(b1), Some(b2)) = (&x.2, &y.2, x.1, y.1) {
                if c1 == c2 && b1 != b2 {
                    out.extend([CellRef::new(i, 2), CellRef::new(i, 1), CellRef::new(j, 2), CellRef::new(j, 1)]);
                }
            }
            // DC: t1.c = t2.c AND t1.a > t2.a AND t1.b < t2.b
            if let (Some(c1), Some(c2), Some(a1), Some(a2), Some(b1), Some(b2)) = (&x.2, &y.2, x.0, y.0, x.1, y.1) {
                if c1 == c2 && a1 > a2 && b1 < b2 {
                    out.extend([CellRef::new(i, 2), CellRef::new(i, 0), CellRef::new(i, 1)]);
                    out.extend([CellRef::new(j, 2), CellRef::new(j, 0), CellRef::new(j, 1)]);
                }
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let instances = 120;
    for inst in 0..instances {
        let rows = rng.random_range(1..=200);
        let cols = rng.random_range(1..=6);
        let p = rng.random_range(0.0..0.3);
        let truth = random_mask(&mut rng, rows, cols, p);
        let mut masks = Vec::new();
        for _ in 0..rng.random_range(1..=4) {
            let p = rng.random_range(0.0..0.4);
            masks.push(random_mask(&mut rng, rows, cols, p));
        }
        let tg = to_grid(&truth, rows, cols);
        for m in &masks {
            let s = detection_metrics(m, &truth);
            let (tp, fp, fn_, p, r, f) = oracle_prf(&to_grid(m, rows, cols), &tg);
            check((s.tp, s.fp, s.fn_) == (tp, fp, fn_), || format!("instance {inst}: counts differ"))?;
            let worst = [s.precision - p, s.recall - r, s.f1 - f].iter().map(|d| d.abs()).fold(0.0, f64::max);
            check(worst <= 1e-12, || format!("instance {inst}: ratio off by {worst}"))?;
        }
        let (a, b) = (&masks[0], masks.last().unwrap());
        let v = iou(a, b, &truth).value;
        let o = oracle_iou(&to_grid(a, rows, cols), &to_grid(b, rows, cols), &tg);
        check((v - o).abs() <= 1e-12, || format!("instance {inst}: iou {v} vs {o}"))?;

        let k = rng.random_range(1..=masks.len());
        let got = ensemble_min_k(&masks, k).map_err(|e| e.to_string())?;
        let grids: Vec<_> = masks.iter().map(|m| to_grid(m, rows, cols)).collect();
        let want: BTreeSet<CellRef> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| CellRef::new(r, c)))
            .filter(|c| grids.iter().filter(|g| g[c.row][c.col]).count() >= k)
            .collect();
        check(got.cells == want, || format!("instance {inst}: min-k mismatch"))?;

        let n = rng.random_range(3..=60);
        let d = rng.random_range(1..=3);
        let kc = rng.random_range(2..=n.min(5));
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..kc)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let s = silhouette(&Matrix::from_rows(&points), &labels).map_err(|e| e.to_string())?;
        let o = oracle_silhouette(&points, &labels);
        check((s - o).abs() <= 1e-12, || format!("instance {inst}: silhouette {s} vs {o}"))?;

        let vrows = rng.random_range(1..=40);
        let data: Vec<(Option<i64>, Option<i64>, Option<String>)> = (0..vrows)
            .map(|_| {
                let a = (rng.random::<f64>() > 0.05).then(|| rng.random_range(-3..10));
                let b = (rng.random::<f64>() > 0.05).then(|| rng.random_range(0..4));
                let c = (rng.random::<f64>() > 0.05).then(|| ["x", "y", "z"][rng.random_range(0..3)].to_string());
                (a, b, c)
            })
            .collect();
        let raw: Vec<Vec<String>> = data
            .iter()
            .map(|(a, b, c)| {
                vec![
                    a.map(|v| v.to_string()).unwrap_or_default(),
                    b.map(|v| v.to_string()).unwrap_or_default(),
                    c.clone().unwrap_or_default(),
                ]
            })
            .collect();
        let schema = [("a", ColumnType::Numeric), ("b", ColumnType::Numeric), ("c", ColumnType::Categorical)]
            .iter()
            .map(|(k, t)| (k.to_string(), *t))
            .collect();
        let ds = Dataset::from_rows("v", &["a", "b", "c"], &raw, Some(&schema), NullTokens::default()).map_err(|e| e.to_string())?;
        let dcs = parse_constraints(
            "DC: t1.a < 0\nFD: c -> b\nDC: t1.c = t2.c AND t1.a > t2.a AND t1.b < t2.b\n",
            &["a", "b", "c"],
        )
        .map_err(|e| e.to_string())?;
        let got = find_violations(&ds, &dcs).map_err(|e| e.to_string())?;
        check(got.cells == oracle_violations(&data), || format!("instance {inst}: violation cells differ"))?;
    }
    Ok(format!("{instances} randomized instances per metric"))
}

fn mixed_table(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf"];
    let headers = ["n1", "n2", "n3", "n4", "n5", "c1", "c2", "c3"];
    let rows: Vec<Vec<String>> = (0..200)
        .map(|_| {
            let mut r: Vec<String> = (0..5).map(|_| format!("{:.3}", rng.random_range(-50.0..50.0))).collect();
            r.extend((0..3).map(|_| words[rng.random_range(0..words.len())].to_string()));
            r
        })
        .collect();
    Dataset::from_rows("mixed", &headers, &rows, None, NullTokens::default()).unwrap()
}

fn criterion_2() -> Outcome {
    let gt = mixed_table(7);
    let total = gt.row_count() * gt.col_count();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut kinds_checked = 0;
    for case in 0..50 {
        let candidates = [
            ErrorKind::ExplicitMv,
            ErrorKind::ImplicitMv,
            ErrorKind::GaussianOutlier { degree: rng.random_range(1.0..5.0) },
            ErrorKind::KeyboardTypo,
            ErrorKind::ValueSwap,
        ];
        let mut entries = Vec::new();
        for kind in candidates {
            if rng.random::<f64>() < 0.6 {
                entries.push(ErrorEntry { kind, rate: rng.random_range(0.0..0.08), columns: None });
            }
        }
        if entries.is_empty() {
            continue;
        }
        let profile = ErrorProfile::new(entries.clone());
        let seed = rng.random::<u64>();
        let (pair, report) = inject(&gt, &profile, seed, &[]).map_err(|e| format!("case {case}: {e}"))?;
        let mut union = BTreeSet::new();
        let mut sum = 0;
        for (entry, k) in entries.iter().zip(&report.kinds) {
            let want = (entry.rate * total as f64).round() as usize;
            check(k.mask.len() == want, || format!("case {case}: {} injected {} cells, want {want}", entry.kind.name(), k.mask.len()))?;
            sum += k.mask.len();
            union.extend(k.mask.iter().copied());
            kinds_checked += 1;
        }
        check(union.len() == sum, || format!("case {case}: kind masks overlap"))?;
        let diff = diff_cells(&pair.ground_truth, &pair.dirty).map_err(|e| e.to_string())?;
        check(diff.cells == union, || format!("case {case}: diff_cells differs from the union mask"))?;
        check(pair.error_mask.cells == union, || format!("case {case}: error mask differs from the union"))?;
    }
    Ok(format!("{kinds_checked} kind counts exact over 50 profiles"))
}

fn two_class_cfg(detectors: &[&str], repairs: &[&str], profile: Vec<ErrorEntry>) -> BenchmarkConfig {
    let src = DatasetSource {
        name: "two_class".into(),
        synthetic: Some(SyntheticSpec::TwoClass { weights: vec![1.5, -1.0, 0.5], bias: 0.2, n: 300, seed: 5 }),
        ..Default::default()
    };
    let mut cfg = BenchmarkConfig::new(src, detectors, repairs, &["logit", "knn"], &[Scenario::S1, Scenario::S4], 5);
    cfg.profile = profile;
    cfg.master_seed = 3;
    cfg
}

fn criterion_3() -> Outcome {
    let cfg = two_class_cfg(&["mvd"], &["gt"], vec![ErrorEntry { kind: ErrorKind::ExplicitMv, rate: 0.1, columns: None }]);
    let prep = prepare_dataset(&cfg.datasets[0], &cfg).map_err(|e| e.to_string())?;
    let mask = detect_missing(&prep.pair.dirty);
    let d = detection_metrics(&mask, &prep.pair.error_mask);
    check(d.precision == 1.0 && d.recall == 1.0, || format!("detection P={} R={}", d.precision, d.recall))?;
    let rep = repair_ground_truth(&prep.pair, &mask).map_err(|e| e.to_string())?;
    let score = repair_metrics(&rep.data, &prep.pair.ground_truth, &prep.pair.error_mask, &rep.repaired_cells).map_err(|e| e.to_string())?;
    check(score.numeric.rmse == Some(0.0), || format!("numeric RMSE {:?}", score.numeric.rmse))?;
    check(score.categorical.erroneous > 0, || "no categorical cells were injected".into())?;
    check(score.categorical.score.f1 == 1.0, || format!("categorical F1 {}", score.categorical.score.f1))?;

    let mut store = ResultsStore::in_memory();
    let summary = run_benchmark(&cfg, &mut store, &RunOptions::default()).map_err(|e| e.to_string())?;
    check(summary.failed() == 0, || format!("{} failed cells", summary.failed()))?;
    let mut pairs = 0;
    for r in store.experiments.records().filter(|r| r.scenario == Scenario::S1 && r.detector == "mvd" && r.repair == "gt") {
        let s4 = store
            .experiments
            .records()
            .find(|o| o.scenario == Scenario::S4 && o.model == r.model && o.seed == r.seed)
            .ok_or("missing S4 record")?;
        check(r.metric_value == s4.metric_value, || format!("{} seed {}: S1 {:?} vs S4 {:?}", r.model, r.seed_index, r.metric_value, s4.metric_value))?;
        pairs += 1;
    }
    check(pairs == 10, || format!("{pairs} S1 records compared"))?;
    Ok(format!("P=R=1, RMSE=0, categorical F1=1, {pairs} S1/S4 pairs identical"))
}

fn oracle_exact_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut rank = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = (r + 1) as f64;
    }
    let w_plus: f64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| rank[i]).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);
    let mut below = 0u64;
    for signs in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|b| signs >> b & 1 == 1).map(|b| (b + 1) as f64).sum();
        if s <= w + 1e-9 {
            below += 1;
        }
    }
    (2.0 * below as f64 / (1u64 << n) as f64).min(1.0)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_by_n = Vec::new();
    let mut samples = 0;
    for n in 6..=12 {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            // Distinct magnitudes keep the sample tie-free.
            let mags: Vec<usize> = sample(&mut rng, 1000, n).into_vec();
            let diffs: Vec<f64> =
                mags.iter().map(|&m| (m as f64 + 1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let a: Vec<f64> = diffs.iter().map(|d| 100.0 + d).collect();
            let b = vec![100.0; n];
            let ps = PairedSample::new(&a, &b, ("a", "b"));
            let exact = oracle_exact_p(&diffs);
            let lib_exact = wilcoxon_signed_rank(&ps, 0.05, WilcoxonMode::Exact).map_err(|e| e.to_string())?.p_value;
            check((lib_exact - exact).abs() <= 1e-12, || format!("n={n}: exact p {lib_exact} vs enumeration {exact}"))?;
            let approx = wilcoxon_signed_rank(&ps, 0.05, WilcoxonMode::NormalApprox).map_err(|e| e.to_string())?.p_value;
            worst = worst.max((approx - exact).abs());
            samples += 1;
        }
        worst_by_n.push((n, worst));
    }
    let ps = PairedSample::new(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5], ("a", "b"));
    let r = wilcoxon_signed_rank(&ps, 0.05, WilcoxonMode::Exact).map_err(|e| e.to_string())?;
    check(r.p_value == 0.0625 && !r.reject_h0, || format!("n=5 example p={}", r.p_value))?;
    let listing = worst_by_n.iter().map(|(n, w)| format!("n={n}:{w:.4}")).collect::<Vec<_>>().join(" ");
    let over: Vec<usize> = worst_by_n.iter().filter(|(_, w)| *w > 0.02).map(|(n, _)| *n).collect();
    check(over.is_empty(), || format!("normal approximation exceeds 0.02 at n={over:?}; max |approx - exact| {listing}"))?;
    Ok(format!("{samples} samples, max |approx - exact| {listing}; n=5 example p=0.0625"))
}

fn criterion_5() -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut seed = 0;
    while checked < 10_000 {
        let gt = make_synthetic(&SyntheticSpec::LinearRegression { weights: vec![1.0, -2.0, 0.5], n: 1000, noise: 1.0, seed }).unwrap();
        let degree = 1.0 + (seed % 4) as f64;
        let profile = ErrorProfile::new(vec![ErrorEntry { kind: ErrorKind::GaussianOutlier { degree }, rate: 0.3, columns: None }]);
        let (pair, _) = inject(&gt, &profile, seed, &[]).map_err(|e| e.to_string())?;
        let stats: Vec<(f64, f64)> = (0..gt.col_count())
            .map(|c| {
                let v = gt.column(c).parsed_values();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
                (m, s)
            })
            .collect();
        for cell in pair.error_mask.iter() {
            let x: f64 = pair.dirty.cell(*cell).parsed().ok_or("outlier cell does not parse")?;
            let (m, s) = stats[cell.col];
            if (x - m).abs() < degree * s {
                violations += 1;
            }
            checked += 1;
        }
        seed += 1;
    }
    check(violations == 0, || format!("{violations} of {checked} outliers closer than degree * sigma"))?;
    Ok(format!("0 violations over {checked} injected cells"))
}

fn linear_cfg(n: usize, detectors: &[&str], repairs: &[&str], models: &[&str], scenarios: &[Scenario], repeats: usize) -> BenchmarkConfig {
    let src = DatasetSource {
        name: "linear".into(),
        synthetic: Some(SyntheticSpec::LinearRegression { weights: vec![3.0, -2.0], n, noise: 0.5, seed: 17 }),
        ..Default::default()
    };
    let mut cfg = BenchmarkConfig::new(src, detectors, repairs, models, scenarios, repeats);
    cfg.master_seed = 42;
    cfg
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut cfg = linear_cfg(1000, &["sd"], &["mean"], &["ridge"], &[Scenario::S1, Scenario::S4], 10);
    cfg.profile = vec![ErrorEntry { kind: ErrorKind::GaussianOutlier { degree: 4.0 }, rate: 0.3, columns: None }];
    let mut store = ResultsStore::in_memory();
    run_benchmark(&cfg, &mut store, &RunOptions::default()).map_err(|e| e.to_string())?;
    let mean_of = |det: &str, scen: Scenario| {
        let v: Vec<f64> = store.experiments.records().filter(|r| r.detector == det && r.scenario == scen).filter_map(|r| r.metric_value).collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (s1, n1) = mean_of("none", Scenario::S1);
    let (s4, n4) = mean_of("gt", Scenario::S4);
    check(n1 == 10 && n4 == 10, || format!("{n1} S1 and {n4} S4 records"))?;
    check(s1 > s4, || format!("mean RMSE S1 {s1:.4} <= S4 {s4:.4}"))?;
    let model = store.experiments.records().next().unwrap().model.clone();
    let ab = ab_compare(&mut store, "linear", &model, &AbSide::new("none", "none", Scenario::S1), &AbSide::new("gt", "gt", Scenario::S4), 0.05, WilcoxonMode::Auto)
        .map_err(|e| e.to_string())?;
    check(ab.result.reject_h0, || format!("H0 not rejected, p={}", ab.result.p_value))?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("RMSE S1 {s1:.3} > S4 {s4:.3}, p={:.4}, {secs:.1}s", ab.result.p_value))
}

fn criterion_7() -> Outcome {
    let mut cfg = linear_cfg(500, &["sd:n=2", "iqr:k=1.5"], &["mean"], &["ridge"], &[Scenario::S1], 10);
    cfg.datasets[0].synthetic = Some(SyntheticSpec::LinearRegression { weights: vec![1.0, 1.0], n: 500, noise: 1.0, seed: 23 });
    let degrees = [1.0, 2.0, 3.0, 4.0];
    let recs = run_robustness_sweep(&cfg, &mut ResultsStore::in_memory(), &RunOptions::default(), SweepAxis::OutlierDegree, &degrees)
        .map_err(|e| e.to_string())?;
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for det in ["sd:n=2", "iqr:k=1.5"] {
        let s: Vec<f64> = degrees
            .iter()
            .map(|&d| {
                let v: Vec<f64> = recs.iter().filter(|r| r.detector == det && r.value == d).filter_map(|r| r.score.map(|s| s.f1)).collect();
                assert_eq!(v.len(), 10, "{det} at degree {d}");
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        series.insert(det.to_string(), s);
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    let detail = format!("sd F1 [{}], iqr F1 [{}]", fmt(&series["sd:n=2"]), fmt(&series["iqr:k=1.5"]));
    let decreasing: Vec<&str> = series.iter().filter(|(_, s)| s.windows(2).any(|w| w[1] < w[0])).map(|(d, _)| d.as_str()).collect();
    check(decreasing.is_empty(), || format!("series decreases for {decreasing:?}: {detail}"))?;
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let gt = make_synthetic(&SyntheticSpec::LinearRegression { weights: vec![3.0, -2.0], n: 500, noise: 0.5, seed: 8 }).unwrap();
    let profile = ErrorProfile::new(vec![ErrorEntry { kind: ErrorKind::GaussianOutlier { degree: 4.0 }, rate: 0.3, columns: None }]);
    let mut low_sum = 0.0;
    let mut full_sum = 0.0;
    for seed in 0..10u64 {
        let (pair, _) = inject(&gt, &profile, 1000 + seed, &[]).map_err(|e| e.to_string())?;
        let truth: Vec<CellRef> = pair.error_mask.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = (truth.len() as f64 * 0.2).round() as usize;
        let partial = DetectionMask::from_cells("partial", sample(&mut rng, truth.len(), keep).into_iter().map(|i| truth[i]));
        let recall = detection_metrics(&partial, &pair.error_mask).recall;
        check((recall - 0.2).abs() < 0.01, || format!("seed {seed}: partial detector recall {recall}"))?;
        let score = |mask: &DetectionMask| -> Result<f64, String> {
            let rep = repair_ground_truth(&pair, mask).map_err(|e| e.to_string())?;
            let s = repair_metrics(&rep.data, &pair.ground_truth, &pair.error_mask, &rep.repaired_cells).map_err(|e| e.to_string())?;
            s.numeric.rmse.ok_or_else(|| "no comparable cells".to_string())
        };
        let low = score(&partial)?;
        let full = score(&pair.error_mask)?;
        check(low > full, || format!("seed {seed}: RMSE at 20% recall {low} <= at full recall {full}"))?;
        low_sum += low;
        full_sum += full;
    }
    Ok(format!("mean GT-repair RMSE {:.3} at 20% recall vs {:.3} at 100%, strict on all 10 seeds", low_sum / 10.0, full_sum / 10.0))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let n = rng.random_range(5..40);
        let d = rng.random_range(1..6);
        let k = rng.random_range(2..5);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let w: Vec<f64> = (0..k * (d + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l2 = rng.random_range(0.0..0.1);
        let (_, grad) = logistic_loss_grad(&x, &y, k, &w, l2);
        let h = 1e-5;
        let numeric: Vec<f64> = (0..w.len())
            .map(|i| {
                let mut up = w.clone();
                let mut down = w.clone();
                up[i] += h;
                down[i] -= h;
                (logistic_loss_grad(&x, &y, k, &up, l2).0 - logistic_loss_grad(&x, &y, k, &down, l2).0) / (2.0 * h)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&grad).max(norm(&numeric)).max(1e-12);
        check(rel <= 1e-5, || format!("instance {inst}: relative error {rel:e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("20 instances, max relative error {worst:.2e}"))
}

fn criterion_10() -> Outcome {
    let mut cfg = linear_cfg(300, &["sd", "iqr"], &["mean", "median", "knn"], &["ridge", "knn"], &[Scenario::S1, Scenario::S4], 10);
    cfg.profile = vec![
        ErrorEntry { kind: ErrorKind::GaussianOutlier { degree: 3.0 }, rate: 0.05, columns: None },
        ErrorEntry { kind: ErrorKind::ExplicitMv, rate: 0.05, columns: None },
    ];
    let prep = prepare_dataset(&cfg.datasets[0], &cfg).map_err(|e| e.to_string())?;
    let grid = plan_experiments(&cfg, "linear", &plan_context(&prep)).map_err(|e| e.to_string())?;
    let formula = (2 * 3 + 1) * 2 * 1 * 10;
    check(grid.versioned_total == formula && formula == 140, || format!("versioned total {}", grid.versioned_total))?;
    check(grid.s4_total == 20 && grid.total == 160, || format!("S4 total {}, total {}", grid.s4_total, grid.total))?;
    let mut store = ResultsStore::in_memory();
    let summary = run_benchmark(&cfg, &mut store, &RunOptions::default()).map_err(|e| e.to_string())?;
    let failed = store.experiments.records().filter(|r| r.status != Status::Ok).count();
    check(failed == 0 && summary.failed() == 0, || format!("{failed} failed records"))?;
    let s1 = store.experiments.records().filter(|r| r.scenario == Scenario::S1).count();
    let s4 = store.experiments.records().filter(|r| r.scenario == Scenario::S4).count();
    check(s1 == 140 && s4 == 20, || format!("{s1} S1 and {s4} S4 records"))?;
    Ok(format!("{s1} S1 + {s4} S4 records, 0 failures"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracles", criterion_1),
        ("injection exactness", criterion_2),
        ("perfect-pipeline identity", criterion_3),
        ("wilcoxon correctness", criterion_4),
        ("outlier-degree guarantee", criterion_5),
        ("dirty S1 vs S4 regression", criterion_6),
        ("detector F1 across outlier degrees", criterion_7),
        ("repair quality tracks detection recall", criterion_8),
        ("logistic gradient check", criterion_9),
        ("grid accounting", criterion_10),
    ];
    let suite = Instant::now();
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("acceptance {:>2} {name}: PASS ({detail}) [{secs:.2}s]", i + 1),
            Err(why) => {
                failures += 1;
                println!("acceptance {:>2} {name}: FAIL ({why}) [{secs:.2}s]", i + 1);
            }
        }
    }
    let total = suite.elapsed().as_secs_f64();
    println!("acceptance suite: {}/10 passed in {total:.1}s", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
