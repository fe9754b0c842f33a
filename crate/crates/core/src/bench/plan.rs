//! Experiment grid planning and skip logic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, BenchmarkConfig, Scenario};
use super::{BenchError, Result};
use crate::detect::DetectorSpec;
use crate::inject::ErrorClass;
use crate::model::{ModelSpec, Task};
use crate::repair::RepairSpec;

/// Detector and repair id of the uncleaned dirty version.
pub const DIRTY_ID: &str = "none";
/// Detector and repair id of scenario S4, which never touches a repair.
pub const GT_ID: &str = "gt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub item: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub detector: DetectorSpec,
    pub repair: RepairSpec,
}

impl Strategy {
    pub fn ids(&self) -> (String, String) {
        (self.detector.to_string(), self.repair.to_string())
    }
}

/// Which data version a grid cell trains or tests on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VersionRef {
    Dirty,
    Strategy(usize),
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedCell {
    pub version: VersionRef,
    pub detector: String,
    pub repair: String,
    pub model_index: usize,
    pub scenario: Scenario,
    pub seed_index: usize,
    pub split_seed: u64,
}

/// Facts about a dataset that drive the skip table.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanContext {
    pub tags: BTreeSet<ErrorClass>,
    pub has_label_column: bool,
    pub has_constraints: bool,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub dataset: String,
    pub task: Task,
    pub detectors: Vec<DetectorSpec>,
    pub repairs: Vec<RepairSpec>,
    pub strategies: Vec<Strategy>,
    pub models: Vec<ModelSpec>,
    pub scenarios: Vec<Scenario>,
    pub seeds: Vec<u64>,
    /// Configured detectors times configured repairs.
    pub epsilon: usize,
    pub cells: Vec<PlannedCell>,
    pub skipped: Vec<Skip>,
    /// `(epsilon' + 1) * h * |scenarios without S4| * s`.
    pub versioned_total: usize,
    /// `h * s` when S4 is requested, else 0.
    pub s4_total: usize,
    pub total: usize,
}

const DUPLICATES_ONLY_SKIPS: &[&str] = &["sd", "iqr", "if", "rule", "mvd", "fahes"];

/// Why `d` cannot run on a dataset, if it cannot.
pub fn skip_reason(d: &DetectorSpec, ctx: &PlanContext) -> Option<String> {
    if let DetectorSpec::MinK { base, .. } | DetectorSpec::MaxEntropy { base, .. } = d {
        return base
            .iter()
            .find_map(|b| skip_reason(b, ctx))
            .map(|r| format!("base detector skipped: {r}"));
    }
    let name = d.short_name();
    if !ctx.tags.is_empty() && ctx.tags.iter().all(|t| *t == ErrorClass::Duplicates) && DUPLICATES_ONLY_SKIPS.contains(&name) {
        return Some("data only contains duplicates".into());
    }
    if name == "cl" && !ctx.has_label_column {
        return Some("no label column for mislabel detection".into());
    }
    if name == "rule" && !ctx.has_constraints {
        return Some("no constraint file".into());
    }
    None
}

/// Split seeds shared by every scenario and data version.
pub fn split_seeds(master: u64, repeats: usize) -> Vec<u64> {
    (0..repeats).map(|i| derive_seed(master, &format!("split/{i}"))).collect()
}

pub fn plan_experiments(cfg: &BenchmarkConfig, dataset: &str, ctx: &PlanContext) -> Result<ExperimentGrid> {
    cfg.validate()?;
    let all_detectors = cfg.detector_specs()?;
    let repairs = cfg.repair_specs()?;
    let models = cfg.model_specs(ctx.task)?;
    let mut skipped = Vec::new();
    let mut detectors = Vec::new();
    for d in all_detectors.iter() {
        match skip_reason(d, ctx) {
            Some(reason) => skipped.push(Skip { item: format!("detector {d}"), reason }),
            None => detectors.push(d.clone()),
        }
    }
    if detectors.is_empty() {
        return Err(BenchError::EmptyGrid(format!("dataset `{dataset}`: every detector was skipped")));
    }
    let mut scenarios: Vec<Scenario> = Vec::new();
    for &s in &cfg.scenarios {
        if scenarios.contains(&s) {
            continue;
        }
        if s == Scenario::S5 && ctx.task == Task::Clustering {
            skipped.push(Skip { item: "scenario S5".into(), reason: "clustering has no held-out labels to corrupt".into() });
            continue;
        }
        scenarios.push(s);
    }
    let strategies: Vec<Strategy> = detectors
        .iter()
        .flat_map(|d| repairs.iter().map(move |r| Strategy { detector: d.clone(), repair: r.clone() }))
        .collect();
    let seeds = split_seeds(cfg.master_seed, cfg.repeats);
    let versioned: Vec<Scenario> = scenarios.iter().copied().filter(|s| *s != Scenario::S4).collect();
    let mut versions = vec![(VersionRef::Dirty, DIRTY_ID.to_string(), DIRTY_ID.to_string())];
    versions.extend(strategies.iter().enumerate().map(|(i, s)| {
        let (d, r) = s.ids();
        (VersionRef::Strategy(i), d, r)
    }));
    let mut cells = Vec::new();
    for (version, det, rep) in &versions {
        for model_index in 0..models.len() {
            for &scenario in &versioned {
                for (seed_index, &split_seed) in seeds.iter().enumerate() {
                    cells.push(PlannedCell {
                        version: *version,
                        detector: det.clone(),
                        repair: rep.clone(),
                        model_index,
                        scenario,
                        seed_index,
                        split_seed,
                    });
                }
            }
        }
    }
    let has_s4 = scenarios.contains(&Scenario::S4);
    if has_s4 {
        for model_index in 0..models.len() {
            for (seed_index, &split_seed) in seeds.iter().enumerate() {
                cells.push(PlannedCell {
                    version: VersionRef::GroundTruth,
                    detector: GT_ID.into(),
                    repair: GT_ID.into(),
                    model_index,
                    scenario: Scenario::S4,
                    seed_index,
                    split_seed,
                });
            }
        }
    }
    let h = models.len();
    let s = seeds.len();
    let versioned_total = (strategies.len() + 1) * h * versioned.len() * s;
    let s4_total = if has_s4 { h * s } else { 0 };
    debug_assert_eq!(cells.len(), versioned_total + s4_total);
    Ok(ExperimentGrid {
        dataset: dataset.to_string(),
        task: ctx.task,
        epsilon: all_detectors.len() * repairs.len(),
        detectors,
        repairs,
        strategies,
        models,
        scenarios,
        seeds,
        cells,
        skipped,
        versioned_total,
        s4_total,
        total: versioned_total + s4_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::DatasetSource;

    fn ctx(tags: &[ErrorClass]) -> PlanContext {
        PlanContext { tags: tags.iter().copied().collect(), has_label_column: true, has_constraints: true, task: Task::Regression }
    }

    fn cfg(detectors: &[&str], repairs: &[&str], models: &[&str], scenarios: &[Scenario], repeats: usize) -> BenchmarkConfig {
        let src = DatasetSource { name: "d".into(), path: Some("d.csv".into()), ..Default::default() };
        BenchmarkConfig::new(src, detectors, repairs, models, scenarios, repeats)
    }

    #[test]
    fn desk_grid_counts() {
        let c = cfg(&["sd", "iqr"], &["mean", "median", "knn"], &["ridge", "knn"], &[Scenario::S1, Scenario::S4], 10);
        let g = plan_experiments(&c, "d", &ctx(&[ErrorClass::Outliers])).unwrap();
        assert_eq!(g.versioned_total, 7 * 2 * 10);
        assert_eq!(g.s4_total, 20);
        assert_eq!(g.total, 160);
        assert_eq!(g.cells.len(), 160);
        assert!(g.cells.iter().filter(|c| c.scenario == Scenario::S4).all(|c| c.detector == GT_ID && c.repair == GT_ID));
    }

    #[test]
    fn duplicate_only_data_skips_cell_detectors() {
        let c = cfg(&["sd", "dedup", "mink:k=1,base=sd+dedup"], &["delete"], &["ridge"], &[Scenario::S1], 2);
        let g = plan_experiments(&c, "d", &ctx(&[ErrorClass::Duplicates])).unwrap();
        assert_eq!(g.detectors.len(), 1);
        assert_eq!(g.detectors[0].short_name(), "dedup");
        assert_eq!(g.skipped.len(), 2);
        assert_eq!(g.epsilon, 3);
        assert_eq!(g.total, 2 * 1 * 1 * 2);
    }

    #[test]
    fn missing_inputs_skip_and_empty_grid_errors() {
        let mut cx = ctx(&[ErrorClass::Outliers]);
        cx.has_label_column = false;
        cx.has_constraints = false;
        let c = cfg(&["cl", "rule:ids=c1"], &["mean"], &["ridge"], &[Scenario::S1], 1);
        assert!(matches!(plan_experiments(&c, "d", &cx), Err(BenchError::EmptyGrid(_))));
    }

    #[test]
    fn clustering_drops_s5() {
        let mut cx = ctx(&[]);
        cx.task = Task::Clustering;
        let c = cfg(&["sd"], &["mean"], &["kmeans"], &[Scenario::S1, Scenario::S5], 3);
        let g = plan_experiments(&c, "d", &cx).unwrap();
        assert_eq!(g.scenarios, vec![Scenario::S1]);
        assert_eq!(g.total, 2 * 3);
    }

    #[test]
    fn seeds_are_shared_and_distinct() {
        let s = split_seeds(7, 5);
        assert_eq!(s, split_seeds(7, 5));
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 5);
        assert_eq!(s[0], derive_seed(7, "split/0"));
    }
}
