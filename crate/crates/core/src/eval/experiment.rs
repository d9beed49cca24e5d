//! The evaluation grid: items × models × shots × sampling strategies,
//! repeated over seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{cohens_kappa, f1_weighted};
use super::report::{CellReport, CellStats, MetricReport, ReportMetadata};
use crate::baselines::{self, BaselineKind, BaselineParams};
use crate::corpus::{self, ExemplarSet, GradeLevel, LabeledResponse};
use crate::encoder::{BackendConfig, Encoder};
use crate::fewshot::{self, FineTuneConfig, SampleStrategy, StrategyKind};
use crate::mensp::{MenspScorer, ScorerOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Random,
    #[serde(rename = "RFDT")]
    RandomForest,
    #[serde(rename = "GBDT")]
    GradientBoosting,
    Vote,
    #[serde(rename = "MeNSP")]
    Mensp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Random,
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
        ModelKind::Vote,
        ModelKind::Mensp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Random => "Random",
            ModelKind::RandomForest => "RFDT",
            ModelKind::GradientBoosting => "GBDT",
            ModelKind::Vote => "Vote",
            ModelKind::Mensp => "MeNSP",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == label)
    }

    fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelKind::RandomForest => Some(BaselineKind::RandomForest),
            ModelKind::GradientBoosting => Some(BaselineKind::GradientBoosting),
            ModelKind::Vote => Some(BaselineKind::Vote),
            _ => None,
        }
    }

    /// Whether the model has a cell at this shot count. Random needs no
    /// training data and the classifiers need some.
    pub fn runs_at(self, shots: usize) -> bool {
        match self {
            ModelKind::Mensp => true,
            ModelKind::Random => shots == 0,
            _ => shots > 0,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemConfig {
    pub responses: PathBuf,
    pub exemplars: PathBuf,
    /// Hand-picked training samples keyed by shot count.
    #[serde(default)]
    pub manual_samples: BTreeMap<usize, PathBuf>,
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_shots() -> Vec<usize> {
    vec![0, 1, 3]
}

fn default_strategies() -> Vec<StrategyKind> {
    vec![StrategyKind::Random]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_true() -> bool {
    true
}

/// The `experiment` block of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub items: Vec<ItemConfig>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_true")]
    pub include_zero_in_matching: bool,
}

impl ExperimentPlan {
    pub fn new(items: Vec<ItemConfig>) -> Self {
        ExperimentPlan {
            items,
            models: default_models(),
            shots: default_shots(),
            strategies: default_strategies(),
            seeds: default_seeds(),
            include_zero_in_matching: true,
        }
    }
}

/// Everything a run depends on; its digest identifies the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub plan: ExperimentPlan,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub finetune: FineTuneConfig,
    #[serde(default)]
    pub baselines: BaselineParams,
}

impl ExperimentConfig {
    pub fn new(plan: ExperimentPlan) -> Self {
        ExperimentConfig {
            plan,
            backend: BackendConfig::default(),
            finetune: FineTuneConfig::default(),
            baselines: BaselineParams::default(),
        }
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&json);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The (shot, strategy, model) combinations that produce cells, in
    /// report order.
    pub fn cell_keys(&self) -> Vec<(usize, Option<StrategyKind>, ModelKind)> {
        let mut shots = self.plan.shots.clone();
        shots.sort_unstable();
        shots.dedup();
        let mut strategies = self.plan.strategies.clone();
        strategies.sort_unstable();
        strategies.dedup();
        let mut models = self.plan.models.clone();
        models.sort_unstable();
        models.dedup();
        let mut keys = Vec::new();
        for &shot in &shots {
            let slots: Vec<Option<StrategyKind>> = if shot == 0 {
                vec![None]
            } else {
                strategies.iter().copied().map(Some).collect()
            };
            for strategy in slots {
                for &model in &models {
                    if model.runs_at(shot) {
                        keys.push((shot, strategy, model));
                    }
                }
            }
        }
        keys
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.plan.items.is_empty() {
            return invalid("experiment.items is empty".into());
        }
        if self.plan.seeds.is_empty() {
            return invalid("experiment.seeds is empty".into());
        }
        if self.cell_keys().is_empty() {
            return invalid(
                "no model runs at the configured shot counts (Random needs shot 0, \
                 RFDT/GBDT/Vote need shots above 0)"
                    .into(),
            );
        }
        if self.plan.strategies.contains(&StrategyKind::ManualFile) {
            for (i, item) in self.plan.items.iter().enumerate() {
                for &shot in self.plan.shots.iter().filter(|&&s| s > 0) {
                    if !item.manual_samples.contains_key(&shot) {
                        return invalid(format!(
                            "experiment.items[{i}] has no manual_samples entry for {shot} shots"
                        ));
                    }
                }
            }
        }
        self.finetune
            .validate()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        self.backend
            .validate()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
}

struct LoadedItem {
    exemplars: ExemplarSet,
    pool: Vec<LabeledResponse>,
}

fn load_item(item: &ItemConfig) -> Result<LoadedItem, String> {
    let exemplars = corpus::load_exemplars(&item.exemplars).map_err(|e| e.to_string())?;
    let pool = corpus::load_responses(&item.responses, exemplars.item_id(), exemplars.num_levels())
        .map_err(|e| e.to_string())?;
    Ok(LoadedItem { exemplars, pool })
}

type Key = (usize, Option<StrategyKind>, ModelKind);

/// Per-seed results of one item's cells.
struct ItemRun<'a> {
    config: &'a ExperimentConfig,
    item: &'a ItemConfig,
    loaded: &'a LoadedItem,
    backend: Option<&'a Arc<dyn Encoder>>,
    zero_shot: Option<Result<MenspScorer, String>>,
}

impl ItemRun<'_> {
    fn options(&self) -> ScorerOptions {
        ScorerOptions {
            include_zero_in_matching: self.config.plan.include_zero_in_matching,
            ..ScorerOptions::default()
        }
    }

    fn backend(&self) -> Result<&Arc<dyn Encoder>, String> {
        self.backend
            .ok_or_else(|| "MeNSP needs an encoder backend but none was configured".to_string())
    }

    fn zero_shot_scorer(&mut self) -> Result<&MenspScorer, String> {
        if self.zero_shot.is_none() {
            let built = self.backend().and_then(|b| {
                MenspScorer::new(b.clone(), self.loaded.exemplars.clone(), self.options())
                    .map_err(|e| e.to_string())
            });
            self.zero_shot = Some(built);
        }
        self.zero_shot.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }

    fn samples(
        &self,
        shot: usize,
        strategy: StrategyKind,
        seed: u64,
    ) -> Result<Vec<LabeledResponse>, String> {
        let chosen = match strategy {
            StrategyKind::Random => SampleStrategy::random(),
            StrategyKind::ManualFile => match self.item.manual_samples.get(&shot) {
                Some(path) => SampleStrategy::manual(path),
                None => return Err(format!("no manual sample file for {shot} shots")),
            },
        };
        fewshot::select_samples(
            &self.loaded.pool,
            shot,
            &chosen,
            seed,
            self.loaded.exemplars.item_id(),
            self.loaded.exemplars.num_levels(),
        )
        .map_err(|e| e.to_string())
    }

    fn score_with(scorer: &MenspScorer, test: &[LabeledResponse]) -> Result<Vec<GradeLevel>, String> {
        let texts: Vec<&str> = test.iter().map(|r| r.text.as_str()).collect();
        scorer
            .batch_score(&texts)
            .into_iter()
            .zip(test)
            .map(|(r, resp)| {
                r.map(|s| s.grade)
                    .map_err(|e| format!("scoring response {}: {e}", resp.response_id))
            })
            .collect()
    }

    fn predict(
        &mut self,
        (shot, strategy, model): Key,
        seed: u64,
        test: &[LabeledResponse],
    ) -> Result<Vec<GradeLevel>, String> {
        let num_levels = self.loaded.exemplars.num_levels();
        match (model, strategy) {
            (ModelKind::Random, _) => Ok(baselines::random_score(seed, test.len(), num_levels)),
            (ModelKind::Mensp, None) => {
                let scorer = self.zero_shot_scorer()?;
                Self::score_with(scorer, test)
            }
            (ModelKind::Mensp, Some(strategy)) => {
                let backend = self.backend()?.clone();
                let samples = self.samples(shot, strategy, seed)?;
                let pairs = fewshot::build_pairs(&samples, &self.loaded.exemplars)
                    .map_err(|e| e.to_string())?;
                let ft_config = FineTuneConfig {
                    seed,
                    ..self.config.finetune.clone()
                };
                let tuned = fewshot::finetune(backend.as_ref(), &pairs, &ft_config)
                    .map_err(|e| e.to_string())?;
                let scorer = MenspScorer::new(tuned.backend, self.loaded.exemplars.clone(), self.options())
                    .map_err(|e| e.to_string())?;
                Self::score_with(&scorer, test)
            }
            (model, Some(strategy)) => {
                let kind = model.baseline().expect("classifier model");
                let samples = self.samples(shot, strategy, seed)?;
                let train_texts: Vec<&str> = samples.iter().map(|r| r.text.as_str()).collect();
                let labels: Vec<GradeLevel> = samples.iter().map(|r| r.gold).collect();
                let tfidf = baselines::tfidf_fit(&train_texts).map_err(|e| e.to_string())?;
                let x_train = tfidf.transform_matrix(&train_texts);
                let test_texts: Vec<&str> = test.iter().map(|r| r.text.as_str()).collect();
                let x_test = tfidf.transform_matrix(&test_texts);
                let fitted = baselines::train_baseline(
                    kind,
                    x_train.view(),
                    &labels,
                    seed,
                    &self.config.baselines,
                )
                .map_err(|e| e.to_string())?;
                fitted.predict(x_test.view()).map_err(|e| e.to_string())
            }
            (model, None) => Err(format!("{model} does not run without training samples")),
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every cell for every seed. A failing cell is recorded in the report
/// and does not stop the others.
///
/// Each seed draws one split at the largest configured shot count; the test
/// side is shared by all cells of that seed, and smaller random draws are
/// prefixes of the same per-level shuffle.
pub fn run_experiment(
    config: &ExperimentConfig,
    backend: Option<Arc<dyn Encoder>>,
) -> Result<MetricReport, ExperimentError> {
    config.validate()?;
    let keys = config.cell_keys();
    let k_max = config.plan.shots.iter().copied().max().unwrap_or(0);
    let mut items = Vec::new();
    let mut cells = Vec::new();

    for item in &config.plan.items {
        let loaded = match load_item(item) {
            Ok(l) => l,
            Err(e) => {
                let name = item.exemplars.display().to_string();
                for &(shot, strategy, model) in &keys {
                    cells.push(CellReport::failed(&name, shot, strategy, model, e.clone()));
                }
                items.push(name);
                continue;
            }
        };
        let item_id = loaded.exemplars.item_id().to_string();
        let mut run = ItemRun {
            config,
            item,
            loaded: &loaded,
            backend: backend.as_ref(),
            zero_shot: None,
        };
        let mut scores: BTreeMap<Key, Result<Vec<(f64, f64)>, String>> =
            keys.iter().map(|k| (*k, Ok(Vec::new()))).collect();

        for &seed in &config.plan.seeds {
            let split = corpus::few_shot_split(&loaded.pool, k_max, seed);
            for &key in &keys {
                let slot = scores.get_mut(&key).expect("key present");
                let Ok(acc) = slot else { continue };
                let outcome = split
                    .as_ref()
                    .map_err(|e| format!("seed {seed}: {e}"))
                    .and_then(|split| {
                        if split.test.is_empty() {
                            return Err(format!("seed {seed}: no responses left for testing"));
                        }
                        let predicted = run.predict(key, seed, &split.test)?;
                        let gold: Vec<GradeLevel> = split.test.iter().map(|r| r.gold).collect();
                        let kappa = cohens_kappa(&gold, &predicted).map_err(|e| e.to_string())?;
                        let f1 = f1_weighted(&gold, &predicted).map_err(|e| e.to_string())?;
                        Ok((kappa, f1))
                    });
                match outcome {
                    Ok(m) => acc.push(m),
                    Err(e) => *slot = Err(e),
                }
            }
        }

        for (&(shot, strategy, model), outcome) in &scores {
            cells.push(match outcome {
                Ok(values) => {
                    let kappas: Vec<f64> = values.iter().map(|v| v.0).collect();
                    let f1s: Vec<f64> = values.iter().map(|v| v.1).collect();
                    let (kappa_mean, kappa_std) = mean_std(&kappas);
                    let (f1_mean, f1_std) = mean_std(&f1s);
                    CellReport {
                        item: item_id.clone(),
                        shot,
                        strategy,
                        model,
                        stats: Some(CellStats {
                            seeds: values.len(),
                            kappa_mean,
                            kappa_std,
                            f1_mean,
                            f1_std,
                        }),
                        error: None,
                    }
                }
                Err(e) => CellReport::failed(&item_id, shot, strategy, model, e.clone()),
            });
        }
        items.push(item_id);
    }

    let mut report = MetricReport {
        items,
        cells,
        metadata: ReportMetadata {
            config_digest: config.digest(),
            backend: backend.as_ref().map(|b| b.descriptor().identifier),
            seeds: config.plan.seeds.clone(),
            timestamp: None,
        },
    };
    report.sort_cells();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_grid_follows_shot_rules() {
        let mut plan = ExperimentPlan::new(vec![]);
        plan.strategies = vec![StrategyKind::Random, StrategyKind::ManualFile];
        let keys = ExperimentConfig::new(plan).cell_keys();
        let zero: Vec<_> = keys.iter().filter(|k| k.0 == 0).collect();
        assert_eq!(zero, [&(0, None, ModelKind::Random), &(0, None, ModelKind::Mensp)]);
        // 2 zero-shot + 2 shots × 2 strategies × 4 models
        assert_eq!(keys.len(), 2 + 16);
        assert!(!keys.iter().any(|k| k.0 > 0 && k.2 == ModelKind::Random));
    }

    #[test]
    fn validation() {
        let item = ItemConfig {
            responses: "r.jsonl".into(),
            exemplars: "e.json".into(),
            manual_samples: BTreeMap::new(),
        };
        let mut plan = ExperimentPlan::new(vec![item]);
        plan.seeds.clear();
        assert!(ExperimentConfig::new(plan.clone()).validate().is_err());
        plan.seeds = vec![1];
        assert!(ExperimentConfig::new(plan.clone()).validate().is_ok());
        plan.strategies.push(StrategyKind::ManualFile);
        let err = ExperimentConfig::new(plan.clone()).validate().unwrap_err();
        assert!(err.to_string().contains("manual_samples"));
        plan.strategies = vec![StrategyKind::Random];
        plan.shots = vec![0];
        plan.models = vec![ModelKind::Vote];
        assert!(ExperimentConfig::new(plan).validate().is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn plan_defaults_from_json() {
        let plan: ExperimentPlan = serde_json::from_str(
            r#"{"items": [{"responses": "a", "exemplars": "b", "manual_samples": {"3": "c"}}],
                "strategies": ["random", "manual"]}"#,
        )
        .unwrap();
        assert_eq!(plan.seeds, [0, 1, 2, 3, 4]);
        assert_eq!(plan.models.len(), 5);
        assert_eq!(plan.items[0].manual_samples[&3], PathBuf::from("c"));
        assert_eq!(plan.strategies[1], StrategyKind::ManualFile);
    }
}
