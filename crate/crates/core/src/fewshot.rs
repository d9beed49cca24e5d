//! Few-shot adaptation: choosing k labeled responses per level, turning
//! them into NSP training pairs, and handing those to a trainable backend.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusError, ExemplarSet, GradeLevel, LabeledResponse};
use crate::encoder::{Encoder, EncoderError, FineTuned};

#[derive(Debug, thiserror::Error)]
pub enum FewShotError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("sample set needs exactly {k} responses per level: {}", describe_counts(.problems))]
    WrongLevelCounts {
        k: usize,
        /// `(level, found)` for every level that is off.
        problems: Vec<(u32, usize)>,
    },
    #[error("invalid sample strategy: {0}")]
    InvalidStrategy(String),
    #[error("sample {response_id:?} has grade {gold}, exemplar set has {num_levels} levels")]
    LevelOutOfRange {
        response_id: String,
        gold: GradeLevel,
        num_levels: u32,
    },
}

fn describe_counts(problems: &[(u32, usize)]) -> String {
    let missing: Vec<String> = problems
        .iter()
        .filter(|(_, n)| *n == 0)
        .map(|(l, _)| l.to_string())
        .collect();
    let mut parts = Vec::new();
    if !missing.is_empty() {
        let noun = if missing.len() == 1 { "level" } else { "levels" };
        parts.push(format!("{noun} {} missing", missing.join(" and ")));
    }
    for (level, n) in problems.iter().filter(|(_, n)| *n > 0) {
        parts.push(format!("level {level} has {n}"));
    }
    parts.join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub response_text: String,
    pub exemplar_text: String,
    /// True when the response's gold grade is the exemplar's level.
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableScope {
    /// Pooler and NSP classifier only.
    #[default]
    HeadOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub trainable_scope: TrainableScope,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 10,
            learning_rate: 2e-5,
            batch_size: 4,
            trainable_scope: TrainableScope::HeadOnly,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(EncoderError::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(EncoderError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Random,
    #[serde(alias = "manual")]
    ManualFile,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::ManualFile => "manual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleStrategy {
    pub kind: StrategyKind,
    pub manual_path: Option<PathBuf>,
}

impl SampleStrategy {
    pub fn random() -> Self {
        SampleStrategy {
            kind: StrategyKind::Random,
            manual_path: None,
        }
    }

    pub fn manual(path: impl Into<PathBuf>) -> Self {
        SampleStrategy {
            kind: StrategyKind::ManualFile,
            manual_path: Some(path.into()),
        }
    }

    fn validate(&self) -> Result<(), FewShotError> {
        match (self.kind, &self.manual_path) {
            (StrategyKind::Random, None) | (StrategyKind::ManualFile, Some(_)) => Ok(()),
            (StrategyKind::Random, Some(_)) => Err(FewShotError::InvalidStrategy(
                "random strategy takes no sample file".into(),
            )),
            (StrategyKind::ManualFile, None) => Err(FewShotError::InvalidStrategy(
                "manual strategy needs a sample file".into(),
            )),
        }
    }
}

fn check_exact_counts(
    samples: &[LabeledResponse],
    k: usize,
    num_levels: u32,
) -> Result<(), FewShotError> {
    let mut counts: BTreeMap<u32, usize> = (0..num_levels).map(|l| (l, 0)).collect();
    for s in samples {
        *counts.entry(s.gold.0).or_default() += 1;
    }
    let problems: Vec<(u32, usize)> = counts.into_iter().filter(|(_, n)| *n != k).collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(FewShotError::WrongLevelCounts { k, problems })
    }
}

/// Exactly `k` labeled responses for each of `num_levels` levels.
///
/// The random kind draws the same responses as the training side of
/// [`corpus::few_shot_split`] with the same seed. The manual kind returns
/// the file's records verbatim after checking the per-level counts.
pub fn select_samples(
    pool: &[LabeledResponse],
    k: usize,
    strategy: &SampleStrategy,
    seed: u64,
    item_id: &str,
    num_levels: u32,
) -> Result<Vec<LabeledResponse>, FewShotError> {
    strategy.validate()?;
    match (&strategy.kind, &strategy.manual_path) {
        (StrategyKind::ManualFile, Some(path)) => {
            let samples = corpus::load_responses(path, item_id, num_levels)?;
            check_exact_counts(&samples, k, num_levels)?;
            Ok(samples)
        }
        _ => {
            let levels = corpus::shuffled_levels(pool, seed)?;
            for level in 0..num_levels {
                let available = levels.get(&GradeLevel(level)).map_or(0, Vec::len);
                if available < k {
                    return Err(CorpusError::InsufficientSamples {
                        level: GradeLevel(level),
                        available,
                        required: k,
                    }
                    .into());
                }
            }
            let split = corpus::few_shot_split(pool, k, seed)?;
            Ok(split.train)
        }
    }
}

/// One pair per (sample, level), sample-major; positive iff the sample's
/// gold grade equals the level.
pub fn build_pairs(
    samples: &[LabeledResponse],
    exemplars: &ExemplarSet,
) -> Result<Vec<TrainingPair>, FewShotError> {
    let mut pairs = Vec::with_capacity(samples.len() * exemplars.num_levels() as usize);
    for sample in samples {
        if sample.gold.0 >= exemplars.num_levels() {
            return Err(FewShotError::LevelOutOfRange {
                response_id: sample.response_id.clone(),
                gold: sample.gold,
                num_levels: exemplars.num_levels(),
            });
        }
        for (level, text) in exemplars.iter() {
            pairs.push(TrainingPair {
                response_text: sample.text.clone(),
                exemplar_text: text.to_owned(),
                label: sample.gold == level,
            });
        }
    }
    Ok(pairs)
}

/// Adapts `backend` on `pairs`; the input backend is never modified.
pub fn finetune(
    backend: &dyn Encoder,
    pairs: &[TrainingPair],
    config: &FineTuneConfig,
) -> Result<FineTuned, EncoderError> {
    if pairs.is_empty() {
        return Err(EncoderError::NoTrainingPairs);
    }
    config.validate()?;
    backend.finetune(pairs, config)
}
