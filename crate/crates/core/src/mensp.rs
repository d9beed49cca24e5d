//! Two-stage exemplar-matching scorer.
//!
//! Stage one compares the response embedding with the perfect exemplar's;
//! a cosine strictly below the threshold grades the response zero. The
//! threshold is the mean cosine of every other exemplar to the perfect one.
//! Stage two pairs the response with each candidate exemplar and takes the
//! grade whose pair the NSP head finds most coherent, lowest grade on ties.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ExemplarSet, GradeLevel};
use crate::encoder::{Embedding, Encoder, EncoderError};

#[derive(Debug, thiserror::Error)]
pub enum MenspError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("degenerate embedding: {0} has zero norm")]
    DegenerateEmbedding(String),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("backend returned a non-finite embedding for {0}")]
    NonFiniteEmbedding(String),
}

pub type Result<T, E = MenspError> = std::result::Result<T, E>;

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(x: &Embedding, y: &Embedding) -> Result<f64> {
    let (x, y) = (x.as_slice(), y.as_slice());
    if x.len() != y.len() {
        return Err(MenspError::DimensionMismatch(x.len(), y.len()));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nx == 0.0 {
        return Err(MenspError::DegenerateEmbedding("first vector".into()));
    }
    if ny == 0.0 {
        return Err(MenspError::DegenerateEmbedding("second vector".into()));
    }
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// Mean cosine of every non-perfect exemplar to the perfect one.
pub fn threshold_from_embeddings(embeddings: &BTreeMap<GradeLevel, Embedding>) -> Result<f64> {
    let (perfect_level, perfect) = embeddings
        .iter()
        .next_back()
        .expect("exemplar embeddings are never empty");
    let mut sum = 0.0;
    let mut n = 0usize;
    for (level, z) in embeddings.range(..perfect_level) {
        sum += cosine(z, perfect).map_err(|e| match e {
            MenspError::DegenerateEmbedding(_) => {
                MenspError::DegenerateEmbedding(format!("exemplar embedding (level {level} or top)"))
            }
            other => other,
        })?;
        n += 1;
    }
    Ok(sum / n as f64)
}

fn embed_checked(backend: &dyn Encoder, text: &str, what: &str) -> Result<Embedding> {
    let z = backend.embed(text)?;
    if !z.is_finite() {
        return Err(MenspError::NonFiniteEmbedding(what.to_owned()));
    }
    Ok(z)
}

fn embed_exemplars(
    backend: &dyn Encoder,
    exemplars: &ExemplarSet,
) -> Result<BTreeMap<GradeLevel, Embedding>> {
    exemplars
        .iter()
        .map(|(level, text)| Ok((level, embed_checked(backend, text, &format!("exemplar {level}"))?)))
        .collect()
}

pub fn compute_threshold(backend: &dyn Encoder, exemplars: &ExemplarSet) -> Result<f64> {
    threshold_from_embeddings(&embed_exemplars(backend, exemplars)?)
}

/// Stage-one rule: strictly below the threshold means zero.
pub fn below_threshold(cosine_to_perfect: f64, theta: f64) -> bool {
    cosine_to_perfect < theta
}

/// Highest probability wins; ties go to the lowest grade.
pub fn argmax_lowest(probabilities: &BTreeMap<GradeLevel, f64>) -> Option<GradeLevel> {
    let mut best: Option<(GradeLevel, f64)> = None;
    for (&level, &p) in probabilities {
        match best {
            Some((_, top)) if p <= top => {}
            _ => best = Some((level, p)),
        }
    }
    best.map(|(level, _)| level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    LowestGrade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerOptions {
    /// Whether level 0 competes in the NSP argmax.
    pub include_zero_in_matching: bool,
    pub tie_break: TieBreak,
}

impl Default for ScorerOptions {
    fn default() -> Self {
        ScorerOptions {
            include_zero_in_matching: true,
            tie_break: TieBreak::LowestGrade,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ZeroIdentified,
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFlag {
    /// Empty or whitespace-only response; the backend was not consulted.
    EmptyResponse,
    /// The response embedding had zero norm.
    DegenerateEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub grade: GradeLevel,
    pub stage: Stage,
    /// `None` only when no response embedding could be compared.
    pub cosine_to_perfect: Option<f64>,
    pub nsp_probabilities: BTreeMap<GradeLevel, f64>,
    #[serde(default)]
    pub flags: Vec<ScoreFlag>,
}

impl ScoreResult {
    fn zero(cosine_to_perfect: Option<f64>, flags: Vec<ScoreFlag>) -> Self {
        ScoreResult {
            grade: GradeLevel(0),
            stage: Stage::ZeroIdentified,
            cosine_to_perfect,
            nsp_probabilities: BTreeMap::new(),
            flags,
        }
    }
}

/// Exemplars bound to one backend, with the threshold and exemplar
/// embeddings cached. Rebuild it whenever the backend changes.
#[derive(Clone)]
pub struct MenspScorer {
    backend: Arc<dyn Encoder>,
    exemplars: ExemplarSet,
    theta: f64,
    options: ScorerOptions,
    exemplar_embeddings: BTreeMap<GradeLevel, Embedding>,
}

impl std::fmt::Debug for MenspScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MenspScorer")
            .field("backend", &self.backend.descriptor().identifier)
            .field("item_id", &self.exemplars.item_id())
            .field("theta", &self.theta)
            .field("options", &self.options)
            .finish()
    }
}

impl MenspScorer {
    pub fn new(
        backend: Arc<dyn Encoder>,
        exemplars: ExemplarSet,
        options: ScorerOptions,
    ) -> Result<Self> {
        let exemplar_embeddings = embed_exemplars(backend.as_ref(), &exemplars)?;
        let theta = threshold_from_embeddings(&exemplar_embeddings)?;
        Ok(MenspScorer {
            backend,
            exemplars,
            theta,
            options,
            exemplar_embeddings,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn options(&self) -> ScorerOptions {
        self.options
    }

    pub fn exemplars(&self) -> &ExemplarSet {
        &self.exemplars
    }

    pub fn backend(&self) -> &Arc<dyn Encoder> {
        &self.backend
    }

    pub fn exemplar_embedding(&self, level: GradeLevel) -> Option<&Embedding> {
        self.exemplar_embeddings.get(&level)
    }

    fn perfect_embedding(&self) -> &Embedding {
        &self.exemplar_embeddings[&self.exemplars.perfect_level()]
    }

    pub fn cosine_to_perfect(&self, response_text: &str) -> Result<f64> {
        let z = embed_checked(self.backend.as_ref(), response_text, "response")?;
        cosine(&z, self.perfect_embedding())
    }

    pub fn is_zero(&self, response_text: &str) -> Result<bool> {
        Ok(below_threshold(self.cosine_to_perfect(response_text)?, self.theta))
    }

    pub fn match_exemplars(
        &self,
        response_text: &str,
    ) -> Result<(GradeLevel, BTreeMap<GradeLevel, f64>)> {
        let candidates: Vec<(GradeLevel, &str)> = self
            .exemplars
            .iter()
            .filter(|(level, _)| self.options.include_zero_in_matching || level.0 > 0)
            .collect();
        let texts: Vec<&str> = candidates.iter().map(|(_, t)| *t).collect();
        let probs = self.backend.nsp_probabilities(response_text, &texts)?;
        if probs.len() != texts.len() {
            return Err(EncoderError::backend(format!(
                "backend returned {} probabilities for {} candidates",
                probs.len(),
                texts.len()
            ))
            .into());
        }
        let map: BTreeMap<GradeLevel, f64> = candidates
            .iter()
            .map(|(level, _)| *level)
            .zip(probs)
            .collect();
        let grade = argmax_lowest(&map).expect("at least one candidate level");
        Ok((grade, map))
    }

    pub fn score(&self, response_text: &str) -> Result<ScoreResult> {
        if response_text.trim().is_empty() {
            return Ok(ScoreResult::zero(None, vec![ScoreFlag::EmptyResponse]));
        }
        let cos = match self.cosine_to_perfect(response_text) {
            Ok(c) => c,
            Err(MenspError::DegenerateEmbedding(_)) => {
                return Ok(ScoreResult::zero(None, vec![ScoreFlag::DegenerateEmbedding]))
            }
            Err(e) => return Err(e),
        };
        if below_threshold(cos, self.theta) {
            return Ok(ScoreResult::zero(Some(cos), Vec::new()));
        }
        let (grade, nsp_probabilities) = self.match_exemplars(response_text)?;
        Ok(ScoreResult {
            grade,
            stage: Stage::Matched,
            cosine_to_perfect: Some(cos),
            nsp_probabilities,
            flags: Vec::new(),
        })
    }

    /// Scores every response; failures stay in their slot. Runs in parallel
    /// when the backend allows concurrent calls, output order is input order.
    pub fn batch_score<S: AsRef<str> + Sync>(&self, responses: &[S]) -> Vec<Result<ScoreResult>> {
        if self.backend.descriptor().concurrent {
            responses
                .par_iter()
                .map(|r| self.score(r.as_ref()))
                .collect()
        } else {
            responses.iter().map(|r| self.score(r.as_ref())).collect()
        }
    }
}
