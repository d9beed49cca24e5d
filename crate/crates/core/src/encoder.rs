//! The encoder contract: next-sentence-prediction probability for a text
//! pair and a fixed-length embedding for a single text.
//!
//! Concrete backends implement [`Encoder`]. This module ships
//! [`MockEncoder`], a pure rule-driven backend used as a test oracle; the
//! pretrained transformer backend lives in its own crate.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::fewshot::{FineTuneConfig, TrainingPair};

pub const MIN_SEQUENCE_LENGTH: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("backend failure: {message}")]
    Backend {
        message: String,
        #[source]
        source: Option<Box<dyn std::error::Error + Send + Sync>>,
    },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("fine-tuning needs at least one training pair")]
    NoTrainingPairs,
}

impl EncoderError {
    pub fn backend(message: impl Into<String>) -> Self {
        EncoderError::Backend {
            message: message.into(),
            source: None,
        }
    }

    pub fn backend_with<E>(message: impl Into<String>, source: E) -> Self
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        EncoderError::Backend {
            message: message.into(),
            source: Some(Box::new(source)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Pretrained,
    Mock,
}

/// What a backend can do and how callers may use it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Stable identifier recorded in report metadata.
    pub identifier: String,
    pub max_sequence_length: usize,
    pub embedding_dim: usize,
    /// Whether concurrent inference calls on one handle are allowed.
    pub concurrent: bool,
    pub trainable: bool,
    /// Pair convention: `[CLS] a [SEP] b [SEP]` when true, `[CLS] a [SEP] b`
    /// otherwise.
    pub trailing_separator: bool,
}

/// A sentence representation of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Self {
        Embedding(vector)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `[marker; response; separator; exemplar]` with per-token segment labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    /// Number of first-segment tokens kept after truncation.
    pub first_len: usize,
    /// Number of second-segment tokens kept after truncation.
    pub second_len: usize,
}

impl EncodedPair {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Token ids of the first segment (between marker and separator).
    pub fn first_segment(&self) -> &[u32] {
        &self.token_ids[1..1 + self.first_len]
    }

    pub fn second_segment(&self) -> &[u32] {
        let start = 2 + self.first_len;
        &self.token_ids[start..start + self.second_len]
    }
}

/// Longest-first pairwise truncation on token counts: drop one token at a
/// time from the tail of whichever segment is longer (the second one on a
/// tie) until both fit in `budget`. Returns the kept lengths.
pub fn truncate_longest_first(first: usize, second: usize, budget: usize) -> (usize, usize) {
    let (mut a, mut b) = (first, second);
    while a + b > budget {
        if a > b {
            a -= 1;
        } else {
            b -= 1;
        }
    }
    (a, b)
}

/// Special token ids and pairing convention of a tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLayout {
    pub cls_id: u32,
    pub sep_id: u32,
    pub trailing_separator: bool,
    pub max_sequence_length: usize,
}

impl PairLayout {
    fn special_tokens(&self) -> usize {
        if self.trailing_separator {
            3
        } else {
            2
        }
    }

    pub fn assemble(&self, first: &[u32], second: &[u32]) -> EncodedPair {
        let budget = self.max_sequence_length.saturating_sub(self.special_tokens());
        let (a, b) = truncate_longest_first(first.len(), second.len(), budget);
        let mut token_ids = Vec::with_capacity(a + b + self.special_tokens());
        let mut segment_ids = Vec::with_capacity(token_ids.capacity());
        token_ids.push(self.cls_id);
        token_ids.extend_from_slice(&first[..a]);
        token_ids.push(self.sep_id);
        segment_ids.resize(token_ids.len(), 0);
        token_ids.extend_from_slice(&second[..b]);
        if self.trailing_separator {
            token_ids.push(self.sep_id);
        }
        segment_ids.resize(token_ids.len(), 1);
        EncodedPair {
            token_ids,
            segment_ids,
            first_len: a,
            second_len: b,
        }
    }

    /// `[marker; text; separator]`, truncated from the tail.
    pub fn single(&self, text: &[u32]) -> Vec<u32> {
        let keep = text.len().min(self.max_sequence_length.saturating_sub(2));
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(self.cls_id);
        ids.extend_from_slice(&text[..keep]);
        ids.push(self.sep_id);
        ids
    }
}

/// Result of adapting a backend on labeled pairs.
pub struct FineTuned {
    pub backend: Arc<dyn Encoder>,
    /// Mean binary cross-entropy per epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

impl std::fmt::Debug for FineTuned {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FineTuned")
            .field("backend", &self.backend.descriptor().identifier)
            .field("epoch_losses", &self.epoch_losses)
            .finish()
    }
}

pub trait Encoder: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn build_pair_input(&self, response_text: &str, exemplar_text: &str) -> EncodedPair;

    /// Probability that `text_b` is a same-context continuation of `text_a`.
    fn nsp_probability(&self, text_a: &str, text_b: &str) -> Result<f64, EncoderError>;

    /// One probability per candidate; backends may batch the forward pass.
    fn nsp_probabilities(&self, text_a: &str, candidates: &[&str]) -> Result<Vec<f64>, EncoderError> {
        candidates
            .iter()
            .map(|b| self.nsp_probability(text_a, b))
            .collect()
    }

    fn embed(&self, text: &str) -> Result<Embedding, EncoderError>;

    /// Returns a new, adapted backend; `self` is left untouched.
    fn finetune(
        &self,
        _pairs: &[TrainingPair],
        _config: &FineTuneConfig,
    ) -> Result<FineTuned, EncoderError> {
        Err(EncoderError::Unsupported(format!(
            "{:?} backend cannot be fine-tuned",
            self.descriptor().kind
        )))
    }

    fn save_checkpoint(&self, _dir: &std::path::Path) -> Result<(), EncoderError> {
        Err(EncoderError::Unsupported(format!(
            "{:?} backend has no checkpoint format",
            self.descriptor().kind
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// The pooled `[CLS]` representation that feeds the NSP head.
    #[default]
    Pooled,
    /// Attention-masked mean of the last hidden layer.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Device {
    #[default]
    Cpu,
    Accelerator,
}

/// The `backend` block of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub path: Option<std::path::PathBuf>,
    pub max_sequence_length: usize,
    pub pooling: Pooling,
    pub device: Device,
    pub mock: Option<MockSpec>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            path: None,
            max_sequence_length: 512,
            pooling: Pooling::Pooled,
            device: Device::Cpu,
            mock: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.max_sequence_length < MIN_SEQUENCE_LENGTH {
            return Err(EncoderError::InvalidConfig(format!(
                "max_sequence_length must be at least {MIN_SEQUENCE_LENGTH}, got {}",
                self.max_sequence_length
            )));
        }
        match self.kind {
            BackendKind::Pretrained if self.path.is_none() => Err(EncoderError::InvalidConfig(
                "pretrained backend needs a checkpoint path".into(),
            )),
            BackendKind::Pretrained if self.mock.is_some() => Err(EncoderError::InvalidConfig(
                "pretrained backend cannot carry a mock block".into(),
            )),
            BackendKind::Mock if self.path.is_some() => Err(EncoderError::InvalidConfig(
                "mock backend cannot carry a checkpoint path".into(),
            )),
            _ => Ok(()),
        }
    }
}

// --- mock backend ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NspRule {
    /// Token-set Jaccard overlap; two empty segments score 0.
    Jaccard {},
    Constant { probability: f64 },
    /// Exact `(text_a, text_b)` lookup with a fallback.
    Table {
        entries: Vec<NspEntry>,
        default: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NspEntry {
    pub text_a: String,
    pub text_b: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbedRule {
    /// Count of each alphabet character in the lowercased text.
    LetterCounts { alphabet: String },
    /// Occurrence count of each keyword among the tokens.
    KeywordCounts { keywords: Vec<String> },
    /// Token counts hashed into `dim` buckets.
    HashedBagOfWords { dim: usize },
    /// Exact text lookup with a fallback vector.
    Table {
        entries: Vec<EmbedEntry>,
        default: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedEntry {
    pub text: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    pub nsp_rule: NspRule,
    pub embed_rule: EmbedRule,
    /// Any text containing this token makes the call fail.
    #[serde(default)]
    pub fail_on: Option<String>,
}

impl Default for MockSpec {
    fn default() -> Self {
        MockSpec {
            nsp_rule: NspRule::Jaccard {},
            embed_rule: EmbedRule::HashedBagOfWords { dim: 64 },
            fail_on: None,
        }
    }
}

const MOCK_CLS: u32 = 101;
const MOCK_SEP: u32 = 102;
const MOCK_VOCAB_OFFSET: u32 = 1000;
const MOCK_VOCAB_SIZE: u32 = 30_000;

fn fnv1a(token: &str) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for byte in token.bytes() {
        hash ^= u32::from(byte);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

fn mock_token_id(token: &str) -> u32 {
    MOCK_VOCAB_OFFSET + fnv1a(token) % MOCK_VOCAB_SIZE
}

/// Whitespace tokenization, lowercased.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Deterministic rule-driven backend. Always safe for concurrent use.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    spec: MockSpec,
    layout: PairLayout,
    dim: usize,
}

impl MockEncoder {
    pub fn new(spec: MockSpec, max_sequence_length: usize) -> Result<Self, EncoderError> {
        if max_sequence_length < MIN_SEQUENCE_LENGTH {
            return Err(EncoderError::InvalidConfig(format!(
                "max_sequence_length must be at least {MIN_SEQUENCE_LENGTH}"
            )));
        }
        let check_p = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(EncoderError::InvalidConfig(format!(
                    "mock probability {p} outside [0, 1]"
                )))
            }
        };
        match &spec.nsp_rule {
            NspRule::Jaccard {} => {}
            NspRule::Constant { probability } => check_p(*probability)?,
            NspRule::Table { entries, default } => {
                check_p(*default)?;
                for e in entries {
                    check_p(e.probability)?;
                }
            }
        }
        let dim = match &spec.embed_rule {
            EmbedRule::LetterCounts { alphabet } => alphabet.chars().count(),
            EmbedRule::KeywordCounts { keywords } => keywords.len(),
            EmbedRule::HashedBagOfWords { dim } => *dim,
            EmbedRule::Table { entries, default } => {
                let d = default.len();
                for v in entries.iter().map(|e| &e.vector).chain([default]) {
                    if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                        return Err(EncoderError::InvalidConfig(
                            "mock embedding table needs finite vectors of one length".into(),
                        ));
                    }
                }
                d
            }
        };
        if dim == 0 {
            return Err(EncoderError::InvalidConfig(
                "mock embedding dimension must be at least 1".into(),
            ));
        }
        Ok(MockEncoder {
            spec,
            layout: PairLayout {
                cls_id: MOCK_CLS,
                sep_id: MOCK_SEP,
                trailing_separator: false,
                max_sequence_length,
            },
            dim,
        })
    }

    pub fn spec(&self) -> &MockSpec {
        &self.spec
    }

    fn check_failure(&self, tokens: &[String]) -> Result<(), EncoderError> {
        match &self.spec.fail_on {
            Some(bad) if tokens.iter().any(|t| t == &bad.to_lowercase()) => Err(
                EncoderError::backend(format!("mock backend refuses token {bad:?}")),
            ),
            _ => Ok(()),
        }
    }

    /// Segments as they survive pair truncation.
    fn truncated_pair(&self, a: &str, b: &str) -> (Vec<String>, Vec<String>) {
        let mut ta = whitespace_tokens(a);
        let mut tb = whitespace_tokens(b);
        let budget = self.layout.max_sequence_length - 2;
        let (ka, kb) = truncate_longest_first(ta.len(), tb.len(), budget);
        ta.truncate(ka);
        tb.truncate(kb);
        (ta, tb)
    }
}

pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let sa: HashSet<&str> = a.iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.iter().map(String::as_str).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

impl Encoder for MockEncoder {
    fn descriptor(&self) -> BackendDescriptor {
        let spec_json = serde_json::to_string(&self.spec).expect("mock spec serializes");
        BackendDescriptor {
            kind: BackendKind::Mock,
            identifier: format!("mock:{:08x}", fnv1a(&spec_json)),
            max_sequence_length: self.layout.max_sequence_length,
            embedding_dim: self.dim,
            concurrent: true,
            trainable: false,
            trailing_separator: false,
        }
    }

    fn build_pair_input(&self, response_text: &str, exemplar_text: &str) -> EncodedPair {
        let a: Vec<u32> = whitespace_tokens(response_text)
            .iter()
            .map(|t| mock_token_id(t))
            .collect();
        let b: Vec<u32> = whitespace_tokens(exemplar_text)
            .iter()
            .map(|t| mock_token_id(t))
            .collect();
        self.layout.assemble(&a, &b)
    }

    fn nsp_probability(&self, text_a: &str, text_b: &str) -> Result<f64, EncoderError> {
        let (ta, tb) = self.truncated_pair(text_a, text_b);
        self.check_failure(&ta)?;
        self.check_failure(&tb)?;
        Ok(match &self.spec.nsp_rule {
            NspRule::Jaccard {} => jaccard(&ta, &tb),
            NspRule::Constant { probability } => *probability,
            NspRule::Table { entries, default } => entries
                .iter()
                .find(|e| e.text_a == text_a && e.text_b == text_b)
                .map_or(*default, |e| e.probability),
        })
    }

    fn embed(&self, text: &str) -> Result<Embedding, EncoderError> {
        let mut tokens = whitespace_tokens(text);
        tokens.truncate(self.layout.max_sequence_length - 2);
        self.check_failure(&tokens)?;
        let vector = match &self.spec.embed_rule {
            EmbedRule::LetterCounts { alphabet } => {
                let index: BTreeMap<char, usize> =
                    alphabet.chars().enumerate().map(|(i, c)| (c, i)).collect();
                let mut v = vec![0.0; self.dim];
                for c in tokens.iter().flat_map(|t| t.chars()) {
                    if let Some(&i) = index.get(&c) {
                        v[i] += 1.0;
                    }
                }
                v
            }
            EmbedRule::KeywordCounts { keywords } => keywords
                .iter()
                .map(|k| {
                    let k = k.to_lowercase();
                    tokens.iter().filter(|t| **t == k).count() as f64
                })
                .collect(),
            EmbedRule::HashedBagOfWords { dim } => {
                let mut v = vec![0.0; *dim];
                for t in &tokens {
                    v[fnv1a(t) as usize % dim] += 1.0;
                }
                v
            }
            EmbedRule::Table { entries, default } => entries
                .iter()
                .find(|e| e.text == text)
                .map_or_else(|| default.clone(), |e| e.vector.clone()),
        };
        Ok(Embedding::new(vector))
    }
}
