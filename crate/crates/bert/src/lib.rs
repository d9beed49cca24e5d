//! Pretrained BERT backend: next-sentence probabilities from the NSP head
//! and pooled (or token-mean) sentence embeddings, CPU only.
//!
//! A checkpoint directory holds `config.json`, `model.safetensors` (or
//! `pytorch_model.bin`) and `tokenizer.json` (or `vocab.txt`), as
//! distributed for BERT pre-training checkpoints such as
//! `bert-base-uncased`.
//!
//! The NSP head's logit 0 is "B follows A", so P(same context) is the
//! softmax mass on index 0. Pairs are laid out `[CLS] a [SEP] b [SEP]`.

mod config;
mod model;
mod tokenize;
mod toy;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use nspgrade_core::encoder::{
    BackendConfig, BackendDescriptor, BackendKind, Device as DeviceKind, FineTuned, PairLayout, Pooling,
};
use nspgrade_core::fewshot::{FineTuneConfig, TrainableScope, TrainingPair};
use nspgrade_core::{Embedding, EncodedPair, Encoder, EncoderError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{BertConfig, HiddenAct};
pub use toy::{write_toy_checkpoint, ToyCheckpoint};

use model::{Batch, Params};
use tokenize::TextTokenizer;

pub(crate) const CONFIG_FILE: &str = "config.json";
pub(crate) const WEIGHTS_FILE: &str = "model.safetensors";
const TORCH_WEIGHTS_FILE: &str = "pytorch_model.bin";

/// Rows per forward pass when caching frozen-body features.
const FEATURE_CHUNK: usize = 16;

fn candle_err(what: &str) -> impl Fn(candle_core::Error) -> EncoderError + '_ {
    move |e| EncoderError::backend_with(what, e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub max_sequence_length: usize,
    pub pooling: Pooling,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_sequence_length: 512,
            pooling: Pooling::Pooled,
        }
    }
}

pub struct BertNspEncoder {
    config: BertConfig,
    params: Params,
    tokenizer: Arc<TextTokenizer>,
    layout: PairLayout,
    pooling: Pooling,
    identifier: String,
    device: Device,
}

impl std::fmt::Debug for BertNspEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BertNspEncoder")
            .field("identifier", &self.identifier)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn read_weights(dir: &Path) -> Result<Vec<(String, Tensor)>, EncoderError> {
    let safetensors = dir.join(WEIGHTS_FILE);
    let torch = dir.join(TORCH_WEIGHTS_FILE);
    if safetensors.is_file() {
        candle_core::safetensors::load(&safetensors, &Device::Cpu)
            .map(|m| m.into_iter().collect())
            .map_err(|e| EncoderError::backend_with(format!("reading {}", safetensors.display()), e))
    } else if torch.is_file() {
        candle_core::pickle::read_all(&torch)
            .map_err(|e| EncoderError::backend_with(format!("reading {}", torch.display()), e))
    } else {
        Err(EncoderError::InvalidConfig(format!(
            "{} has neither {WEIGHTS_FILE} nor {TORCH_WEIGHTS_FILE}",
            dir.display()
        )))
    }
}

impl BertNspEncoder {
    pub fn load(dir: impl AsRef<Path>, options: LoadOptions) -> Result<Self, EncoderError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(EncoderError::InvalidConfig(format!(
                "checkpoint directory {} does not exist",
                dir.display()
            )));
        }
        let config_path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&config_path)
            .map_err(|e| EncoderError::backend_with(format!("reading {}", config_path.display()), e))?;
        let config: BertConfig = serde_json::from_str(&text)
            .map_err(|e| EncoderError::InvalidConfig(format!("{}: {e}", config_path.display())))?;
        config.validate().map_err(EncoderError::InvalidConfig)?;
        let params = Params::from_tensors(&config, read_weights(dir)?)
            .map_err(|m| EncoderError::InvalidConfig(format!("{}: {m}", dir.display())))?;
        let tokenizer = TextTokenizer::load(dir)?;
        let max_len = options.max_sequence_length.min(config.max_position_embeddings);
        if max_len < nspgrade_core::encoder::MIN_SEQUENCE_LENGTH {
            return Err(EncoderError::InvalidConfig(format!(
                "usable sequence length {max_len} is below the minimum"
            )));
        }
        let canonical = dir.canonicalize().unwrap_or_else(|_| PathBuf::from(dir));
        Ok(BertNspEncoder {
            layout: PairLayout {
                cls_id: tokenizer.cls_id,
                sep_id: tokenizer.sep_id,
                trailing_separator: true,
                max_sequence_length: max_len,
            },
            identifier: format!("bert:{}", canonical.display()),
            config,
            params,
            tokenizer: Arc::new(tokenizer),
            pooling: options.pooling,
            device: Device::Cpu,
        })
    }

    /// Loads the checkpoint named by a `backend` config block.
    pub fn from_backend_config(cfg: &BackendConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        if cfg.kind != BackendKind::Pretrained {
            return Err(EncoderError::InvalidConfig(
                "backend block does not describe a pretrained checkpoint".into(),
            ));
        }
        if cfg.device == DeviceKind::Accelerator {
            return Err(EncoderError::Unsupported(
                "this build runs on the CPU only; set device to \"cpu\"".into(),
            ));
        }
        let path = cfg.path.as_ref().expect("validated");
        Self::load(
            path,
            LoadOptions {
                max_sequence_length: cfg.max_sequence_length,
                pooling: cfg.pooling,
            },
        )
    }

    pub fn config(&self) -> &BertConfig {
        &self.config
    }

    fn encode_pair(&self, a: &str, b: &str) -> Result<EncodedPair, EncoderError> {
        let first = self.tokenizer.ids(a)?;
        let second = self.tokenizer.ids(b)?;
        Ok(self.layout.assemble(&first, &second))
    }

    fn batch(&self, pairs: &[&EncodedPair]) -> Result<Batch, EncoderError> {
        let rows: Vec<(&[u32], &[u32])> = pairs
            .iter()
            .map(|p| (p.token_ids.as_slice(), p.segment_ids.as_slice()))
            .collect();
        Batch::new(&rows, self.config.pad_token_id, &self.device).map_err(candle_err("building batch"))
    }

    /// `[CLS]` hidden states of the pairs, `[n, hidden]`.
    fn cls_states(&self, params: &Params, pairs: &[&EncodedPair]) -> Result<Tensor, EncoderError> {
        let batch = self.batch(pairs)?;
        let hidden = model::encode(params, &self.config, &batch).map_err(candle_err("encoder forward"))?;
        model::first_token(&hidden).map_err(candle_err("encoder forward"))
    }

    fn same_context(&self, pairs: &[&EncodedPair]) -> Result<Vec<f64>, EncoderError> {
        let cls = self.cls_states(&self.params, pairs)?;
        let logits = model::pool(&self.params, &cls)
            .and_then(|p| model::nsp_logits(&self.params, &p))
            .map_err(candle_err("NSP head"))?;
        let probs = candle_nn::ops::softmax(&logits, D::Minus1)
            .and_then(|p| p.narrow(1, 0, 1)?.squeeze(1)?.to_vec1::<f32>())
            .map_err(candle_err("NSP head"))?;
        Ok(probs.into_iter().map(|p| f64::from(p).clamp(0.0, 1.0)).collect())
    }

    fn with_params(&self, params: Params, identifier: String) -> Self {
        BertNspEncoder {
            config: self.config.clone(),
            params,
            tokenizer: Arc::clone(&self.tokenizer),
            layout: self.layout,
            pooling: self.pooling,
            identifier,
            device: self.device.clone(),
        }
    }
}

impl Encoder for BertNspEncoder {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Pretrained,
            identifier: self.identifier.clone(),
            max_sequence_length: self.layout.max_sequence_length,
            embedding_dim: self.config.hidden_size,
            concurrent: true,
            trainable: true,
            trailing_separator: true,
        }
    }

    fn build_pair_input(&self, response_text: &str, exemplar_text: &str) -> EncodedPair {
        let first = self.tokenizer.ids(response_text).unwrap_or_default();
        let second = self.tokenizer.ids(exemplar_text).unwrap_or_default();
        self.layout.assemble(&first, &second)
    }

    fn nsp_probability(&self, text_a: &str, text_b: &str) -> Result<f64, EncoderError> {
        let pair = self.encode_pair(text_a, text_b)?;
        Ok(self.same_context(&[&pair])?[0])
    }

    fn nsp_probabilities(&self, text_a: &str, candidates: &[&str]) -> Result<Vec<f64>, EncoderError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let pairs = candidates
            .iter()
            .map(|b| self.encode_pair(text_a, b))
            .collect::<Result<Vec<_>, _>>()?;
        self.same_context(&pairs.iter().collect::<Vec<_>>())
    }

    fn embed(&self, text: &str) -> Result<Embedding, EncoderError> {
        let ids = self.layout.single(&self.tokenizer.ids(text)?);
        let segments = vec![0u32; ids.len()];
        let batch = Batch::new(&[(&ids, &segments)], self.config.pad_token_id, &self.device)
            .map_err(candle_err("building batch"))?;
        let hidden = model::encode(&self.params, &self.config, &batch).map_err(candle_err("encoder forward"))?;
        let vector = match self.pooling {
            Pooling::Pooled => model::first_token(&hidden).and_then(|c| model::pool(&self.params, &c)),
            Pooling::Mean => model::masked_mean(&hidden, batch.mask()),
        }
        .and_then(|v| v.squeeze(0)?.to_vec1::<f32>())
        .map_err(candle_err("embedding"))?;
        Ok(Embedding::new(vector.into_iter().map(f64::from).collect()))
    }

    /// AdamW on binary cross-entropy of the NSP head, with targets "is
    /// next" for positive pairs. Head-only scope trains the pooler and the
    /// NSP classifier; the frozen body's `[CLS]` states are computed once.
    /// The data order of each epoch comes from a generator seeded with
    /// `config.seed`.
    fn finetune(&self, pairs: &[TrainingPair], config: &FineTuneConfig) -> Result<FineTuned, EncoderError> {
        if pairs.is_empty() {
            return Err(EncoderError::NoTrainingPairs);
        }
        config.validate()?;
        let params = self.params.deep_copy().map_err(candle_err("copying weights"))?;
        let head_only = config.trainable_scope == TrainableScope::HeadOnly;
        let trainable = params.vars_where(|name| {
            !head_only || name.starts_with("bert.pooler.") || name.starts_with("cls.seq_relationship.")
        });
        let mut optimizer = AdamW::new(
            trainable,
            ParamsAdamW {
                lr: config.learning_rate,
                ..ParamsAdamW::default()
            },
        )
        .map_err(candle_err("optimizer"))?;

        let encoded = pairs
            .iter()
            .map(|p| self.encode_pair(&p.response_text, &p.exemplar_text))
            .collect::<Result<Vec<_>, _>>()?;
        let targets: Vec<u32> = pairs.iter().map(|p| if p.label { 0 } else { 1 }).collect();
        let frozen_cls = if head_only {
            let mut chunks = Vec::new();
            for chunk in encoded.chunks(FEATURE_CHUNK) {
                let refs: Vec<&EncodedPair> = chunk.iter().collect();
                chunks.push(self.cls_states(&params, &refs)?.detach());
            }
            Some(Tensor::cat(&chunks, 0).map_err(candle_err("caching features"))?)
        } else {
            None
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (batch_index, rows) in order.chunks(config.batch_size).enumerate() {
                let cls = match &frozen_cls {
                    Some(all) => {
                        let idx: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
                        let idx = Tensor::new(idx.as_slice(), &self.device).map_err(candle_err("batch index"))?;
                        all.index_select(&idx, 0).map_err(candle_err("batch index"))?
                    }
                    None => {
                        let refs: Vec<&EncodedPair> = rows.iter().map(|&r| &encoded[r]).collect();
                        self.cls_states(&params, &refs)?
                    }
                };
                let batch_targets: Vec<u32> = rows.iter().map(|&r| targets[r]).collect();
                let batch_targets =
                    Tensor::new(batch_targets.as_slice(), &self.device).map_err(candle_err("targets"))?;
                let loss = model::pool(&params, &cls)
                    .and_then(|p| model::nsp_logits(&params, &p))
                    .and_then(|logits| candle_nn::loss::cross_entropy(&logits, &batch_targets))
                    .map_err(candle_err("training forward"))?;
                let value = f64::from(loss.to_scalar::<f32>().map_err(candle_err("training loss"))?);
                if !value.is_finite() {
                    return Err(EncoderError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                        loss: value,
                    });
                }
                optimizer
                    .backward_step(&loss)
                    .map_err(candle_err("optimizer step"))?;
                total += value * rows.len() as f64;
            }
            epoch_losses.push(total / pairs.len() as f64);
        }

        let scope = if head_only { "head" } else { "full" };
        let identifier = format!(
            "{}+finetune(scope={scope},pairs={},epochs={},lr={},batch={},seed={})",
            self.identifier,
            pairs.len(),
            config.epochs,
            config.learning_rate,
            config.batch_size,
            config.seed
        );
        Ok(FineTuned {
            backend: Arc::new(self.with_params(params, identifier)),
            epoch_losses,
        })
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<(), EncoderError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| EncoderError::backend_with(format!("creating {}", dir.display()), e))?;
        candle_core::safetensors::save(&self.params.tensors(), dir.join(WEIGHTS_FILE))
            .map_err(candle_err("writing weights"))?;
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(dir.join(CONFIG_FILE), json)
            .map_err(|e| EncoderError::backend_with(format!("writing {CONFIG_FILE}"), e))?;
        self.tokenizer.save(dir)
    }
}
