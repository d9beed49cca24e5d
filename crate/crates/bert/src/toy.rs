//! Tiny randomly initialized checkpoints in the on-disk layout the loader
//! expects. They exercise the real code paths (tokenizer, forward pass,
//! fine-tuning, save/load) in tests without a downloaded model.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use nspgrade_core::EncoderError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{BertConfig, HiddenAct};
use crate::tokenize::VOCAB_FILE;
use crate::{CONFIG_FILE, WEIGHTS_FILE};

#[derive(Debug, Clone)]
pub struct ToyCheckpoint {
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    /// Weights are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f32,
    pub seed: u64,
    /// Whole-word vocabulary entries on top of letters, digits and their
    /// `##` continuations.
    pub words: Vec<String>,
}

impl Default for ToyCheckpoint {
    fn default() -> Self {
        ToyCheckpoint {
            hidden_size: 32,
            num_hidden_layers: 2,
            num_attention_heads: 4,
            intermediate_size: 64,
            max_position_embeddings: 128,
            init_scale: 0.1,
            seed: 0,
            words: Vec::new(),
        }
    }
}

fn vocabulary(words: &[String]) -> Vec<String> {
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let symbols = ('a'..='z').chain('0'..='9');
    for c in symbols.clone() {
        vocab.push(c.to_string());
    }
    for c in symbols {
        vocab.push(format!("##{c}"));
    }
    for p in ".,;:!?'\"()-".chars() {
        vocab.push(p.to_string());
    }
    for w in words {
        let w = w.to_lowercase();
        if !vocab.contains(&w) {
            vocab.push(w);
        }
    }
    vocab
}

pub fn write_toy_checkpoint(dir: &Path, spec: &ToyCheckpoint) -> Result<(), EncoderError> {
    let io = |what: &str, e: std::io::Error| EncoderError::backend_with(format!("writing {what}"), e);
    std::fs::create_dir_all(dir).map_err(|e| io("checkpoint directory", e))?;
    let vocab = vocabulary(&spec.words);
    let config = BertConfig {
        vocab_size: vocab.len(),
        hidden_size: spec.hidden_size,
        num_hidden_layers: spec.num_hidden_layers,
        num_attention_heads: spec.num_attention_heads,
        intermediate_size: spec.intermediate_size,
        hidden_act: HiddenAct::Gelu,
        max_position_embeddings: spec.max_position_embeddings,
        type_vocab_size: 2,
        layer_norm_eps: 1e-12,
        pad_token_id: 0,
    };
    config.validate().map_err(EncoderError::InvalidConfig)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tensors = HashMap::new();
    for (name, shape) in config.parameter_shapes() {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = if name.contains("LayerNorm.weight") {
            vec![1.0; n]
        } else if name.contains("LayerNorm.bias") {
            vec![0.0; n]
        } else {
            (0..n)
                .map(|_| rng.random_range(-spec.init_scale..=spec.init_scale))
                .collect()
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)
            .map_err(|e| EncoderError::backend_with("building toy tensor", e))?;
        tensors.insert(name, t);
    }
    candle_core::safetensors::save(&tensors, dir.join(WEIGHTS_FILE))
        .map_err(|e| EncoderError::backend_with("writing toy weights", e))?;
    let json = serde_json::to_string_pretty(&config).expect("config serializes");
    std::fs::write(dir.join(CONFIG_FILE), json).map_err(|e| io(CONFIG_FILE, e))?;
    std::fs::write(dir.join(VOCAB_FILE), vocab.join("\n") + "\n").map_err(|e| io(VOCAB_FILE, e))?;
    Ok(())
}
