use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenAct {
    Gelu,
    #[serde(alias = "gelu_new", alias = "gelu_pytorch_tanh")]
    GeluApproximate,
    Relu,
}

fn default_layer_norm_eps() -> f64 {
    1e-12
}

fn default_type_vocab_size() -> usize {
    2
}

fn default_hidden_act() -> HiddenAct {
    HiddenAct::Gelu
}

/// The subset of a checkpoint's `config.json` the forward pass needs.
/// Other keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_hidden_act")]
    pub hidden_act: HiddenAct,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab_size")]
    pub type_vocab_size: usize,
    #[serde(default = "default_layer_norm_eps")]
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub pad_token_id: u32,
}

impl BertConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_size == 0 || self.num_attention_heads == 0 {
            return Err("hidden_size and num_attention_heads must be positive".into());
        }
        if !self.hidden_size.is_multiple_of(self.num_attention_heads) {
            return Err(format!(
                "hidden_size {} is not divisible by num_attention_heads {}",
                self.hidden_size, self.num_attention_heads
            ));
        }
        if self.type_vocab_size < 2 {
            return Err("sentence pairs need type_vocab_size >= 2".into());
        }
        Ok(())
    }

    /// Every parameter the model reads, with its shape.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden_size;
        let mut shapes = vec![
            ("bert.embeddings.word_embeddings.weight".into(), vec![self.vocab_size, h]),
            ("bert.embeddings.position_embeddings.weight".into(), vec![self.max_position_embeddings, h]),
            ("bert.embeddings.token_type_embeddings.weight".into(), vec![self.type_vocab_size, h]),
            ("bert.embeddings.LayerNorm.weight".into(), vec![h]),
            ("bert.embeddings.LayerNorm.bias".into(), vec![h]),
        ];
        for i in 0..self.num_hidden_layers {
            let p = format!("bert.encoder.layer.{i}");
            for name in ["attention.self.query", "attention.self.key", "attention.self.value", "attention.output.dense"] {
                shapes.push((format!("{p}.{name}.weight"), vec![h, h]));
                shapes.push((format!("{p}.{name}.bias"), vec![h]));
            }
            shapes.push((format!("{p}.intermediate.dense.weight"), vec![self.intermediate_size, h]));
            shapes.push((format!("{p}.intermediate.dense.bias"), vec![self.intermediate_size]));
            shapes.push((format!("{p}.output.dense.weight"), vec![h, self.intermediate_size]));
            shapes.push((format!("{p}.output.dense.bias"), vec![h]));
            for ln in ["attention.output.LayerNorm", "output.LayerNorm"] {
                shapes.push((format!("{p}.{ln}.weight"), vec![h]));
                shapes.push((format!("{p}.{ln}.bias"), vec![h]));
            }
        }
        shapes.push(("bert.pooler.dense.weight".into(), vec![h, h]));
        shapes.push(("bert.pooler.dense.bias".into(), vec![h]));
        shapes.push(("cls.seq_relationship.weight".into(), vec![2, h]));
        shapes.push(("cls.seq_relationship.bias".into(), vec![2]));
        shapes
    }
}

/// Maps legacy and prefix-less parameter names onto the ones
/// [`BertConfig::parameter_shapes`] lists. `None` marks tensors the NSP
/// model does not use (masked-LM head, position-id buffers).
pub(crate) fn normalize_name(name: &str) -> Option<String> {
    if name.starts_with("cls.predictions.") || name.ends_with("position_ids") {
        return None;
    }
    let mut n = name.to_string();
    if let Some(stem) = n.strip_suffix(".gamma") {
        n = format!("{stem}.weight");
    } else if let Some(stem) = n.strip_suffix(".beta") {
        n = format!("{stem}.bias");
    }
    if !(n.starts_with("bert.") || n.starts_with("cls.")) {
        n = format!("bert.{n}");
    }
    Some(n)
}
