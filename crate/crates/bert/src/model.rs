//! BERT encoder, pooler and next-sentence head over a flat parameter map.
//!
//! Every op here has a backward pass in candle, so the same code serves
//! inference and full-scope fine-tuning.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Module, Result, Tensor, Var, D};
use candle_nn::ops::{layer_norm_slow, softmax};
use candle_nn::Linear;

use crate::config::{normalize_name, BertConfig, HiddenAct};

/// Added to attention scores of padding positions.
const MASKED_SCORE: f64 = -1e9;

pub(crate) struct Params {
    vars: BTreeMap<String, Var>,
}

impl Params {
    /// Keeps the tensors the model reads; errors on any that are missing or
    /// misshapen so a partial checkpoint never runs with silent defaults.
    pub fn from_tensors(
        config: &BertConfig,
        tensors: impl IntoIterator<Item = (String, Tensor)>,
    ) -> std::result::Result<Self, String> {
        let mut found: HashMap<String, Tensor> = HashMap::new();
        for (name, tensor) in tensors {
            if let Some(n) = normalize_name(&name) {
                found.insert(n, tensor);
            }
        }
        let mut vars = BTreeMap::new();
        let mut missing = Vec::new();
        for (name, shape) in config.parameter_shapes() {
            match found.remove(&name) {
                Some(t) if t.dims() == shape.as_slice() => {
                    let t = t.to_dtype(DType::F32).map_err(|e| e.to_string())?;
                    vars.insert(name, Var::from_tensor(&t).map_err(|e| e.to_string())?);
                }
                Some(t) => {
                    return Err(format!("{name} has shape {:?}, expected {shape:?}", t.dims()));
                }
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(3).map(String::as_str).collect();
            return Err(format!(
                "checkpoint lacks {} tensor(s) the NSP model needs, e.g. {}",
                missing.len(),
                shown.join(", ")
            ));
        }
        Ok(Params { vars })
    }

    /// Fresh storage for every parameter.
    pub fn deep_copy(&self) -> Result<Self> {
        let vars = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<_>>()?;
        Ok(Params { vars })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} checked at load"))
            .as_tensor()
    }

    pub fn vars_where(&self, keep: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    fn linear(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let w = self.get(&format!("{prefix}.weight")).clone();
        let b = self.get(&format!("{prefix}.bias")).clone();
        Linear::new(w, Some(b)).forward(x)
    }

    fn layer_norm(&self, prefix: &str, x: &Tensor, eps: f64) -> Result<Tensor> {
        layer_norm_slow(
            x,
            self.get(&format!("{prefix}.weight")),
            self.get(&format!("{prefix}.bias")),
            eps as f32,
        )
    }
}

/// Right-padded token batch.
pub(crate) struct Batch {
    ids: Tensor,
    segments: Tensor,
    mask: Tensor,
}

impl Batch {
    pub fn new(rows: &[(&[u32], &[u32])], pad_id: u32, device: &Device) -> Result<Self> {
        let len = rows.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
        let n = rows.len();
        let mut ids = Vec::with_capacity(n * len);
        let mut segments = Vec::with_capacity(n * len);
        let mut mask = Vec::with_capacity(n * len);
        for (row_ids, row_segments) in rows {
            let pad = len - row_ids.len();
            ids.extend_from_slice(row_ids);
            ids.extend(std::iter::repeat_n(pad_id, pad));
            segments.extend_from_slice(row_segments);
            segments.extend(std::iter::repeat_n(0, pad));
            mask.extend(std::iter::repeat_n(1f32, row_ids.len()));
            mask.extend(std::iter::repeat_n(0f32, pad));
        }
        Ok(Batch {
            ids: Tensor::from_vec(ids, (n, len), device)?,
            segments: Tensor::from_vec(segments, (n, len), device)?,
            mask: Tensor::from_vec(mask, (n, len), device)?,
        })
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }
}

fn activate(act: HiddenAct, x: &Tensor) -> Result<Tensor> {
    match act {
        HiddenAct::Gelu => x.gelu_erf(),
        HiddenAct::GeluApproximate => x.gelu(),
        HiddenAct::Relu => x.relu(),
    }
}

/// Last hidden layer, `[batch, len, hidden]`.
pub(crate) fn encode(params: &Params, config: &BertConfig, batch: &Batch) -> Result<Tensor> {
    let (b, l) = batch.ids.dims2()?;
    let h = config.hidden_size;
    let eps = config.layer_norm_eps;
    let gather = |table: &str, ids: &Tensor| -> Result<Tensor> {
        params
            .get(table)
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, l, h))
    };
    let words = gather("bert.embeddings.word_embeddings.weight", &batch.ids)?;
    let types = gather("bert.embeddings.token_type_embeddings.weight", &batch.segments)?;
    let positions = params
        .get("bert.embeddings.position_embeddings.weight")
        .narrow(0, 0, l)?;
    let x = (words + types)?.broadcast_add(&positions)?;
    let mut x = params.layer_norm("bert.embeddings.LayerNorm", &x, eps)?;

    let heads = config.num_attention_heads;
    let head_dim = h / heads;
    let scale = (head_dim as f64).sqrt();
    let bias = batch
        .mask
        .affine(-MASKED_SCORE, MASKED_SCORE)?
        .reshape((b, 1, 1, l))?;
    let split = |t: Tensor| -> Result<Tensor> {
        t.reshape((b, l, heads, head_dim))?.transpose(1, 2)?.contiguous()
    };
    for i in 0..config.num_hidden_layers {
        let p = format!("bert.encoder.layer.{i}");
        let q = split(params.linear(&format!("{p}.attention.self.query"), &x)?)?;
        let k = split(params.linear(&format!("{p}.attention.self.key"), &x)?)?;
        let v = split(params.linear(&format!("{p}.attention.self.value"), &x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / scale)?.broadcast_add(&bias)?;
        let context = softmax(&scores, D::Minus1)?
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, l, h))?;
        let attended = params.linear(&format!("{p}.attention.output.dense"), &context)?;
        let attended = params.layer_norm(&format!("{p}.attention.output.LayerNorm"), &(attended + &x)?, eps)?;
        let inner = activate(
            config.hidden_act,
            &params.linear(&format!("{p}.intermediate.dense"), &attended)?,
        )?;
        let out = params.linear(&format!("{p}.output.dense"), &inner)?;
        x = params.layer_norm(&format!("{p}.output.LayerNorm"), &(out + attended)?, eps)?;
    }
    Ok(x)
}

/// Hidden state of the leading `[CLS]` token, `[batch, hidden]`.
pub(crate) fn first_token(hidden: &Tensor) -> Result<Tensor> {
    hidden.narrow(1, 0, 1)?.squeeze(1)?.contiguous()
}

/// Attention-masked mean over tokens, `[batch, hidden]`.
pub(crate) fn masked_mean(hidden: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let m = mask.unsqueeze(2)?;
    let summed = hidden.broadcast_mul(&m)?.sum(1)?;
    summed.broadcast_div(&m.sum(1)?)
}

pub(crate) fn pool(params: &Params, cls: &Tensor) -> Result<Tensor> {
    params.linear("bert.pooler.dense", cls)?.tanh()
}

/// Two logits per row; index 0 is "is next sentence".
pub(crate) fn nsp_logits(params: &Params, pooled: &Tensor) -> Result<Tensor> {
    params.linear("cls.seq_relationship", pooled)
}
