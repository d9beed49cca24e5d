use std::path::Path;

use nspgrade_core::EncoderError;
use tokenizers::models::wordpiece::WordPiece;
use tokenizers::normalizers::BertNormalizer;
use tokenizers::pre_tokenizers::bert::BertPreTokenizer;
use tokenizers::Tokenizer;

pub(crate) const TOKENIZER_FILE: &str = "tokenizer.json";
pub(crate) const VOCAB_FILE: &str = "vocab.txt";

/// The checkpoint's own tokenizer, used without its special-token template
/// so pairs can be assembled (and truncated) on token counts.
pub(crate) struct TextTokenizer {
    inner: Tokenizer,
    pub cls_id: u32,
    pub sep_id: u32,
}

fn tokenizer_error(path: &Path, e: tokenizers::Error) -> EncoderError {
    EncoderError::Backend {
        message: format!("cannot load tokenizer from {}", path.display()),
        source: Some(e),
    }
}

/// `do_lower_case` from `tokenizer_config.json`, defaulting to true as the
/// uncased checkpoints do.
fn lowercase_flag(dir: &Path) -> bool {
    std::fs::read_to_string(dir.join("tokenizer_config.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.get("do_lower_case").and_then(serde_json::Value::as_bool))
        .unwrap_or(true)
}

impl TextTokenizer {
    /// Prefers `tokenizer.json`; falls back to a BERT WordPiece pipeline
    /// built from `vocab.txt`.
    pub fn load(dir: &Path) -> Result<Self, EncoderError> {
        let json = dir.join(TOKENIZER_FILE);
        let vocab = dir.join(VOCAB_FILE);
        let mut inner = if json.is_file() {
            Tokenizer::from_file(&json).map_err(|e| tokenizer_error(&json, e))?
        } else if vocab.is_file() {
            let model = WordPiece::from_file(&vocab.to_string_lossy())
                .unk_token("[UNK]".into())
                .build()
                .map_err(|e| tokenizer_error(&vocab, e))?;
            let mut t = Tokenizer::new(model);
            t.with_normalizer(Some(BertNormalizer::new(true, true, None, lowercase_flag(dir))))
                .map_err(|e| tokenizer_error(&vocab, e))?;
            t.with_pre_tokenizer(Some(BertPreTokenizer));
            t
        } else {
            return Err(EncoderError::InvalidConfig(format!(
                "{} has neither {TOKENIZER_FILE} nor {VOCAB_FILE}",
                dir.display()
            )));
        };
        inner
            .with_truncation(None)
            .map_err(|e| tokenizer_error(&json, e))?;
        inner.with_padding(None);
        let special = |token: &str| {
            inner.token_to_id(token).ok_or_else(|| {
                EncoderError::InvalidConfig(format!("tokenizer in {} has no {token} token", dir.display()))
            })
        };
        let cls_id = special("[CLS]")?;
        let sep_id = special("[SEP]")?;
        Ok(TextTokenizer {
            inner,
            cls_id,
            sep_id,
        })
    }

    pub fn ids(&self, text: &str) -> Result<Vec<u32>, EncoderError> {
        self.inner
            .encode(text, false)
            .map(|e| e.get_ids().to_vec())
            .map_err(|e| EncoderError::Backend {
                message: "tokenization failed".into(),
                source: Some(e),
            })
    }

    pub fn save(&self, dir: &Path) -> Result<(), EncoderError> {
        let path = dir.join(TOKENIZER_FILE);
        self.inner.save(&path, false).map_err(|e| tokenizer_error(&path, e))
    }
}
