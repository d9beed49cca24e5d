//! Word-level TF-IDF: raw counts times smoothed idf, L2-normalized rows.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::Serialize;

use super::BaselineError;

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    num_documents: usize,
}

/// Sparse row; `entries` sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn get(&self, column: usize) -> f64 {
        self.entries
            .binary_search_by_key(&column, |(c, _)| *c)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(c, v) in &self.entries {
            out[c] = v;
        }
        out
    }
}

/// Fits vocabulary and `idf(t) = ln((1 + D) / (1 + df(t))) + 1`.
pub fn tfidf_fit<S: AsRef<str>>(train_texts: &[S]) -> Result<TfidfModel, BaselineError> {
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in train_texts {
        let unique: BTreeSet<String> = tokenize(text.as_ref()).into_iter().collect();
        for token in unique {
            *df.entry(token).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    let d = train_texts.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (column, (token, count)) in df.into_iter().enumerate() {
        idf.push(((1.0 + d) / (1.0 + count as f64)).ln() + 1.0);
        vocabulary.insert(token, column);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        num_documents: train_texts.len(),
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn column(&self, token: &str) -> Option<usize> {
        self.vocabulary.get(token).copied()
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.column(token).map(|c| self.idf[c])
    }

    pub fn num_documents(&self) -> usize {
        self.num_documents
    }

    /// Unknown tokens are ignored; an all-unknown text maps to the zero
    /// vector.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(&c) = self.vocabulary.get(&token) {
                *counts.entry(c).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(c, tf)| (c, tf * self.idf[c]))
            .collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut entries {
                *v /= norm;
            }
        }
        SparseVector {
            dim: self.dim(),
            entries,
        }
    }

    pub fn transform_matrix<S: AsRef<str>>(&self, texts: &[S]) -> Array2<f64> {
        let mut m = Array2::zeros((texts.len(), self.dim()));
        for (i, text) in texts.iter().enumerate() {
            for (c, v) in self.transform(text.as_ref()).entries {
                m[[i, c]] = v;
            }
        }
        m
    }
}
