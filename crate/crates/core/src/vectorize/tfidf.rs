use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SparseVec;
use crate::error::{Error, Result};
use crate::text::TokenizedText;

pub const TFIDF_MAX_FEATURES: usize = 4000;

/// Vocabulary of the most frequent tokens with smoothed idf weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocab: Vec<String>,
    pub document_frequency: Vec<u64>,
    pub idf: Vec<f64>,
    pub n_documents: u64,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl TfidfModel {
    pub fn new(vocab: Vec<String>, document_frequency: Vec<u64>, n_documents: u64) -> Self {
        let idf = document_frequency
            .iter()
            .map(|&df| ((1.0 + n_documents as f64) / (1.0 + df as f64)).ln() + 1.0)
            .collect();
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        TfidfModel {
            vocab,
            document_frequency,
            idf,
            n_documents,
            index,
        }
    }

    /// Restores the lookup index after deserialization.
    pub fn reindexed(self) -> Self {
        Self::new(self.vocab, self.document_frequency, self.n_documents)
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn idf_of(&self, token: &str) -> Option<f64> {
        self.id(token).map(|i| self.idf[i as usize])
    }
}

pub fn fit_tfidf(corpus: &[TokenizedText]) -> Result<TfidfModel> {
    fit_tfidf_capped(corpus, TFIDF_MAX_FEATURES)
}

/// Keeps the `max_features` most frequent tokens by total count, ties broken
/// lexicographically; idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1.
pub fn fit_tfidf_capped(corpus: &[TokenizedText], max_features: usize) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::Validation("TFIDF corpus is empty".into()));
    }
    let mut counts: HashMap<&str, (u64, u64)> = HashMap::new();
    for doc in corpus {
        let mut seen: Vec<&str> = Vec::new();
        for t in &doc.tokens {
            counts.entry(t.as_str()).or_default().0 += 1;
            seen.push(t.as_str());
        }
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            counts.get_mut(t).unwrap().1 += 1;
        }
    }
    let mut ranked: Vec<(&str, (u64, u64))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.0.cmp(b.0)));
    ranked.truncate(max_features);
    let (vocab, df): (Vec<String>, Vec<u64>) = ranked.into_iter().map(|(t, (_, df))| (t.to_string(), df)).unzip();
    Ok(TfidfModel::new(vocab, df, corpus.len() as u64))
}

/// Raw count times idf, L2-normalized; out-of-vocabulary tokens are ignored.
pub fn transform_tfidf(model: &TfidfModel, text: &TokenizedText) -> SparseVec {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for t in &text.tokens {
        if let Some(i) = model.id(t) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    let mut entries: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(i, c)| (i, c * model.idf[i as usize]))
        .collect();
    entries.sort_by_key(|e| e.0);
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let (indices, values) = if norm > 0.0 {
        entries.into_iter().map(|(i, v)| (i, v / norm)).unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    SparseVec {
        dim: model.dim(),
        indices,
        values,
    }
}
