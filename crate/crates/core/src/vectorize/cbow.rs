use std::collections::HashMap;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, DEFAULT_DIM, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::text::TokenizedText;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards `1e-4` of itself.
    pub learning_rate: f64,
    pub negatives: usize,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: DEFAULT_DIM,
            window: DEFAULT_WINDOW,
            epochs: 5,
            learning_rate: 0.025,
            negatives: 5,
            min_count: 2,
            seed: 1,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Continuous bag-of-words with negative sampling.
///
/// The context vector is the mean of the input embeddings of up to `window`
/// tokens on each side. Target and negatives (drawn from unigram^0.75) are
/// scored with a logistic loss against output vectors. As in the reference
/// word2vec, the accumulated context error is added whole to every context
/// word. Single-threaded and bitwise deterministic for a given seed; rows are
/// L2-normalized at the end.
pub fn train_cbow(corpus: &[TokenizedText], config: &CbowConfig) -> Result<EmbeddingMatrix> {
    if corpus.is_empty() {
        return Err(Error::Validation("CBOW corpus is empty".into()));
    }
    if config.dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }

    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count as u64)
        .collect();
    if vocab.is_empty() {
        return Err(Error::Validation(format!(
            "no token occurs at least {} times",
            config.min_count
        )));
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|d| d.tokens.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
        .collect();

    let v = vocab.len();
    let d = config.dim;
    let mut rng = rng::stream(config.seed, streams::CBOW);
    let mut input: Vec<f64> = (0..v * d).map(|_| (rng.random::<f64>() - 0.5) / d as f64).collect();
    let mut output = vec![0.0f64; v * d];
    let noise = WeightedIndex::new(vocab.iter().map(|(_, c)| (*c as f64).powf(0.75)))
        .map_err(|e| Error::Numeric(format!("negative sampling table: {e}")))?;

    let total = (sentences.iter().map(Vec::len).sum::<usize>() * config.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut hidden = vec![0.0f64; d];
    let mut err = vec![0.0f64; d];
    let mut context = Vec::with_capacity(2 * config.window);

    for _ in 0..config.epochs {
        for sent in &sentences {
            for (pos, &target) in sent.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - processed as f64 / total).max(1e-4);
                processed += 1;

                context.clear();
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(sent.len());
                context.extend((lo..hi).filter(|&j| j != pos).map(|j| sent[j]));
                if context.is_empty() {
                    continue;
                }

                hidden.iter_mut().for_each(|x| *x = 0.0);
                for &c in &context {
                    for (h, w) in hidden.iter_mut().zip(&input[c * d..(c + 1) * d]) {
                        *h += w;
                    }
                }
                let inv = 1.0 / context.len() as f64;
                hidden.iter_mut().for_each(|x| *x *= inv);
                err.iter_mut().for_each(|x| *x = 0.0);

                for s in 0..=config.negatives {
                    let (word, label) = if s == 0 {
                        (target, 1.0)
                    } else {
                        let w = noise.sample(&mut rng);
                        if w == target {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let out_row = &mut output[word * d..(word + 1) * d];
                    let f: f64 = hidden.iter().zip(out_row.iter()).map(|(a, b)| a * b).sum();
                    let g = (label - sigmoid(f)) * lr;
                    for ((e, o), h) in err.iter_mut().zip(out_row.iter_mut()).zip(&hidden) {
                        *e += g * *o;
                        *o += g * h;
                    }
                }
                for &c in &context {
                    for (w, e) in input[c * d..(c + 1) * d].iter_mut().zip(&err) {
                        *w += e;
                    }
                }
            }
        }
    }

    let tokens = vocab.iter().map(|(t, _)| t.to_string()).collect();
    let matrix = Array2::from_shape_vec((v, d), input).map_err(|e| Error::Dimension(e.to_string()))?;
    EmbeddingMatrix::new(tokens, matrix, config.window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::IndexedRandom;

    fn cos(e: &EmbeddingMatrix, a: &str, b: &str) -> f64 {
        e.vector(a).unwrap().dot(&e.vector(b).unwrap())
    }

    /// `p` and `q` share contexts drawn from one word group, `r` from another.
    fn shared_context_corpus(seed: u64) -> Vec<TokenizedText> {
        let group_a: Vec<String> = (0..8).map(|i| format!("a{i}")).collect();
        let group_b: Vec<String> = (0..8).map(|i| format!("b{i}")).collect();
        let mut rng = rng::stream(seed, 99);
        (0..600)
            .map(|i| {
                let (center, group) = match i % 3 {
                    0 => ("p", &group_a),
                    1 => ("q", &group_a),
                    _ => ("r", &group_b),
                };
                let mut words: Vec<String> = (0..6).map(|_| group.choose(&mut rng).unwrap().clone()).collect();
                words.insert(3, center.to_string());
                TokenizedText::new(words)
            })
            .collect()
    }

    #[test]
    fn rows_are_unit_norm() {
        let corpus = shared_context_corpus(1);
        let e = train_cbow(
            &corpus,
            &CbowConfig {
                dim: 16,
                ..Default::default()
            },
        )
        .unwrap();
        for row in e.matrix().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shared_contexts_give_similar_vectors() {
        let seeds = 20;
        let mut wins = 0;
        for seed in 0..seeds {
            let corpus = shared_context_corpus(seed);
            let config = CbowConfig {
                dim: 20,
                window: 3,
                seed,
                ..Default::default()
            };
            let e = train_cbow(&corpus, &config).unwrap();
            if cos(&e, "p", "q") > cos(&e, "p", "r") {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.95 * seeds as f64, "{wins}/{seeds}");
    }

    #[test]
    fn bitwise_deterministic() {
        let corpus = shared_context_corpus(4);
        let config = CbowConfig {
            dim: 12,
            seed: 9,
            ..Default::default()
        };
        let a = train_cbow(&corpus, &config).unwrap();
        let b = train_cbow(&corpus, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn defaults_match_published_setup() {
        let c = CbowConfig::default();
        assert_eq!((c.dim, c.window, c.negatives, c.min_count), (100, 10, 5, 2));
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let corpus = vec![TokenizedText::new(vec!["once".into(), "only".into()])];
        assert!(matches!(
            train_cbow(&corpus, &CbowConfig::default()),
            Err(Error::Validation(_))
        ));
        assert!(train_cbow(&[], &CbowConfig::default()).is_err());
    }
}
