#![allow(dead_code)]

use docket_core::corpus::{
    generate_synthetic, split_corpus, synthetic_standardization, Class, CorpusSplit, SyntheticSpec,
};
use docket_core::features::PreparedProceeding;
use docket_core::text::{PrepConfig, Preprocessor, StandardizationTable, TokenizedText};
use docket_core::vectorize::{train_cbow, CbowConfig, EmbeddingMatrix};

pub struct SmallRun {
    pub split: CorpusSplit<PreparedProceeding>,
    pub embeddings: EmbeddingMatrix,
}

/// A few hundred synthetic proceedings with quickly trained embeddings.
pub fn small_run(n_labeled: usize, seed: u64) -> SmallRun {
    let spec = SyntheticSpec {
        n_labeled,
        n_unlabeled_motions: 1500,
        seed,
        ..Default::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let pre = Preprocessor::fit(
        &corpus.unlabeled,
        StandardizationTable::new(synthetic_standardization()),
        PrepConfig::default(),
    )
    .unwrap();
    let unlabeled: Vec<TokenizedText> = corpus.unlabeled.iter().map(|t| pre.process(t)).collect();
    let embeddings = train_cbow(
        &unlabeled,
        &CbowConfig {
            epochs: 2,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let prepared: Vec<PreparedProceeding> = corpus
        .labeled
        .iter()
        .map(|p| PreparedProceeding::prepare(&pre, p))
        .collect();
    SmallRun {
        split: split_corpus(&prepared, seed).unwrap(),
        embeddings,
    }
}

pub fn labels(items: &[PreparedProceeding]) -> Vec<Class> {
    items.iter().map(|p| p.label.unwrap()).collect()
}
