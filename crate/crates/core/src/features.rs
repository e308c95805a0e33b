//! Per-proceeding model inputs.
//!
//! All inputs use the same slot layout: [`TIME_STEPS`] slots ordered oldest
//! to newest, slot 4 holding the most recent motion (t = -1). Proceedings with
//! fewer motions are zero-padded at the oldest slots; older motions beyond
//! the window are dropped.

use ndarray::{s, Array3};

use crate::corpus::{Class, Proceeding};
use crate::error::{Error, Result};
use crate::text::{Preprocessor, TokenizedText};
use crate::vectorize::{mean_pool, transform_tfidf, EmbeddingMatrix, SparseVec, TfidfModel, MAX_TOKENS};

pub const TIME_STEPS: usize = 5;

/// A proceeding whose motions have been preprocessed, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedProceeding {
    pub id: String,
    pub label: Option<Class>,
    pub texts: Vec<TokenizedText>,
}

impl PreparedProceeding {
    pub fn prepare(pre: &Preprocessor, p: &Proceeding) -> Self {
        PreparedProceeding {
            id: p.id.clone(),
            label: p.label,
            texts: p.motions.iter().map(|m| pre.process(&m.text)).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.texts.is_empty() {
            Err(Error::Validation(format!("proceeding {} has no motions", self.id)))
        } else {
            Ok(())
        }
    }
}

/// Maps the last [`TIME_STEPS`] items onto slots, padding the oldest slots.
pub fn last_slots<T>(items: &[T]) -> [Option<&T>; TIME_STEPS] {
    let kept = &items[items.len().saturating_sub(TIME_STEPS)..];
    let pad = TIME_STEPS - kept.len();
    std::array::from_fn(|slot| slot.checked_sub(pad).map(|i| &kept[i]))
}

/// Time offset of a slot: -5 for the oldest, -1 for the newest.
pub fn slot_offset(slot: usize) -> i32 {
    slot as i32 - TIME_STEPS as i32
}

pub fn offset_slot(offset: i32) -> Option<usize> {
    (-(TIME_STEPS as i32)..0)
        .contains(&offset)
        .then(|| (offset + TIME_STEPS as i32) as usize)
}

/// Dense T x R x D tensor of token embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCube {
    pub values: Array3<f64>,
    pub text_mask: [bool; TIME_STEPS],
}

/// The same information as [`FeatureCube`] stored as embedding row ids
/// (`None` for out-of-vocabulary tokens). Positions past a slot's length are
/// zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenCube {
    pub slots: [Vec<Option<u32>>; TIME_STEPS],
    pub text_mask: [bool; TIME_STEPS],
}

pub fn build_token_cube(emb: &EmbeddingMatrix, p: &PreparedProceeding) -> Result<TokenCube> {
    p.check()?;
    let slots = last_slots(&p.texts);
    Ok(TokenCube {
        slots: std::array::from_fn(|t| {
            slots[t]
                .map(|text| text.tokens.iter().take(MAX_TOKENS).map(|tok| emb.id(tok)).collect())
                .unwrap_or_default()
        }),
        text_mask: slots.map(|s| s.is_some()),
    })
}

impl TokenCube {
    pub fn to_dense(&self, emb: &EmbeddingMatrix) -> FeatureCube {
        let mut values = Array3::zeros((TIME_STEPS, MAX_TOKENS, emb.dim()));
        for (t, ids) in self.slots.iter().enumerate() {
            for (n, id) in ids.iter().enumerate() {
                if let Some(id) = id {
                    values.slice_mut(s![t, n, ..]).assign(&emb.matrix().row(*id as usize));
                }
            }
        }
        FeatureCube {
            values,
            text_mask: self.text_mask,
        }
    }
}

/// First 70 tokens of each of the last five texts as embedding rows.
pub fn build_cube(emb: &EmbeddingMatrix, p: &PreparedProceeding) -> Result<FeatureCube> {
    Ok(build_token_cube(emb, p)?.to_dense(emb))
}

/// Per-text vectorization used by the pooled and TFIDF paths.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, text: &TokenizedText) -> SparseVec;
}

impl TextEncoder for EmbeddingMatrix {
    fn dim(&self) -> usize {
        EmbeddingMatrix::dim(self)
    }

    fn encode(&self, text: &TokenizedText) -> SparseVec {
        SparseVec::from_dense(mean_pool(self, text).view())
    }
}

impl TextEncoder for TfidfModel {
    fn dim(&self) -> usize {
        TfidfModel::dim(self)
    }

    fn encode(&self, text: &TokenizedText) -> SparseVec {
        transform_tfidf(self, text)
    }
}

/// One vector per slot, zero for padded slots.
pub fn build_sequence<E: TextEncoder + ?Sized>(encoder: &E, p: &PreparedProceeding) -> Result<[SparseVec; TIME_STEPS]> {
    p.check()?;
    let slots = last_slots(&p.texts);
    Ok(std::array::from_fn(|t| match slots[t] {
        Some(text) => encoder.encode(text),
        None => SparseVec::zeros(encoder.dim()),
    }))
}

/// Slot vectors concatenated oldest to newest.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatFeatures {
    pub values: SparseVec,
}

impl ConcatFeatures {
    pub fn dim(&self) -> usize {
        self.values.dim
    }
}

pub fn build_concat<E: TextEncoder + ?Sized>(encoder: &E, p: &PreparedProceeding) -> Result<ConcatFeatures> {
    Ok(ConcatFeatures {
        values: SparseVec::concat(&build_sequence(encoder, p)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn emb(dim: usize) -> EmbeddingMatrix {
        let tokens: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let m = Array2::from_shape_fn((10, dim), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 1.0);
        EmbeddingMatrix::new(tokens, m, 10).unwrap()
    }

    fn proceeding(texts: &[&str]) -> PreparedProceeding {
        PreparedProceeding {
            id: "p".into(),
            label: None,
            texts: texts
                .iter()
                .map(|s| TokenizedText::new(s.split_whitespace().map(str::to_string).collect()))
                .collect(),
        }
    }

    #[test]
    fn slot_mapping() {
        let items: Vec<i32> = (1..=7).collect();
        assert_eq!(last_slots(&items).map(|x| x.copied()), [3, 4, 5, 6, 7].map(Some));
        let items = [1, 2];
        assert_eq!(
            last_slots(&items).map(|x| x.copied()),
            [None, None, None, Some(1), Some(2)]
        );
        assert_eq!(slot_offset(4), -1);
        assert_eq!(offset_slot(-5), Some(0));
        assert_eq!(offset_slot(0), None);
    }

    #[test]
    fn cube_keeps_last_five() {
        let texts: Vec<String> = (0..7).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let e = emb(4);
        let cube = build_cube(&e, &proceeding(&refs)).unwrap();
        for t in 0..5 {
            let expected = e.vector(&format!("w{}", t + 2)).unwrap();
            assert_eq!(cube.values.slice(s![t, 0, ..]), expected);
        }
    }

    #[test]
    fn cube_pads_oldest_slots() {
        let e = emb(4);
        let cube = build_cube(&e, &proceeding(&["w1", "w2"])).unwrap();
        assert_eq!(cube.text_mask, [false, false, false, true, true]);
        assert!(cube.values.slice(s![0..3, .., ..]).iter().all(|v| *v == 0.0));
        assert!(cube.values.slice(s![4, 0, ..]).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn long_text_truncated_to_seventy() {
        let e = emb(3);
        let words: Vec<String> = (0..90).map(|i| format!("w{}", i % 10)).collect();
        let p = proceeding(&[&words.join(" ")]);
        let tc = build_token_cube(&e, &p).unwrap();
        assert_eq!(tc.slots[4].len(), 70);
        assert_eq!(build_cube(&e, &p).unwrap().values.dim(), (5, 70, 3));
    }

    #[test]
    fn zero_motions_rejected() {
        let e = emb(3);
        let p = proceeding(&[]);
        assert!(build_cube(&e, &p).is_err());
        assert!(build_concat(&e, &p).is_err());
    }

    #[test]
    fn concat_padding_and_dims() {
        let e = emb(100);
        let c = build_concat(&e, &proceeding(&["w1 w2"])).unwrap();
        assert_eq!(c.dim(), 500);
        let dense = c.values.to_dense();
        assert!(dense.slice(s![..400]).iter().all(|v| *v == 0.0));
        assert!(dense.slice(s![400..]).iter().any(|v| *v != 0.0));

        let vocab: Vec<String> = (0..4000).map(|i| format!("t{i}")).collect();
        let tfidf = TfidfModel::new(vocab, vec![1; 4000], 10);
        let c = build_concat(&tfidf, &proceeding(&["t1", "t2", "t3", "t4", "t5"])).unwrap();
        assert_eq!(c.dim(), 20_000);
    }

    #[test]
    fn identical_motions_give_identical_blocks() {
        let e = emb(6);
        let c = build_concat(&e, &proceeding(&["w3 w4"; 5])).unwrap().values.to_dense();
        for b in 1..5 {
            assert_eq!(c.slice(s![0..6]), c.slice(s![b * 6..(b + 1) * 6]));
        }
    }

    proptest! {
        #[test]
        fn older_motions_do_not_matter(extra in prop::collection::vec(0usize..10, 0..6), seed in any::<u64>()) {
            let e = emb(5);
            let recent = ["w1 w2", "w3", "w4 w5 w6", "w7", "w8 w9"];
            let older: Vec<String> = extra.iter().map(|i| format!("w{i} w{}", (i + 1) % 10)).collect();
            let base: Vec<&str> = older.iter().map(String::as_str).chain(recent).collect();
            let a = build_cube(&e, &proceeding(&base)).unwrap();
            let mut shuffled = older.clone();
            crate::rng::fisher_yates(&mut shuffled, seed);
            let permuted: Vec<&str> = shuffled.iter().map(String::as_str).chain(recent).collect();
            let b = build_cube(&e, &proceeding(&permuted)).unwrap();
            prop_assert_eq!(&a, &b);
            let ca = build_concat(&e, &proceeding(&base)).unwrap();
            let cb = build_concat(&e, &proceeding(&permuted)).unwrap();
            prop_assert_eq!(ca, cb);
        }

        #[test]
        fn cube_and_concat_share_slot_order(n in 1usize..8) {
            let e = emb(4);
            let texts: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let p = proceeding(&refs);
            let cube = build_cube(&e, &p).unwrap();
            let concat = build_concat(&e, &p).unwrap().values.to_dense();
            for t in 0..TIME_STEPS {
                // Single-token texts: the pooled vector equals the first cube row.
                prop_assert_eq!(cube.values.slice(s![t, 0, ..]), concat.slice(s![t * 4..(t + 1) * 4]));
                prop_assert_eq!(cube.text_mask[t], concat.slice(s![t * 4..(t + 1) * 4]).iter().any(|v| *v != 0.0));
            }
        }
    }
}
