//! Self-contained model file: a magic header, a format version, a JSON
//! metadata block and every parameter as a named little-endian f64 array.
//!
//! ```text
//! b"DKTMODEL" | u32 version | u64 n | n bytes of JSON metadata
//! u32 count | count x (u32 name length, name, u64 rows, u64 cols, rows*cols f64)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    Affine, Classifier, ConvLstmModel, Encoder, HyperParams, LstmVectorModel, MlpModel, Pipeline, SparseAffine,
};
use crate::error::{Error, Result};
use crate::nn::{Constraint, Lstm, Parameter};
use crate::text::Preprocessor;
use crate::vectorize::{EmbeddingMatrix, TfidfModel};

const MAGIC: &[u8; 8] = b"DKTMODEL";
pub const CONTAINER_VERSION: u32 = 1;
const ENCODER_EMBEDDINGS: &str = "encoder.embeddings";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub pipeline: Pipeline,
    pub hyperparams: HyperParams,
    /// Training settings the model was fitted with.
    pub training: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Class frequencies of the training set.
    pub class_priors: [f64; 3],
    /// Validation metrics at selection time.
    pub metrics: serde_json::Value,
    pub preprocessor: Preprocessor,
    pub embedding_tokens: Option<Vec<String>>,
    pub embedding_window: Option<usize>,
    pub tfidf: Option<TfidfModel>,
}

/// Everything needed to classify raw proceedings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub metadata: ModelMetadata,
    pub classifier: Classifier,
    pub encoder: Encoder,
}

impl ModelFile {
    /// Records the encoder's vocabulary in the metadata.
    pub fn new(mut metadata: ModelMetadata, classifier: Classifier, encoder: Encoder) -> Self {
        match &encoder {
            Encoder::Embeddings(e) => {
                metadata.embedding_tokens = Some(e.tokens().to_vec());
                metadata.embedding_window = Some(e.window);
                metadata.tfidf = None;
            }
            Encoder::Tfidf(t) => {
                metadata.embedding_tokens = None;
                metadata.embedding_window = None;
                metadata.tfidf = Some(t.clone());
            }
        }
        ModelFile {
            metadata,
            classifier,
            encoder,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let mut arrays: Vec<(&str, &Array2<f64>)> = self
            .classifier
            .parameters()
            .into_iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect();
        if let (Encoder::Embeddings(e), false) = (&self.encoder, matches!(self.classifier, Classifier::ConvLstm(_))) {
            arrays.push((ENCODER_EMBEDDINGS, e.matrix()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, a) in arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic header)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!(
                "model file version {version}, this build reads version {CONTAINER_VERSION}"
            )));
        }
        let meta_len = read_len(&mut r)?;
        let mut meta = vec![0u8; meta_len];
        read_exact(&mut r, &mut meta)?;
        let mut metadata: ModelMetadata = serde_json::from_slice(&meta)?;
        metadata.tfidf = metadata.tfidf.map(TfidfModel::reindexed);

        let count = read_u32(&mut r)? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let rows = read_len(&mut r)?;
            let cols = read_len(&mut r)?;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.len()))
                .ok_or_else(|| Error::Format(format!("array {name} truncated")))?;
            let data: Vec<f64> = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[n * 8..];
            let a = Array2::from_shape_vec((rows, cols), data).expect("length checked");
            if arrays.insert(name.clone(), a).is_some() {
                return Err(Error::Format(format!("duplicate array {name}")));
            }
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        build(metadata, arrays)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("model file truncated".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len(r: &mut &[u8]) -> Result<usize> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("length overflows".into()))
}

struct Arrays(BTreeMap<String, Array2<f64>>);

impl Arrays {
    fn take(&mut self, name: &str, shape: Option<(usize, usize)>) -> Result<Parameter> {
        let a = self
            .0
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing array {name}")))?;
        if let Some(s) = shape {
            if a.dim() != s {
                return Err(Error::Format(format!(
                    "array {name} has shape {:?}, expected {s:?}",
                    a.dim()
                )));
            }
        }
        Ok(Parameter::new(name, a))
    }

    fn lstm(&mut self, hidden: usize) -> Result<Lstm> {
        let input = self.take("lstm.input", None)?.regularized();
        if input.value.ncols() != 4 * hidden {
            return Err(Error::Format(format!("lstm.input does not match hidden size {hidden}")));
        }
        Ok(Lstm {
            recurrent: self.take("lstm.recurrent", Some((hidden, 4 * hidden)))?.regularized(),
            bias: self.take("lstm.bias", Some((1, 4 * hidden)))?,
            input,
        })
    }

    fn output(&mut self, hidden: usize) -> Result<Affine> {
        Ok(Affine {
            weight: self.take("output.weight", Some((hidden, 3)))?,
            bias: self.take("output.bias", Some((1, 3)))?,
        })
    }
}

fn build(metadata: ModelMetadata, arrays: BTreeMap<String, Array2<f64>>) -> Result<ModelFile> {
    let mut arrays = Arrays(arrays);
    let hp = metadata.hyperparams;
    let h = hp.hidden;
    let embeddings = |m: Array2<f64>| -> Result<EmbeddingMatrix> {
        let tokens = metadata
            .embedding_tokens
            .clone()
            .ok_or_else(|| Error::Format("metadata lacks the embedding vocabulary".into()))?;
        EmbeddingMatrix::new(
            tokens,
            m,
            metadata.embedding_window.unwrap_or(crate::vectorize::DEFAULT_WINDOW),
        )
    };
    let tfidf = || {
        metadata
            .tfidf
            .clone()
            .ok_or_else(|| Error::Format("metadata lacks the TFIDF vocabulary".into()))
    };
    let (classifier, encoder) = match metadata.pipeline {
        Pipeline::ConvLstmW2v => {
            let mut filters = arrays.take("filters", None)?;
            if filters.value.nrows() != hp.filters {
                return Err(Error::Format(format!("filters do not match K={}", hp.filters)));
            }
            filters.constraint = Constraint::UnitNormRows;
            let emb = arrays.take("embeddings", None)?.frozen();
            let encoder = Encoder::Embeddings(embeddings(emb.value.clone())?);
            let model = ConvLstmModel {
                filters,
                embeddings: emb,
                lstm: arrays.lstm(h)?,
                output: arrays.output(h)?,
            };
            (Classifier::ConvLstm(model), encoder)
        }
        Pipeline::LstmTfidf => {
            let model = LstmVectorModel {
                lstm: arrays.lstm(h)?,
                output: arrays.output(h)?,
            };
            (Classifier::LstmVectors(model), Encoder::Tfidf(tfidf()?))
        }
        Pipeline::MlpW2v | Pipeline::MlpTfidf => {
            let mut hidden = SparseAffine {
                weight: arrays.take("hidden.weight", None)?.regularized(),
                bias: arrays.take("hidden.bias", Some((1, h)))?,
            };
            if hidden.weight.value.ncols() != h {
                return Err(Error::Format(format!("hidden.weight does not match H={h}")));
            }
            hidden.weight.regularized = true;
            let encoder = if metadata.pipeline == Pipeline::MlpW2v {
                Encoder::Embeddings(embeddings(arrays.take(ENCODER_EMBEDDINGS, None)?.value)?)
            } else {
                Encoder::Tfidf(tfidf()?)
            };
            let model = MlpModel {
                hidden,
                output: arrays.output(h)?,
            };
            (Classifier::Mlp(model), encoder)
        }
    };
    if let Some(name) = arrays.0.keys().next() {
        return Err(Error::Format(format!("unexpected array {name}")));
    }
    Ok(ModelFile {
        metadata,
        classifier,
        encoder,
    })
}

pub fn save_model(model: &ModelFile, path: &Path) -> Result<()> {
    let bytes = model.to_bytes()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    ModelFile::from_bytes(&bytes)
}
