//! Token embeddings (CBOW) and the TFIDF representation.

mod cbow;
mod tfidf;

pub use cbow::{train_cbow, CbowConfig};
pub use tfidf::{fit_tfidf, fit_tfidf_capped, transform_tfidf, TfidfModel, TFIDF_MAX_FEATURES};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::text::TokenizedText;

/// Tokens per text considered by the embedding paths.
pub const MAX_TOKENS: usize = 70;
pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_WINDOW: usize = 10;

/// Sparse vector with sorted, unique indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        SparseVec {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(v: ArrayView1<f64>) -> Self {
        let (indices, values) = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i as u32, *x))
            .unzip();
        SparseVec {
            dim: v.len(),
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    /// Concatenates blocks in order.
    pub fn concat(blocks: &[SparseVec]) -> SparseVec {
        let mut out = SparseVec::zeros(blocks.iter().map(|b| b.dim).sum());
        let mut offset = 0u32;
        for b in blocks {
            out.indices.extend(b.indices.iter().map(|i| i + offset));
            out.values.extend_from_slice(&b.values);
            offset += b.dim as u32;
        }
        out
    }
}

/// Token embedding table with unit-norm rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    matrix: Array2<f64>,
    pub window: usize,
}

impl EmbeddingMatrix {
    /// Builds the table and L2-normalizes every row. Zero rows are rejected.
    /// Rows already within 1e-12 of unit norm are kept bit for bit, so
    /// reloading a saved table reproduces it exactly.
    pub fn new(tokens: Vec<String>, mut matrix: Array2<f64>, window: usize) -> Result<Self> {
        if tokens.len() != matrix.nrows() {
            return Err(Error::Dimension(format!(
                "{} tokens for {} embedding rows",
                tokens.len(),
                matrix.nrows()
            )));
        }
        for (i, mut row) in matrix.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numeric(format!("embedding for {:?} has norm {norm}", tokens[i])));
            }
            if (norm - 1.0).abs() > 1e-12 {
                row /= norm;
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate embedding token {t:?}")));
            }
        }
        Ok(EmbeddingMatrix {
            tokens,
            index,
            matrix,
            window,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn vector(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        self.id(token).map(|i| self.matrix.row(i as usize))
    }

    /// Text export: `token v1 ... vD` per line, preceded by a `V D` header.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for (t, row) in self.tokens.iter().zip(self.matrix.rows()) {
            out.push_str(t);
            for v in row {
                // `{:?}` prints the shortest string that round-trips the f64.
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(source: &str, window: usize) -> Result<Self> {
        let mut lines = source.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: "embeddings".into(),
            line: line + 1,
            message,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty embedding file".into()))?;
        let mut head = header.split_whitespace().map(str::parse::<usize>);
        let (v, d) = match (head.next(), head.next()) {
            (Some(Ok(v)), Some(Ok(d))) => (v, d),
            _ => return Err(parse_err(0, "expected `V D` header".into())),
        };
        let mut tokens = Vec::with_capacity(v);
        let mut matrix = Array2::zeros((v, d));
        for (row, (ln, line)) in lines.filter(|(_, l)| !l.trim().is_empty()).enumerate() {
            if row >= v {
                return Err(parse_err(ln, format!("more than {v} rows")));
            }
            let mut parts = line.split(' ');
            tokens.push(parts.next().unwrap_or_default().to_string());
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|e| parse_err(ln, e.to_string())))
                .collect::<Result<_>>()?;
            if values.len() != d {
                return Err(parse_err(ln, format!("expected {d} values, got {}", values.len())));
            }
            matrix.row_mut(row).assign(&Array1::from(values));
        }
        if tokens.len() != v {
            return Err(parse_err(v, format!("expected {v} rows, got {}", tokens.len())));
        }
        Self::new(tokens, matrix, window)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load(path: &Path, window: usize) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::from_text(&source, window)
    }
}

/// Mean of the embeddings of in-vocabulary tokens among the first
/// [`MAX_TOKENS`]; zero when there are none.
pub fn mean_pool(embeddings: &EmbeddingMatrix, text: &TokenizedText) -> Array1<f64> {
    let mut sum = Array1::zeros(embeddings.dim());
    let mut n = 0usize;
    for t in text.tokens.iter().take(MAX_TOKENS) {
        if let Some(v) = embeddings.vector(t) {
            sum += &v;
            n += 1;
        }
    }
    if n > 0 {
        sum /= n as f64;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            array![[3.0, 4.0], [0.0, 2.0], [-1.0, 0.0]],
            10,
        )
        .unwrap()
    }

    fn toks(s: &str) -> TokenizedText {
        TokenizedText::new(s.split_whitespace().map(str::to_string).collect())
    }

    #[test]
    fn rows_normalized() {
        let e = toy();
        for row in e.matrix().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(e.vector("a").unwrap().to_vec(), vec![0.6, 0.8]);
    }

    #[test]
    fn mean_pool_cases() {
        let e = toy();
        assert_eq!(mean_pool(&e, &toks("a")), array![0.6, 0.8]);
        assert_eq!(mean_pool(&e, &toks("")), array![0.0, 0.0]);
        assert_eq!(mean_pool(&e, &toks("zz yy")), array![0.0, 0.0]);
        let m = mean_pool(&e, &toks("a b oov"));
        assert!((m[0] - 0.3).abs() < 1e-12 && (m[1] - 0.9).abs() < 1e-12);
        assert!(m.dot(&m).sqrt() <= 1.0);
    }

    #[test]
    fn mean_pool_ignores_tokens_past_limit() {
        let e = toy();
        let mut words = vec!["a"; MAX_TOKENS];
        words.push("c");
        let m = mean_pool(&e, &toks(&words.join(" ")));
        assert!((m[0] - 0.6).abs() < 1e-12 && (m[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn text_format_round_trip() {
        let e = toy();
        let back = EmbeddingMatrix::from_text(&e.to_text(), 10).unwrap();
        assert_eq!(back, e);
        assert!(EmbeddingMatrix::from_text("2 2\na 1 0\n", 10).is_err());
    }

    #[test]
    fn sparse_concat_and_dense() {
        let a = SparseVec::from_dense(array![0.0, 1.0].view());
        let b = SparseVec::from_dense(array![2.0, 0.0, 3.0].view());
        let c = SparseVec::concat(&[a, SparseVec::zeros(1), b]);
        assert_eq!(c.to_dense(), array![0.0, 1.0, 0.0, 2.0, 0.0, 3.0]);
    }
}
