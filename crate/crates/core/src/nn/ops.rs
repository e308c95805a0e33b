use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::corpus::Class;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Width-one convolution without bias: `scores[k][n] = x_n . f_k`.
///
/// With unit-norm filters and embeddings every score is a cosine.
pub fn conv_scores(filters: ArrayView2<f64>, text: ArrayView2<f64>) -> Result<Array2<f64>> {
    if filters.ncols() != text.ncols() {
        return Err(Error::Dimension(format!(
            "filters have dimension {}, token rows {}",
            filters.ncols(),
            text.ncols()
        )));
    }
    Ok(filters.dot(&text.t()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pooling {
    pub values: Array1<f64>,
    pub argmax: Vec<usize>,
}

/// Max over token positions for each filter row; ties go to the lowest index.
/// Padded positions are zero rows, so they take part with score 0.
pub fn max_over_time(scores: ArrayView2<f64>) -> Pooling {
    let mut values = Array1::zeros(scores.nrows());
    let mut argmax = vec![0; scores.nrows()];
    for (k, row) in scores.axis_iter(Axis(0)).enumerate() {
        let mut best = f64::NEG_INFINITY;
        for (n, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                argmax[k] = n;
            }
        }
        values[k] = if row.is_empty() { 0.0 } else { best };
    }
    Pooling { values, argmax }
}

/// Max-shifted softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let p = softmax(row.view());
        row.assign(&p);
    }
    out
}

/// Returns `(-ln p_label, p)`.
pub fn softmax_cross_entropy(logits: ArrayView1<f64>, label: Class) -> Result<(f64, Array1<f64>)> {
    if logits.len() != 3 {
        return Err(Error::Dimension(format!("expected 3 logits, got {}", logits.len())));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits}")));
    }
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_z = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    let loss = log_z - logits[label.index()];
    Ok((loss, softmax(logits)))
}
