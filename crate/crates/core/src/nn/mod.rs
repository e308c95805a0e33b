//! Small reverse-mode numeric kernel for the fixed architectures in
//! [`crate::model`]: every layer carries a hand-written backward pass.

mod adam;
mod check;
mod layers;
mod lstm;
mod ops;

pub use adam::{AdamConfig, AdamState};
pub use check::{gradient_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use layers::{Affine, SparseAffine};
pub use lstm::{Lstm, LstmCache, SeqInput};
pub use ops::{conv_scores, max_over_time, sigmoid, softmax, softmax_cross_entropy, softmax_rows, Pooling};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Class;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    None,
    /// Every row is projected back to unit Euclidean norm after each update.
    UnitNormRows,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub constraint: Constraint,
    pub frozen: bool,
    /// Included in the elastic-net penalty.
    pub regularized: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Parameter {
            name: name.into(),
            value,
            grad,
            constraint: Constraint::None,
            frozen: false,
            regularized: false,
        }
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(name: impl Into<String>, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit));
        Self::new(name, value)
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Array2::zeros((rows, cols)))
    }

    pub fn unit_rows(mut self) -> Self {
        self.constraint = Constraint::UnitNormRows;
        self.project();
        self
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn regularized(mut self) -> Self {
        self.regularized = true;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Applies the parameter's constraint.
    pub fn project(&mut self) {
        if self.constraint == Constraint::UnitNormRows {
            project_unit_rows(&mut self.value);
        }
    }
}

/// Rescales each row to unit norm; all-zero rows are left as they are.
pub fn project_unit_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElasticNet {
    pub l1: f64,
    pub l2: f64,
}

impl ElasticNet {
    pub fn new(l1: f64, l2: f64) -> Result<Self> {
        if !(l1 >= 0.0 && l2 >= 0.0) {
            return Err(Error::Config(format!(
                "penalties must be non-negative, got l1={l1} l2={l2}"
            )));
        }
        Ok(ElasticNet { l1, l2 })
    }

    /// `l1 * sum|w| + l2 * sum w^2`. With `accumulate`, adds
    /// `l1 * sign(w) + 2 * l2 * w` to the gradient (sign(0) = 0).
    pub fn apply(&self, p: &mut Parameter, accumulate: bool) -> f64 {
        if self.l1 == 0.0 && self.l2 == 0.0 {
            return 0.0;
        }
        let penalty: f64 = p.value.iter().map(|w| self.l1 * w.abs() + self.l2 * w * w).sum();
        if accumulate {
            let (l1, l2) = (self.l1, self.l2);
            ndarray::Zip::from(&mut p.grad).and(&p.value).for_each(|g, &w| {
                let sign = if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *g += l1 * sign + 2.0 * l2 * w;
            });
        }
        penalty
    }
}

/// Penalty over the regularized parameters of a network.
pub fn elastic_net(params: &mut [&mut Parameter], reg: ElasticNet, accumulate: bool) -> f64 {
    params
        .iter_mut()
        .filter(|p| p.regularized)
        .map(|p| reg.apply(p, accumulate))
        .sum()
}

/// A classifier over 3 classes trained by minibatch gradient descent.
pub trait Network {
    type Input;

    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    /// Class probabilities, one row per input.
    fn probabilities(&self, batch: &[&Self::Input]) -> Result<Array2<f64>>;

    /// Mean cross-entropy over the batch.
    fn loss(&self, batch: &[&Self::Input], labels: &[Class]) -> Result<f64>;

    /// Mean cross-entropy; adds its gradient into every non-frozen parameter.
    fn loss_and_grad(&mut self, batch: &[&Self::Input], labels: &[Class]) -> Result<f64>;
}

/// Training objective: mean cross-entropy plus the elastic-net penalty.
/// Zeroes and refills gradients when `backward` is set.
pub fn objective<N: Network>(
    net: &mut N,
    batch: &[&N::Input],
    labels: &[Class],
    reg: ElasticNet,
    backward: bool,
) -> Result<f64> {
    let loss = if backward {
        for p in net.parameters_mut() {
            p.zero_grad();
        }
        net.loss_and_grad(batch, labels)?
    } else {
        net.loss(batch, labels)?
    };
    let penalty = elastic_net(&mut net.parameters_mut(), reg, backward);
    Ok(loss + penalty)
}

pub(crate) fn check_labels(batch: usize, labels: &[Class]) -> Result<()> {
    if batch != labels.len() {
        return Err(Error::Dimension(format!("{batch} inputs for {} labels", labels.len())));
    }
    if batch == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    Ok(())
}

/// Mean softmax cross-entropy over logit rows. Returns the loss, the
/// probabilities and the gradient with respect to the logits,
/// `(p - onehot) / batch`.
pub(crate) fn cross_entropy_logits(logits: &Array2<f64>, labels: &[Class]) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let b = labels.len() as f64;
    let mut probs = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((row, mut p), label) in logits.rows().into_iter().zip(probs.rows_mut()).zip(labels) {
        let (l, q) = softmax_cross_entropy(row, *label)?;
        loss += l;
        p.assign(&q);
    }
    let mut dlogits = probs.clone();
    for (i, label) in labels.iter().enumerate() {
        dlogits[[i, label.index()]] -= 1.0;
    }
    dlogits /= b;
    Ok((loss / b, probs, dlogits))
}

/// Row-wise softmax, rejecting non-finite logits.
pub(crate) fn probabilities(logits: &Array2<f64>) -> Result<Array2<f64>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(softmax_rows(logits))
}
