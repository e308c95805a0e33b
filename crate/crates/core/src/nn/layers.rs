use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::Parameter;
use crate::error::{Error, Result};
use crate::vectorize::SparseVec;

/// `y = x W + b` on dense rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Affine {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Affine {
            weight: Parameter::glorot(format!("{name}.weight"), inputs, outputs, rng),
            bias: Parameter::zeros(format!("{name}.bias"), 1, outputs),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weight.value.nrows() {
            return Err(Error::Dimension(format!(
                "{}: input width {} but weight has {} rows",
                self.weight.name,
                x.ncols(),
                self.weight.value.nrows()
            )));
        }
        Ok(x.dot(&self.weight.value) + &self.bias.value)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        if !self.weight.frozen {
            self.weight.grad += &x.t().dot(dy);
        }
        if !self.bias.frozen {
            self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.weight.value.t())
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// `y = x W + b` for sparse input rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAffine {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl SparseAffine {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        SparseAffine {
            weight: Parameter::glorot(format!("{name}.weight"), inputs, outputs, rng),
            bias: Parameter::zeros(format!("{name}.bias"), 1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, xs: &[&SparseVec]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((xs.len(), self.weight.value.ncols()));
        for (mut row, x) in out.rows_mut().into_iter().zip(xs) {
            if x.dim != self.inputs() {
                return Err(Error::Dimension(format!(
                    "{}: input dimension {} but weight has {} rows",
                    self.weight.name,
                    x.dim,
                    self.inputs()
                )));
            }
            row.assign(&self.bias.value.row(0));
            for (i, v) in x.iter() {
                row.scaled_add(v, &self.weight.value.row(i));
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, xs: &[&SparseVec], dy: &Array2<f64>) {
        if !self.weight.frozen {
            for (x, d) in xs.iter().zip(dy.rows()) {
                for (i, v) in x.iter() {
                    self.weight.grad.row_mut(i).scaled_add(v, &d);
                }
            }
        }
        if !self.bias.frozen {
            self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
