use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, Parameter};
use crate::error::{Error, Result};
use crate::vectorize::SparseVec;

/// A batch of input sequences, one entry per time step.
pub enum SeqInput<'a> {
    /// `steps[t]` is a batch x input matrix.
    Dense(Vec<Array2<f64>>),
    /// `steps[t][b]` is sample `b`'s input at step `t`.
    Sparse(Vec<Vec<&'a SparseVec>>),
}

impl SeqInput<'_> {
    pub fn steps(&self) -> usize {
        match self {
            SeqInput::Dense(x) => x.len(),
            SeqInput::Sparse(x) => x.len(),
        }
    }

    pub fn batch(&self) -> usize {
        match self {
            SeqInput::Dense(x) => x.first().map_or(0, |m| m.nrows()),
            SeqInput::Sparse(x) => x.first().map_or(0, Vec::len),
        }
    }
}

struct StepCache {
    input_gate: Array2<f64>,
    forget_gate: Array2<f64>,
    candidate: Array2<f64>,
    output_gate: Array2<f64>,
    c_prev: Array2<f64>,
    h_prev: Array2<f64>,
    tanh_c: Array2<f64>,
}

pub struct LstmCache {
    steps: Vec<StepCache>,
    pub h_last: Array2<f64>,
}

/// Many-to-one LSTM. Gate blocks in the packed weights are ordered
/// input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub input: Parameter,
    pub recurrent: Parameter,
    pub bias: Parameter,
}

impl Lstm {
    /// Glorot-uniform weights, zero biases except the forget gate at 1.
    pub fn new(name: &str, inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = Parameter::glorot(format!("{name}.input"), inputs, 4 * hidden, rng).regularized();
        let recurrent = Parameter::glorot(format!("{name}.recurrent"), hidden, 4 * hidden, rng).regularized();
        let mut bias = Parameter::zeros(format!("{name}.bias"), 1, 4 * hidden);
        bias.value.slice_mut(s![0, hidden..2 * hidden]).fill(1.0);
        Lstm { input, recurrent, bias }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.value.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.input.value.nrows()
    }

    pub fn parameters(&self) -> [&Parameter; 3] {
        [&self.input, &self.recurrent, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.input, &mut self.recurrent, &mut self.bias]
    }

    fn project(&self, x: &SeqInput, t: usize) -> Result<Array2<f64>> {
        let w = &self.input.value;
        match x {
            SeqInput::Dense(steps) => {
                let xt = &steps[t];
                if xt.ncols() != w.nrows() {
                    return Err(Error::Dimension(format!(
                        "LSTM expects {} inputs, got {}",
                        w.nrows(),
                        xt.ncols()
                    )));
                }
                Ok(xt.dot(w))
            }
            SeqInput::Sparse(steps) => {
                let mut out = Array2::zeros((steps[t].len(), w.ncols()));
                for (mut row, v) in out.rows_mut().into_iter().zip(&steps[t]) {
                    if v.dim != w.nrows() {
                        return Err(Error::Dimension(format!(
                            "LSTM expects {} inputs, got {}",
                            w.nrows(),
                            v.dim
                        )));
                    }
                    for (i, val) in v.iter() {
                        row.scaled_add(val, &w.row(i));
                    }
                }
                Ok(out)
            }
        }
    }

    fn gates(&self, pre: Array2<f64>) -> [Array2<f64>; 4] {
        let h = self.hidden();
        let block = |k: usize| pre.slice(s![.., k * h..(k + 1) * h]).to_owned();
        [
            block(0).mapv_into(sigmoid),
            block(1).mapv_into(sigmoid),
            block(2).mapv_into(f64::tanh),
            block(3).mapv_into(sigmoid),
        ]
    }

    pub fn forward(&self, x: &SeqInput) -> Result<LstmCache> {
        let (b, h) = (x.batch(), self.hidden());
        let mut h_t = Array2::zeros((b, h));
        let mut c_t = Array2::zeros((b, h));
        let mut steps = Vec::with_capacity(x.steps());
        for t in 0..x.steps() {
            let pre = self.project(x, t)? + h_t.dot(&self.recurrent.value) + &self.bias.value;
            let [i, f, g, o] = self.gates(pre);
            let c_next = &f * &c_t + &i * &g;
            let tanh_c = c_next.mapv(f64::tanh);
            let h_next = &o * &tanh_c;
            steps.push(StepCache {
                input_gate: i,
                forget_gate: f,
                candidate: g,
                output_gate: o,
                c_prev: std::mem::replace(&mut c_t, c_next),
                h_prev: std::mem::replace(&mut h_t, h_next),
                tanh_c,
            });
        }
        Ok(LstmCache { steps, h_last: h_t })
    }

    /// Backpropagates a gradient on the final hidden state. Accumulates
    /// parameter gradients; for dense inputs returns the per-step input
    /// gradients.
    pub fn backward(&mut self, x: &SeqInput, cache: &LstmCache, dh_last: &Array2<f64>) -> Option<Vec<Array2<f64>>> {
        let (b, h) = (x.batch(), self.hidden());
        let mut dh = dh_last.clone();
        let mut dc = Array2::<f64>::zeros((b, h));
        let mut dx = Vec::with_capacity(x.steps());
        let mut d_pre = Array2::<f64>::zeros((b, 4 * h));

        for (t, st) in cache.steps.iter().enumerate().rev() {
            // dc += dh * o * (1 - tanh(c)^2)
            Zip::from(&mut dc)
                .and(&dh)
                .and(&st.output_gate)
                .and(&st.tanh_c)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
            Zip::from(d_pre.slice_mut(s![.., 0..h]))
                .and(&dc)
                .and(&st.candidate)
                .and(&st.input_gate)
                .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
            Zip::from(d_pre.slice_mut(s![.., h..2 * h]))
                .and(&dc)
                .and(&st.c_prev)
                .and(&st.forget_gate)
                .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
            Zip::from(d_pre.slice_mut(s![.., 2 * h..3 * h]))
                .and(&dc)
                .and(&st.input_gate)
                .and(&st.candidate)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(d_pre.slice_mut(s![.., 3 * h..4 * h]))
                .and(&dh)
                .and(&st.tanh_c)
                .and(&st.output_gate)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));

            if !self.recurrent.frozen {
                self.recurrent.grad += &st.h_prev.t().dot(&d_pre);
            }
            if !self.bias.frozen {
                self.bias.grad += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            match x {
                SeqInput::Dense(steps) => {
                    if !self.input.frozen {
                        self.input.grad += &steps[t].t().dot(&d_pre);
                    }
                    dx.push(d_pre.dot(&self.input.value.t()));
                }
                SeqInput::Sparse(steps) => {
                    if !self.input.frozen {
                        for (v, d) in steps[t].iter().zip(d_pre.rows()) {
                            for (i, val) in v.iter() {
                                self.input.grad.row_mut(i).scaled_add(val, &d);
                            }
                        }
                    }
                }
            }

            dh = d_pre.dot(&self.recurrent.value.t());
            dc *= &st.forget_gate;
        }

        match x {
            SeqInput::Dense(_) => {
                dx.reverse();
                Some(dx)
            }
            SeqInput::Sparse(_) => None,
        }
    }

    /// One cell update for a single sample: returns `(h', c')`.
    pub fn step(
        &self,
        input: ArrayView1<f64>,
        h: ArrayView1<f64>,
        c: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let hid = self.hidden();
        if input.len() != self.inputs() || h.len() != hid || c.len() != hid {
            return Err(Error::Dimension(format!(
                "LSTM step expects input {} and state {}, got {}, {}, {}",
                self.inputs(),
                hid,
                input.len(),
                h.len(),
                c.len()
            )));
        }
        let pre = input.dot(&self.input.value) + h.dot(&self.recurrent.value) + self.bias.value.row(0);
        let [i, f, g, o] = self.gates(pre.insert_axis(Axis(0)));
        let c_next = &f.row(0) * &c + &i.row(0) * &g.row(0);
        let h_next = &o.row(0) * &c_next.mapv(f64::tanh);
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_parameters_give_zero_hidden_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lstm = Lstm::new("l", 3, 4, &mut rng);
        for p in lstm.parameters_mut() {
            p.value.fill(0.0);
        }
        let (h, _) = lstm
            .step(
                Array1::from(vec![0.5, -2.0, 3.0]).view(),
                Array1::zeros(4).view(),
                Array1::zeros(4).view(),
            )
            .unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_input_and_state_with_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = Lstm::new("l", 3, 4, &mut rng);
        assert!(lstm.bias.value.slice(s![0, 4..8]).iter().all(|v| *v == 1.0));
        let (h, c) = lstm
            .step(
                Array1::zeros(3).view(),
                Array1::zeros(4).view(),
                Array1::zeros(4).view(),
            )
            .unwrap();
        assert!(c.iter().all(|v| *v == 0.0));
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = Lstm::new("l", 3, 4, &mut rng);
        assert!(lstm
            .step(
                Array1::zeros(2).view(),
                Array1::zeros(4).view(),
                Array1::zeros(4).view()
            )
            .is_err());
    }

    #[test]
    fn batched_forward_matches_repeated_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = Lstm::new("l", 3, 5, &mut rng);
        let xs: Vec<Array2<f64>> = (0..4).map(|_| random(&mut rng, (2, 3))).collect();
        let cache = lstm.forward(&SeqInput::Dense(xs.clone())).unwrap();
        for b in 0..2 {
            let mut h = Array1::zeros(5);
            let mut c = Array1::zeros(5);
            for x in &xs {
                (h, c) = lstm.step(x.row(b), h.view(), c.view()).unwrap();
            }
            for (a, e) in cache.h_last.row(b).iter().zip(h.iter()) {
                assert!((a - e).abs() < 1e-14);
            }
        }
    }

    /// Central differences on `L = sum(w * h_last)` over all parameters and inputs.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lstm = Lstm::new("l", 3, 4, &mut rng);
        for p in lstm.parameters_mut() {
            p.value.mapv_inplace(|v| v + 0.3 * (v.sin()));
        }
        let xs: Vec<Array2<f64>> = (0..5).map(|_| random(&mut rng, (2, 3))).collect();
        let weights = random(&mut rng, (2, 4));
        let loss = |l: &Lstm, xs: &[Array2<f64>]| {
            let cache = l.forward(&SeqInput::Dense(xs.to_vec())).unwrap();
            (&cache.h_last * &weights).sum()
        };

        let input = SeqInput::Dense(xs.clone());
        let cache = lstm.forward(&input).unwrap();
        let dx = lstm.backward(&input, &cache, &weights).unwrap();

        let h = 1e-5;
        let mut worst = 0.0f64;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for pi in 0..3 {
            let analytic = lstm.parameters()[pi].grad.clone();
            for idx in 0..analytic.len() {
                let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
                let mut up = lstm.clone();
                up.parameters_mut()[pi].value[[r, c]] += h;
                let mut down = lstm.clone();
                down.parameters_mut()[pi].value[[r, c]] -= h;
                let fd = (loss(&up, &xs) - loss(&down, &xs)) / (2.0 * h);
                worst = worst.max(rel(analytic[[r, c]], fd));
            }
        }
        for t in 0..5 {
            for b in 0..2 {
                for j in 0..3 {
                    let mut up = xs.clone();
                    up[t][[b, j]] += h;
                    let mut down = xs.clone();
                    down[t][[b, j]] -= h;
                    let fd = (loss(&lstm, &up) - loss(&lstm, &down)) / (2.0 * h);
                    worst = worst.max(rel(dx[t][[b, j]], fd));
                }
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn sparse_inputs_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dense = Lstm::new("l", 6, 3, &mut rng);
        let mut sparse = dense.clone();
        let xs: Vec<Array2<f64>> = (0..3)
            .map(|_| random(&mut rng, (2, 6)).mapv(|v| if v > 0.2 { v } else { 0.0 }))
            .collect();
        let sv: Vec<Vec<SparseVec>> = xs
            .iter()
            .map(|m| m.rows().into_iter().map(SparseVec::from_dense).collect())
            .collect();
        let sref: Vec<Vec<&SparseVec>> = sv.iter().map(|v| v.iter().collect()).collect();
        let dense_in = SeqInput::Dense(xs);
        let sparse_in = SeqInput::Sparse(sref);
        let cd = dense.forward(&dense_in).unwrap();
        let cs = sparse.forward(&sparse_in).unwrap();
        assert!((&cd.h_last - &cs.h_last).iter().all(|d| d.abs() < 1e-14));
        let dh = Array2::ones((2, 3));
        dense.backward(&dense_in, &cd, &dh);
        sparse.backward(&sparse_in, &cs, &dh);
        assert!((&dense.input.grad - &sparse.input.grad).iter().all(|d| d.abs() < 1e-14));
    }
}
