use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{objective, ElasticNet, Network};
use crate::corpus::Class;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// coordinates with both gradients near zero do not dominate.
    pub floor: f64,
    /// Rounding allowance in units of machine epsilon times the objective.
    /// The central difference cannot resolve anything finer than about
    /// `eps * |f| / step`, so discrepancies below
    /// `rounding_ulps * eps * (|f+| + |f-|) / (2 step)` are treated as zero.
    pub rounding_ulps: f64,
    /// Coordinates checked per parameter; `None` checks all of them.
    pub max_coordinates: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            floor: 1e-8,
            rounding_ulps: 8.0,
            max_coordinates: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: bool,
    /// Coordinates within one step of the L1 kink at zero, left unchecked.
    pub kinks: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_relative_error: f64,
}

/// `|a - n| / max(|a|, |n|, floor)` after discounting the finite-difference
/// rounding bound from `|a - n|`.
fn resolved_error(analytic: f64, numeric: f64, up: f64, down: f64, config: &GradCheckConfig) -> f64 {
    let rounding = config.rounding_ulps * f64::EPSILON * (up.abs() + down.abs()) / (2.0 * config.step);
    let excess = ((analytic - numeric).abs() - rounding).max(0.0);
    excess / analytic.abs().max(numeric.abs()).max(config.floor)
}

/// Compares the analytic gradient of the training objective with central
/// differences. Frozen parameters are reported as skipped. With an L1 term,
/// regularized coordinates closer to zero than the step straddle the kink of
/// `|w|` and are counted in `kinks` instead of compared.
pub fn gradient_check<N: Network>(
    net: &mut N,
    batch: &[&N::Input],
    labels: &[Class],
    reg: ElasticNet,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    objective(net, batch, labels, reg, true)?;
    let analytic: Vec<_> = net.parameters().iter().map(|p| p.grad.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Vec::with_capacity(analytic.len());
    let mut worst = 0.0f64;

    for (pi, grad) in analytic.iter().enumerate() {
        let (name, frozen, len, cols, kinked) = {
            let p = &net.parameters()[pi];
            (
                p.name.clone(),
                p.frozen,
                p.value.len(),
                p.value.ncols(),
                p.regularized && reg.l1 > 0.0,
            )
        };
        if frozen {
            params.push(ParamCheck {
                name,
                checked: 0,
                skipped: true,
                kinks: 0,
                max_relative_error: 0.0,
                max_absolute_error: 0.0,
            });
            continue;
        }
        let coords: Vec<usize> = match config.max_coordinates {
            Some(k) if k < len => {
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let (mut rel, mut abs, mut kinks) = (0.0f64, 0.0f64, 0usize);
        for &idx in &coords {
            let at = [idx / cols, idx % cols];
            let original = net.parameters()[pi].value[at];
            if kinked && original.abs() < config.step {
                kinks += 1;
                continue;
            }
            net.parameters_mut()[pi].value[at] = original + config.step;
            let up = objective(net, batch, labels, reg, false)?;
            net.parameters_mut()[pi].value[at] = original - config.step;
            let down = objective(net, batch, labels, reg, false)?;
            net.parameters_mut()[pi].value[at] = original;
            let numeric = (up - down) / (2.0 * config.step);
            let a = grad[at];
            rel = rel.max(resolved_error(a, numeric, up, down, config));
            abs = abs.max((a - numeric).abs());
        }
        worst = worst.max(rel);
        params.push(ParamCheck {
            name,
            checked: coords.len() - kinks,
            skipped: false,
            kinks,
            max_relative_error: rel,
            max_absolute_error: abs,
        });
    }
    Ok(GradCheckReport {
        params,
        max_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameter;

    #[test]
    fn relative_error_floor() {
        let c = GradCheckConfig {
            rounding_ulps: 0.0,
            ..Default::default()
        };
        assert_eq!(resolved_error(1.0, 1.0, 1.0, 1.0, &c), 0.0);
        assert_eq!(resolved_error(2.0, 1.0, 1.0, 1.0, &c), 0.5);
        assert!((resolved_error(1e-12, 0.0, 1.0, 1.0, &c) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn rounding_bound_discounted() {
        let c = GradCheckConfig::default();
        let bound = 8.0 * f64::EPSILON * 2.0 / 2e-5;
        assert_eq!(resolved_error(1e-6, 1e-6 + 0.5 * bound, 1.0, 1.0, &c), 0.0);
        let numeric = 1e-6 + bound + 1e-9;
        let e = resolved_error(1e-6, numeric, 1.0, 1.0, &c);
        assert!((e - 1e-9 / numeric).abs() < 1e-12, "{e}");
        assert!((resolved_error(1.0, 2.0, 1.0, 1.0, &c) - (0.5 - bound / 2.0)).abs() < 1e-15);
    }

    /// Softmax regression whose analytic gradient is scaled by `1 + bias`.
    struct Linear {
        weight: Parameter,
        bias: f64,
    }

    impl Network for Linear {
        type Input = [f64; 2];

        fn parameters(&self) -> Vec<&Parameter> {
            vec![&self.weight]
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            vec![&mut self.weight]
        }

        fn probabilities(&self, batch: &[&[f64; 2]]) -> Result<ndarray::Array2<f64>> {
            let mut z = self.logits(batch);
            for mut row in z.rows_mut() {
                let p = crate::nn::softmax(row.view());
                row.assign(&p);
            }
            Ok(z)
        }

        fn loss(&self, batch: &[&[f64; 2]], labels: &[Class]) -> Result<f64> {
            Ok(crate::nn::cross_entropy_logits(&self.logits(batch), labels)?.0)
        }

        fn loss_and_grad(&mut self, batch: &[&[f64; 2]], labels: &[Class]) -> Result<f64> {
            let x = self.inputs(batch);
            let (loss, _, dz) = crate::nn::cross_entropy_logits(&x.dot(&self.weight.value), labels)?;
            self.weight.grad += &(x.t().dot(&dz) * (1.0 + self.bias));
            Ok(loss)
        }
    }

    impl Linear {
        fn inputs(&self, batch: &[&[f64; 2]]) -> ndarray::Array2<f64> {
            ndarray::Array2::from_shape_fn((batch.len(), 2), |(i, j)| batch[i][j])
        }

        fn logits(&self, batch: &[&[f64; 2]]) -> ndarray::Array2<f64> {
            self.inputs(batch).dot(&self.weight.value)
        }
    }

    #[test]
    fn small_gradient_errors_still_detected() {
        let xs = [[0.3, -1.2], [2.0, 0.5]];
        let batch: Vec<&[f64; 2]> = xs.iter().collect();
        let labels = [Class::Active, Class::Suspended];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let weight = Parameter::glorot("w", 2, 3, &mut rng);
        let reg = ElasticNet::new(0.0, 0.0).unwrap();
        let config = GradCheckConfig::default();

        let mut exact = Linear {
            weight: weight.clone(),
            bias: 0.0,
        };
        let report = gradient_check(&mut exact, &batch, &labels, reg, &config).unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");

        let mut wrong = Linear { weight, bias: 1e-5 };
        let report = gradient_check(&mut wrong, &batch, &labels, reg, &config).unwrap();
        assert!(report.max_relative_error > 5e-6, "{report:?}");
    }
}
