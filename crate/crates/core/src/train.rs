//! Minibatch training and random hyperparameter search.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Class;
use crate::error::{Error, Result};
use crate::model::{init_classifier, Classifier, Encoded, Encoder, HyperParams, Pipeline};
use crate::nn::{objective, AdamConfig, AdamState, ElasticNet, Network, Parameter};
use crate::rng::{self, derive_seed, fisher_yates, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Also apply the elastic net to the output layer's weights.
    pub regularize_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 500,
            adam: AdamConfig::default(),
            regularize_output: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "epochs ({}) and batch size ({}) must be positive",
                self.epochs, self.batch_size
            )));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean objective (cross-entropy plus penalty) over each epoch's batches,
    /// weighted by batch size.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Passed to the observer after every optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct StepEvent {
    pub epoch: usize,
    pub batch: usize,
    pub step: u64,
    pub loss: f64,
}

fn norms(params: &[&Parameter]) -> String {
    params
        .iter()
        .map(|p| format!("{}={:.6e}", p.name, p.value.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Fits a network with Adam. Each epoch visits the training set in a fresh
/// seeded order; the last partial batch is kept.
pub fn train<N: Network>(
    net: &mut N,
    inputs: &[N::Input],
    labels: &[Class],
    reg: ElasticNet,
    config: &TrainConfig,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(&StepEvent, &N)>,
) -> Result<TrainReport> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let mut adam = AdamState::new(config.adam, &net.parameters());
    let order_seed = derive_seed(seed, streams::BATCHES);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.sort_unstable();
        fisher_yates(&mut order, derive_seed(order_seed, epoch as u64));
        let mut total = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<&N::Input> = idx.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<Class> = idx.iter().map(|&i| labels[i]).collect();
            let loss = objective(net, &xs, &ys, reg, true)?;
            let finite_grads = net.parameters().iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
            if !loss.is_finite() || !finite_grads {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batch}; parameter norms: {}",
                    norms(&net.parameters())
                )));
            }
            adam.step(&mut net.parameters_mut())?;
            total += loss * idx.len() as f64;
            if let Some(obs) = observer.as_mut() {
                obs(
                    &StepEvent {
                        epoch,
                        batch,
                        step: adam.steps(),
                        loss,
                    },
                    net,
                );
            }
        }
        epoch_losses.push(total / inputs.len() as f64);
    }
    Ok(TrainReport {
        epoch_losses,
        steps: adam.steps(),
    })
}

/// Initializes and trains the classifier of a pipeline.
pub fn fit_classifier(
    pipeline: Pipeline,
    encoder: &Encoder,
    inputs: &Encoded,
    labels: &[Class],
    hp: &HyperParams,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Classifier, TrainReport)> {
    let mut init = rng::stream(seed, streams::INIT);
    let mut classifier = init_classifier(pipeline, encoder, hp, &mut init)?;
    if config.regularize_output {
        for p in classifier.parameters_mut() {
            if p.name == "output.weight" {
                p.regularized = true;
            }
        }
    }
    let reg = ElasticNet::new(hp.l1, hp.l2)?;
    let report = match (&mut classifier, inputs) {
        (Classifier::ConvLstm(m), Encoded::Tokens(x)) => train(m, x, labels, reg, config, seed, None)?,
        (Classifier::Mlp(m), Encoded::Concat(x)) => train(m, x, labels, reg, config, seed, None)?,
        (Classifier::LstmVectors(m), Encoded::Sequences(x)) => train(m, x, labels, reg, config, seed, None)?,
        _ => return Err(Error::Config(format!("inputs do not match pipeline {pipeline}"))),
    };
    Ok((classifier, report))
}

/// Fraction of inputs whose predicted class equals the label.
pub fn accuracy(classifier: &Classifier, inputs: &Encoded, labels: &[Class]) -> Result<f64> {
    let preds = classifier.predict(inputs)?;
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| p.predicted_class == **y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Candidate values of each hyperparameter; configurations are the
/// Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub filters: Vec<usize>,
    pub hidden: Vec<usize>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

const PENALTIES: [f64; 9] = [0.0, 1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3];

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            filters: vec![3, 6, 9],
            hidden: vec![10, 25, 50, 75, 100, 150, 200],
            l1: PENALTIES.to_vec(),
            l2: PENALTIES.to_vec(),
        }
    }
}

impl SearchGrid {
    pub fn size(&self) -> usize {
        self.filters.len() * self.hidden.len() * self.l1.len() * self.l2.len()
    }

    /// Configuration at a mixed-radix index (filters slowest, l2 fastest).
    pub fn config(&self, index: usize) -> HyperParams {
        let mut i = index;
        let l2 = self.l2[i % self.l2.len()];
        i /= self.l2.len();
        let l1 = self.l1[i % self.l1.len()];
        i /= self.l1.len();
        let hidden = self.hidden[i % self.hidden.len()];
        i /= self.hidden.len();
        HyperParams {
            filters: self.filters[i],
            hidden,
            l1,
            l2,
        }
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.filters.contains(&hp.filters)
            && self.hidden.contains(&hp.hidden)
            && self.l1.contains(&hp.l1)
            && self.l2.contains(&hp.l2)
    }

    /// `n` distinct configurations drawn uniformly without replacement.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<HyperParams>> {
        let size = self.size();
        if size == 0 {
            return Err(Error::Config("search grid has an empty axis".into()));
        }
        if n == 0 || n > size {
            return Err(Error::Config(format!(
                "cannot draw {n} distinct configurations from a grid of {size}"
            )));
        }
        let mut rng = rng::stream(seed, streams::SEARCH);
        Ok(sample(&mut rng, size, n).into_iter().map(|i| self.config(i)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub hyperparams: HyperParams,
    pub validation_accuracy: f64,
    /// Seed the trial's model was trained with; retraining with it
    /// reproduces the model exactly.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub seed: u64,
    pub trials: Vec<TrialResult>,
    /// Index of the winning trial.
    pub best: usize,
}

impl SearchResult {
    pub fn winner(&self) -> &TrialResult {
        &self.trials[self.best]
    }
}

/// Seed of trial `i` under a search seed.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, streams::TRIALS + trial as u64)
}

/// Scores `n_trials` sampled configurations with `evaluate(config, seed)`
/// (trials run in parallel). The winner has the highest score, the earliest
/// trial on ties.
pub fn random_search<F>(grid: &SearchGrid, n_trials: usize, seed: u64, evaluate: F) -> Result<SearchResult>
where
    F: Fn(&HyperParams, u64) -> Result<f64> + Sync,
{
    let configs = grid.sample(n_trials, seed)?;
    let trials = configs
        .par_iter()
        .enumerate()
        .map(|(i, hp)| {
            let s = trial_seed(seed, i);
            let acc = evaluate(hp, s)?;
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Numeric(format!("trial {i} scored {acc}")));
            }
            Ok(TrialResult {
                trial: i,
                hyperparams: *hp,
                validation_accuracy: acc,
                seed: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.validation_accuracy > trials[best].validation_accuracy {
            best = i;
        }
    }
    Ok(SearchResult { seed, trials, best })
}

/// Random search for a pipeline: every trial trains on `train` and is scored
/// by accuracy on `validation`.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    pipeline: Pipeline,
    encoder: &Encoder,
    train_set: (&Encoded, &[Class]),
    validation: (&Encoded, &[Class]),
    grid: &SearchGrid,
    n_trials: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<SearchResult> {
    random_search(grid, n_trials, seed, |hp, s| {
        let (model, _) = fit_classifier(pipeline, encoder, train_set.0, train_set.1, hp, config, s)?;
        accuracy(&model, validation.0, validation.1)
    })
}
