//! Flat `key = value` run configuration.
//!
//! Grammar: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored; keys may appear once per file. Lists are comma
//! separated. Seed keys left empty inherit `seed`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{HyperParams, Pipeline};
use crate::nn::AdamConfig;
use crate::text::PrepConfig;
use crate::train::{SearchGrid, TrainConfig};
use crate::vectorize::CbowConfig;

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "2021", "base seed inherited by every empty *.seed key"),
    (
        "pipeline",
        "conv_lstm_w2v",
        "conv_lstm_w2v | lstm_tfidf | mlp_w2v | mlp_tfidf",
    ),
    (
        "labeled",
        "data/labeled.jsonl",
        "labeled corpus (JSONL), relative to the workdir",
    ),
    ("unlabeled", "data/unlabeled.txt", "unlabeled motions, one per line"),
    (
        "standardization",
        "data/standardization.tsv",
        "optional pattern<TAB>replacement table",
    ),
    ("synth.n_labeled", "3000", "labeled proceedings to generate"),
    ("synth.n_unlabeled", "3000", "unlabeled motions to generate"),
    ("synth.priors", "0.47,0.45,0.08", "class priors"),
    (
        "synth.signal_probability",
        "0.9",
        "chance that the last motion carries the class indicator",
    ),
    ("synth.filler_vocab", "8000", "filler vocabulary size"),
    ("synth.context_vocab", "200", "words in each class's context block"),
    (
        "synth.context_affinity",
        "0.5",
        "chance an indicator motion word comes from the class block",
    ),
    ("synth.min_motions", "1", "fewest motions per proceeding"),
    ("synth.max_motions", "5", "most motions per proceeding"),
    ("synth.min_tokens", "10", "fewest words per motion"),
    ("synth.max_tokens", "70", "most words per motion"),
    ("synth.seed", "", "generator seed"),
    ("prep.phrase_min_count", "5", "collocation discount"),
    ("prep.phrase_threshold", "10", "collocation score threshold"),
    ("prep.map_numbers", "false", "replace numbers with a placeholder token"),
    ("split.seed", "", "train/validation/test shuffle seed"),
    ("cbow.dim", "100", "embedding dimension"),
    ("cbow.window", "10", "context window on each side"),
    ("cbow.epochs", "5", "passes over the unlabeled corpus"),
    ("cbow.learning_rate", "0.025", "initial learning rate"),
    ("cbow.negatives", "5", "negative samples per target"),
    ("cbow.min_count", "2", "minimum token frequency"),
    ("cbow.seed", "", "embedding training seed"),
    ("tfidf.max_features", "4000", "TFIDF vocabulary cap"),
    ("train.epochs", "50", "classifier epochs"),
    ("train.batch_size", "500", "mini-batch size"),
    ("train.learning_rate", "0.005", "Adam learning rate"),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.epsilon", "1e-7", "Adam epsilon"),
    (
        "train.regularize_output",
        "false",
        "apply the elastic net to the output layer too",
    ),
    ("search.trials", "50", "random search trials"),
    ("search.filters", "3,6,9", "candidate filter counts"),
    ("search.hidden", "10,25,50,75,100,150,200", "candidate LSTM/MLP widths"),
    (
        "search.l1",
        "0,1e-6,5e-6,1e-5,5e-5,1e-4,5e-4,1e-3,5e-3",
        "candidate L1 strengths",
    ),
    (
        "search.l2",
        "0,1e-6,5e-6,1e-5,5e-5,1e-4,5e-4,1e-3,5e-3",
        "candidate L2 strengths",
    ),
    ("search.seed", "", "search sampling and trial seed"),
    (
        "model.filters",
        "",
        "fixed filter count (set all model.* keys to skip tuning)",
    ),
    ("model.hidden", "", "fixed hidden width"),
    ("model.l1", "", "fixed L1 strength"),
    ("model.l2", "", "fixed L2 strength"),
    ("model.seed", "", "initialization seed for fixed hyperparameters"),
    ("eval.resamples", "100", "bootstrap resamples"),
    ("eval.seed", "", "bootstrap seed"),
    ("interpret.grid_points", "41", "PDP grid size on [-1, 1]"),
    ("interpret.top_tokens", "3", "nearest tokens listed per filter"),
    (
        "interpret.stability_seeds",
        "0",
        "extra seeds retrained to report recurring filter tokens",
    ),
];

/// Resolved configuration: defaults overlaid with file and command-line values.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// Parses the config file grammar into ordered pairs.
pub fn parse_config(source: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if let Some(first) = seen.insert(k.clone(), n + 1) {
            return Err(Error::Config(format!(
                "{origin}:{}: key `{k}` already set on line {first}",
                n + 1
            )));
        }
        out.push((k, v));
    }
    Ok(out)
}

fn list<T: std::str::FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse list item `{}`", s.trim())))
        })
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let mut c = RunConfig::default();
        for (k, v) in parse_config(&source, &path.display().to_string())? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
    }

    /// Applies a `key=value` assignment from the command line.
    pub fn assign(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse `{raw}`")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(Error::Config(format!("{key}: expected true or false, got `{other}`"))),
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        Pipeline::parse(self.get("pipeline"))
    }

    /// A seed key, falling back to `seed` when empty.
    pub fn seed(&self, key: &str) -> Result<u64> {
        if key != "seed" && self.get(key).is_empty() {
            return self.parse("seed");
        }
        self.parse(key)
    }

    pub fn seeds(&self) -> Result<BTreeMap<String, u64>> {
        KEYS.iter()
            .filter(|(k, _, _)| *k == "seed" || k.ends_with(".seed"))
            .map(|(k, _, _)| Ok((k.to_string(), self.seed(k)?)))
            .collect()
    }

    pub fn synthetic(&self) -> Result<SyntheticSpec> {
        let priors: Vec<f64> = list("synth.priors", self.get("synth.priors"))?;
        let priors: [f64; 3] = priors
            .try_into()
            .map_err(|_| Error::Config("synth.priors: expected three values".into()))?;
        let spec = SyntheticSpec {
            n_labeled: self.parse("synth.n_labeled")?,
            n_unlabeled_motions: self.parse("synth.n_unlabeled")?,
            class_priors: priors,
            signal_probability: self.parse("synth.signal_probability")?,
            filler_vocab_size: self.parse("synth.filler_vocab")?,
            context_vocab_size: self.parse("synth.context_vocab")?,
            context_affinity: self.parse("synth.context_affinity")?,
            motions_per_proceeding: (self.parse("synth.min_motions")?, self.parse("synth.max_motions")?),
            tokens_per_motion: (self.parse("synth.min_tokens")?, self.parse("synth.max_tokens")?),
            seed: self.seed("synth.seed")?,
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn prep(&self) -> Result<PrepConfig> {
        Ok(PrepConfig {
            phrase_min_count: self.parse("prep.phrase_min_count")?,
            phrase_threshold: self.parse("prep.phrase_threshold")?,
            map_numbers: self.flag("prep.map_numbers")?,
        })
    }

    pub fn cbow(&self) -> Result<CbowConfig> {
        Ok(CbowConfig {
            dim: self.parse("cbow.dim")?,
            window: self.parse("cbow.window")?,
            epochs: self.parse("cbow.epochs")?,
            learning_rate: self.parse("cbow.learning_rate")?,
            negatives: self.parse("cbow.negatives")?,
            min_count: self.parse("cbow.min_count")?,
            seed: self.seed("cbow.seed")?,
        })
    }

    pub fn tfidf_max_features(&self) -> Result<usize> {
        self.parse("tfidf.max_features")
    }

    pub fn training(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.parse("train.epochs")?,
            batch_size: self.parse("train.batch_size")?,
            adam: AdamConfig {
                learning_rate: self.parse("train.learning_rate")?,
                beta1: self.parse("train.beta1")?,
                beta2: self.parse("train.beta2")?,
                epsilon: self.parse("train.epsilon")?,
            },
            regularize_output: self.flag("train.regularize_output")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn search_trials(&self) -> Result<usize> {
        self.parse("search.trials")
    }

    pub fn grid(&self) -> Result<SearchGrid> {
        let grid = SearchGrid {
            filters: list("search.filters", self.get("search.filters"))?,
            hidden: list("search.hidden", self.get("search.hidden"))?,
            l1: list("search.l1", self.get("search.l1"))?,
            l2: list("search.l2", self.get("search.l2"))?,
        };
        for i in 0..grid.size() {
            grid.config(i)
                .validate()
                .map_err(|e| Error::Config(format!("search grid: {e}")))?;
        }
        Ok(grid)
    }

    /// Fixed hyperparameters when every `model.*` size and penalty is set.
    pub fn fixed_hyperparams(&self) -> Result<Option<HyperParams>> {
        let keys = ["model.filters", "model.hidden", "model.l1", "model.l2"];
        let set = keys.iter().filter(|k| !self.get(k).is_empty()).count();
        match set {
            0 => Ok(None),
            4 => {
                let hp = HyperParams {
                    filters: self.parse("model.filters")?,
                    hidden: self.parse("model.hidden")?,
                    l1: self.parse("model.l1")?,
                    l2: self.parse("model.l2")?,
                };
                hp.validate().map_err(|e| Error::Config(e.to_string()))?;
                Ok(Some(hp))
            }
            _ => Err(Error::Config(format!("set all of {} or none", keys.join(", ")))),
        }
    }

    pub fn resamples(&self) -> Result<usize> {
        self.parse("eval.resamples")
    }

    pub fn grid_points(&self) -> Result<usize> {
        self.parse("interpret.grid_points")
    }

    pub fn top_tokens(&self) -> Result<usize> {
        self.parse("interpret.top_tokens")
    }

    pub fn stability_seeds(&self) -> Result<usize> {
        self.parse("interpret.stability_seeds")
    }
}
