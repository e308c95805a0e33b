//! The end-to-end run as a sequence of stages sharing a working directory.
//!
//! Layout under the workdir:
//!
//! ```text
//! data/       synthetic corpus (synth-gen)
//! prep/       preprocessor, tokenized corpora, split (preprocess)
//! vectors/    embeddings.txt and tfidf.json (train-embeddings)
//! tuning/     <pipeline>.json search results (tune)
//! model/      <pipeline>.dkt model files (train)
//! reports/    evaluation and interpretation outputs (evaluate, interpret)
//! manifests/  one JSON manifest per stage run
//! ```
//!
//! Every stage records the content hashes of what it read and wrote, the
//! resolved configuration and the seeds in its manifest.

mod config;

pub use config::{parse_config, RunConfig, KEYS};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    generate_synthetic, load_corpus, load_unlabeled, split_corpus, synthetic_standardization, write_corpus,
    write_unlabeled, Class, CorpusSplit,
};
use crate::error::{Error, Result};
use crate::eval::{majority_class, EvaluationReport, EvaluationRow};
use crate::features::PreparedProceeding;
use crate::interpret::{pdp_grid, pdp_report, similarity_tables, token_recurrence};
use crate::model::{encode, load_model, save_model, Encoded, Encoder, HyperParams, ModelFile, ModelMetadata, Pipeline};
use crate::rng::derive_seed;
use crate::text::{Preprocessor, StandardizationTable, TokenizedText};
use crate::train::{accuracy, fit_classifier, tune, SearchResult};
use crate::vectorize::{fit_tfidf_capped, train_cbow, EmbeddingMatrix, TfidfModel};

pub const PREPROCESSOR: &str = "prep/preprocessor.json";
pub const PREPARED: &str = "prep/labeled_tokens.jsonl";
pub const UNLABELED_TOKENS: &str = "prep/unlabeled_tokens.txt";
pub const SPLIT: &str = "prep/split.json";
pub const EMBEDDINGS: &str = "vectors/embeddings.txt";
pub const TFIDF: &str = "vectors/tfidf.json";
pub const EVALUATION_JSON: &str = "reports/evaluation.json";
pub const EVALUATION_TEXT: &str = "reports/evaluation.txt";
pub const INTERPRET_DIR: &str = "reports/interpret";

pub fn tuning_path(p: Pipeline) -> String {
    format!("tuning/{}.json", p.name())
}

pub fn model_path(p: Pipeline) -> String {
    format!("model/{}.dkt", p.name())
}

/// Row labels used in the evaluation table.
pub fn table_labels(p: Pipeline) -> (&'static str, &'static str) {
    match p {
        Pipeline::ConvLstmW2v => ("LSTM", "W2V (CNN)"),
        Pipeline::LstmTfidf => ("LSTM", "TFIDF"),
        Pipeline::MlpW2v => ("MLP", "W2V (mean)"),
        Pipeline::MlpTfidf => ("MLP", "TFIDF"),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    pub pipeline: Option<String>,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

/// What a stage did: its manifest and a short human summary.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub manifest: Manifest,
    pub summary: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// On-disk form of a preprocessed proceeding.
#[derive(Serialize, Deserialize)]
struct PreparedRecord {
    id: String,
    label: Option<Class>,
    texts: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    seed: u64,
    train: Vec<String>,
    validation: Vec<String>,
    test: Vec<String>,
}

/// A working directory plus the resolved configuration.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub config: RunConfig,
}

struct Recorder<'a> {
    ws: &'a Workspace,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl<'a> Recorder<'a> {
    fn new(ws: &'a Workspace) -> Self {
        Recorder {
            ws,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Resolves a required input, naming the stage that produces it.
    fn input(&mut self, rel: &str, producer: &str) -> Result<PathBuf> {
        let path = self.ws.path(rel);
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                path,
                producer: producer.to_string(),
            });
        }
        self.inputs.push(rel.to_string());
        Ok(path)
    }

    fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.ws.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        }
        self.outputs.push(rel.to_string());
        Ok(path)
    }

    fn write_text(&mut self, rel: &str, body: &str) -> Result<()> {
        let path = self.output(rel)?;
        fs::write(&path, body).map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.write_text(rel, &body)
    }

    fn finish(self, subcommand: &str, pipeline: Option<Pipeline>, summary: String) -> Result<StageOutcome> {
        let records = |paths: &[String]| -> Result<Vec<FileRecord>> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileRecord {
                        path: p.clone(),
                        sha256: sha256_file(&self.ws.path(p))?,
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            pipeline: pipeline.map(|p| p.name().to_string()),
            config: self.ws.config.values().clone(),
            seeds: self.ws.config.seeds()?,
            inputs: records(&self.inputs)?,
            outputs: records(&self.outputs)?,
        };
        let name = match pipeline {
            Some(p) => format!("manifests/{subcommand}_{}.json", p.name()),
            None => format!("manifests/{subcommand}.json"),
        };
        let path = self.ws.path(&name);
        fs::create_dir_all(path.parent().expect("manifest dir"))
            .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        let mut body = serde_json::to_string_pretty(&manifest)?;
        body.push('\n');
        fs::write(&path, body).map_err(|e| Error::io(format!("write {}", path.display()), e))?;
        Ok(StageOutcome { manifest, summary })
    }
}

fn describe(p: Pipeline, hp: &HyperParams) -> String {
    let sizes = if p == Pipeline::ConvLstmW2v {
        format!("K={}, H={}", hp.filters, hp.hidden)
    } else {
        format!("H={}", hp.hidden)
    };
    format!("{sizes}, l1={}, l2={}", hp.l1, hp.l2)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    Ok(serde_json::from_str(&body)?)
}

fn labels(items: &[PreparedProceeding]) -> Result<Vec<Class>> {
    items
        .iter()
        .map(|p| {
            p.label
                .ok_or_else(|| Error::Validation(format!("proceeding {} has no label", p.id)))
        })
        .collect()
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config: RunConfig) -> Self {
        Workspace {
            root: root.into(),
            config,
        }
    }

    /// A config or layout path; absolute paths are used as given.
    pub fn path(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Generates the synthetic corpus and its standardization table.
    pub fn synth_gen(&self) -> Result<StageOutcome> {
        let spec = self.config.synthetic()?;
        let corpus = generate_synthetic(&spec)?;
        let mut rec = Recorder::new(self);
        let labeled = rec.output(self.config.get("labeled"))?;
        write_corpus(&labeled, &corpus.labeled)?;
        let unlabeled = rec.output(self.config.get("unlabeled"))?;
        write_unlabeled(&unlabeled, &corpus.unlabeled)?;
        let table = StandardizationTable::new(synthetic_standardization());
        rec.write_text(self.config.get("standardization"), &table.to_tsv())?;
        let summary = format!(
            "generated {} labeled proceedings and {} unlabeled motions",
            corpus.labeled.len(),
            corpus.unlabeled.len()
        );
        rec.finish("synth-gen", None, summary)
    }

    /// Fits the text pipeline on the unlabeled motions, tokenizes both
    /// corpora and splits the labeled proceedings 70/10/20.
    pub fn preprocess(&self) -> Result<StageOutcome> {
        let mut rec = Recorder::new(self);
        let labeled = load_corpus(&rec.input(self.config.get("labeled"), "synth-gen")?)?;
        let unlabeled = load_unlabeled(&rec.input(self.config.get("unlabeled"), "synth-gen")?)?;
        let std_rel = self.config.get("standardization");
        let table = if !std_rel.is_empty() && self.path(std_rel).is_file() {
            StandardizationTable::load(&rec.input(std_rel, "synth-gen")?)?
        } else {
            StandardizationTable::new(Vec::<(String, String)>::new())
        };
        let pre = Preprocessor::fit(&unlabeled, table, self.config.prep()?)?;
        let prepared: Vec<PreparedProceeding> = labeled.iter().map(|p| PreparedProceeding::prepare(&pre, p)).collect();
        labels(&prepared)?;
        let split = split_corpus(&prepared, self.config.seed("split.seed")?)?;

        rec.write_json(PREPROCESSOR, &pre)?;
        let mut body = String::new();
        for p in &prepared {
            let record = PreparedRecord {
                id: p.id.clone(),
                label: p.label,
                texts: p.texts.iter().map(|t| t.tokens.clone()).collect(),
            };
            body.push_str(&serde_json::to_string(&record)?);
            body.push('\n');
        }
        rec.write_text(PREPARED, &body)?;
        let mut body = String::new();
        for t in &unlabeled {
            body.push_str(&pre.process(t).tokens.join(" "));
            body.push('\n');
        }
        rec.write_text(UNLABELED_TOKENS, &body)?;
        let ids = |v: &[PreparedProceeding]| v.iter().map(|p| p.id.clone()).collect();
        rec.write_json(
            SPLIT,
            &SplitRecord {
                seed: split.seed,
                train: ids(&split.train),
                validation: ids(&split.validation),
                test: ids(&split.test),
            },
        )?;
        let merges: usize = pre.phraser.passes.iter().map(|p| p.merge_table.len()).sum();
        let summary = format!(
            "{} proceedings split {}/{}/{}; {} phrase merges learned from {} motions",
            prepared.len(),
            split.train.len(),
            split.validation.len(),
            split.test.len(),
            merges,
            unlabeled.len()
        );
        rec.finish("preprocess", None, summary)
    }

    /// The preprocessed train/validation/test proceedings.
    pub fn split(&self) -> Result<CorpusSplit<PreparedProceeding>> {
        self.load_split(&mut Recorder::new(self))
    }

    fn load_split(&self, rec: &mut Recorder) -> Result<CorpusSplit<PreparedProceeding>> {
        let prepared_path = rec.input(PREPARED, "preprocess")?;
        let split_path = rec.input(SPLIT, "preprocess")?;
        let body = fs::read_to_string(&prepared_path)
            .map_err(|e| Error::io(format!("read {}", prepared_path.display()), e))?;
        let mut by_id = HashMap::new();
        for (i, line) in body.lines().enumerate() {
            let r: PreparedRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: prepared_path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let p = PreparedProceeding {
                id: r.id.clone(),
                label: r.label,
                texts: r.texts.into_iter().map(TokenizedText::new).collect(),
            };
            by_id.insert(r.id, p);
        }
        let split: SplitRecord = read_json(&split_path)?;
        let pick = |ids: &[String]| -> Result<Vec<PreparedProceeding>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id)
                        .cloned()
                        .ok_or_else(|| Error::Validation(format!("split names unknown proceeding {id}")))
                })
                .collect()
        };
        Ok(CorpusSplit {
            train: pick(&split.train)?,
            validation: pick(&split.validation)?,
            test: pick(&split.test)?,
            seed: split.seed,
        })
    }

    /// CBOW embeddings and the TFIDF vocabulary, both from the unlabeled
    /// motions.
    pub fn train_embeddings(&self) -> Result<StageOutcome> {
        let mut rec = Recorder::new(self);
        let tokens_path = rec.input(UNLABELED_TOKENS, "preprocess")?;
        let body =
            fs::read_to_string(&tokens_path).map_err(|e| Error::io(format!("read {}", tokens_path.display()), e))?;
        let corpus: Vec<TokenizedText> = body
            .lines()
            .map(|l| TokenizedText::new(l.split_whitespace().map(str::to_string).collect()))
            .collect();
        let embeddings = train_cbow(&corpus, &self.config.cbow()?)?;
        embeddings.save(&rec.output(EMBEDDINGS)?)?;
        let tfidf = fit_tfidf_capped(&corpus, self.config.tfidf_max_features()?)?;
        rec.write_json(TFIDF, &tfidf)?;
        let summary = format!(
            "{} embeddings of dimension {}; TFIDF vocabulary of {} tokens",
            embeddings.len(),
            embeddings.dim(),
            tfidf.dim()
        );
        rec.finish("train-embeddings", None, summary)
    }

    fn encoder(&self, pipeline: Pipeline, rec: &mut Recorder) -> Result<Encoder> {
        if pipeline.uses_embeddings() {
            let path = rec.input(EMBEDDINGS, "train-embeddings")?;
            Ok(Encoder::Embeddings(EmbeddingMatrix::load(
                &path,
                self.config.cbow()?.window,
            )?))
        } else {
            let path = rec.input(TFIDF, "train-embeddings")?;
            Ok(Encoder::Tfidf(read_json::<TfidfModel>(&path)?.reindexed()))
        }
    }

    /// Random search over the configured grid, scored on the validation split.
    pub fn tune(&self) -> Result<StageOutcome> {
        let pipeline = self.config.pipeline()?;
        let mut rec = Recorder::new(self);
        let split = self.load_split(&mut rec)?;
        let encoder = self.encoder(pipeline, &mut rec)?;
        let train = encode(pipeline, &encoder, &split.train)?;
        let val = encode(pipeline, &encoder, &split.validation)?;
        let result = tune(
            pipeline,
            &encoder,
            (&train, &labels(&split.train)?),
            (&val, &labels(&split.validation)?),
            &self.config.grid()?,
            self.config.search_trials()?,
            &self.config.training()?,
            self.config.seed("search.seed")?,
        )?;
        rec.write_json(&tuning_path(pipeline), &result)?;
        let w = result.winner();
        let summary = format!(
            "{} trials; best trial {} ({}) validation accuracy {:.4}",
            result.trials.len(),
            w.trial,
            describe(pipeline, &w.hyperparams),
            w.validation_accuracy
        );
        rec.finish("tune", Some(pipeline), summary)
    }

    /// Trains the final classifier with the tuned (or fixed) hyperparameters
    /// and writes the model file.
    pub fn train(&self) -> Result<StageOutcome> {
        let pipeline = self.config.pipeline()?;
        let mut rec = Recorder::new(self);
        let (hp, seed) = match self.config.fixed_hyperparams()? {
            Some(hp) => (hp, self.config.seed("model.seed")?),
            None => {
                let result: SearchResult = read_json(&rec.input(&tuning_path(pipeline), "tune")?)?;
                let w = result.winner();
                (w.hyperparams, w.seed)
            }
        };
        let split = self.load_split(&mut rec)?;
        let pre: Preprocessor = read_json(&rec.input(PREPROCESSOR, "preprocess")?)?;
        let encoder = self.encoder(pipeline, &mut rec)?;
        let train_labels = labels(&split.train)?;
        let train = encode(pipeline, &encoder, &split.train)?;
        let val = encode(pipeline, &encoder, &split.validation)?;
        let config = self.config.training()?;
        let (classifier, report) = fit_classifier(pipeline, &encoder, &train, &train_labels, &hp, &config, seed)?;
        let val_acc = accuracy(&classifier, &val, &labels(&split.validation)?)?;
        let mut priors = [0.0; 3];
        for y in &train_labels {
            priors[y.index()] += 1.0 / train_labels.len() as f64;
        }
        let mut seeds = self.config.seeds()?;
        seeds.insert("init".into(), seed);
        let metadata = ModelMetadata {
            pipeline,
            hyperparams: hp,
            training: serde_json::to_value(&config)?,
            seeds,
            class_priors: priors,
            metrics: serde_json::json!({
                "validation_accuracy": val_acc,
                "final_training_loss": report.epoch_losses.last(),
            }),
            preprocessor: pre,
            embedding_tokens: None,
            embedding_window: None,
            tfidf: None,
        };
        let model = ModelFile::new(metadata, classifier, encoder);
        save_model(&model, &rec.output(&model_path(pipeline))?)?;
        let summary = format!(
            "trained {pipeline} ({}); validation accuracy {val_acc:.4}",
            describe(pipeline, &hp)
        );
        rec.finish("train", Some(pipeline), summary)
    }

    /// Scores every trained model and the majority-class baseline on the
    /// test split.
    pub fn evaluate(&self) -> Result<StageOutcome> {
        let configured = self.config.pipeline()?;
        let mut rec = Recorder::new(self);
        rec.input(&model_path(configured), "train")?;
        let split = self.load_split(&mut rec)?;
        let y_test = labels(&split.test)?;
        let resamples = self.config.resamples()?;
        let seed = self.config.seed("eval.seed")?;
        let mut rows = Vec::new();
        for p in Pipeline::ALL {
            let rel = model_path(p);
            if p != configured && !self.path(&rel).is_file() {
                continue;
            }
            let path = if p == configured {
                self.path(&rel)
            } else {
                rec.input(&rel, "train")?
            };
            let model = load_model(&path)?;
            let inputs = encode(p, &model.encoder, &split.test)?;
            let predicted: Vec<Class> = model
                .classifier
                .predict(&inputs)?
                .iter()
                .map(|x| x.predicted_class)
                .collect();
            let (classifier, features) = table_labels(p);
            rows.push(EvaluationRow::new(
                classifier, features, &y_test, &predicted, resamples, seed,
            )?);
        }
        let majority = majority_class(&labels(&split.train)?);
        rows.push(EvaluationRow::new(
            "Majority class",
            "-",
            &y_test,
            &vec![majority; y_test.len()],
            resamples,
            seed,
        )?);
        let report = EvaluationReport {
            test_size: y_test.len(),
            rows,
        };
        rec.write_json(EVALUATION_JSON, &report)?;
        let text = report.to_text();
        rec.write_text(EVALUATION_TEXT, &text)?;
        rec.finish("evaluate", None, text)
    }

    /// Filter similarity tables and partial dependence curves of the
    /// convolutional model on the test split.
    pub fn interpret(&self) -> Result<StageOutcome> {
        let pipeline = Pipeline::ConvLstmW2v;
        if self.config.pipeline()? != pipeline {
            return Err(Error::Config(format!(
                "interpret explains the {pipeline} pipeline; set pipeline = {pipeline}"
            )));
        }
        let mut rec = Recorder::new(self);
        let model = load_model(&rec.input(&model_path(pipeline), "train")?)?;
        let split = self.load_split(&mut rec)?;
        let (Some(conv), Encoder::Embeddings(emb)) = (model.classifier.conv_lstm(), &model.encoder) else {
            return Err(Error::Format(format!(
                "{} does not hold a {pipeline} model",
                model_path(pipeline)
            )));
        };
        let cubes = match encode(pipeline, &model.encoder, &split.test)? {
            Encoded::Tokens(c) => c,
            _ => unreachable!("conv pipeline encodes token cubes"),
        };
        let grid = pdp_grid(self.config.grid_points()?)?;
        let top = self.config.top_tokens()?;
        let report = pdp_report(conv, emb.tokens(), &cubes, &grid, top)?;
        let dir = self.path(INTERPRET_DIR);
        for name in report.write(&dir)? {
            rec.outputs.push(format!("{INTERPRET_DIR}/{name}"));
        }
        rec.write_json(&format!("{INTERPRET_DIR}/report.json"), &report)?;

        let extra = self.config.stability_seeds()?;
        if extra > 0 {
            let train = encode(pipeline, &model.encoder, &split.train)?;
            let y = labels(&split.train)?;
            let base = model.metadata.seeds.get("init").copied().unwrap_or(0);
            let mut runs = vec![report.similarity.clone()];
            for i in 0..extra {
                let (c, _) = fit_classifier(
                    pipeline,
                    &model.encoder,
                    &train,
                    &y,
                    &model.metadata.hyperparams,
                    &self.config.training()?,
                    derive_seed(base, 10_000 + i as u64),
                )?;
                let conv = c.conv_lstm().expect("conv pipeline");
                runs.push(similarity_tables(conv, emb.tokens(), top)?);
            }
            let mut body = String::from("token,runs\n");
            for (token, count) in token_recurrence(&runs) {
                body.push_str(&format!("{token},{count}\n"));
            }
            rec.write_text(&format!("{INTERPRET_DIR}/stability.csv"), &body)?;
        }

        let mut summary = String::new();
        for t in &report.similarity {
            let toks: Vec<String> = t.tokens.iter().map(|(w, c)| format!("{w} ({c:.2})")).collect();
            summary.push_str(&format!("filter {}: {}\n", t.filter, toks.join(", ")));
        }
        summary.push_str(&format!(
            "{} PDP curves written to {INTERPRET_DIR}",
            report.curves.len()
        ));
        rec.finish("interpret", Some(pipeline), summary)
    }

    /// Runs a stage by its command-line name.
    pub fn run(&self, stage: &str) -> Result<StageOutcome> {
        match stage {
            "synth-gen" => self.synth_gen(),
            "preprocess" => self.preprocess(),
            "train-embeddings" => self.train_embeddings(),
            "tune" => self.tune(),
            "train" => self.train(),
            "evaluate" => self.evaluate(),
            "interpret" => self.interpret(),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}
