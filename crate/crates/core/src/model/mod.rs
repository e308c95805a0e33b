//! The classifier architectures and their prediction contract.

mod container;

pub use container::{load_model, save_model, ModelFile, ModelMetadata, CONTAINER_VERSION};

use ndarray::{Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Class;
use crate::error::{Error, Result};
use crate::features::{
    build_concat, build_sequence, build_token_cube, ConcatFeatures, FeatureCube, PreparedProceeding, TokenCube,
    TIME_STEPS,
};
use crate::nn::{
    check_labels, conv_scores, cross_entropy_logits, max_over_time, probabilities, Affine, Lstm, Network, Parameter,
    SeqInput, SparseAffine,
};
use crate::vectorize::{EmbeddingMatrix, SparseVec, TfidfModel, MAX_TOKENS};

/// The in-scope classifier and text-representation pairings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    ConvLstmW2v,
    LstmTfidf,
    MlpW2v,
    MlpTfidf,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [
        Pipeline::ConvLstmW2v,
        Pipeline::LstmTfidf,
        Pipeline::MlpW2v,
        Pipeline::MlpTfidf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::ConvLstmW2v => "conv_lstm_w2v",
            Pipeline::LstmTfidf => "lstm_tfidf",
            Pipeline::MlpW2v => "mlp_w2v",
            Pipeline::MlpTfidf => "mlp_tfidf",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        if let Some(p) = Self::ALL.into_iter().find(|p| p.name() == lower) {
            return Ok(p);
        }
        for (needle, reason) in [
            ("doc2vec", "Doc2Vec text representations are not implemented"),
            ("bert", "BERT text representations are not implemented"),
            ("xgboost", "the gradient-boosting classifier is not implemented"),
        ] {
            if lower.contains(needle) {
                return Err(Error::OutOfScope {
                    name: name.to_string(),
                    reason: format!(
                        "{reason}; supported pipelines: {}",
                        Self::ALL.map(Pipeline::name).join(", ")
                    ),
                });
            }
        }
        Err(Error::Config(format!(
            "unknown pipeline `{name}`; expected one of {}",
            Self::ALL.map(Pipeline::name).join(", ")
        )))
    }

    pub fn uses_embeddings(self) -> bool {
        matches!(self, Pipeline::ConvLstmW2v | Pipeline::MlpW2v)
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Network sizes and penalty strengths tuned by random search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Number of filters K (unused by models without a convolution).
    pub filters: usize,
    /// Hidden size H.
    pub hidden: usize,
    pub l1: f64,
    pub l2: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "filters and hidden size must be positive, got K={} H={}",
                self.filters, self.hidden
            )));
        }
        crate::nn::ElasticNet::new(self.l1, self.l2).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: [f64; 3],
    pub predicted_class: Class,
}

impl Prediction {
    pub fn from_probabilities(p: ArrayView1<f64>) -> Self {
        let probabilities = [p[0], p[1], p[2]];
        Prediction {
            probabilities,
            predicted_class: argmax_class(&probabilities),
        }
    }
}

/// Most probable class, lowest index on ties.
pub fn argmax_class(p: &[f64; 3]) -> Class {
    let mut best = 0;
    for j in 1..3 {
        if p[j] > p[best] {
            best = j;
        }
    }
    Class::from_index(best)
}

pub fn predictions(probs: &Array2<f64>) -> Vec<Prediction> {
    probs.rows().into_iter().map(Prediction::from_probabilities).collect()
}

/// Pooled filter responses for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledBatch {
    /// One batch x K matrix per slot, oldest first.
    pub steps: Vec<Array2<f64>>,
    /// Embedding row that won the max for `[sample][slot][filter]`; `None`
    /// when the winner is a zero row (padding or unknown token).
    argmax: Vec<Option<u32>>,
}

/// Width-one convolution over frozen embeddings, max-over-time pooling per
/// text, a many-to-one LSTM over the five slots and a softmax output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmModel {
    pub filters: Parameter,
    pub embeddings: Parameter,
    pub lstm: Lstm,
    pub output: Affine,
}

impl ConvLstmModel {
    pub fn new(embeddings: &EmbeddingMatrix, hp: &HyperParams, rng: &mut ChaCha8Rng) -> Self {
        let filters = Parameter::glorot("filters", hp.filters, embeddings.dim(), rng).unit_rows();
        ConvLstmModel {
            filters,
            embeddings: Parameter::new("embeddings", embeddings.matrix().clone()).frozen(),
            lstm: Lstm::new("lstm", hp.filters, hp.hidden, rng),
            output: Affine::new("output", hp.hidden, 3, rng),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.value.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    /// Max-pooled filter responses of every slot of every cube.
    pub fn pool(&self, batch: &[&TokenCube]) -> Result<PooledBatch> {
        let k = self.n_filters();
        let vocab = self.embeddings.value.nrows();
        // Score of every vocabulary row against every filter.
        let scores = self.embeddings.value.dot(&self.filters.value.t());
        let mut steps = vec![Array2::zeros((batch.len(), k)); TIME_STEPS];
        let mut argmax = vec![None; batch.len() * TIME_STEPS * k];
        let mut best = vec![0.0; k];
        for (b, cube) in batch.iter().enumerate() {
            for (t, ids) in cube.slots.iter().enumerate() {
                let arg = &mut argmax[(b * TIME_STEPS + t) * k..(b * TIME_STEPS + t + 1) * k];
                best.fill(f64::NEG_INFINITY);
                for id in ids.iter().take(MAX_TOKENS) {
                    match id {
                        Some(i) => {
                            let i = *i as usize;
                            if i >= vocab {
                                return Err(Error::Dimension(format!(
                                    "token id {i} outside embedding matrix of {vocab} rows"
                                )));
                            }
                            for (j, &s) in scores.row(i).iter().enumerate() {
                                if s > best[j] {
                                    best[j] = s;
                                    arg[j] = Some(i as u32);
                                }
                            }
                        }
                        None => {
                            for j in 0..k {
                                if 0.0 > best[j] {
                                    best[j] = 0.0;
                                    arg[j] = None;
                                }
                            }
                        }
                    }
                }
                // Zero padding rows after the last token.
                if ids.len() < MAX_TOKENS {
                    for j in 0..k {
                        if 0.0 > best[j] {
                            best[j] = 0.0;
                            arg[j] = None;
                        }
                    }
                }
                for j in 0..k {
                    steps[t][[b, j]] = best[j];
                }
            }
        }
        Ok(PooledBatch { steps, argmax })
    }

    /// Pooled responses from a dense cube: a T x K matrix.
    pub fn pool_dense(&self, cube: &FeatureCube) -> Result<Array2<f64>> {
        let (steps, _, dim) = cube.values.dim();
        if steps != TIME_STEPS || dim != self.filters.value.ncols() {
            return Err(Error::Dimension(format!(
                "cube {:?} does not match {} slots of dimension {}",
                cube.values.dim(),
                TIME_STEPS,
                self.filters.value.ncols()
            )));
        }
        let mut out = Array2::zeros((TIME_STEPS, self.n_filters()));
        for t in 0..TIME_STEPS {
            let scores = conv_scores(self.filters.value.view(), cube.values.index_axis(ndarray::Axis(0), t))?;
            out.row_mut(t).assign(&max_over_time(scores.view()).values);
        }
        Ok(out)
    }

    /// Class probabilities from pooled features (one batch x K matrix per slot).
    pub fn head(&self, steps: &[Array2<f64>]) -> Result<Array2<f64>> {
        if steps.len() != TIME_STEPS {
            return Err(Error::Dimension(format!(
                "expected {TIME_STEPS} slots, got {}",
                steps.len()
            )));
        }
        let cache = self.lstm.forward(&SeqInput::Dense(steps.to_vec()))?;
        probabilities(&self.output.forward(&cache.h_last)?)
    }

    /// Prediction from a dense cube, through the convolution and pooling ops.
    pub fn forward_cube(&self, cube: &FeatureCube) -> Result<Prediction> {
        let pooled = self.pool_dense(cube)?;
        let steps: Vec<Array2<f64>> = pooled
            .rows()
            .into_iter()
            .map(|r| r.to_owned().insert_axis(ndarray::Axis(0)))
            .collect();
        Ok(Prediction::from_probabilities(self.head(&steps)?.row(0)))
    }
}

impl Network for ConvLstmModel {
    type Input = TokenCube;

    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = vec![&self.filters, &self.embeddings];
        p.extend(self.lstm.parameters());
        p.extend(self.output.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = vec![&mut self.filters, &mut self.embeddings];
        p.extend(self.lstm.parameters_mut());
        p.extend(self.output.parameters_mut());
        p
    }

    fn probabilities(&self, batch: &[&TokenCube]) -> Result<Array2<f64>> {
        self.head(&self.pool(batch)?.steps)
    }

    fn loss(&self, batch: &[&TokenCube], labels: &[Class]) -> Result<f64> {
        check_labels(batch.len(), labels)?;
        let pooled = self.pool(batch)?;
        let cache = self.lstm.forward(&SeqInput::Dense(pooled.steps))?;
        Ok(cross_entropy_logits(&self.output.forward(&cache.h_last)?, labels)?.0)
    }

    fn loss_and_grad(&mut self, batch: &[&TokenCube], labels: &[Class]) -> Result<f64> {
        check_labels(batch.len(), labels)?;
        let pooled = self.pool(batch)?;
        let input = SeqInput::Dense(pooled.steps);
        let cache = self.lstm.forward(&input)?;
        let logits = self.output.forward(&cache.h_last)?;
        let (loss, _, dlogits) = cross_entropy_logits(&logits, labels)?;
        let dh = self.output.backward(&cache.h_last, &dlogits);
        let dz = self
            .lstm
            .backward(&input, &cache, &dh)
            .expect("dense input yields input gradients");
        if !self.filters.frozen {
            let k = self.n_filters();
            for b in 0..batch.len() {
                for (t, dz_t) in dz.iter().enumerate() {
                    for j in 0..k {
                        if let Some(id) = pooled.argmax[(b * TIME_STEPS + t) * k + j] {
                            let g = dz_t[[b, j]];
                            self.filters
                                .grad
                                .row_mut(j)
                                .scaled_add(g, &self.embeddings.value.row(id as usize));
                        }
                    }
                }
            }
        }
        Ok(loss)
    }
}

/// One hidden ReLU layer over concatenated slot vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub hidden: SparseAffine,
    pub output: Affine,
}

impl MlpModel {
    pub fn new(inputs: usize, hp: &HyperParams, rng: &mut ChaCha8Rng) -> Self {
        let mut hidden = SparseAffine::new("hidden", inputs, hp.hidden, rng);
        hidden.weight.regularized = true;
        MlpModel {
            hidden,
            output: Affine::new("output", hp.hidden, 3, rng),
        }
    }

    fn activations(&self, batch: &[&ConcatFeatures]) -> Result<(Array2<f64>, Array2<f64>)> {
        let xs: Vec<&SparseVec> = batch.iter().map(|c| &c.values).collect();
        let pre = self.hidden.forward(&xs)?;
        let act = pre.mapv(|v| v.max(0.0));
        Ok((pre, act))
    }
}

impl Network for MlpModel {
    type Input = ConcatFeatures;

    fn parameters(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self.hidden.parameters().into();
        p.extend(self.output.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self.hidden.parameters_mut().into();
        p.extend(self.output.parameters_mut());
        p
    }

    fn probabilities(&self, batch: &[&ConcatFeatures]) -> Result<Array2<f64>> {
        let (_, act) = self.activations(batch)?;
        probabilities(&self.output.forward(&act)?)
    }

    fn loss(&self, batch: &[&ConcatFeatures], labels: &[Class]) -> Result<f64> {
        check_labels(batch.len(), labels)?;
        let (_, act) = self.activations(batch)?;
        Ok(cross_entropy_logits(&self.output.forward(&act)?, labels)?.0)
    }

    fn loss_and_grad(&mut self, batch: &[&ConcatFeatures], labels: &[Class]) -> Result<f64> {
        check_labels(batch.len(), labels)?;
        let (pre, act) = self.activations(batch)?;
        let (loss, _, dlogits) = cross_entropy_logits(&self.output.forward(&act)?, labels)?;
        let mut d = self.output.backward(&act, &dlogits);
        ndarray::Zip::from(&mut d).and(&pre).for_each(|d, &p| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
        let xs: Vec<&SparseVec> = batch.iter().map(|c| &c.values).collect();
        self.hidden.backward(&xs, &d);
        Ok(loss)
    }
}

/// Per-slot text vectors, oldest first.
pub type SequenceFeatures = [SparseVec; TIME_STEPS];

/// Many-to-one LSTM reading one TFIDF vector per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmVectorModel {
    pub lstm: Lstm,
    pub output: Affine,
}

impl LstmVectorModel {
    pub fn new(inputs: usize, hp: &HyperParams, rng: &mut ChaCha8Rng) -> Self {
        LstmVectorModel {
            lstm: Lstm::new("lstm", inputs, hp.hidden, rng),
            output: Affine::new("output", hp.hidden, 3, rng),
        }
    }

    fn input<'a>(batch: &[&'a SequenceFeatures]) -> SeqInput<'a> {
        SeqInput::Sparse((0..TIME_STEPS).map(|t| batch.iter().map(|s| &s[t]).collect()).collect())
    }
}

impl Network for LstmVectorModel {
    type Input = SequenceFeatures;

    fn parameters(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self.lstm.parameters().into();
        p.extend(self.output.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self.lstm.parameters_mut().into();
        p.extend(self.output.parameters_mut());
        p
    }

    fn probabilities(&self, batch: &[&SequenceFeatures]) -> Result<Array2<f64>> {
        let cache = self.lstm.forward(&Self::input(batch))?;
        probabilities(&self.output.forward(&cache.h_last)?)
    }

    fn loss(&self, batch: &[&SequenceFeatures], labels: &[Class]) -> Result<f64> {
        check_labels(batch.len(), labels)?;
        let cache = self.lstm.forward(&Self::input(batch))?;
        Ok(cross_entropy_logits(&self.output.forward(&cache.h_last)?, labels)?.0)
    }

    fn loss_and_grad(&mut self, batch: &[&SequenceFeatures], labels: &[Class]) -> Result<f64> {
        check_labels(batch.len(), labels)?;
        let input = Self::input(batch);
        let cache = self.lstm.forward(&input)?;
        let logits = self.output.forward(&cache.h_last)?;
        let (loss, _, dlogits) = cross_entropy_logits(&logits, labels)?;
        let dh = self.output.backward(&cache.h_last, &dlogits);
        self.lstm.backward(&input, &cache, &dh);
        Ok(loss)
    }
}

/// Probabilities for a list of inputs, evaluated in chunks.
pub fn predict_all<N: Network>(net: &N, inputs: &[N::Input], chunk: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(inputs.len());
    for part in inputs.chunks(chunk.max(1)) {
        let refs: Vec<&N::Input> = part.iter().collect();
        out.extend(predictions(&net.probabilities(&refs)?));
    }
    Ok(out)
}

/// Probability row for a single input.
pub fn predict_one<N: Network>(net: &N, input: &N::Input) -> Result<Prediction> {
    Ok(Prediction::from_probabilities(net.probabilities(&[input])?.row(0)))
}

/// A trained network of any supported architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    ConvLstm(ConvLstmModel),
    Mlp(MlpModel),
    LstmVectors(LstmVectorModel),
}

impl Classifier {
    pub fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Classifier::ConvLstm(m) => m.parameters(),
            Classifier::Mlp(m) => m.parameters(),
            Classifier::LstmVectors(m) => m.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Classifier::ConvLstm(m) => m.parameters_mut(),
            Classifier::Mlp(m) => m.parameters_mut(),
            Classifier::LstmVectors(m) => m.parameters_mut(),
        }
    }
}

/// The text representation feeding a classifier.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Embeddings(EmbeddingMatrix),
    Tfidf(TfidfModel),
}

/// Model inputs for a list of proceedings.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoded {
    Tokens(Vec<TokenCube>),
    Concat(Vec<ConcatFeatures>),
    Sequences(Vec<SequenceFeatures>),
}

impl Encoded {
    pub fn len(&self) -> usize {
        match self {
            Encoded::Tokens(v) => v.len(),
            Encoded::Concat(v) => v.len(),
            Encoded::Sequences(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the inputs a pipeline's classifier consumes.
pub fn encode(pipeline: Pipeline, encoder: &Encoder, items: &[PreparedProceeding]) -> Result<Encoded> {
    match (pipeline, encoder) {
        (Pipeline::ConvLstmW2v, Encoder::Embeddings(e)) => Ok(Encoded::Tokens(
            items.iter().map(|p| build_token_cube(e, p)).collect::<Result<_>>()?,
        )),
        (Pipeline::MlpW2v, Encoder::Embeddings(e)) => Ok(Encoded::Concat(
            items.iter().map(|p| build_concat(e, p)).collect::<Result<_>>()?,
        )),
        (Pipeline::MlpTfidf, Encoder::Tfidf(t)) => Ok(Encoded::Concat(
            items.iter().map(|p| build_concat(t, p)).collect::<Result<_>>()?,
        )),
        (Pipeline::LstmTfidf, Encoder::Tfidf(t)) => Ok(Encoded::Sequences(
            items.iter().map(|p| build_sequence(t, p)).collect::<Result<_>>()?,
        )),
        (p, _) => Err(Error::Config(format!(
            "pipeline {p} cannot use this text representation"
        ))),
    }
}

/// Rows evaluated per forward pass at inference time.
pub const PREDICT_CHUNK: usize = 500;

impl Classifier {
    pub fn predict(&self, inputs: &Encoded) -> Result<Vec<Prediction>> {
        match (self, inputs) {
            (Classifier::ConvLstm(m), Encoded::Tokens(x)) => predict_all(m, x, PREDICT_CHUNK),
            (Classifier::Mlp(m), Encoded::Concat(x)) => predict_all(m, x, PREDICT_CHUNK),
            (Classifier::LstmVectors(m), Encoded::Sequences(x)) => predict_all(m, x, PREDICT_CHUNK),
            _ => Err(Error::Config(
                "classifier and inputs belong to different pipelines".into(),
            )),
        }
    }

    pub fn conv_lstm(&self) -> Option<&ConvLstmModel> {
        match self {
            Classifier::ConvLstm(m) => Some(m),
            _ => None,
        }
    }
}

/// Fresh classifier for a pipeline with the given encoder dimensions.
pub fn init_classifier(
    pipeline: Pipeline,
    encoder: &Encoder,
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<Classifier> {
    hp.validate()?;
    Ok(match (pipeline, encoder) {
        (Pipeline::ConvLstmW2v, Encoder::Embeddings(e)) => Classifier::ConvLstm(ConvLstmModel::new(e, hp, rng)),
        (Pipeline::MlpW2v, Encoder::Embeddings(e)) => Classifier::Mlp(MlpModel::new(TIME_STEPS * e.dim(), hp, rng)),
        (Pipeline::MlpTfidf, Encoder::Tfidf(t)) => Classifier::Mlp(MlpModel::new(TIME_STEPS * t.dim(), hp, rng)),
        (Pipeline::LstmTfidf, Encoder::Tfidf(t)) => Classifier::LstmVectors(LstmVectorModel::new(t.dim(), hp, rng)),
        (p, _) => {
            return Err(Error::Config(format!(
                "pipeline {p} cannot use this text representation"
            )))
        }
    })
}
