//! Stage 3: chart-type prediction.
//!
//! Bar is always suitable. Pie and line each get an independent binary
//! classifier: two stacked bidirectional LSTM layers, whose final states feed
//! a tanh dense layer and a single sigmoid unit.

use std::collections::BTreeSet;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChartType, Sample, Token};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{auroc, mcc, specificity_sensitivity, ConfusionMatrix};
use crate::model_file::ModelFile;
use crate::nn::{clip_global_norm, sigmoid, BiLstm, BiLstmCache, Dense, Parameters, RmsProp, Standardizer};

pub const MODEL_KIND: &str = "charttype";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartTarget {
    Pie,
    Line,
}

impl ChartTarget {
    pub fn chart_type(self) -> ChartType {
        match self {
            ChartTarget::Pie => ChartType::Pie,
            ChartTarget::Line => ChartType::Line,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pie" => Some(ChartTarget::Pie),
            "line" => Some(ChartTarget::Line),
            _ => None,
        }
    }

    /// Gold label of `sample` for this target.
    pub fn label(self, sample: &Sample) -> bool {
        sample.chart_types.contains(&self.chart_type())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            negative: 0.2,
            positive: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartTypeConfig {
    pub target: ChartTarget,
    pub lstm_sizes: [usize; 2],
    pub dense_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub class_weights: ClassWeights,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
}

fn default_clip() -> f64 {
    5.0
}

impl ChartTypeConfig {
    pub fn desk(target: ChartTarget) -> Self {
        Self {
            target,
            lstm_sizes: [32, 32],
            dense_size: 64,
            batch_size: 8,
            learning_rate: 2e-3,
            class_weights: ClassWeights::default(),
            epochs: 10,
            seed: 139,
            clip_norm: default_clip(),
        }
    }

    pub fn paper(target: ChartTarget) -> Self {
        Self {
            lstm_sizes: [128, 128],
            dense_size: 512,
            batch_size: match target {
                ChartTarget::Pie => 128,
                ChartTarget::Line => 256,
            },
            learning_rate: 4e-4,
            ..Self::desk(target)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lstm_sizes.contains(&0) || self.dense_size == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("chart-type sizes must be ≥ 1".into()));
        }
        let w = self.class_weights;
        if !(w.negative > 0.0 && w.positive > 0.0) {
            return Err(Error::InvalidConfig("class weights must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartTypeParams {
    pub rnn1: BiLstm,
    pub rnn2: BiLstm,
    pub dense: Dense,
    pub output: Dense,
}

impl ChartTypeParams {
    fn zeros_like(&self) -> Self {
        Self {
            rnn1: self.rnn1.zeros_like(),
            rnn2: self.rnn2.zeros_like(),
            dense: self.dense.zeros_like(),
            output: self.output.zeros_like(),
        }
    }
}

impl Parameters for ChartTypeParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        self.rnn1.visit(&p("rnn1"), f);
        self.rnn2.visit(&p("rnn2"), f);
        self.dense.visit(&p("dense"), f);
        self.output.visit(&p("output"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.rnn1.visit_mut(f);
        self.rnn2.visit_mut(f);
        self.dense.visit_mut(f);
        self.output.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartTypeModel {
    pub config: ChartTypeConfig,
    pub input_dim: usize,
    pub input_norm: Standardizer,
    pub params: ChartTypeParams,
}

struct ForwardCache {
    rnn1: BiLstmCache,
    rnn2: BiLstmCache,
    steps: usize,
    summary: Array2<f64>,
    hidden: Array2<f64>,
}

pub fn init_chart_classifier(config: &ChartTypeConfig, embedding_dim: usize) -> Result<ChartTypeModel> {
    config.validate()?;
    if embedding_dim == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let [h1, h2] = config.lstm_sizes;
    Ok(ChartTypeModel {
        config: config.clone(),
        input_dim: embedding_dim,
        input_norm: Standardizer::identity(embedding_dim),
        params: ChartTypeParams {
            rnn1: BiLstm::new(embedding_dim, h1, &mut rng),
            rnn2: BiLstm::new(2 * h1, h2, &mut rng),
            dense: Dense::new(2 * h2, config.dense_size, &mut rng),
            output: Dense::new(config.dense_size, 1, &mut rng),
        },
    })
}

impl ChartTypeModel {
    pub fn target(&self) -> ChartTarget {
        self.config.target
    }

    fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(f64, ForwardCache)> {
        if x.nrows() == 0 {
            return Err(Error::InvalidConfig("cannot classify an empty sequence".into()));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.ncols(),
            });
        }
        let p = &self.params;
        let steps = x.nrows();
        let h2 = p.rnn2.hidden_size();
        let z0 = self.input_norm.apply(x)?;
        let (out1, rnn1) = p.rnn1.run(z0.view());
        let (out2, rnn2) = p.rnn2.run(out1.view());
        // Forward direction ends at the last step, backward at the first.
        let mut summary = Array2::zeros((1, 2 * h2));
        summary.slice_mut(s![0, ..h2]).assign(&out2.slice(s![steps - 1, ..h2]));
        summary.slice_mut(s![0, h2..]).assign(&out2.slice(s![0, h2..]));
        let hidden = p.dense.forward(summary.view()).mapv(f64::tanh);
        let logit = p.output.forward(hidden.view())[[0, 0]];
        Ok((
            sigmoid(logit),
            ForwardCache {
                rnn1,
                rnn2,
                steps,
                summary,
                hidden,
            },
        ))
    }

    fn backward(&self, cache: &ForwardCache, dlogit: f64) -> ChartTypeParams {
        let p = &self.params;
        let mut g = p.zeros_like();
        let h2 = p.rnn2.hidden_size();
        let dhidden = p.output.backward(cache.hidden.view(), Array2::from_elem((1, 1), dlogit).view(), &mut g.output);
        let dz = dhidden * cache.hidden.mapv(|a| 1.0 - a * a);
        let dsummary = p.dense.backward(cache.summary.view(), dz.view(), &mut g.dense);
        let mut dout2 = Array2::zeros((cache.steps, 2 * h2));
        dout2.slice_mut(s![cache.steps - 1, ..h2]).assign(&dsummary.slice(s![0, ..h2]));
        dout2.slice_mut(s![0, h2..]).assign(&dsummary.slice(s![0, h2..]));
        let dout1 = p.rnn2.backprop(&cache.rnn2, dout2.view(), &mut g.rnn2);
        p.rnn1.backprop(&cache.rnn1, dout1.view(), &mut g.rnn1);
        g
    }

    /// Sigmoid score of the embedded sequence.
    pub fn score(&self, x: ArrayView2<f64>) -> Result<f64> {
        Ok(self.forward_cached(x)?.0)
    }

    fn weight(&self, label: bool) -> f64 {
        let w = self.config.class_weights;
        if label {
            w.positive
        } else {
            w.negative
        }
    }

    fn weighted_bce(&self, p: f64, label: bool) -> f64 {
        let q = if label { p } else { 1.0 - p };
        -self.weight(label) * q.max(f64::MIN_POSITIVE).ln()
    }

    /// Class-weighted binary cross-entropy and its flattened gradient.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, label: bool) -> Result<(f64, Vec<f64>)> {
        let (p, cache) = self.forward_cached(x)?;
        let y = if label { 1.0 } else { 0.0 };
        let grads = self.backward(&cache, self.weight(label) * (p - y));
        Ok((self.weighted_bce(p, label), grads.flatten()))
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut file = ModelFile::new(
            MODEL_KIND,
            &serde_json::json!({ "config": self.config, "input_dim": self.input_dim }),
        )?;
        file.write_params("input", &self.input_norm);
        file.write_params("", &self.params);
        Ok(file)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(MODEL_KIND)?;
        #[derive(Deserialize)]
        struct Header {
            config: ChartTypeConfig,
            input_dim: usize,
        }
        let header: Header = file.config()?;
        let mut model = init_chart_classifier(&header.config, header.input_dim)?;
        file.read_params("input", &mut model.input_norm)?;
        file.read_params("", &mut model.params)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartTypeResult {
    pub types: BTreeSet<ChartType>,
    pub pie_score: f64,
    pub line_score: f64,
}

/// Types from raw scores: bar always, pie/line when their score reaches the
/// threshold.
pub fn decide(pie_score: f64, line_score: f64, threshold: f64) -> ChartTypeResult {
    let mut types = BTreeSet::from([ChartType::Bar]);
    if pie_score >= threshold {
        types.insert(ChartType::Pie);
    }
    if line_score >= threshold {
        types.insert(ChartType::Line);
    }
    ChartTypeResult {
        types,
        pie_score,
        line_score,
    }
}

fn score_tokens(model: &ChartTypeModel, tokens: &[Token], embeddings: &EmbeddingTable) -> Result<f64> {
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
    model.score(embeddings.embed_sequence(&texts).view())
}

pub fn predict_chart_types(
    pie_model: &ChartTypeModel,
    line_model: &ChartTypeModel,
    tokens: &[Token],
    embeddings: &EmbeddingTable,
    threshold: f64,
) -> Result<ChartTypeResult> {
    Ok(decide(
        score_tokens(pie_model, tokens, embeddings)?,
        score_tokens(line_model, tokens, embeddings)?,
        threshold,
    ))
}

// ---------------------------------------------------------------------------
// Evaluation and training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartTypeEvaluation {
    pub confusion: ConfusionMatrix,
    pub specificity: f64,
    pub sensitivity: f64,
    pub mcc: f64,
    /// Absent when the evaluation set holds a single class.
    pub auroc: Option<f64>,
    pub loss: f64,
}

struct Encoded {
    x: Array2<f64>,
    label: bool,
}

fn encode(samples: &[Sample], target: ChartTarget, embeddings: &EmbeddingTable) -> Vec<Encoded> {
    samples
        .iter()
        .filter(|s| !s.tokens.is_empty())
        .map(|s| Encoded {
            x: embeddings.embed_sequence(&s.texts()),
            label: target.label(s),
        })
        .collect()
}

fn evaluate_encoded(model: &ChartTypeModel, data: &[Encoded], threshold: f64) -> Result<ChartTypeEvaluation> {
    let mut scores = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for e in data {
        let p = model.score(e.x.view())?;
        total += model.weighted_bce(p, e.label);
        scores.push(p);
        labels.push(e.label);
    }
    let predicted: Vec<bool> = scores.iter().map(|&p| p >= threshold).collect();
    let confusion = ConfusionMatrix::from_predictions(&predicted, &labels);
    let (specificity, sensitivity) = specificity_sensitivity(&confusion);
    Ok(ChartTypeEvaluation {
        confusion,
        specificity,
        sensitivity,
        mcc: mcc(&confusion),
        auroc: auroc(&scores, &labels).ok(),
        loss: total / data.len().max(1) as f64,
    })
}

pub fn evaluate_chart_classifier(
    model: &ChartTypeModel,
    samples: &[Sample],
    embeddings: &EmbeddingTable,
    threshold: f64,
) -> Result<ChartTypeEvaluation> {
    evaluate_encoded(model, &encode(samples, model.target(), embeddings), threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mcc: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedChartClassifier {
    pub model: ChartTypeModel,
    pub log: Vec<ChartEpochRecord>,
    pub best_epoch: usize,
}

/// Minibatch RMSprop on class-weighted cross-entropy. Keeps the parameters
/// of the epoch with the best validation MCC (lower validation loss breaks
/// ties); the training set stands in when no validation samples are given.
pub fn train_chart_classifier(
    config: &ChartTypeConfig,
    train_samples: &[Sample],
    validation_samples: &[Sample],
    embeddings: &EmbeddingTable,
) -> Result<TrainedChartClassifier> {
    let train_data = encode(train_samples, config.target, embeddings);
    if train_data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if train_data.iter().all(|e| e.label) || train_data.iter().all(|e| !e.label) {
        return Err(Error::SingleClass);
    }
    let valid_data = encode(validation_samples, config.target, embeddings);
    let selection = if valid_data.is_empty() { &train_data } else { &valid_data };

    let mut model = init_chart_classifier(config, embeddings.dimension())?;
    model.input_norm = Standardizer::fit(embeddings.dimension(), train_data.iter().map(|e| &e.x));

    let param_count = model.params.param_count();
    let mut optimizer = RmsProp::new(config.learning_rate, param_count);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut best: Option<(f64, f64, ChartTypeParams, usize)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut sum = vec![0.0; param_count];
            for &i in batch {
                let (l, g) = model.loss_and_gradient(train_data[i].x.view(), train_data[i].label)?;
                epoch_loss += l;
                sum.iter_mut().zip(&g).for_each(|(s, g)| *s += g);
            }
            let k = batch.len() as f64;
            sum.iter_mut().for_each(|s| *s /= k);
            clip_global_norm(&mut sum, config.clip_norm);
            optimizer.step(&mut model.params, &sum);
        }
        let eval = evaluate_encoded(&model, selection, DEFAULT_THRESHOLD)?;
        let record = ChartEpochRecord {
            epoch,
            train_loss: epoch_loss / train_data.len() as f64,
            validation_mcc: eval.mcc,
            validation_loss: eval.loss,
        };
        log::debug!("{:?} epoch {epoch}: {record:?}", config.target);
        let better = match &best {
            None => true,
            Some((m, l, _, _)) => eval.mcc > *m || (eval.mcc == *m && eval.loss < *l),
        };
        if better {
            best = Some((eval.mcc, eval.loss, model.params.clone(), epoch));
        }
        log.push(record);
    }
    let best_epoch = match best {
        Some((_, _, params, epoch)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainedChartClassifier {
        model,
        log,
        best_epoch,
    })
}
