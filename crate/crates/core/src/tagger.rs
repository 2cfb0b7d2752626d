//! Stage 1: bidirectional LSTM sequence tagger for axis entities.
//!
//! Architecture per token: two stacked bidirectional LSTM layers, a
//! time-distributed tanh dense layer, a second tanh dense layer and a softmax
//! projection over {NONE, X, Y} (combined mode) or {NONE, ENTITY}
//! (individual modes, one model per axis).

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{spans_from_tags, split_by_kind, EntitySpan, EntityTag, Sample, Token};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{harmonic_mean, ClassScores, ConfusionMatrix};
use crate::model_file::ModelFile;
use crate::nn::{clip_global_norm, softmax_rows, BiLstm, BiLstmCache, Dense, Parameters, RmsProp, Standardizer};

pub const MODEL_KIND: &str = "tagger";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggerMode {
    IndividualX,
    IndividualY,
    Combined,
}

impl TaggerMode {
    pub fn class_count(self) -> usize {
        match self {
            TaggerMode::Combined => 3,
            _ => 2,
        }
    }

    /// Class index of a gold tag under this mode.
    pub fn class_of(self, tag: EntityTag) -> usize {
        match (self, tag) {
            (TaggerMode::Combined, EntityTag::None) => 0,
            (TaggerMode::Combined, EntityTag::X) => 1,
            (TaggerMode::Combined, EntityTag::Y) => 2,
            (TaggerMode::IndividualX, EntityTag::X) => 1,
            (TaggerMode::IndividualY, EntityTag::Y) => 1,
            _ => 0,
        }
    }

    pub fn tag_of(self, class: usize) -> EntityTag {
        match (self, class) {
            (_, 0) => EntityTag::None,
            (TaggerMode::Combined, 1) | (TaggerMode::IndividualX, _) => EntityTag::X,
            _ => EntityTag::Y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub mode: TaggerMode,
    pub hidden_sizes: [usize; 2],
    pub dense_sizes: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling applied to each minibatch update.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
}

fn default_clip() -> f64 {
    5.0
}

impl TaggerConfig {
    /// Laptop-sized network.
    pub fn desk(mode: TaggerMode) -> Self {
        Self {
            mode,
            hidden_sizes: [64, 32],
            dense_sizes: [32, 64],
            epochs: 8,
            batch_size: 8,
            learning_rate: 2e-3,
            seed: 139,
            clip_norm: default_clip(),
        }
    }

    /// Full-size layer widths, meant for 300-d pretrained vectors.
    pub fn paper(mode: TaggerMode) -> Self {
        Self {
            hidden_sizes: [512, 128],
            dense_sizes: [64, 1024],
            learning_rate: 1e-3,
            ..Self::desk(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.hidden_sizes.iter().chain(&self.dense_sizes);
        if sizes.copied().any(|s| s == 0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig("tagger sizes must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trainable tensors of the tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams {
    pub rnn1: BiLstm,
    pub rnn2: BiLstm,
    pub time_dense: Dense,
    pub dense: Dense,
    pub output: Dense,
}

impl TaggerParams {
    fn zeros_like(&self) -> Self {
        Self {
            rnn1: self.rnn1.zeros_like(),
            rnn2: self.rnn2.zeros_like(),
            time_dense: self.time_dense.zeros_like(),
            dense: self.dense.zeros_like(),
            output: self.output.zeros_like(),
        }
    }
}

impl Parameters for TaggerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        self.rnn1.visit(&p("rnn1"), f);
        self.rnn2.visit(&p("rnn2"), f);
        self.time_dense.visit(&p("time_dense"), f);
        self.dense.visit(&p("dense"), f);
        self.output.visit(&p("output"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.rnn1.visit_mut(f);
        self.rnn2.visit_mut(f);
        self.time_dense.visit_mut(f);
        self.dense.visit_mut(f);
        self.output.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub config: TaggerConfig,
    pub input_dim: usize,
    /// Frozen input rescaling fitted on the training embeddings.
    pub input_norm: Standardizer,
    pub params: TaggerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagPrediction {
    pub mode: TaggerMode,
    pub probabilities: Array2<f64>,
    pub tags: Vec<EntityTag>,
}

struct ForwardCache {
    rnn1: BiLstmCache,
    rnn2: BiLstmCache,
    h2: Array2<f64>,
    a3: Array2<f64>,
    a4: Array2<f64>,
}

pub fn init_tagger(config: &TaggerConfig, embedding_dim: usize) -> Result<TaggerModel> {
    config.validate()?;
    if embedding_dim == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let [h1, h2] = config.hidden_sizes;
    let [d1, d2] = config.dense_sizes;
    let params = TaggerParams {
        rnn1: BiLstm::new(embedding_dim, h1, &mut rng),
        rnn2: BiLstm::new(2 * h1, h2, &mut rng),
        time_dense: Dense::new(2 * h2, d1, &mut rng),
        dense: Dense::new(d1, d2, &mut rng),
        output: Dense::new(d2, config.mode.class_count(), &mut rng),
    };
    Ok(TaggerModel {
        config: config.clone(),
        input_dim: embedding_dim,
        input_norm: Standardizer::identity(embedding_dim),
        params,
    })
}

impl TaggerModel {
    pub fn mode(&self) -> TaggerMode {
        self.config.mode
    }

    pub fn class_count(&self) -> usize {
        self.params.output.output_size()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::InvalidConfig("cannot tag an empty sequence".into()));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let p = &self.params;
        let z0 = self.input_norm.apply(x)?;
        let (h1, rnn1) = p.rnn1.run(z0.view());
        let (h2, rnn2) = p.rnn2.run(h1.view());
        let a3 = p.time_dense.forward(h2.view()).mapv(f64::tanh);
        let a4 = p.dense.forward(a3.view()).mapv(f64::tanh);
        let probs = softmax_rows(&p.output.forward(a4.view()));
        Ok((
            probs,
            ForwardCache {
                rnn1,
                rnn2,
                h2,
                a3,
                a4,
            },
        ))
    }

    fn backward(&self, cache: &ForwardCache, dlogits: ArrayView2<f64>) -> TaggerParams {
        let p = &self.params;
        let mut g = p.zeros_like();
        let da4 = p.output.backward(cache.a4.view(), dlogits, &mut g.output);
        let dz4 = da4 * cache.a4.mapv(|a| 1.0 - a * a);
        let da3 = p.dense.backward(cache.a3.view(), dz4.view(), &mut g.dense);
        let dz3 = da3 * cache.a3.mapv(|a| 1.0 - a * a);
        let dh2 = p.time_dense.backward(cache.h2.view(), dz3.view(), &mut g.time_dense);
        let dh1 = p.rnn2.backprop(&cache.rnn2, dh2.view(), &mut g.rnn2);
        p.rnn1.backprop(&cache.rnn1, dh1.view(), &mut g.rnn1);
        g
    }

    /// Mean token cross-entropy against `gold` and its gradient with respect
    /// to every trainable parameter (flattened in [`Parameters`] order).
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, gold: &[EntityTag]) -> Result<(f64, Vec<f64>)> {
        let (probs, cache) = self.forward_cached(x)?;
        if gold.len() != probs.nrows() {
            return Err(Error::DimensionMismatch {
                expected: probs.nrows(),
                actual: gold.len(),
            });
        }
        let steps = gold.len() as f64;
        let mut dlogits = probs.clone();
        let mut loss = 0.0;
        for (t, tag) in gold.iter().enumerate() {
            let c = self.mode().class_of(*tag);
            loss -= probs[[t, c]].max(f64::MIN_POSITIVE).ln();
            dlogits[[t, c]] -= 1.0;
        }
        dlogits /= steps;
        let grads = self.backward(&cache, dlogits.view());
        Ok((loss / steps, grads.flatten()))
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
            config: TaggerConfig,
            input_dim: usize,
        }
        let header: Header = file.config()?;
        let mut model = init_tagger(&header.config, header.input_dim)?;
        file.read_params("input", &mut model.input_norm)?;
        file.read_params("", &mut model.params)?;
        Ok(model)
    }
}

pub fn forward(model: &TaggerModel, embedded: ArrayView2<f64>) -> Result<TagPrediction> {
    let (probabilities, _) = model.forward_cached(embedded)?;
    let tags = probabilities
        .rows()
        .into_iter()
        .map(|row| model.mode().tag_of(argmax(row.iter().copied())))
        .collect();
    Ok(TagPrediction {
        mode: model.mode(),
        probabilities,
        tags,
    })
}

fn argmax<I: Iterator<Item = f64>>(values: I) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mean negative log-likelihood of the gold classes.
pub fn loss(prediction: &TagPrediction, gold: &[EntityTag]) -> Result<f64> {
    if gold.len() != prediction.probabilities.nrows() {
        return Err(Error::DimensionMismatch {
            expected: prediction.probabilities.nrows(),
            actual: gold.len(),
        });
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = gold
        .iter()
        .enumerate()
        .map(|(t, tag)| {
            -prediction.probabilities[[t, prediction.mode.class_of(*tag)]]
                .max(f64::MIN_POSITIVE)
                .ln()
        })
        .sum();
    Ok(total / gold.len() as f64)
}

/// Combine per-axis predictions; a token claimed by both models goes to the
/// one with the larger entity probability.
pub fn compose_individual(x: &TagPrediction, y: &TagPrediction) -> Vec<EntityTag> {
    x.tags
        .iter()
        .zip(&y.tags)
        .enumerate()
        .map(|(t, (xt, yt))| match (*xt != EntityTag::None, *yt != EntityTag::None) {
            (true, true) => {
                if x.probabilities[[t, 1]] >= y.probabilities[[t, 1]] {
                    EntityTag::X
                } else {
                    EntityTag::Y
                }
            }
            (true, false) => EntityTag::X,
            (false, true) => EntityTag::Y,
            (false, false) => EntityTag::None,
        })
        .collect()
}

/// A combined model or a pair of per-axis models.
#[derive(Debug, Clone, PartialEq)]
pub enum EntityTagger {
    Combined(TaggerModel),
    Individual { x: TaggerModel, y: TaggerModel },
}

impl EntityTagger {
    pub fn predict_tags(&self, tokens: &[Token], embeddings: &EmbeddingTable) -> Result<Vec<EntityTag>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        let x = embeddings.embed_sequence(&texts);
        match self {
            EntityTagger::Combined(m) => Ok(forward(m, x.view())?.tags),
            EntityTagger::Individual { x: mx, y: my } => {
                Ok(compose_individual(&forward(mx, x.view())?, &forward(my, x.view())?))
            }
        }
    }

    pub fn predict_entities(
        &self,
        tokens: &[Token],
        embeddings: &EmbeddingTable,
    ) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)> {
        let tags = self.predict_tags(tokens, embeddings)?;
        Ok(split_by_kind(spans_from_tags(tokens, &tags)))
    }
}

/// Stage-1 entity extraction with a single combined model.
pub fn predict_entities(
    model: &TaggerModel,
    tokens: &[Token],
    embeddings: &EmbeddingTable,
) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)> {
    EntityTagger::Combined(model.clone()).predict_entities(tokens, embeddings)
}

// ---------------------------------------------------------------------------
// Evaluation and training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggerEvaluation {
    pub x: Option<(ConfusionMatrix, ClassScores)>,
    pub y: Option<(ConfusionMatrix, ClassScores)>,
    /// Harmonic mean of the per-axis F1 scores that are present.
    pub harmonic_f1: f64,
    pub loss: f64,
}

/// Token-level per-axis scores for predicted vs gold tags.
pub fn score_tags(predicted: &[Vec<EntityTag>], gold: &[Vec<EntityTag>], axes: (bool, bool)) -> TaggerEvaluation {
    let flat_p: Vec<EntityTag> = predicted.iter().flatten().copied().collect();
    let flat_g: Vec<EntityTag> = gold.iter().flatten().copied().collect();
    let score = |tag| {
        let cm = ConfusionMatrix::one_vs_rest(&flat_p, &flat_g, &tag);
        (cm, ClassScores::from(&cm))
    };
    let x = axes.0.then(|| score(EntityTag::X));
    let y = axes.1.then(|| score(EntityTag::Y));
    let harmonic_f1 = match (&x, &y) {
        (Some(x), Some(y)) => harmonic_mean(x.1.f1, y.1.f1),
        (Some(x), None) => x.1.f1,
        (None, Some(y)) => y.1.f1,
        (None, None) => 0.0,
    };
    TaggerEvaluation {
        x,
        y,
        harmonic_f1,
        loss: 0.0,
    }
}

fn axes_of(mode: TaggerMode) -> (bool, bool) {
    match mode {
        TaggerMode::Combined => (true, true),
        TaggerMode::IndividualX => (true, false),
        TaggerMode::IndividualY => (false, true),
    }
}

struct Encoded {
    x: Array2<f64>,
    gold: Vec<EntityTag>,
}

fn encode(samples: &[Sample], embeddings: &EmbeddingTable) -> Vec<Encoded> {
    samples
        .iter()
        .filter(|s| !s.tokens.is_empty())
        .map(|s| Encoded {
            x: embeddings.embed_sequence(&s.texts()),
            gold: s.tags.clone(),
        })
        .collect()
}

fn evaluate_encoded(model: &TaggerModel, data: &[Encoded]) -> Result<TaggerEvaluation> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    let mut total_loss = 0.0;
    for e in data {
        let pred = forward(model, e.x.view())?;
        total_loss += loss(&pred, &e.gold)?;
        // Individual modes only score their own axis; fold the other away.
        let keep = |t: &EntityTag| if model.mode().class_of(*t) == 0 { EntityTag::None } else { *t };
        gold.push(e.gold.iter().map(keep).collect());
        predicted.push(pred.tags);
    }
    let mut eval = score_tags(&predicted, &gold, axes_of(model.mode()));
    eval.loss = total_loss / data.len().max(1) as f64;
    Ok(eval)
}

pub fn evaluate(model: &TaggerModel, samples: &[Sample], embeddings: &EmbeddingTable) -> Result<TaggerEvaluation> {
    evaluate_encoded(model, &encode(samples, embeddings))
}

/// Per-axis scores for a composed tagger (either kind).
pub fn evaluate_tagger(tagger: &EntityTagger, samples: &[Sample], embeddings: &EmbeddingTable) -> Result<TaggerEvaluation> {
    let mut predicted = Vec::new();
    let mut gold = Vec::new();
    for s in samples {
        predicted.push(tagger.predict_tags(&s.tokens, embeddings)?);
        gold.push(s.tags.clone());
    }
    Ok(score_tags(&predicted, &gold, (true, true)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_f1: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedTagger {
    pub model: TaggerModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Minibatch RMSprop training with backpropagation through time. The
/// returned parameters are those of the epoch with the best validation
/// harmonic F1 (validation loss breaks ties). With no validation samples the
/// training set is used for selection.
pub fn train(
    config: &TaggerConfig,
    train_samples: &[Sample],
    validation_samples: &[Sample],
    embeddings: &EmbeddingTable,
) -> Result<TrainedTagger> {
    let train_data = encode(train_samples, embeddings);
    if train_data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let valid_data = encode(validation_samples, embeddings);
    let selection = if valid_data.is_empty() { &train_data } else { &valid_data };

    let mut model = init_tagger(config, embeddings.dimension())?;
    model.input_norm = Standardizer::fit(embeddings.dimension(), train_data.iter().map(|e| &e.x));

    let param_count = model.params.param_count();
    let mut optimizer = RmsProp::new(config.learning_rate, param_count);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut best: Option<(f64, f64, TaggerParams, usize)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut sum = vec![0.0; param_count];
            for &i in batch {
                let (l, g) = model.loss_and_gradient(train_data[i].x.view(), &train_data[i].gold)?;
                epoch_loss += l;
                sum.iter_mut().zip(&g).for_each(|(s, g)| *s += g);
            }
            let k = batch.len() as f64;
            sum.iter_mut().for_each(|s| *s /= k);
            clip_global_norm(&mut sum, config.clip_norm);
            optimizer.step(&mut model.params, &sum);
        }
        let eval = evaluate_encoded(&model, selection)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_data.len() as f64,
            validation_f1: eval.harmonic_f1,
            validation_loss: eval.loss,
        };
        log::debug!("tagger epoch {epoch}: {record:?}");
        let better = match &best {
            None => true,
            Some((f1, l, _, _)) => eval.harmonic_f1 > *f1 || (eval.harmonic_f1 == *f1 && eval.loss < *l),
        };
        if better {
            best = Some((eval.harmonic_f1, eval.loss, model.params.clone(), epoch));
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
    Ok(TrainedTagger {
        model,
        log,
        best_epoch,
    })
}
