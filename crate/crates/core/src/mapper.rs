//! Stage 2: map every x entity to one y entity.
//!
//! Two scorers are provided. The baseline learns signed-distance likelihoods
//! for mapped and unmapped (x, y) pairs and picks, for each x, the candidate
//! maximizing `P⁺(d) / (P⁺(d) + P⁻(d))`. The supervised scorer describes a
//! candidate pair by the 15 pairwise distances among the pair and its
//! immediate neighbours and scores it with a random forest.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpan, Sample};
use crate::error::{Error, Result};
use crate::metrics::{auroc, harmonic_mean, ClassScores, ConfusionMatrix};
use crate::model_file::{ModelFile, Tensor};

pub const FEATURE_COUNT: usize = 15;
pub const DEFAULT_TREE_COUNT: usize = 33;
pub const DEFAULT_MAX_DEPTH: usize = 12;
pub const DEFAULT_MAX_FEATURES: usize = 4;

pub const HISTOGRAM_KIND: &str = "mapper-baseline";
pub const FOREST_KIND: &str = "mapper-forest";

/// Signed token offset from `a` to `b`, measured between span starts.
pub fn entity_distance(a: &EntitySpan, b: &EntitySpan) -> i64 {
    b.start as i64 - a.start as i64
}

/// Chosen y ordinal and its score for every x ordinal, in x order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingResult {
    pub pairs: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
}

/// Per-x argmax over candidate scores; ties go to the smaller |distance|,
/// then the smaller y ordinal.
fn argmax_map<F>(xs: &[EntitySpan], ys: &[EntitySpan], mut score: F) -> Result<MappingResult>
where
    F: FnMut(usize, usize) -> f64,
{
    if ys.is_empty() {
        return Err(Error::InvalidConfig("no y entities to map onto".into()));
    }
    let mut pairs = Vec::with_capacity(xs.len());
    let mut scores = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let mut best: Option<(f64, i64, usize)> = None;
        for (k, y) in ys.iter().enumerate() {
            let s = score(i, k);
            let d = entity_distance(x, y).abs();
            let better = match best {
                None => true,
                Some((bs, bd, _)) => s > bs || (s == bs && d < bd),
            };
            if better {
                best = Some((s, d, k));
            }
        }
        let (s, _, k) = best.expect("at least one candidate");
        pairs.push((i, k));
        scores.push(s);
    }
    Ok(MappingResult { pairs, scores })
}

// ---------------------------------------------------------------------------
// Distance likelihoods
// ---------------------------------------------------------------------------

/// Positive and negative distance likelihoods over a gap-free support.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogram {
    pub positive: BTreeMap<i64, f64>,
    pub negative: BTreeMap<i64, f64>,
    pub min: i64,
    pub max: i64,
}

/// Fill every integer in `min..=max` missing from `counts` with the value at
/// the nearest observed distance (mean of both neighbours on a tie), then
/// normalize to a probability distribution.
fn smooth(counts: &BTreeMap<i64, u64>, min: i64, max: i64) -> BTreeMap<i64, f64> {
    let mut filled = BTreeMap::new();
    for d in min..=max {
        let value = match counts.get(&d) {
            Some(&c) => c as f64,
            None => {
                let below = counts.range(..d).next_back();
                let above = counts.range(d + 1..).next();
                match (below, above) {
                    (Some((&lo, &cl)), Some((&hi, &ch))) => match (d - lo).cmp(&(hi - d)) {
                        std::cmp::Ordering::Less => cl as f64,
                        std::cmp::Ordering::Greater => ch as f64,
                        std::cmp::Ordering::Equal => (cl + ch) as f64 / 2.0,
                    },
                    (Some((_, &c)), None) | (None, Some((_, &c))) => c as f64,
                    (None, None) => 0.0,
                }
            }
        };
        filled.insert(d, value);
    }
    let total: f64 = filled.values().sum();
    if total > 0.0 {
        filled.values_mut().for_each(|v| *v /= total);
    }
    filled
}

/// Signed x→y distances of gold-mapped pairs (positive) and of every other
/// (x, y) pair (negative), one sample at a time.
pub fn labeled_distances(sample: &Sample) -> Vec<(i64, bool)> {
    let (xs, ys) = sample.spans_by_kind();
    let mapped: HashSet<(usize, usize)> = sample.mapping.iter().copied().collect();
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for (i, x) in xs.iter().enumerate() {
        for (k, y) in ys.iter().enumerate() {
            out.push((entity_distance(x, y), mapped.contains(&(i, k))));
        }
    }
    out
}

pub fn learn_distance_distributions(train_samples: &[Sample]) -> Result<DistanceHistogram> {
    if train_samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut pos = BTreeMap::new();
    let mut neg = BTreeMap::new();
    for sample in train_samples {
        for (d, mapped) in labeled_distances(sample) {
            *if mapped { &mut pos } else { &mut neg }.entry(d).or_insert(0u64) += 1;
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let min = *pos.keys().next().unwrap().min(neg.keys().next().unwrap());
    let max = *pos.keys().next_back().unwrap().max(neg.keys().next_back().unwrap());
    Ok(DistanceHistogram {
        positive: smooth(&pos, min, max),
        negative: smooth(&neg, min, max),
        min,
        max,
    })
}

impl DistanceHistogram {
    /// `(P⁺(d), P⁻(d))`, clamping `d` into the support.
    pub fn likelihoods(&self, d: i64) -> (f64, f64) {
        let d = d.clamp(self.min, self.max);
        (self.positive[&d], self.negative[&d])
    }

    pub fn score(&self, d: i64) -> f64 {
        let (p, n) = self.likelihoods(d);
        if p + n > 0.0 {
            p / (p + n)
        } else {
            0.0
        }
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut file = ModelFile::new(HISTOGRAM_KIND, &serde_json::json!({"min": self.min, "max": self.max}))?;
        file.push("positive", Tensor::vector(self.positive.values().copied().collect()));
        file.push("negative", Tensor::vector(self.negative.values().copied().collect()));
        Ok(file)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(HISTOGRAM_KIND)?;
        #[derive(Deserialize)]
        struct Support {
            min: i64,
            max: i64,
        }
        let Support { min, max } = file.config()?;
        if max < min {
            return Err(Error::ModelFormat("empty histogram support".into()));
        }
        let load = |name: &str| -> Result<BTreeMap<i64, f64>> {
            let t = file.get(name)?;
            if t.data.len() as i64 != max - min + 1 {
                return Err(Error::ModelFormat(format!("{name}: wrong length")));
            }
            Ok((min..=max).zip(t.data.iter().copied()).collect())
        };
        Ok(Self {
            positive: load("positive")?,
            negative: load("negative")?,
            min,
            max,
        })
    }
}

/// Likelihood-ratio argmax mapping.
pub fn baseline_map(xs: &[EntitySpan], ys: &[EntitySpan], hist: &DistanceHistogram) -> Result<MappingResult> {
    argmax_map(xs, ys, |i, k| hist.score(entity_distance(&xs[i], &ys[k])))
}

// ---------------------------------------------------------------------------
// Pair features
// ---------------------------------------------------------------------------

/// Pairwise distances among `(x₋, x, x₊, y₋, y, y₊)` in lexicographic pair
/// order: same-kind pairs unsigned, cross-kind pairs signed (y − x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeatures {
    pub values: [f64; FEATURE_COUNT],
}

pub fn extract_features(xs: &[EntitySpan], ys: &[EntitySpan], i: usize, k: usize) -> Result<PairFeatures> {
    if i >= xs.len() || k >= ys.len() {
        return Err(Error::IndexOutOfRange(format!(
            "pair ({i}, {k}) with {} x and {} y entities",
            xs.len(),
            ys.len()
        )));
    }
    let neighbour = |spans: &[EntitySpan], c: usize, offset: isize| {
        let j = c as isize + offset;
        if j < 0 || j as usize >= spans.len() {
            spans[c].start as i64
        } else {
            spans[j as usize].start as i64
        }
    };
    let positions = [
        neighbour(xs, i, -1),
        xs[i].start as i64,
        neighbour(xs, i, 1),
        neighbour(ys, k, -1),
        ys[k].start as i64,
        neighbour(ys, k, 1),
    ];
    let mut values = [0.0; FEATURE_COUNT];
    let mut n = 0;
    for a in 0..6 {
        for b in a + 1..6 {
            let d = positions[b] - positions[a];
            let same_kind = (a < 3) == (b < 3);
            values[n] = if same_kind { d.abs() as f64 } else { d as f64 };
            n += 1;
        }
    }
    Ok(PairFeatures { values })
}

/// Every candidate (x, y) pair of every sample with its gold label.
pub fn pair_dataset(samples: &[Sample]) -> (Vec<PairFeatures>, Vec<bool>) {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for sample in samples {
        let (xs, ys) = sample.spans_by_kind();
        let mapped: HashSet<(usize, usize)> = sample.mapping.iter().copied().collect();
        for i in 0..xs.len() {
            for k in 0..ys.len() {
                features.push(extract_features(&xs, &ys, i, k).expect("indices in range"));
                labels.push(mapped.contains(&(i, k)));
            }
        }
    }
    (features, labels)
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary tree stored as a node arena; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub max_features: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn new(tree_count: usize, seed: u64) -> Self {
        Self {
            tree_count,
            seed,
            max_depth: DEFAULT_MAX_DEPTH,
            max_features: DEFAULT_MAX_FEATURES,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub params: ForestParams,
    pub trees: Vec<DecisionTree>,
}

fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(tree_index as u64))
}

/// Row indices of the bootstrap resample drawn for tree `tree_index`.
pub fn bootstrap_indices(n: usize, seed: u64, tree_index: usize) -> Vec<usize> {
    let mut rng = tree_rng(seed, tree_index);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Best `(weighted child Gini, threshold)` over midpoints between sorted
/// distinct values of one feature, or `None` when the feature is constant.
pub fn best_threshold(values: &[f64], labels: &[bool]) -> Option<(f64, f64)> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let n = values.len();
    let total_pos = labels.iter().filter(|&&l| l).count();
    let mut left_pos = 0;
    let mut best: Option<(f64, f64)> = None;
    for j in 0..n.saturating_sub(1) {
        if labels[order[j]] {
            left_pos += 1;
        }
        let (here, next) = (values[order[j]], values[order[j + 1]]);
        if here == next {
            continue;
        }
        let nl = j + 1;
        let nr = n - nl;
        let impurity = (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / n as f64;
        if best.is_none_or(|(b, _)| impurity < b) {
            best = Some((impurity, (here + next) / 2.0));
        }
    }
    best
}

struct TreeBuilder<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [bool],
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        let leaf = Node::Leaf {
            value: if n == 0 { 0.0 } else { pos as f64 / n as f64 },
        };
        let id = self.nodes.len();
        self.nodes.push(leaf);
        if pos == 0 || pos == n || depth >= self.params.max_depth || n < self.params.min_samples_split {
            return id;
        }
        let Some((feature, threshold)) = self.choose_split(idx, rng) else {
            return id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        let left = self.build(&left_idx, depth + 1, rng);
        let right = self.build(&right_idx, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    /// Visit features in random order until `max_features` non-constant ones
    /// have been evaluated; keep the lowest weighted Gini (first wins ties).
    fn choose_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let width = self.rows[idx[0]].len();
        let mut features: Vec<usize> = (0..width).collect();
        features.shuffle(rng);
        let labels: Vec<bool> = idx.iter().map(|&i| self.labels[i]).collect();
        let mut evaluated = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features {
            if evaluated >= self.params.max_features {
                break;
            }
            let values: Vec<f64> = idx.iter().map(|&i| self.rows[i][f]).collect();
            let Some((impurity, threshold)) = best_threshold(&values, &labels) else {
                continue;
            };
            evaluated += 1;
            if best.is_none_or(|(b, _, _)| impurity < b) {
                best = Some((impurity, f, threshold));
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Train one tree on the given rows (no resampling).
pub fn train_tree(rows: &[&[f64]], labels: &[bool], params: &ForestParams, rng: &mut ChaCha8Rng, idx: &[usize]) -> DecisionTree {
    let mut builder = TreeBuilder {
        rows,
        labels,
        params,
        nodes: Vec::new(),
    };
    builder.build(idx, 0, rng);
    DecisionTree { nodes: builder.nodes }
}

pub fn train_forest_with(rows: &[&[f64]], labels: &[bool], params: &ForestParams) -> Result<ForestModel> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            actual: labels.len(),
        });
    }
    if rows.len() < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    if params.tree_count == 0 || params.max_features == 0 {
        return Err(Error::InvalidConfig("tree count and max features must be ≥ 1".into()));
    }
    let n = rows.len();
    let trees = (0..params.tree_count)
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            train_tree(rows, labels, params, &mut rng, &idx)
        })
        .collect();
    Ok(ForestModel {
        params: *params,
        trees,
    })
}

/// Bootstrapped forest over pair features with default depth and feature
/// sampling.
pub fn train_forest(features: &[PairFeatures], labels: &[bool], tree_count: usize, seed: u64) -> Result<ForestModel> {
    let rows: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    train_forest_with(&rows, labels, &ForestParams::new(tree_count, seed))
}

impl ForestModel {
    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut file = ModelFile::new(FOREST_KIND, &self.params)?;
        for (t, tree) in self.trees.iter().enumerate() {
            let len = tree.nodes.len();
            let mut feature = Vec::with_capacity(len);
            let mut threshold = Vec::with_capacity(len);
            let mut left = Vec::with_capacity(len);
            let mut right = Vec::with_capacity(len);
            let mut value = Vec::with_capacity(len);
            for node in &tree.nodes {
                match *node {
                    Node::Leaf { value: v } => {
                        feature.push(-1.0);
                        threshold.push(0.0);
                        left.push(-1.0);
                        right.push(-1.0);
                        value.push(v);
                    }
                    Node::Split { feature: f, threshold: th, left: l, right: r } => {
                        feature.push(f as f64);
                        threshold.push(th);
                        left.push(l as f64);
                        right.push(r as f64);
                        value.push(0.0);
                    }
                }
            }
            for (name, data) in [
                ("feature", feature),
                ("threshold", threshold),
                ("left", left),
                ("right", right),
                ("value", value),
            ] {
                file.push(format!("tree.{t}.{name}"), Tensor::vector(data));
            }
        }
        Ok(file)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(FOREST_KIND)?;
        let params: ForestParams = file.config()?;
        let mut trees = Vec::with_capacity(params.tree_count);
        for t in 0..params.tree_count {
            let get = |name: &str| file.get(&format!("tree.{t}.{name}")).map(|x| &x.data);
            let (feature, threshold, left, right, value) =
                (get("feature")?, get("threshold")?, get("left")?, get("right")?, get("value")?);
            let len = feature.len();
            if [threshold.len(), left.len(), right.len(), value.len()].iter().any(|&l| l != len) || len == 0 {
                return Err(Error::ModelFormat(format!("tree {t}: inconsistent node arrays")));
            }
            let mut nodes = Vec::with_capacity(len);
            for j in 0..len {
                if feature[j] < 0.0 {
                    nodes.push(Node::Leaf { value: value[j] });
                } else {
                    let (l, r) = (left[j] as usize, right[j] as usize);
                    if l >= len || r >= len || l <= j || r <= j || feature[j] as usize >= FEATURE_COUNT {
                        return Err(Error::ModelFormat(format!("tree {t}: bad child index")));
                    }
                    nodes.push(Node::Split {
                        feature: feature[j] as usize,
                        threshold: threshold[j],
                        left: l,
                        right: r,
                    });
                }
            }
            trees.push(DecisionTree { nodes });
        }
        Ok(Self { params, trees })
    }
}

/// Mean positive fraction over the forest's leaves reached by `features`.
pub fn forest_score(model: &ForestModel, features: &PairFeatures) -> f64 {
    model.score(&features.values)
}

pub fn forest_map(xs: &[EntitySpan], ys: &[EntitySpan], model: &ForestModel) -> Result<MappingResult> {
    argmax_map(xs, ys, |i, k| {
        forest_score(model, &extract_features(xs, ys, i, k).expect("indices in range"))
    })
}

// ---------------------------------------------------------------------------
// Trained mapper + evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum PairMapper {
    Baseline(DistanceHistogram),
    Forest(ForestModel),
}

impl PairMapper {
    pub fn map(&self, xs: &[EntitySpan], ys: &[EntitySpan]) -> Result<MappingResult> {
        match self {
            PairMapper::Baseline(h) => baseline_map(xs, ys, h),
            PairMapper::Forest(f) => forest_map(xs, ys, f),
        }
    }

    pub fn pair_score(&self, xs: &[EntitySpan], ys: &[EntitySpan], i: usize, k: usize) -> f64 {
        match self {
            PairMapper::Baseline(h) => h.score(entity_distance(&xs[i], &ys[k])),
            PairMapper::Forest(f) => forest_score(f, &extract_features(xs, ys, i, k).expect("indices in range")),
        }
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        match self {
            PairMapper::Baseline(h) => h.to_model_file(),
            PairMapper::Forest(f) => f.to_model_file(),
        }
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        match file.kind.as_str() {
            HISTOGRAM_KIND => Ok(PairMapper::Baseline(DistanceHistogram::from_model_file(file)?)),
            FOREST_KIND => Ok(PairMapper::Forest(ForestModel::from_model_file(file)?)),
            other => Err(Error::ModelFormat(format!("not a mapper model: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapperEvaluation {
    pub positive: ClassScores,
    pub negative: ClassScores,
    pub confusion: ConfusionMatrix,
    pub harmonic_f1: f64,
    pub auroc: f64,
    pub pair_count: usize,
}

/// Pair-level evaluation over all candidate (x, y) pairs of samples with gold
/// entities: a pair is predicted positive when the mapper selects it.
pub fn evaluate_mapper(mapper: &PairMapper, samples: &[Sample]) -> Result<MapperEvaluation> {
    let mut scores = Vec::new();
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for sample in samples {
        let (xs, ys) = sample.spans_by_kind();
        if xs.is_empty() || ys.is_empty() {
            continue;
        }
        let chosen: HashSet<(usize, usize)> = mapper.map(&xs, &ys)?.pairs.into_iter().collect();
        let gold: HashSet<(usize, usize)> = sample.mapping.iter().copied().collect();
        for i in 0..xs.len() {
            for k in 0..ys.len() {
                scores.push(mapper.pair_score(&xs, &ys, i, k));
                predicted.push(chosen.contains(&(i, k)));
                actual.push(gold.contains(&(i, k)));
            }
        }
    }
    let confusion = ConfusionMatrix::from_predictions(&predicted, &actual);
    let positive = ClassScores::from(&confusion);
    let negative = ClassScores::from(&confusion.flipped());
    Ok(MapperEvaluation {
        positive,
        negative,
        confusion,
        harmonic_f1: harmonic_mean(positive.f1, negative.f1),
        auroc: auroc(&scores, &actual)?,
        pair_count: scores.len(),
    })
}
