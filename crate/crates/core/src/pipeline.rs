//! End-to-end orchestration: text → entities → mapping → chart types, plus
//! stage-wise error accounting.
//!
//! Each stage sits behind a small trait so any of them can be swapped for a
//! gold stand-in when evaluating the others in isolation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::Serialize;

use crate::chart_type::{decide, predict_chart_types, ChartTypeModel, ChartTypeResult};
use crate::corpus::{tokenize, ChartType, EntitySpan, Sample, Token};
use crate::embeddings::{load_vectors, EmbeddingTable};
use crate::error::{Error, Result};
use crate::mapper::{MappingResult, PairMapper};
use crate::model_file::ModelFile;
use crate::tagger::{EntityTagger, TaggerModel};

pub trait EntityRecognizer: Sync {
    /// `(x spans, y spans)`, each in order of appearance.
    fn recognize(&self, tokens: &[Token]) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)>;
}

pub trait EntityMapper: Sync {
    /// Called only with non-empty x and y lists.
    fn map(&self, xs: &[EntitySpan], ys: &[EntitySpan]) -> Result<MappingResult>;
}

pub trait ChartTypePredictor: Sync {
    fn predict(&self, tokens: &[Token]) -> Result<ChartTypeResult>;
}

impl EntityMapper for PairMapper {
    fn map(&self, xs: &[EntitySpan], ys: &[EntitySpan]) -> Result<MappingResult> {
        PairMapper::map(self, xs, ys)
    }
}

pub struct TaggerRecognizer<'a> {
    pub tagger: &'a EntityTagger,
    pub embeddings: &'a EmbeddingTable,
}

impl EntityRecognizer for TaggerRecognizer<'_> {
    fn recognize(&self, tokens: &[Token]) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)> {
        self.tagger.predict_entities(tokens, self.embeddings)
    }
}

pub struct ChartClassifiers<'a> {
    pub pie: &'a ChartTypeModel,
    pub line: &'a ChartTypeModel,
    pub embeddings: &'a EmbeddingTable,
    pub threshold: f64,
}

impl ChartTypePredictor for ChartClassifiers<'_> {
    fn predict(&self, tokens: &[Token]) -> Result<ChartTypeResult> {
        predict_chart_types(self.pie, self.line, tokens, self.embeddings, self.threshold)
    }
}

/// Returns the same spans for every input.
pub struct FixedEntities {
    pub xs: Vec<EntitySpan>,
    pub ys: Vec<EntitySpan>,
}

impl EntityRecognizer for FixedEntities {
    fn recognize(&self, _: &[Token]) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)> {
        Ok((self.xs.clone(), self.ys.clone()))
    }
}

/// Returns the same pairs for every input.
pub struct FixedMapping(pub Vec<(usize, usize)>);

impl EntityMapper for FixedMapping {
    fn map(&self, xs: &[EntitySpan], ys: &[EntitySpan]) -> Result<MappingResult> {
        if let Some(&(i, k)) = self.0.iter().find(|&&(i, k)| i >= xs.len() || k >= ys.len()) {
            return Err(Error::IndexOutOfRange(format!("fixed pair ({i}, {k})")));
        }
        Ok(MappingResult {
            pairs: self.0.clone(),
            scores: vec![1.0; self.0.len()],
        })
    }
}

/// Returns the same chart-type set (bar added) for every input.
pub struct FixedChartTypes(pub BTreeSet<ChartType>);

impl ChartTypePredictor for FixedChartTypes {
    fn predict(&self, _: &[Token]) -> Result<ChartTypeResult> {
        let score = |t| if self.0.contains(&t) { 1.0 } else { 0.0 };
        Ok(decide(score(ChartType::Pie), score(ChartType::Line), 0.5))
    }
}

/// Pair entities 1-to-1 by order of appearance.
pub fn sequential_mapping(count: usize) -> Vec<(usize, usize)> {
    (0..count).map(|i| (i, i)).collect()
}

/// Sequential pairing when the counts match, otherwise the learned mapper.
/// Returns the pairs and whether the bypass fired.
pub fn map_entities(xs: &[EntitySpan], ys: &[EntitySpan], mapper: &dyn EntityMapper) -> Result<(Vec<(usize, usize)>, bool)> {
    if xs.len() == ys.len() {
        Ok((sequential_mapping(xs.len()), true))
    } else {
        Ok((mapper.map(xs, ys)?.pairs, false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartSpec {
    pub x_labels: Vec<String>,
    pub y_values: Vec<String>,
    pub chart_types: BTreeSet<ChartType>,
}

/// Intermediate results of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineTrace {
    pub tokens: Vec<Token>,
    pub x_spans: Vec<EntitySpan>,
    pub y_spans: Vec<EntitySpan>,
    pub mapping: Vec<(usize, usize)>,
    pub bypassed: bool,
    pub chart: ChartTypeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PipelineOutcome {
    Chart { spec: ChartSpec, trace: PipelineTrace },
    /// No x or no y entities were found; nothing is fabricated.
    Unchartable { reason: String, trace: PipelineTrace },
}

impl PipelineOutcome {
    pub fn trace(&self) -> &PipelineTrace {
        match self {
            PipelineOutcome::Chart { trace, .. } | PipelineOutcome::Unchartable { trace, .. } => trace,
        }
    }

    pub fn spec(&self) -> Option<&ChartSpec> {
        match self {
            PipelineOutcome::Chart { spec, .. } => Some(spec),
            PipelineOutcome::Unchartable { .. } => None,
        }
    }
}

pub fn run_pipeline(
    text: &str,
    recognizer: &dyn EntityRecognizer,
    mapper: &dyn EntityMapper,
    chart_types: &dyn ChartTypePredictor,
) -> Result<PipelineOutcome> {
    run_pipeline_tokens(tokenize(text), recognizer, mapper, chart_types)
}

pub fn run_pipeline_tokens(
    tokens: Vec<Token>,
    recognizer: &dyn EntityRecognizer,
    mapper: &dyn EntityMapper,
    chart_types: &dyn ChartTypePredictor,
) -> Result<PipelineOutcome> {
    let (x_spans, y_spans) = recognizer.recognize(&tokens)?;
    let chart = chart_types.predict(&tokens)?;
    let mut trace = PipelineTrace {
        tokens,
        x_spans,
        y_spans,
        mapping: Vec::new(),
        bypassed: false,
        chart,
    };
    let missing = match (trace.x_spans.is_empty(), trace.y_spans.is_empty()) {
        (true, true) => Some("no x or y entities found"),
        (true, false) => Some("no x entities found"),
        (false, true) => Some("no y entities found"),
        (false, false) => None,
    };
    if let Some(reason) = missing {
        return Ok(PipelineOutcome::Unchartable {
            reason: reason.into(),
            trace,
        });
    }
    let (mapping, bypassed) = map_entities(&trace.x_spans, &trace.y_spans, mapper)?;
    let mut pairs = mapping.clone();
    pairs.sort_unstable();
    let spec = ChartSpec {
        x_labels: pairs.iter().map(|&(i, _)| trace.x_spans[i].surface.clone()).collect(),
        y_values: pairs.iter().map(|&(_, k)| trace.y_spans[k].surface.clone()).collect(),
        chart_types: trace.chart.types.clone(),
    };
    trace.mapping = mapping;
    trace.bypassed = bypassed;
    Ok(PipelineOutcome::Chart { spec, trace })
}

// ---------------------------------------------------------------------------
// Error accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageErrorReport {
    pub sample_id: String,
    pub stage1_errors: usize,
    pub stage2_errors: usize,
    pub stage3_errors: usize,
}

/// Stage 1: spans in exactly one of predicted/gold. Stage 2: gold pairs the
/// mapper misses when fed the gold entities. Stage 3: chart types in exactly
/// one of predicted/gold.
pub fn count_stage_errors(trace: &PipelineTrace, gold: &Sample, mapper: &dyn EntityMapper) -> Result<StageErrorReport> {
    let predicted: HashSet<&EntitySpan> = trace.x_spans.iter().chain(&trace.y_spans).collect();
    let gold_spans = gold.spans();
    let gold_set: HashSet<&EntitySpan> = gold_spans.iter().collect();
    let stage1 = predicted.symmetric_difference(&gold_set).count();

    let (gx, gy) = gold.spans_by_kind();
    let stage2 = if gx.is_empty() || gy.is_empty() {
        0
    } else {
        let (pairs, _) = map_entities(&gx, &gy, mapper)?;
        let found: HashSet<(usize, usize)> = pairs.into_iter().collect();
        gold.mapping.iter().filter(|p| !found.contains(p)).count()
    };

    let stage3 = trace.chart.types.symmetric_difference(&gold.chart_types).count();
    Ok(StageErrorReport {
        sample_id: gold.id.clone(),
        stage1_errors: stage1,
        stage2_errors: stage2,
        stage3_errors: stage3,
    })
}

/// Run the pipeline on every sample's tokens and count its errors, spreading
/// samples across threads.
pub fn evaluate_pipeline(
    samples: &[Sample],
    recognizer: &dyn EntityRecognizer,
    mapper: &dyn EntityMapper,
    chart_types: &dyn ChartTypePredictor,
) -> Result<Vec<StageErrorReport>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| {
                            let outcome = run_pipeline_tokens(s.tokens.clone(), recognizer, mapper, chart_types)?;
                            count_stage_errors(outcome.trace(), s, mapper)
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("pipeline worker panicked")?);
        }
        Ok(out)
    })
}

/// For each stage, `F(k)` = number of samples with at most `k` errors, for
/// `k` from 0 to the largest observed count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CumulativeErrors {
    pub stage1: BTreeMap<usize, usize>,
    pub stage2: BTreeMap<usize, usize>,
    pub stage3: BTreeMap<usize, usize>,
}

fn cumulative(counts: impl Iterator<Item = usize> + Clone) -> BTreeMap<usize, usize> {
    let Some(max) = counts.clone().max() else {
        return BTreeMap::new();
    };
    let mut histogram = vec![0usize; max + 1];
    for c in counts {
        histogram[c] += 1;
    }
    let mut running = 0;
    histogram
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            running += n;
            (k, running)
        })
        .collect()
}

pub fn cumulative_error_frequency(reports: &[StageErrorReport]) -> CumulativeErrors {
    CumulativeErrors {
        stage1: cumulative(reports.iter().map(|r| r.stage1_errors)),
        stage2: cumulative(reports.iter().map(|r| r.stage2_errors)),
        stage3: cumulative(reports.iter().map(|r| r.stage3_errors)),
    }
}

// ---------------------------------------------------------------------------
// Trained model bundle
// ---------------------------------------------------------------------------

pub const VECTORS_FILE: &str = "vectors.vec";
pub const TAGGER_FILE: &str = "tagger.model";
pub const TAGGER_X_FILE: &str = "tagger_x.model";
pub const TAGGER_Y_FILE: &str = "tagger_y.model";
pub const MAPPER_FILE: &str = "mapper.model";
pub const PIE_FILE: &str = "pie.model";
pub const LINE_FILE: &str = "line.model";

/// Every trained component the pipeline needs, as stored in a models
/// directory.
#[derive(Debug, Clone)]
pub struct PipelineModels {
    pub tagger: EntityTagger,
    pub mapper: PairMapper,
    pub pie: ChartTypeModel,
    pub line: ChartTypeModel,
    pub embeddings: EmbeddingTable,
}

impl PipelineModels {
    /// Load a models directory. Without `vectors.vec`, hashed n-gram
    /// embeddings of the tagger's input width are used.
    pub fn load(dir: &Path) -> Result<Self> {
        let tagger_model = |name: &str| TaggerModel::from_model_file(&ModelFile::load(&dir.join(name))?);
        let tagger = if dir.join(TAGGER_FILE).exists() {
            EntityTagger::Combined(tagger_model(TAGGER_FILE)?)
        } else {
            EntityTagger::Individual {
                x: tagger_model(TAGGER_X_FILE)?,
                y: tagger_model(TAGGER_Y_FILE)?,
            }
        };
        let input_dim = match &tagger {
            EntityTagger::Combined(m) => m.input_dim,
            EntityTagger::Individual { x, .. } => x.input_dim,
        };
        let vectors = dir.join(VECTORS_FILE);
        let embeddings = if vectors.exists() {
            load_vectors(&std::fs::read(vectors)?)?
        } else {
            EmbeddingTable::hashed_only(input_dim)?
        };
        if embeddings.dimension() != input_dim {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                actual: embeddings.dimension(),
            });
        }
        Ok(Self {
            tagger,
            mapper: PairMapper::from_model_file(&ModelFile::load(&dir.join(MAPPER_FILE))?)?,
            pie: ChartTypeModel::from_model_file(&ModelFile::load(&dir.join(PIE_FILE))?)?,
            line: ChartTypeModel::from_model_file(&ModelFile::load(&dir.join(LINE_FILE))?)?,
            embeddings,
        })
    }

    pub fn recognizer(&self) -> TaggerRecognizer<'_> {
        TaggerRecognizer {
            tagger: &self.tagger,
            embeddings: &self.embeddings,
        }
    }

    pub fn classifiers(&self, threshold: f64) -> ChartClassifiers<'_> {
        ChartClassifiers {
            pie: &self.pie,
            line: &self.line,
            embeddings: &self.embeddings,
            threshold,
        }
    }

    pub fn run(&self, text: &str, threshold: f64) -> Result<PipelineOutcome> {
        run_pipeline(text, &self.recognizer(), &self.mapper, &self.classifiers(threshold))
    }

    pub fn evaluate(&self, samples: &[Sample], threshold: f64) -> Result<Vec<StageErrorReport>> {
        evaluate_pipeline(samples, &self.recognizer(), &self.mapper, &self.classifiers(threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityKind;

    fn span(kind: EntityKind, start: usize, surface: &str) -> EntitySpan {
        EntitySpan {
            kind,
            start,
            end: start,
            surface: surface.into(),
        }
    }

    fn report(s1: usize, s2: usize, s3: usize) -> StageErrorReport {
        StageErrorReport {
            sample_id: String::new(),
            stage1_errors: s1,
            stage2_errors: s2,
            stage3_errors: s3,
        }
    }

    #[test]
    fn cumulative_examples() {
        let c = cumulative_error_frequency(&[report(0, 0, 0), report(0, 0, 0), report(2, 0, 0)]);
        assert_eq!(c.stage1, BTreeMap::from([(0, 2), (1, 2), (2, 3)]));
        assert_eq!(c.stage2, BTreeMap::from([(0, 3)]));
        assert!(cumulative_error_frequency(&[]).stage1.is_empty());
    }

    #[test]
    fn missing_y_is_unchartable() {
        let recognizer = FixedEntities {
            xs: vec![span(EntityKind::X, 0, "a")],
            ys: vec![],
        };
        let out = run_pipeline("a b", &recognizer, &FixedMapping(vec![]), &FixedChartTypes(BTreeSet::new())).unwrap();
        assert!(matches!(out, PipelineOutcome::Unchartable { .. }));
        assert!(out.spec().is_none());
    }

    #[test]
    fn labels_follow_x_order() {
        let recognizer = FixedEntities {
            xs: vec![span(EntityKind::X, 0, "a"), span(EntityKind::X, 2, "b")],
            ys: vec![span(EntityKind::Y, 4, "1")],
        };
        let out = run_pipeline("a , b : 1", &recognizer, &FixedMapping(vec![(1, 0), (0, 0)]), &FixedChartTypes(BTreeSet::new())).unwrap();
        let spec = out.spec().unwrap();
        assert_eq!(spec.x_labels, ["a", "b"]);
        assert_eq!(spec.y_values, ["1", "1"]);
        assert_eq!(spec.chart_types, BTreeSet::from([ChartType::Bar]));
        assert!(!out.trace().bypassed);
    }
}
