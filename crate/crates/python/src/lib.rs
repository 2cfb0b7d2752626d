//! Python bindings for the text-to-chart pipeline.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use textchart_core::chart_type::{self, ChartTarget, ChartTypeConfig, ChartTypeModel};
use textchart_core::corpus::{self, ChartType, EntityKind, EntitySpan};
use textchart_core::embeddings::{self, EmbeddingTable};
use textchart_core::mapper::{self, ForestParams, PairMapper};
use textchart_core::metrics::{self, ConfusionMatrix};
use textchart_core::model_file::ModelFile;
use textchart_core::pipeline::{PipelineModels, PipelineOutcome};
use textchart_core::render::{self, NumericSeries, RenderConfig};
use textchart_core::tagger::{self, EntityTagger, TaggerConfig, TaggerMode, TaggerModel};
use textchart_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_chart_type(name: &str) -> PyResult<ChartType> {
    ChartType::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown chart type {name:?}")))
}

fn parse_target(name: &str) -> PyResult<ChartTarget> {
    ChartTarget::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown target {name:?}, expected pie or line")))
}

fn spans_from_bounds(kind: EntityKind, bounds: Vec<(usize, usize)>) -> Vec<EntitySpan> {
    bounds
        .into_iter()
        .map(|(start, end)| EntitySpan {
            kind,
            start,
            end,
            surface: String::new(),
        })
        .collect()
}

fn span_tuples(spans: &[EntitySpan]) -> Vec<(usize, usize, String)> {
    spans.iter().map(|s| (s.start, s.end, s.surface.clone())).collect()
}

// ---------------------------------------------------------------------------
// Corpus

/// One labeled text.
#[pyclass(frozen, from_py_object, name = "Sample", module = "textchart")]
#[derive(Clone)]
struct PySample(corpus::Sample);

#[pymethods]
impl PySample {
    /// Build a sample from a dict shaped like one dataset line.
    #[staticmethod]
    fn from_dict(py: Python<'_>, record: &Bound<'_, PyAny>) -> PyResult<Self> {
        let line: String = py.import("json")?.call_method1("dumps", (record,))?.extract()?;
        let mut samples = corpus::parse_dataset(line.as_bytes()).map_err(py_err)?;
        Ok(Self(samples.remove(0)))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0.to_record())
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.0.texts().into_iter().map(String::from).collect()
    }

    #[getter]
    fn tags(&self) -> Vec<&'static str> {
        self.0.tags.iter().map(|t| t.as_str()).collect()
    }

    #[getter]
    fn mapping(&self) -> Vec<(usize, usize)> {
        self.0.mapping.clone()
    }

    #[getter]
    fn chart_types(&self) -> Vec<&'static str> {
        self.0.chart_types.iter().map(|c| c.as_str()).collect()
    }

    /// `(x_spans, y_spans)`, each a list of `(start, end, surface)` with
    /// inclusive token bounds.
    fn spans(&self) -> (Vec<(usize, usize, String)>, Vec<(usize, usize, String)>) {
        let (xs, ys) = self.0.spans_by_kind();
        (span_tuples(&xs), span_tuples(&ys))
    }

    fn __repr__(&self) -> String {
        format!("Sample(id={:?}, tokens={})", self.0.id, self.0.tokens.len())
    }
}

fn unwrap_samples(samples: Vec<PySample>) -> Vec<corpus::Sample> {
    samples.into_iter().map(|s| s.0).collect()
}

fn wrap_samples(samples: Vec<corpus::Sample>) -> Vec<PySample> {
    samples.into_iter().map(PySample).collect()
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text).into_iter().map(|t| t.text).collect()
}

#[pyfunction]
fn parse_dataset(text: &str) -> PyResult<Vec<PySample>> {
    corpus::parse_dataset(text.as_bytes()).map(wrap_samples).map_err(py_err)
}

#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<Vec<PySample>> {
    let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    corpus::parse_dataset(&bytes).map(wrap_samples).map_err(py_err)
}

#[pyfunction]
fn write_dataset(samples: Vec<PySample>) -> String {
    corpus::write_dataset(&unwrap_samples(samples))
}

#[pyfunction]
#[pyo3(signature = (samples, ratios = (0.65, 0.16, 0.19), seed = 139))]
fn split_dataset(samples: Vec<PySample>, ratios: (f64, f64, f64), seed: u64) -> PyResult<(Vec<PySample>, Vec<PySample>, Vec<PySample>)> {
    let split = corpus::split_dataset(&unwrap_samples(samples), [ratios.0, ratios.1, ratios.2], seed).map_err(py_err)?;
    Ok((wrap_samples(split.train), wrap_samples(split.validation), wrap_samples(split.test)))
}

#[pyfunction]
#[pyo3(signature = (n, seed = 139))]
fn synthetic_corpus(n: usize, seed: u64) -> Vec<PySample> {
    wrap_samples(corpus::generate_synthetic_corpus(n, seed))
}

// ---------------------------------------------------------------------------
// Embeddings

#[pyclass(frozen, from_py_object, name = "Embeddings", module = "textchart")]
#[derive(Clone)]
struct PyEmbeddings(EmbeddingTable);

#[pymethods]
impl PyEmbeddings {
    /// Character n-gram hashing only, no vocabulary.
    #[staticmethod]
    fn hashed(dimension: usize) -> PyResult<Self> {
        EmbeddingTable::hashed_only(dimension).map(Self).map_err(py_err)
    }

    /// Load a word-vector text file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        embeddings::load_vectors(&bytes).map(Self).map_err(py_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    fn __contains__(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    fn embed(&self, token: &str) -> Vec<f64> {
        self.0.embed_token(token)
    }

    fn embed_sequence(&self, tokens: Vec<String>) -> Vec<Vec<f64>> {
        self.0.embed_sequence(&tokens).rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

// ---------------------------------------------------------------------------
// Stage 1: tagger

#[pyclass(frozen, from_py_object, name = "Tagger", module = "textchart")]
#[derive(Clone)]
struct PyTagger(TaggerModel);

fn parse_mode(mode: &str) -> PyResult<TaggerMode> {
    match mode {
        "combined" => Ok(TaggerMode::Combined),
        "x" => Ok(TaggerMode::IndividualX),
        "y" => Ok(TaggerMode::IndividualY),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}, expected combined, x or y"))),
    }
}

#[pymethods]
impl PyTagger {
    #[staticmethod]
    #[pyo3(signature = (train, valid, embeddings, mode = "combined", preset = "desk", epochs = None, seed = 139))]
    fn train(
        py: Python<'_>,
        train: Vec<PySample>,
        valid: Vec<PySample>,
        embeddings: &PyEmbeddings,
        mode: &str,
        preset: &str,
        epochs: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let mode = parse_mode(mode)?;
        let mut config = match preset {
            "desk" => TaggerConfig::desk(mode),
            "paper" => TaggerConfig::paper(mode),
            other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
        };
        config.seed = seed;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let (train, valid) = (unwrap_samples(train), unwrap_samples(valid));
        let trained = py.detach(|| tagger::train(&config, &train, &valid, &embeddings.0)).map_err(py_err)?;
        Ok(Self(trained.model))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelFile::load(&path).and_then(|f| TaggerModel::from_model_file(&f)).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.to_model_file().and_then(|f| f.save(&path)).map_err(py_err)
    }

    /// Per-token tags (`"X"`, `"Y"` or `"O"`) for a tokenized text.
    fn predict(&self, tokens: Vec<String>, embeddings: &PyEmbeddings) -> PyResult<Vec<&'static str>> {
        let tokens = corpus::tokens_from_texts(&tokens);
        let tags = EntityTagger::Combined(self.0.clone()).predict_tags(&tokens, &embeddings.0).map_err(py_err)?;
        Ok(tags.into_iter().map(|t| t.as_str()).collect())
    }

    /// Token-level P/R/F1 per axis plus their harmonic mean.
    fn evaluate<'py>(&self, py: Python<'py>, samples: Vec<PySample>, embeddings: &PyEmbeddings) -> PyResult<Bound<'py, PyAny>> {
        let result = tagger::evaluate(&self.0, &unwrap_samples(samples), &embeddings.0).map_err(py_err)?;
        json_to_py(py, &result)
    }
}

// ---------------------------------------------------------------------------
// Stage 2: mapper

#[pyclass(frozen, from_py_object, name = "Mapper", module = "textchart")]
#[derive(Clone)]
struct PyMapper(PairMapper);

#[pymethods]
impl PyMapper {
    /// `kind` is `"baseline"` (distance likelihoods) or `"forest"`.
    #[staticmethod]
    #[pyo3(signature = (samples, kind = "forest", trees = 33, seed = 139))]
    fn train(py: Python<'_>, samples: Vec<PySample>, kind: &str, trees: usize, seed: u64) -> PyResult<Self> {
        let samples = unwrap_samples(samples);
        let mapper = match kind {
            "baseline" => mapper::learn_distance_distributions(&samples).map(PairMapper::Baseline),
            "forest" => py.detach(|| {
                let (features, labels) = mapper::pair_dataset(&samples);
                let rows: Vec<&[f64]> = features.iter().map(|f| &f.values[..]).collect();
                mapper::train_forest_with(&rows, &labels, &ForestParams::new(trees, seed)).map(PairMapper::Forest)
            }),
            other => return Err(PyValueError::new_err(format!("unknown mapper {other:?}"))),
        };
        mapper.map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelFile::load(&path).and_then(|f| PairMapper::from_model_file(&f)).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.to_model_file().and_then(|f| f.save(&path)).map_err(py_err)
    }

    /// Pair every x span with one y span. Spans are `(start, end)` token
    /// bounds, inclusive. Returns `(x ordinal, y ordinal)` pairs.
    fn map(&self, xs: Vec<(usize, usize)>, ys: Vec<(usize, usize)>) -> PyResult<Vec<(usize, usize)>> {
        let xs = spans_from_bounds(EntityKind::X, xs);
        let ys = spans_from_bounds(EntityKind::Y, ys);
        self.0.map(&xs, &ys).map(|r| r.pairs).map_err(py_err)
    }

    fn evaluate<'py>(&self, py: Python<'py>, samples: Vec<PySample>) -> PyResult<Bound<'py, PyAny>> {
        let result = mapper::evaluate_mapper(&self.0, &unwrap_samples(samples)).map_err(py_err)?;
        json_to_py(py, &result)
    }
}

// ---------------------------------------------------------------------------
// Stage 3: chart type

#[pyclass(frozen, from_py_object, name = "ChartClassifier", module = "textchart")]
#[derive(Clone)]
struct PyChartClassifier(ChartTypeModel);

#[pymethods]
impl PyChartClassifier {
    /// `target` is `"pie"` or `"line"`.
    #[staticmethod]
    #[pyo3(signature = (target, train, valid, embeddings, preset = "desk", epochs = None, seed = 139))]
    fn train(
        py: Python<'_>,
        target: &str,
        train: Vec<PySample>,
        valid: Vec<PySample>,
        embeddings: &PyEmbeddings,
        preset: &str,
        epochs: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let target = parse_target(target)?;
        let mut config = match preset {
            "desk" => ChartTypeConfig::desk(target),
            "paper" => ChartTypeConfig::paper(target),
            other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
        };
        config.seed = seed;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let (train, valid) = (unwrap_samples(train), unwrap_samples(valid));
        let trained = py
            .detach(|| chart_type::train_chart_classifier(&config, &train, &valid, &embeddings.0))
            .map_err(py_err)?;
        Ok(Self(trained.model))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelFile::load(&path).and_then(|f| ChartTypeModel::from_model_file(&f)).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.to_model_file().and_then(|f| f.save(&path)).map_err(py_err)
    }

    #[getter]
    fn target(&self) -> &'static str {
        self.0.target().chart_type().as_str()
    }

    /// Probability that the target chart type suits the tokenized text.
    fn score(&self, tokens: Vec<String>, embeddings: &PyEmbeddings) -> PyResult<f64> {
        if tokens.is_empty() {
            return Ok(0.0);
        }
        self.0.score(embeddings.0.embed_sequence(&tokens).view()).map_err(py_err)
    }

    #[pyo3(signature = (samples, embeddings, threshold = 0.5))]
    fn evaluate<'py>(&self, py: Python<'py>, samples: Vec<PySample>, embeddings: &PyEmbeddings, threshold: f64) -> PyResult<Bound<'py, PyAny>> {
        let result = chart_type::evaluate_chart_classifier(&self.0, &unwrap_samples(samples), &embeddings.0, threshold).map_err(py_err)?;
        json_to_py(py, &result)
    }
}

// ---------------------------------------------------------------------------
// Pipeline

#[pyclass(frozen, name = "Pipeline", module = "textchart")]
struct PyPipeline(PipelineModels);

#[pymethods]
impl PyPipeline {
    /// Assemble a pipeline from trained stages. Pass a second tagger as
    /// `tagger_y` to run a pair of per-axis taggers.
    #[new]
    #[pyo3(signature = (tagger, mapper, pie, line, embeddings, tagger_y = None))]
    fn new(
        tagger: &PyTagger,
        mapper: &PyMapper,
        pie: &PyChartClassifier,
        line: &PyChartClassifier,
        embeddings: &PyEmbeddings,
        tagger_y: Option<&PyTagger>,
    ) -> Self {
        let tagger = match tagger_y {
            Some(y) => EntityTagger::Individual {
                x: tagger.0.clone(),
                y: y.0.clone(),
            },
            None => EntityTagger::Combined(tagger.0.clone()),
        };
        Self(PipelineModels {
            tagger,
            mapper: mapper.0.clone(),
            pie: pie.0.clone(),
            line: line.0.clone(),
            embeddings: embeddings.0.clone(),
        })
    }

    /// Load a models directory as written by the command-line trainer.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        PipelineModels::load(&dir).map(Self).map_err(py_err)
    }

    /// Run all stages. The result dict has `outcome` set to `"chart"` (with
    /// a `spec`) or `"unchartable"` (with a `reason`), plus the `trace`.
    #[pyo3(signature = (text, threshold = 0.5))]
    fn predict<'py>(&self, py: Python<'py>, text: &str, threshold: f64) -> PyResult<Bound<'py, PyAny>> {
        let outcome: PipelineOutcome = py.detach(|| self.0.run(text, threshold)).map_err(py_err)?;
        json_to_py(py, &outcome)
    }
}

// ---------------------------------------------------------------------------
// Metrics and rendering

#[pyfunction]
fn mcc(tp: u64, fp: u64, tn: u64, fn_: u64) -> f64 {
    metrics::mcc(&ConfusionMatrix::new(tp, fp, tn, fn_))
}

#[pyfunction]
fn precision_recall_f1(tp: u64, fp: u64, tn: u64, fn_: u64) -> (f64, f64, f64) {
    metrics::precision_recall_f1(&ConfusionMatrix::new(tp, fp, tn, fn_))
}

#[pyfunction]
fn specificity_sensitivity(tp: u64, fp: u64, tn: u64, fn_: u64) -> (f64, f64) {
    metrics::specificity_sensitivity(&ConfusionMatrix::new(tp, fp, tn, fn_))
}

#[pyfunction]
fn harmonic_mean(a: f64, b: f64) -> f64 {
    metrics::harmonic_mean(a, b)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auroc(&scores, &labels).map_err(py_err)
}

/// Parse a y-value surface such as `"$1,200"` or `"45%"`.
#[pyfunction]
fn parse_number(surface: &str) -> Option<f64> {
    render::parse_number(surface)
}

/// Render one chart as an SVG document.
#[pyfunction]
#[pyo3(signature = (labels, values, chart_type = "bar", width = 640, height = 400))]
fn render_svg(labels: Vec<String>, values: Vec<f64>, chart_type: &str, width: u32, height: u32) -> PyResult<String> {
    let chart = parse_chart_type(chart_type)?;
    let series = NumericSeries::new(labels, values).map_err(py_err)?;
    let config = RenderConfig {
        width,
        height,
        ..RenderConfig::default()
    };
    let bytes = render::render_svg(&series, chart, &config).map_err(py_err)?;
    String::from_utf8(bytes).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Chart types implied by pie and line scores; bar is always included.
#[pyfunction]
#[pyo3(signature = (pie_score, line_score, threshold = 0.5))]
fn decide_chart_types(pie_score: f64, line_score: f64, threshold: f64) -> Vec<&'static str> {
    let types: BTreeSet<ChartType> = chart_type::decide(pie_score, line_score, threshold).types;
    types.into_iter().map(|c| c.as_str()).collect()
}

#[pymodule]
fn textchart(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyTagger>()?;
    m.add_class::<PyMapper>()?;
    m.add_class::<PyChartClassifier>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(parse_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(split_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(mcc, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall_f1, m)?)?;
    m.add_function(wrap_pyfunction!(specificity_sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(parse_number, m)?)?;
    m.add_function(wrap_pyfunction!(render_svg, m)?)?;
    m.add_function(wrap_pyfunction!(decide_chart_types, m)?)?;
    Ok(())
}
