//! Command-line front end.
//!
//! Exit codes: 0 success (including `--help`), 1 usage error, 2 data or model
//! error. A `--config <file>` TOML document supplies default values for any
//! flag (keys are flag names without the leading dashes); flags given on the
//! command line win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::chart_type::{evaluate_chart_classifier, train_chart_classifier, ChartTarget, ChartTypeConfig, ChartTypeModel, DEFAULT_THRESHOLD};
use crate::corpus::{generate_synthetic_corpus, parse_dataset, split_dataset, write_dataset, ChartType, Sample};
use crate::embeddings::{load_vectors, EmbeddingTable};
use crate::error::Error;
use crate::mapper::{evaluate_mapper, learn_distance_distributions, pair_dataset, train_forest, PairMapper, DEFAULT_TREE_COUNT};
use crate::metrics::ClassScores;
use crate::model_file::ModelFile;
use crate::pipeline::{cumulative_error_frequency, PipelineModels, PipelineOutcome};
use crate::render::{coerce_numeric, parse_chart_document, render_svg, RenderConfig};
use crate::tagger::{evaluate, train, TaggerConfig, TaggerMode, TaggerModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

const DEFAULT_SEED: u64 = 139;

#[derive(Debug, Parser)]
#[command(name = "textchart", version, about = "Chart specifications from analytical text")]
struct Cli {
    /// Seed for every random choice (shuffles, initialization, resampling).
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Log training progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    /// TOML file of default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset tooling.
    #[command(subcommand)]
    Data(DataCommand),
    /// Print the embedding vector of tokens.
    Embed {
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Hashed-only embedding width when no vectors file is given.
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long = "token", required = true)]
        tokens: Vec<String>,
    },
    /// Train a model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Evaluate a model.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the full pipeline on one text.
    Predict {
        /// Text, or a path to a file containing it.
        #[arg(long)]
        text: String,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long, value_name = "FILE")]
        svg: Option<PathBuf>,
        /// Chart drawn by --svg; defaults to the first predicted of pie, line, bar.
        #[arg(long = "type", value_enum)]
        chart: Option<ChartArg>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Render a chart document to SVG.
    Render {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "type", value_enum)]
        chart: ChartArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 400)]
        height: u32,
    },
}

#[derive(Debug, Subcommand)]
enum DataCommand {
    /// Check every record of a dataset file.
    Validate { file: PathBuf },
    /// Shuffle and split into train/validation/test files.
    Split {
        file: PathBuf,
        #[arg(long, value_parser = parse_ratios, default_value = "0.65,0.16,0.19")]
        ratios: [f64; 3],
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Generate a labeled synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct NeuralTrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Validation file; 20% of --data is held out when absent.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TrainCommand {
    /// Axis-entity tagger.
    Tagger {
        #[arg(long, value_enum, default_value_t = ModeArg::Combined)]
        mode: ModeArg,
        #[command(flatten)]
        common: NeuralTrainArgs,
    },
    /// x→y entity mapper.
    Mapper {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = MapperArg::Forest)]
        model: MapperArg,
        #[arg(long, default_value_t = DEFAULT_TREE_COUNT)]
        trees: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pie or line chart classifier.
    Charttype {
        #[arg(long, value_enum)]
        target: TargetArg,
        #[command(flatten)]
        common: NeuralTrainArgs,
    },
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    Tagger {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    Mapper {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    Charttype {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    Pipeline {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    X,
    Y,
    Combined,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapperArg {
    Baseline,
    Forest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Pie,
    Line,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChartArg {
    Bar,
    Pie,
    Line,
}

impl From<ChartArg> for ChartType {
    fn from(c: ChartArg) -> Self {
        match c {
            ChartArg::Bar => ChartType::Bar,
            ChartArg::Pie => ChartType::Pie,
            ChartArg::Line => ChartType::Line,
        }
    }
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated ratios".to_string())
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Append `--key value` for every config-file key whose flag is absent from
/// `argv`.
fn merge_config(mut argv: Vec<String>) -> CliResult<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("config {path}: {e}")))?;
    let table: toml::Table = text.parse().map_err(|e| Failure::Usage(format!("config {path}: {e}")))?;
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(Failure::Usage(format!("config {path}: nested config not allowed")));
        }
        if argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let scalar = |v: &toml::Value| -> CliResult<String> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                _ => Err(Failure::Usage(format!("config {path}: unsupported value for {key}"))),
            }
        };
        match &value {
            toml::Value::Boolean(true) => argv.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<CliResult<Vec<_>>>()?.join(",");
                argv.push(flag);
                argv.push(joined);
            }
            v => {
                argv.push(flag);
                argv.push(scalar(v)?);
            }
        }
    }
    Ok(argv)
}

/// Parse `argv` (including the program name), run the command, and return
/// the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let result = merge_config(argv).and_then(|argv| {
        Cli::try_parse_from(argv).map_err(|e| match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                Failure::Usage(String::new())
            }
            _ => Failure::Usage(e.render().to_string()),
        })
    });
    let cli = match result {
        Ok(cli) => cli,
        Err(Failure::Usage(msg)) if msg.is_empty() => return EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            return EXIT_USAGE;
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::new().filter_level(log::LevelFilter::Debug).try_init();
    }
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn read_samples(path: &Path) -> CliResult<Vec<Sample>> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(Error::InvalidConfig(format!("{}: {e}", path.display()))))?;
    Ok(parse_dataset(&bytes)?)
}

fn embeddings_for(vectors: Option<&Path>, dim: usize) -> CliResult<EmbeddingTable> {
    match vectors {
        Some(p) => Ok(load_vectors(&fs::read(p)?)?),
        None => Ok(EmbeddingTable::hashed_only(dim)?),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    fs::write(path, serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")?;
    Ok(())
}

/// Training and validation sets: the `--valid` file, or a seeded 80/20 split.
fn train_valid(common: &NeuralTrainArgs, seed: u64) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    let data = read_samples(&common.data)?;
    match &common.valid {
        Some(v) => Ok((data, read_samples(v)?)),
        None if data.len() >= 3 => {
            let split = split_dataset(&data, [0.8, 0.2, 0.0], seed)?;
            Ok((split.train, split.validation))
        }
        None => Ok((data, Vec::new())),
    }
}

fn print_scores(name: &str, s: &ClassScores) {
    println!("{name:<10} precision {:.4}  recall {:.4}  f1 {:.4}", s.precision, s.recall, s.f1);
}

fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Data(cmd) => run_data(cmd, seed),
        Command::Embed { vectors, dim, tokens } => {
            let table = embeddings_for(vectors.as_deref(), dim)?;
            for t in tokens {
                let v: Vec<String> = table.embed_token(&t).iter().map(|x| format!("{x:.6}")).collect();
                println!("{t} {}", v.join(" "));
            }
            Ok(())
        }
        Command::Train(cmd) => run_train(cmd, seed),
        Command::Eval(cmd) => run_eval(cmd),
        Command::Predict {
            text,
            models,
            json,
            svg,
            chart,
            threshold,
        } => run_predict(&text, &models, json, svg.as_deref(), chart, threshold),
        Command::Render {
            spec,
            chart,
            out,
            width,
            height,
        } => {
            let (series, _) = parse_chart_document(&fs::read_to_string(&spec)?)?;
            let config = RenderConfig {
                width,
                height,
                ..RenderConfig::default()
            };
            fs::write(&out, render_svg(&series, chart.into(), &config)?)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn run_data(cmd: DataCommand, seed: u64) -> CliResult {
    match cmd {
        DataCommand::Validate { file } => {
            let samples = read_samples(&file)?;
            println!("{}: {} valid samples", file.display(), samples.len());
        }
        DataCommand::Split { file, ratios, out_dir } => {
            let samples = read_samples(&file)?;
            let split = split_dataset(&samples, ratios, seed)?;
            fs::create_dir_all(&out_dir)?;
            for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
                let path = out_dir.join(format!("{name}.jsonl"));
                fs::write(&path, write_dataset(part))?;
                println!("{name:<10} {:>6}  {}", part.len(), path.display());
            }
        }
        DataCommand::Synth { n, out } => {
            let samples = generate_synthetic_corpus(n, seed);
            fs::write(&out, write_dataset(&samples))?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
    }
    Ok(())
}

fn run_train(cmd: TrainCommand, seed: u64) -> CliResult {
    match cmd {
        TrainCommand::Tagger { mode, common } => {
            let mode = match mode {
                ModeArg::X => TaggerMode::IndividualX,
                ModeArg::Y => TaggerMode::IndividualY,
                ModeArg::Combined => TaggerMode::Combined,
            };
            let mut config = match common.preset {
                Preset::Desk => TaggerConfig::desk(mode),
                Preset::Paper => TaggerConfig::paper(mode),
            };
            config.seed = seed;
            config.epochs = common.epochs.unwrap_or(config.epochs);
            config.learning_rate = common.learning_rate.unwrap_or(config.learning_rate);
            config.batch_size = common.batch_size.unwrap_or(config.batch_size);
            let embeddings = embeddings_for(common.vectors.as_deref(), common.dim)?;
            let (train_set, valid_set) = train_valid(&common, seed)?;
            let trained = train(&config, &train_set, &valid_set, &embeddings)?;
            trained.model.to_model_file()?.save(&common.out)?;
            let best = &trained.log[trained.best_epoch];
            println!(
                "best epoch {} (validation harmonic F1 {:.4}, loss {:.4}); wrote {}",
                best.epoch + 1,
                best.validation_f1,
                best.validation_loss,
                common.out.display()
            );
        }
        TrainCommand::Mapper { data, model, trees, out } => {
            let samples = read_samples(&data)?;
            let mapper = match model {
                MapperArg::Baseline => PairMapper::Baseline(learn_distance_distributions(&samples)?),
                MapperArg::Forest => {
                    let (features, labels) = pair_dataset(&samples);
                    PairMapper::Forest(train_forest(&features, &labels, trees, seed)?)
                }
            };
            mapper.to_model_file()?.save(&out)?;
            println!("wrote {}", out.display());
        }
        TrainCommand::Charttype { target, common } => {
            let target = match target {
                TargetArg::Pie => ChartTarget::Pie,
                TargetArg::Line => ChartTarget::Line,
            };
            let mut config = match common.preset {
                Preset::Desk => ChartTypeConfig::desk(target),
                Preset::Paper => ChartTypeConfig::paper(target),
            };
            config.seed = seed;
            config.epochs = common.epochs.unwrap_or(config.epochs);
            config.learning_rate = common.learning_rate.unwrap_or(config.learning_rate);
            config.batch_size = common.batch_size.unwrap_or(config.batch_size);
            let embeddings = embeddings_for(common.vectors.as_deref(), common.dim)?;
            let (train_set, valid_set) = train_valid(&common, seed)?;
            let trained = train_chart_classifier(&config, &train_set, &valid_set, &embeddings)?;
            trained.model.to_model_file()?.save(&common.out)?;
            let best = &trained.log[trained.best_epoch];
            println!(
                "best epoch {} (validation MCC {:.4}, loss {:.4}); wrote {}",
                best.epoch + 1,
                best.validation_mcc,
                best.validation_loss,
                common.out.display()
            );
        }
    }
    Ok(())
}

fn run_eval(cmd: EvalCommand) -> CliResult {
    match cmd {
        EvalCommand::Tagger {
            model,
            data,
            vectors,
            report,
        } => {
            let model = TaggerModel::from_model_file(&ModelFile::load(&model)?)?;
            let embeddings = embeddings_for(vectors.as_deref(), model.input_dim)?;
            let eval = evaluate(&model, &read_samples(&data)?, &embeddings)?;
            if let Some((_, s)) = &eval.x {
                print_scores("x", s);
            }
            if let Some((_, s)) = &eval.y {
                print_scores("y", s);
            }
            println!("harmonic F1 {:.4}", eval.harmonic_f1);
            println!("loss       {:.4}", eval.loss);
            if let Some(path) = report {
                write_json(&path, &eval)?;
            }
        }
        EvalCommand::Mapper { model, data, report } => {
            let mapper = PairMapper::from_model_file(&ModelFile::load(&model)?)?;
            let eval = evaluate_mapper(&mapper, &read_samples(&data)?)?;
            print_scores("mapped", &eval.positive);
            print_scores("unmapped", &eval.negative);
            println!("harmonic F1 {:.4}", eval.harmonic_f1);
            println!("auROC       {:.4}", eval.auroc);
            if let Some(path) = report {
                write_json(&path, &eval)?;
            }
        }
        EvalCommand::Charttype {
            model,
            data,
            vectors,
            threshold,
            report,
        } => {
            let model = ChartTypeModel::from_model_file(&ModelFile::load(&model)?)?;
            let embeddings = embeddings_for(vectors.as_deref(), model.input_dim)?;
            let eval = evaluate_chart_classifier(&model, &read_samples(&data)?, &embeddings, threshold)?;
            println!("specificity {:.4}", eval.specificity);
            println!("sensitivity {:.4}", eval.sensitivity);
            println!("MCC         {:.4}", eval.mcc);
            match eval.auroc {
                Some(a) => println!("auROC       {a:.4}"),
                None => println!("auROC       n/a (single class)"),
            }
            if let Some(path) = report {
                write_json(&path, &eval)?;
            }
        }
        EvalCommand::Pipeline {
            models,
            data,
            threshold,
            report,
        } => {
            let models = PipelineModels::load(&models)?;
            let samples = read_samples(&data)?;
            let reports = models.evaluate(&samples, threshold)?;
            let cumulative = cumulative_error_frequency(&reports);
            println!("errors  stage1  stage2  stage3");
            let max = [&cumulative.stage1, &cumulative.stage2, &cumulative.stage3]
                .iter()
                .filter_map(|m| m.keys().next_back().copied())
                .max()
                .unwrap_or(0);
            let at = |m: &std::collections::BTreeMap<usize, usize>, k: usize| {
                m.range(..=k).next_back().map_or(0, |(_, &n)| n)
            };
            for k in 0..=max {
                println!(
                    "{k:>6}  {:>6}  {:>6}  {:>6}",
                    at(&cumulative.stage1, k),
                    at(&cumulative.stage2, k),
                    at(&cumulative.stage3, k)
                );
            }
            if let Some(path) = report {
                #[derive(Serialize)]
                struct Report<'a> {
                    reports: &'a [crate::pipeline::StageErrorReport],
                    cumulative: &'a crate::pipeline::CumulativeErrors,
                }
                write_json(
                    &path,
                    &Report {
                        reports: &reports,
                        cumulative: &cumulative,
                    },
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    x_labels: Vec<String>,
    y_values: Vec<String>,
    chart_types: Vec<ChartType>,
    pie_score: f64,
    line_score: f64,
    sequential_mapping: bool,
}

fn run_predict(text: &str, models: &Path, json: bool, svg: Option<&Path>, chart: Option<ChartArg>, threshold: f64) -> CliResult {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Failure::Usage("--threshold must lie in (0, 1)".into()));
    }
    let text = match Path::new(text).is_file() {
        true => fs::read_to_string(text)?,
        false => text.to_string(),
    };
    let models = PipelineModels::load(models)?;
    let outcome = models.run(&text, threshold)?;
    let trace = outcome.trace();
    let (spec, reason) = match &outcome {
        PipelineOutcome::Chart { spec, .. } => (Some(spec), None),
        PipelineOutcome::Unchartable { reason, .. } => (None, Some(reason.as_str())),
    };
    let prediction = Prediction {
        outcome: if spec.is_some() { "chart" } else { "unchartable" },
        reason,
        x_labels: spec.map_or_else(|| trace.x_spans.iter().map(|s| s.surface.clone()).collect(), |s| s.x_labels.clone()),
        y_values: spec.map_or_else(|| trace.y_spans.iter().map(|s| s.surface.clone()).collect(), |s| s.y_values.clone()),
        chart_types: trace.chart.types.iter().copied().collect(),
        pie_score: trace.chart.pie_score,
        line_score: trace.chart.line_score,
        sequential_mapping: trace.bypassed,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&prediction).map_err(Error::from)?);
    } else {
        println!("outcome     {}", prediction.outcome);
        if let Some(r) = reason {
            println!("reason      {r}");
        }
        println!("x entities  {:?}", prediction.x_labels);
        println!("y entities  {:?}", prediction.y_values);
        let types: Vec<&str> = prediction.chart_types.iter().map(|t| t.as_str()).collect();
        println!("chart type  {types:?}");
    }
    if let Some(path) = svg {
        let Some(spec) = spec else {
            return Err(Failure::Data(Error::Render(format!("unchartable text: {}", reason.unwrap_or_default()))));
        };
        let chart_type = chart.map(ChartType::from).unwrap_or_else(|| {
            [ChartType::Pie, ChartType::Line]
                .into_iter()
                .find(|t| spec.chart_types.contains(t))
                .unwrap_or(ChartType::Bar)
        });
        fs::write(path, render_svg(&coerce_numeric(spec)?, chart_type, &RenderConfig::default())?)?;
    }
    Ok(())
}
