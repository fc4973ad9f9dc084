use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pmi_faith::calibration::{self, Calibration, LabeledScore};
use pmi_faith::data::{self, make_synthetic_corpus};
use pmi_faith::evaluate::{self, EvalTable};
use pmi_faith::lm::stub::{StubOptions, StubServer};
use pmi_faith::records::{fixed6, to_jsonl, DecodeRecord, ScoreRecord};
use pmi_faith::tokenizer::build_vocab;
use pmi_faith::{
    DecodeConfig, FaithScorer, GroundedExample, LanguageModel, NGramLM, NormalizationBounds, Objective,
    PromptTemplate, RemoteLM, Strategy,
};

#[derive(Parser)]
#[command(name = "pmi-faith", version, about = "Faithfulness scoring and PMI-guided decoding")]
struct Cli {
    /// Size of the worker pool used for per-example work.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an interpolated n-gram model on a plain-text corpus.
    TrainLm(TrainArgs),
    /// Score each example's response.
    Score(ScoreArgs),
    /// Generate a response for each example.
    Decode(DecodeArgs),
    /// Pick the threshold that maximizes dev F1.
    Calibrate(CalibrateArgs),
    /// Classification report from scores, or a metric table from generations.
    Evaluate(EvaluateArgs),
    /// Serve an n-gram model over the HTTP protocol until interrupted.
    ServeStub(ServeArgs),
    /// Write a deterministic synthetic corpus.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    add_k: f64,
    /// Comma-separated interpolation weights, lowest order first.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Weight of the in-context cache component.
    #[arg(long, default_value_t = 0.0)]
    cache_weight: f64,
}

#[derive(Args)]
struct BackendArgs {
    /// `ngram:<model-file>` or `remote:<url>`.
    #[arg(long)]
    backend: String,
    /// Request timeout for remote backends, in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Metric {
    Pmi,
    UnigramF1,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Normalization bounds as MIN,MAX.
    #[arg(long, value_name = "MIN,MAX", allow_hyphen_values = true)]
    bounds: Option<String>,
    #[arg(long, value_enum, default_value_t = Metric::Pmi)]
    metric: Metric,
    /// Average log-probabilities over response tokens.
    #[arg(long)]
    per_token_mean: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "likelihood", value_parser = parse_objective)]
    objective: Objective,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
    #[arg(long, default_value = "greedy", value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value_t = 4)]
    beam_width: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    min_len: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dev: PathBuf,
    /// JSONL score records keyed by `id`.
    #[arg(long)]
    scores: PathBuf,
    /// Numeric field of each score record to threshold.
    #[arg(long, default_value = "raw")]
    score_field: String,
    /// Also calibrate one threshold per dataset tag.
    #[arg(long)]
    per_dataset: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    test: PathBuf,
    #[arg(long, conflicts_with = "generated")]
    scores: Option<PathBuf>,
    #[arg(long, default_value = "raw")]
    score_field: String,
    #[arg(long, requires = "scores", conflicts_with = "calibration", allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// Output of `calibrate`; supplies the threshold(s).
    #[arg(long, requires = "scores")]
    calibration: Option<PathBuf>,
    /// Decode records to evaluate.
    #[arg(long, requires = "backend")]
    generated: Option<PathBuf>,
    /// Backend used to score generations.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    #[arg(long, value_name = "MIN,MAX", allow_hyphen_values = true)]
    bounds: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    n_docs: usize,
    #[arg(long, default_value_t = 5)]
    sentences_per_doc: usize,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: pmi_faith::Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: pmi_faith::Error| e.to_string())
}

fn open_backend(spec: &str, timeout: f64) -> Result<Box<dyn LanguageModel>> {
    if let Some(path) = spec.strip_prefix("ngram:") {
        let lm = NGramLM::load(Path::new(path)).with_context(|| format!("loading model {path}"))?;
        Ok(Box::new(lm))
    } else if let Some(url) = spec.strip_prefix("remote:") {
        if !(timeout > 0.0 && timeout.is_finite()) {
            bail!("timeout must be positive");
        }
        let lm = RemoteLM::connect(url, Duration::from_secs_f64(timeout))
            .with_context(|| format!("connecting to {url}"))?;
        Ok(Box::new(lm))
    } else {
        bail!("backend must be ngram:<model-file> or remote:<url>, got {spec:?}")
    }
}

fn bounds_from(arg: &Option<String>) -> Result<NormalizationBounds> {
    let Some(text) = arg else {
        return Ok(NormalizationBounds::DEFAULT);
    };
    let parsed: Option<(f64, f64)> = text
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    let (min, max) = parsed.ok_or_else(|| anyhow!("--bounds expects MIN,MAX, got {text:?}"))?;
    Ok(NormalizationBounds::new(min, max)?)
}

fn sorted_examples(path: &Path) -> Result<Vec<GroundedExample>> {
    let mut examples = data::read_examples(path).with_context(|| format!("reading {}", path.display()))?;
    examples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(examples)
}

/// Reads one numeric field per id from a JSONL file.
fn read_score_field(path: &Path, field: &str) -> Result<HashMap<String, f64>> {
    let records: Vec<serde_json::Value> =
        data::read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let id = r
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| anyhow!("{}: record {} has no id", path.display(), i + 1))?;
        let score = r
            .get(field)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| anyhow!("{}: record {id} has no numeric field {field:?}", path.display()))?;
        out.insert(id.to_string(), score);
    }
    Ok(out)
}

fn labeled(examples: &[GroundedExample], scores: &HashMap<String, f64>) -> Result<Vec<LabeledScore>> {
    let mut aligned = Vec::with_capacity(examples.len());
    for ex in examples {
        let score = scores
            .get(&ex.id)
            .ok_or_else(|| anyhow!("no score for example {}", ex.id))?;
        aligned.push(*score);
    }
    Ok(evaluate::labeled_scores(examples, &aligned)?)
}

#[derive(Serialize)]
struct UnigramRecord {
    id: String,
    #[serde(serialize_with = "fixed6")]
    unigram_f1: f64,
}

#[derive(Serialize, Deserialize)]
struct BoundsRecord {
    #[serde(serialize_with = "fixed6")]
    min: f64,
    #[serde(serialize_with = "fixed6")]
    max: f64,
}

#[derive(Serialize, Deserialize)]
struct CalibrationRecord {
    score_field: String,
    #[serde(serialize_with = "fixed6")]
    threshold: f64,
    #[serde(serialize_with = "fixed6")]
    dev_f1: f64,
    /// Min and max of the dev scores, usable as normalization bounds.
    bounds: Option<BoundsRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    per_dataset: BTreeMap<String, Calibration>,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train_lm(args: &TrainArgs) -> Result<()> {
    let corpus = data::read_corpus(&args.corpus).with_context(|| format!("reading {}", args.corpus.display()))?;
    let vocab = build_vocab(&corpus, args.min_count)?;
    let lambdas = args
        .lambdas
        .clone()
        .unwrap_or_else(|| vec![1.0 / args.order as f64; args.order]);
    let lm = NGramLM::train(&corpus, vocab, args.order, args.add_k, lambdas)?.with_cache_weight(args.cache_weight)?;
    lm.save(&args.out)?;
    eprintln!(
        "trained order-{} model on {} lines, vocabulary {}",
        lm.order(),
        corpus.len(),
        lm.vocab().len()
    );
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let examples = sorted_examples(&args.data)?;
    let out = match args.metric {
        Metric::UnigramF1 => {
            let records: Vec<UnigramRecord> = examples
                .iter()
                .zip(evaluate::unigram_f1_scores(&examples))
                .map(|(ex, unigram_f1)| UnigramRecord {
                    id: ex.id.clone(),
                    unigram_f1,
                })
                .collect();
            to_jsonl(&records)?
        }
        Metric::Pmi => {
            let lm = open_backend(&args.backend.backend, args.backend.timeout)?;
            let mut scorer = FaithScorer::new(PromptTemplate::default(), bounds_from(&args.bounds)?);
            scorer.per_token_mean = args.per_token_mean;
            let scores = evaluate::score_examples(lm.as_ref(), &examples, &scorer)?;
            let records: Vec<ScoreRecord> = examples
                .iter()
                .zip(&scores)
                .map(|(ex, s)| ScoreRecord::new(ex.id.clone(), s))
                .collect();
            to_jsonl(&records)?
        }
    };
    print!("{out}");
    Ok(())
}

fn decode(args: &DecodeArgs) -> Result<()> {
    let config = DecodeConfig {
        strategy: args.strategy,
        objective: args.objective,
        alpha: args.alpha,
        top_p: args.top_p,
        beam_width: args.beam_width,
        max_len: args.max_len,
        min_len: args.min_len,
    };
    config.validate()?;
    let examples = sorted_examples(&args.data)?;
    let lm = open_backend(&args.backend.backend, args.backend.timeout)?;
    let outputs = evaluate::decode_examples(lm.as_ref(), &examples, &config, &PromptTemplate::default())?;
    let records: Vec<DecodeRecord> = examples
        .iter()
        .zip(outputs)
        .map(|(ex, (hyp, text))| DecodeRecord::new(ex.id.clone(), text, &hyp, &config))
        .collect();
    print!("{}", to_jsonl(&records)?);
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let examples = sorted_examples(&args.dev)?;
    let scores = read_score_field(&args.scores, &args.score_field)?;
    let dev = labeled(&examples, &scores)?;
    let best = calibration::calibrate(&dev)?;
    let values: Vec<f64> = dev.iter().map(|s| s.score).collect();
    let bounds = NormalizationBounds::from_scores(&values).ok().map(|b| BoundsRecord {
        min: b.min,
        max: b.max,
    });
    let per_dataset = if args.per_dataset {
        calibration::calibrate_per_dataset(&dev)?
    } else {
        BTreeMap::new()
    };
    print_json(&CalibrationRecord {
        score_field: args.score_field.clone(),
        threshold: best.threshold,
        dev_f1: best.dev_f1,
        bounds,
        per_dataset,
    })
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let examples = sorted_examples(&args.test)?;
    if let Some(scores_path) = &args.scores {
        let (global, per_tag) = match (&args.threshold, &args.calibration) {
            (Some(t), None) => (*t, BTreeMap::new()),
            (None, Some(path)) => {
                let text = pmi_faith::fsutil::read_to_string(path)?;
                let c: CalibrationRecord =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let tags = c.per_dataset.into_iter().map(|(k, v)| (k, v.threshold)).collect();
                (c.threshold, tags)
            }
            _ => bail!("evaluate --scores needs exactly one of --threshold or --calibration"),
        };
        let scores = read_score_field(scores_path, &args.score_field)?;
        let test = labeled(&examples, &scores)?;
        let report = calibration::per_dataset_report(&test, global, &per_tag);
        return print_json(&report);
    }
    let Some(generated_path) = &args.generated else {
        bail!("evaluate needs --scores or --generated");
    };
    let backend = args.backend.as_deref().ok_or_else(|| anyhow!("--generated requires --backend"))?;
    let records: Vec<serde_json::Value> = data::read_jsonl(generated_path)?;
    let mut generated = HashMap::new();
    for r in &records {
        let (Some(id), Some(text)) = (r.get("id").and_then(|v| v.as_str()), r.get("response").and_then(|v| v.as_str()))
        else {
            bail!("{}: decode records need id and response", generated_path.display());
        };
        generated.insert(id.to_string(), text.to_string());
    }
    let lm = open_backend(backend, args.timeout)?;
    let scorer = FaithScorer::new(PromptTemplate::default(), bounds_from(&args.bounds)?);
    let table = evaluate::evaluate_decodes(&examples, &generated, lm.as_ref(), &scorer, false)?;
    eprint!("{}", render_table(&table));
    print_json(&table)
}

fn render_table(table: &EvalTable) -> String {
    let Some(m) = &table.mean else {
        return String::new();
    };
    let header = ["n", "PMIF", "uF1", "BLEU-4", "ROUGE-L"];
    let row = [
        m.count.to_string(),
        format!("{:.4}", m.pmi_faith),
        format!("{:.4}", m.unigram_f1),
        format!("{:.2}", m.bleu4),
        format!("{:.4}", m.rouge_l),
    ];
    let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    format!("{}\n{}\n", line(&header), line(&row))
}

fn serve_stub(args: &ServeArgs) -> Result<()> {
    let lm = NGramLM::load(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let options = StubOptions {
        model_name: args
            .model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "ngram".into()),
        ..StubOptions::default()
    };
    let server = StubServer::start(Arc::new(lm), &format!("{}:{}", args.host, args.port), options)?;
    eprintln!("serving on {}", server.url());
    server.join();
    Ok(())
}

fn make_synthetic(args: &SyntheticArgs) -> Result<()> {
    let corpus = make_synthetic_corpus(args.seed, args.n_docs, args.sentences_per_doc)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    corpus.write(&args.out_dir)?;
    eprintln!(
        "wrote {} training lines, {} dev and {} test examples to {}",
        corpus.training_lines.len(),
        corpus.dev.len(),
        corpus.test.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::TrainLm(a) => train_lm(a),
        Command::Score(a) => score(a),
        Command::Decode(a) => decode(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ServeStub(a) => serve_stub(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
    }
}

/// Joins the causes of `e`, skipping any already quoted by the message above it.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() {
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers as usize)
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| run(&cli)));
    if let Err(e) = result {
        eprintln!("error: {}", error_chain(&e));
        std::process::exit(1);
    }
}
