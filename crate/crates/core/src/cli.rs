//! Command-line front end. Every subcommand is a thin shell over library
//! calls; see `ctxrank --help`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::benchmark::{self, BenchConfig};
use crate::checkpoint::Checkpoint;
use crate::contextualizer::{EncoderConfig, EncoderKind};
use crate::data_io::{load_corpus, load_qrels, load_run, load_topics, write_run, Corpus};
use crate::error::Error;
use crate::evaluation::{evaluate_queries, paired_t_test, rerank_run, MetricSpec, RerankConfig};
use crate::heads::HeadKind;
use crate::pipeline::{IdfTable, Ranker};
use crate::simtensor::build_tensor;
use crate::synthetic::{generate, SyntheticConfig};
use crate::training::{parse_key_values, train, PairPool, RerankValidator, RunDir, TextFeatures, TrainConfig};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "CEDR_SEED";

#[derive(Parser, Debug)]
#[command(name = "ctxrank", version, about = "Contextualized similarity re-ranking")]
struct Cli {
    /// Worker threads for scoring.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a ranker and write checkpoints to a run directory.
    Train(TrainArgs),
    /// Re-rank a candidate run with a checkpoint.
    Rerank(RerankArgs),
    /// Score a run against qrels.
    Evaluate(EvaluateArgs),
    /// Measure scoring throughput.
    Benchmark(BenchmarkArgs),
    /// Write one layer of a query/document similarity tensor as CSV.
    ExportSimmat(ExportArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` file with model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    /// Validation judgments; defaults to the training qrels.
    #[arg(long)]
    valid_qrels: Option<PathBuf>,
    /// Validation candidates; defaults to the training candidates.
    #[arg(long)]
    valid_candidates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides a config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct RerankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 150)]
    cutoff: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ctxrank")]
    tag: String,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value = "P@20,nDCG@20,ERR@20")]
    metrics: String,
    /// Second run; adds a paired t-test per metric.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BenchMode {
    Length,
    Layers,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, value_enum)]
    mode: BenchMode,
    #[arg(long, default_value = "knrm")]
    head: String,
    #[arg(long, default_value = "stub")]
    encoder: String,
    /// Word-vector file for `--encoder static`.
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    total_layers: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800")]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,8,12")]
    layers: Vec<usize>,
    /// Document length for `--mode layers`.
    #[arg(long, default_value_t = 400)]
    length: usize,
    #[arg(long, default_value_t = 16)]
    docs: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Train on generated data for this many epochs per layer count and
    /// report validation nDCG@20 (layers mode; 0 skips).
    #[arg(long, default_value_t = 0)]
    quality_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot data file.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    query_id: String,
    #[arg(long)]
    doc_id: String,
    /// 1-based layer index.
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Use this checkpoint's encoder; otherwise the default stub.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be ≥ 1".into()).into());
    }
    match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Rerank(a) => cmd_rerank(a, cli.threads, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Benchmark(a) => cmd_benchmark(a, cli.threads, out),
        Command::ExportSimmat(a) => cmd_export(a, out),
    }
}

/// Model settings read from the training config alongside [`TrainConfig`].
#[derive(Debug, Clone)]
struct ModelSettings {
    head: String,
    encoder: EncoderConfig,
    doc_limit: usize,
    head_seed: Option<u64>,
    pacrr_k_max: Option<usize>,
    pacrr_use_idf: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            head: "cedr-knrm".into(),
            encoder: EncoderConfig::default(),
            doc_limit: crate::pipeline::DEFAULT_DOC_LIMIT,
            head_seed: None,
            pacrr_k_max: None,
            pacrr_use_idf: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, Error> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

impl ModelSettings {
    fn set(&mut self, key: &str, v: &str) -> Result<bool, Error> {
        let e = &mut self.encoder;
        match key {
            "head" => self.head = v.to_string(),
            "encoder" => e.kind = v.parse()?,
            "total_layers" => {
                e.total_layers = parse(key, v)?;
                e.active_layers = e.total_layers;
            }
            "active_layers" => e.active_layers = parse(key, v)?,
            "dim" => e.dim = parse(key, v)?,
            "model_limit" => e.model_limit = parse(key, v)?,
            "control_tokens" => e.control_tokens = parse(key, v)?,
            "encoder_seed" => e.seed = parse(key, v)?,
            "vectors" => e.vectors = Some(v.to_string()),
            "fine_tune" => e.fine_tune = parse(key, v)?,
            "include_input_layer" => e.include_input_layer = parse(key, v)?,
            "doc_limit" => self.doc_limit = parse(key, v)?,
            "head_seed" => self.head_seed = Some(parse(key, v)?),
            "pacrr_k_max" => self.pacrr_k_max = Some(parse(key, v)?),
            "pacrr_use_idf" => self.pacrr_use_idf = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn build(&self, seed: u64) -> Result<Ranker, Error> {
        let mut ranker = Ranker::build(&self.head, &self.encoder, self.head_seed.unwrap_or(seed))?;
        if let HeadKind::Pacrr(p) = &mut ranker.head.config.kind {
            if self.pacrr_k_max.is_some() || self.pacrr_use_idf {
                p.k_max = self.pacrr_k_max.unwrap_or(p.k_max);
                p.use_idf = self.pacrr_use_idf;
                let cfg = ranker.head.config.clone();
                ranker.head = crate::heads::ScoringHead::new(cfg, self.head_seed.unwrap_or(seed))?;
            }
        }
        ranker.doc_limit = self.doc_limit;
        Ok(ranker)
    }
}

fn attach_idf(ranker: &mut Ranker, corpus: &Corpus) {
    if matches!(&ranker.head.config.kind, HeadKind::Pacrr(p) if p.use_idf) {
        let docs: Vec<_> = corpus.values().map(|d| ranker.tokenize(&d.text)).collect();
        ranker.idf = Some(IdfTable::from_docs(&docs));
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut pairs = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_key_values(&text)?
        }
        None => Vec::new(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {o}` is not KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut tc = TrainConfig::default();
    let mut model = ModelSettings::default();
    for (k, v) in &pairs {
        if !tc.set(k, v)? && !model.set(k, v)? {
            return Err(Error::Config(format!("unknown config key `{k}`")).into());
        }
    }
    if let Ok(s) = std::env::var(SEED_ENV) {
        tc.seed = parse(SEED_ENV, &s)?;
    }
    tc.validate()?;

    let corpus = load_corpus(&a.corpus)?;
    let topics = load_topics(&a.topics)?;
    let qrels = load_qrels(&a.qrels)?;
    let candidates = load_run(&a.candidates)?;
    let valid_qrels = a.valid_qrels.as_ref().map(load_qrels).transpose()?;
    let valid_candidates = a.valid_candidates.as_ref().map(load_run).transpose()?;

    let mut ranker = model.build(tc.seed)?;
    attach_idf(&mut ranker, &corpus);
    let pool = PairPool::new(&qrels, &candidates, tc.rerank_cutoff_train)?;
    let validator = RerankValidator {
        qrels: valid_qrels.as_ref().unwrap_or(&qrels),
        candidates: valid_candidates.as_ref().unwrap_or(&candidates),
        cutoff: tc.valid_cutoff,
        metric: tc.valid_metric,
    };
    let mut source = TextFeatures::new(&topics, &corpus);
    let dir = RunDir::new(&a.out, model.encoder.clone())?;
    let outcome = train(&mut ranker, &mut source, &pool, &validator, &tc, Some(&dir))?;
    writeln!(
        out,
        "best epoch {} {} {:.4} -> {}",
        outcome.best_epoch,
        tc.valid_metric.label(),
        outcome.best_metric,
        a.out.join("best.ckpt").display()
    )?;
    Ok(())
}

fn cmd_rerank(a: RerankArgs, threads: usize, out: &mut dyn Write) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let topics = load_topics(&a.topics)?;
    let candidates = load_run(&a.candidates)?;
    let mut ranker = ck.to_ranker()?;
    attach_idf(&mut ranker, &corpus);
    let cfg = RerankConfig {
        cutoff: a.cutoff,
        threads,
        ..Default::default()
    };
    let run = rerank_run(&ranker, &topics, &candidates, &corpus, &cfg, &a.tag)?;
    write_run(&run, &a.out, &a.tag)?;
    let n: usize = run.values().map(Vec::len).sum();
    writeln!(out, "wrote {n} entries for {} queries to {}", run.len(), a.out.display())?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let specs = MetricSpec::parse_list(&a.metrics)?;
    let qrels = load_qrels(&a.qrels)?;
    let run = load_run(&a.run)?;
    let ev = evaluate_queries(&run, &qrels, &specs);
    write!(out, "{}", ev.to_tsv())?;
    if let Some(other) = &a.compare {
        let other = evaluate_queries(&load_run(other)?, &qrels, &specs);
        writeln!(out)?;
        writeln!(out, "metric\tmean_run\tmean_compare\tp_value")?;
        for (i, s) in specs.iter().enumerate() {
            let p = paired_t_test(&ev.column(i), &other.column(i))?;
            writeln!(out, "{}\t{:.4}\t{:.4}\t{p:.4}", s.label(), ev.mean(i), other.mean(i))?;
        }
    }
    Ok(())
}

fn bench_encoder(a: &BenchmarkArgs) -> anyhow::Result<EncoderConfig> {
    let kind: EncoderKind = a.encoder.parse()?;
    Ok(EncoderConfig {
        kind,
        total_layers: a.total_layers,
        active_layers: a.total_layers,
        vectors: a.vectors.as_ref().map(|p| p.display().to_string()),
        seed: a.seed,
        ..EncoderConfig::default()
    })
}

fn write_table(a: &BenchmarkArgs, tsv: &str, out: &mut dyn Write) -> anyhow::Result<()> {
    match &a.out {
        Some(p) => std::fs::write(p, tsv).with_context(|| format!("writing {}", p.display()))?,
        None => write!(out, "{tsv}")?,
    }
    if let Some(p) = &a.gnuplot {
        std::fs::write(p, benchmark::gnuplot_data(tsv)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_benchmark(a: BenchmarkArgs, threads: usize, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = BenchConfig {
        docs_per_point: a.docs,
        repetitions: a.reps,
        threads,
        seed: a.seed,
        ..BenchConfig::default()
    };
    let enc = bench_encoder(&a)?;
    match a.mode {
        BenchMode::Length => {
            let ranker = Ranker::build(&a.head, &enc, a.seed)?;
            let rows = benchmark::throughput_by_length(&ranker, &a.lengths, &cfg)?;
            write_table(&a, &benchmark::length_tsv(&rows), out)
        }
        BenchMode::Layers => {
            let factory = |layers: usize| {
                let e = EncoderConfig {
                    active_layers: layers,
                    ..enc.clone()
                };
                Ranker::build(&a.head, &e, a.seed)
            };
            let data = generate(&SyntheticConfig {
                seed: a.seed,
                ..SyntheticConfig::default()
            });
            let epochs = a.quality_epochs;
            let mut quality = |r: &mut Ranker| -> crate::error::Result<f64> {
                let tc = TrainConfig {
                    epochs,
                    seed: a.seed,
                    ..TrainConfig::default()
                };
                let mut topics = data.train.topics.clone();
                topics.extend(data.valid.topics.clone());
                let pool = PairPool::new(&data.train.qrels, &data.train.candidates, tc.rerank_cutoff_train)?;
                let v = RerankValidator {
                    qrels: &data.valid.qrels,
                    candidates: &data.valid.candidates,
                    cutoff: tc.valid_cutoff,
                    metric: tc.valid_metric,
                };
                let mut src = TextFeatures::new(&topics, &data.corpus);
                Ok(train(r, &mut src, &pool, &v, &tc, None)?.best_metric)
            };
            let eval: Option<&mut dyn FnMut(&mut Ranker) -> crate::error::Result<f64>> =
                if epochs > 0 { Some(&mut quality) } else { None };
            let rows = benchmark::quality_vs_layers(&a.layers, &factory, eval, a.length, &cfg)?;
            write_table(&a, &benchmark::layers_tsv(&rows), out)
        }
    }
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let ranker = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.to_ranker()?,
        None => Ranker::build("knrm", &EncoderConfig::default(), 0)?,
    };
    let topics = load_topics(&a.topics)?;
    let corpus = load_corpus(&a.corpus)?;
    let topic = topics
        .get(&a.query_id)
        .ok_or_else(|| Error::Config(format!("no topic `{}`", a.query_id)))?;
    let doc = corpus
        .get(&a.doc_id)
        .ok_or_else(|| Error::MissingDoc(a.doc_id.clone()))?;
    let q = ranker.tokenize(&topic.text);
    let d = ranker.prepare_doc(&doc.text);
    let (emb, _) = ranker.encode(&q, &d)?;
    let csv = build_tensor(&emb).to_csv(a.layer, &q.tokens, &d.tokens)?;
    write_file(&a.out, &csv)?;
    writeln!(
        out,
        "wrote {}x{} layer {} to {}",
        q.len(),
        d.len(),
        a.layer,
        a.out.display()
    )?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> crate::error::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
