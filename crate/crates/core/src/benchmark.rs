//! Scoring throughput versus document length and versus encoder depth.
//!
//! Rates count documents (not segments) per wall-clock second. Each
//! measurement runs one untimed warm-up round, then `repetitions` timed
//! rounds, and reports the median.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::Ranker;
use crate::text::TokenizedText;

/// Something the harness can time.
pub trait BenchModel: Sync {
    fn tokenize(&self, text: &str) -> TokenizedText;
    fn score(&self, query: &TokenizedText, doc: &TokenizedText) -> Result<f64>;
}

impl BenchModel for Ranker {
    fn tokenize(&self, text: &str) -> TokenizedText {
        Ranker::tokenize(self, text)
    }

    fn score(&self, query: &TokenizedText, doc: &TokenizedText) -> Result<f64> {
        self.score_document(query, doc)
    }
}

/// Returns 0 without looking at its input; used to measure harness cost.
pub struct NoopModel;

impl BenchModel for NoopModel {
    fn tokenize(&self, text: &str) -> TokenizedText {
        crate::text::tokenize(text, &crate::text::Vocabulary::Hashing)
    }

    fn score(&self, _: &TokenizedText, _: &TokenizedText) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub docs_per_point: usize,
    pub repetitions: usize,
    /// 1 times on the calling thread; more splits documents across threads
    /// that each keep their own timer.
    pub threads: usize,
    pub query: String,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            docs_per_point: 16,
            repetitions: 3,
            threads: 1,
            query: "neural ranking with contextual similarity".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub docs_per_second: f64,
    /// Median per-thread rate for each worker when running in parallel.
    pub per_thread: Vec<f64>,
}

/// `count` random documents of exactly `length` words.
pub fn synthetic_docs(length: usize, count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ length as u64);
    (0..count)
        .map(|_| {
            (0..length)
                .map(|_| format!("w{}", rng.gen_range(0..5000)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn rate(docs: usize, d: Duration) -> f64 {
    docs as f64 / d.as_secs_f64().max(1e-12)
}

fn score_all(model: &dyn BenchModel, q: &TokenizedText, docs: &[TokenizedText]) -> Result<Duration> {
    let t = Instant::now();
    for d in docs {
        std::hint::black_box(model.score(q, d)?);
    }
    Ok(t.elapsed())
}

/// One round: total wall time plus each worker's own elapsed time.
fn round(model: &dyn BenchModel, q: &TokenizedText, docs: &[TokenizedText], threads: usize) -> Result<(Duration, Vec<(usize, Duration)>)> {
    if threads <= 1 {
        let d = score_all(model, q, docs)?;
        return Ok((d, vec![(docs.len(), d)]));
    }
    let per = docs.len().div_ceil(threads).max(1);
    let t = Instant::now();
    let parts = std::thread::scope(|s| {
        let handles: Vec<_> = docs
            .chunks(per)
            .map(|c| s.spawn(move || score_all(model, q, c).map(|d| (c.len(), d))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((t.elapsed(), parts))
}

/// Times scoring of pre-tokenized documents.
pub fn measure(model: &dyn BenchModel, query: &TokenizedText, docs: &[TokenizedText], cfg: &BenchConfig) -> Result<Measurement> {
    if cfg.repetitions == 0 || cfg.threads == 0 {
        return Err(Error::Config("repetitions and threads must be ≥ 1".into()));
    }
    round(model, query, docs, cfg.threads)?;
    let mut walls = Vec::with_capacity(cfg.repetitions);
    let mut workers: Vec<Vec<f64>> = Vec::new();
    for _ in 0..cfg.repetitions {
        let (wall, parts) = round(model, query, docs, cfg.threads)?;
        walls.push(rate(docs.len(), wall));
        workers.resize(parts.len(), Vec::new());
        for (w, (n, d)) in workers.iter_mut().zip(parts) {
            w.push(rate(n, d));
        }
    }
    let per_thread = if cfg.threads > 1 {
        workers.into_iter().map(median).collect()
    } else {
        Vec::new()
    };
    Ok(Measurement {
        docs_per_second: median(walls),
        per_thread,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthRow {
    pub length: usize,
    pub rate: Measurement,
}

pub fn throughput_by_length(model: &dyn BenchModel, lengths: &[usize], cfg: &BenchConfig) -> Result<Vec<LengthRow>> {
    let q = model.tokenize(&cfg.query);
    lengths
        .iter()
        .map(|&length| {
            let docs: Vec<TokenizedText> = synthetic_docs(length, cfg.docs_per_point, cfg.seed)
                .iter()
                .map(|t| model.tokenize(t))
                .collect();
            Ok(LengthRow {
                length,
                rate: measure(model, &q, &docs, cfg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub layers: usize,
    pub metric: Option<f64>,
    pub rate: Measurement,
}

/// For each layer count, builds a model with that many active layers,
/// optionally trains/evaluates it with `evaluate`, and times scoring of
/// `doc_length`-word documents.
pub fn quality_vs_layers(
    layer_counts: &[usize],
    factory: &dyn Fn(usize) -> Result<Ranker>,
    mut evaluate: Option<&mut dyn FnMut(&mut Ranker) -> Result<f64>>,
    doc_length: usize,
    cfg: &BenchConfig,
) -> Result<Vec<LayerRow>> {
    let mut rows = Vec::with_capacity(layer_counts.len());
    for &layers in layer_counts {
        let mut model = factory(layers)?;
        let metric = match evaluate.as_mut() {
            Some(f) => Some(f(&mut model)?),
            None => None,
        };
        let row = throughput_by_length(&model, &[doc_length], cfg)?.remove(0);
        rows.push(LayerRow {
            layers,
            metric,
            rate: row.rate,
        });
    }
    Ok(rows)
}

/// Ratio of the harness's own cost (timed with [`NoopModel`]) to the time
/// spent scoring the same documents with `model`.
pub fn harness_overhead(model: &dyn BenchModel, doc_length: usize, cfg: &BenchConfig) -> Result<f64> {
    let single = BenchConfig { threads: 1, ..cfg.clone() };
    let q = model.tokenize(&cfg.query);
    let docs: Vec<TokenizedText> = synthetic_docs(doc_length, cfg.docs_per_point, cfg.seed)
        .iter()
        .map(|t| model.tokenize(t))
        .collect();
    let real = measure(model, &q, &docs, &single)?.docs_per_second;
    let noop = measure(&NoopModel, &q, &docs, &single)?.docs_per_second;
    Ok(real / noop)
}

fn per_thread_cols(m: &Measurement) -> String {
    m.per_thread.iter().map(|r| format!("\t{r:.3}")).collect()
}

pub fn length_tsv(rows: &[LengthRow]) -> String {
    let mut out = String::from("length\tdocs_per_second\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.3}{}", r.length, r.rate.docs_per_second, per_thread_cols(&r.rate));
    }
    out
}

pub fn layers_tsv(rows: &[LayerRow]) -> String {
    let mut out = String::from("layers\tmetric\tdocs_per_second\n");
    for r in rows {
        let m = r.metric.map_or("NA".to_string(), |m| format!("{m:.4}"));
        let _ = writeln!(out, "{}\t{m}\t{:.3}{}", r.layers, r.rate.docs_per_second, per_thread_cols(&r.rate));
    }
    out
}

/// Whitespace-separated columns with a `#` header, readable by gnuplot.
pub fn gnuplot_data(tsv: &str) -> String {
    let mut lines = tsv.lines();
    let mut out = String::new();
    if let Some(h) = lines.next() {
        let _ = writeln!(out, "# {}", h.replace('\t', " "));
    }
    for l in lines {
        let _ = writeln!(out, "{}", l.replace('\t', " ").replace("NA", "?"));
    }
    out
}
