//! Re-ranking of candidate runs and the P@k, nDCG@k, ERR@k metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data_io::{rank_scored, Corpus, Qrels, Run, RunEntry};
use crate::error::{Error, Result};
use crate::pipeline::Ranker;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub cutoff: usize,
    pub batch_size: usize,
    /// Scoring threads; 1 keeps everything on the calling thread.
    pub threads: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            cutoff: 150,
            batch_size: 16,
            threads: 1,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cutoff == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(Error::Config("cutoff, batch_size and threads must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Anything that can score raw query/document text.
pub trait TextScorer: Sync {
    fn score_text(&self, query: &str, doc: &str) -> Result<f64>;
}

impl TextScorer for Ranker {
    fn score_text(&self, query: &str, doc: &str) -> Result<f64> {
        self.score_document(&self.tokenize(query), &self.prepare_doc(doc))
    }
}

impl<F: Fn(&str, &str) -> f64 + Sync> TextScorer for F {
    fn score_text(&self, query: &str, doc: &str) -> Result<f64> {
        Ok(self(query, doc))
    }
}

/// Re-scores the top `cfg.cutoff` candidates and returns them in the new
/// order (score descending, ties by doc_id descending, ranks 1..n).
pub fn rerank(
    model: &dyn TextScorer,
    query_id: &str,
    query: &str,
    candidates: &[RunEntry],
    corpus: &Corpus,
    cfg: &RerankConfig,
    tag: &str,
) -> Result<Vec<RunEntry>> {
    cfg.validate()?;
    let top = &candidates[..candidates.len().min(cfg.cutoff)];
    let docs = top
        .iter()
        .map(|c| {
            corpus
                .get(&c.doc_id)
                .map(|d| (c.doc_id.as_str(), d.text.as_str()))
                .ok_or_else(|| Error::MissingDoc(c.doc_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let score_chunk = |chunk: &[(&str, &str)]| -> Result<Vec<(String, f64)>> {
        chunk
            .iter()
            .map(|(id, text)| Ok((id.to_string(), model.score_text(query, text)?)))
            .collect()
    };
    let scored: Vec<(String, f64)> = if cfg.threads <= 1 || docs.len() < 2 {
        score_chunk(&docs)?
    } else {
        let per = docs.len().div_ceil(cfg.threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = docs.chunks(per).map(|c| s.spawn(move || score_chunk(c))).collect();
            let mut out = Vec::with_capacity(docs.len());
            for h in handles {
                out.extend(h.join().expect("scoring thread panicked")?);
            }
            Ok::<_, Error>(out)
        })?
    };
    Ok(rank_scored(query_id, scored, tag))
}

/// Re-ranks every query of `candidates` that has a topic.
pub fn rerank_run(
    model: &dyn TextScorer,
    topics: &crate::data_io::Topics,
    candidates: &Run,
    corpus: &Corpus,
    cfg: &RerankConfig,
    tag: &str,
) -> Result<Run> {
    let mut out = Run::new();
    for (qid, entries) in candidates {
        let Some(topic) = topics.get(qid) else { continue };
        out.insert(qid.clone(), rerank(model, qid, &topic.text, entries, corpus, cfg, tag)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricName {
    P,
    #[serde(rename = "nDCG")]
    Ndcg,
    #[serde(rename = "ERR")]
    Err,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: MetricName,
    pub depth: usize,
    /// Only read by ERR. Filled from the qrels when `None`.
    pub max_grade: Option<i32>,
    /// nDCG gain `2^g − 1` instead of `g`.
    pub exponential_gain: bool,
}

impl MetricSpec {
    pub fn new(name: MetricName, depth: usize) -> Self {
        MetricSpec {
            name,
            depth,
            max_grade: None,
            exponential_gain: false,
        }
    }

    /// Column label, `P_20`, `nDCG_20`, `ERR_20`.
    pub fn label(&self) -> String {
        let n = match self.name {
            MetricName::P => "P",
            MetricName::Ndcg => "nDCG",
            MetricName::Err => "ERR",
        };
        format!("{n}_{}", self.depth)
    }

    pub fn defaults() -> Vec<MetricSpec> {
        vec![
            MetricSpec::new(MetricName::P, 20),
            MetricSpec::new(MetricName::Ndcg, 20),
            MetricSpec::new(MetricName::Err, 20),
        ]
    }

    /// Parses a comma-separated list such as `P@20,nDCG@20,ERR@20`.
    pub fn parse_list(s: &str) -> Result<Vec<MetricSpec>> {
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, depth) = s
            .split_once(['@', '_'])
            .ok_or_else(|| Error::Config(format!("metric `{s}` is not of the form NAME@DEPTH")))?;
        let name = match name.to_ascii_lowercase().as_str() {
            "p" => MetricName::P,
            "ndcg" => MetricName::Ndcg,
            "err" => MetricName::Err,
            _ => return Err(Error::Config(format!("unknown metric `{name}`"))),
        };
        let depth: usize = depth
            .parse()
            .ok()
            .filter(|d| *d >= 1)
            .ok_or_else(|| Error::Config(format!("bad metric depth in `{s}`")))?;
        Ok(MetricSpec::new(name, depth))
    }
}

fn grade(judged: Option<&BTreeMap<String, i32>>, doc: &str) -> i32 {
    judged.and_then(|j| j.get(doc)).copied().unwrap_or(0)
}

/// Fraction of the top `depth` entries with a positive grade.
pub fn precision_at(run: &[RunEntry], judged: Option<&BTreeMap<String, i32>>, depth: usize) -> f64 {
    let hits = run.iter().take(depth).filter(|e| grade(judged, &e.doc_id) > 0).count();
    hits as f64 / depth as f64
}

fn gain(g: i32, exponential: bool) -> f64 {
    let g = g.max(0);
    if exponential {
        2f64.powi(g) - 1.0
    } else {
        g as f64
    }
}

pub fn ndcg_at(run: &[RunEntry], judged: Option<&BTreeMap<String, i32>>, depth: usize, exponential_gain: bool) -> f64 {
    let dcg: f64 = run
        .iter()
        .take(depth)
        .enumerate()
        .map(|(i, e)| gain(grade(judged, &e.doc_id), exponential_gain) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<i32> = judged.map(|j| j.values().copied().filter(|g| *g > 0).collect()).unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(depth)
        .enumerate()
        .map(|(i, g)| gain(*g, exponential_gain) / ((i + 2) as f64).log2())
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

pub fn err_at(run: &[RunEntry], judged: Option<&BTreeMap<String, i32>>, depth: usize, max_grade: i32) -> f64 {
    let denom = 2f64.powi(max_grade.max(1));
    let mut not_stopped = 1.0;
    let mut err = 0.0;
    for (i, e) in run.iter().take(depth).enumerate() {
        let r = (2f64.powi(grade(judged, &e.doc_id).max(0)) - 1.0) / denom;
        err += not_stopped * r / (i + 1) as f64;
        not_stopped *= 1.0 - r;
    }
    err
}

/// Largest grade anywhere in the qrels (at least 1).
pub fn max_grade(qrels: &Qrels) -> i32 {
    qrels.values().flat_map(|m| m.values().copied()).max().unwrap_or(1).max(1)
}

fn metric_value(spec: &MetricSpec, run: &[RunEntry], judged: Option<&BTreeMap<String, i32>>, mg: i32) -> f64 {
    match spec.name {
        MetricName::P => precision_at(run, judged, spec.depth),
        MetricName::Ndcg => ndcg_at(run, judged, spec.depth, spec.exponential_gain),
        MetricName::Err => err_at(run, judged, spec.depth, spec.max_grade.unwrap_or(mg)),
    }
}

/// Per-query metric values for every query in `qrels` (queries absent from
/// the run score 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub specs: Vec<MetricSpec>,
    pub per_query: BTreeMap<String, Vec<f64>>,
}

impl Evaluation {
    pub fn mean(&self, idx: usize) -> f64 {
        if self.per_query.is_empty() {
            return 0.0;
        }
        self.per_query.values().map(|v| v[idx]).sum::<f64>() / self.per_query.len() as f64
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        self.specs.iter().enumerate().map(|(i, s)| (s.label(), self.mean(i))).collect()
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.per_query.values().map(|v| v[idx]).collect()
    }

    /// TSV with a header, one row per query and an `all` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query");
        for s in &self.specs {
            out.push('\t');
            out.push_str(&s.label());
        }
        out.push('\n');
        for (qid, vals) in &self.per_query {
            out.push_str(qid);
            for v in vals {
                out.push_str(&format!("\t{v:.4}"));
            }
            out.push('\n');
        }
        out.push_str("all");
        for i in 0..self.specs.len() {
            out.push_str(&format!("\t{:.4}", self.mean(i)));
        }
        out.push('\n');
        out
    }
}

pub fn evaluate_queries(run: &Run, qrels: &Qrels, specs: &[MetricSpec]) -> Evaluation {
    let mg = max_grade(qrels);
    let per_query = qrels
        .iter()
        .map(|(qid, judged)| {
            let entries = run.get(qid).map(Vec::as_slice).unwrap_or_default();
            let vals = specs.iter().map(|s| metric_value(s, entries, Some(judged), mg)).collect();
            (qid.clone(), vals)
        })
        .collect();
    Evaluation {
        specs: specs.to_vec(),
        per_query,
    }
}

/// Mean of each metric over the queries in `qrels`, keyed by label.
pub fn evaluate_run(run: &Run, qrels: &Qrels, specs: &[MetricSpec]) -> BTreeMap<String, f64> {
    evaluate_queries(run, qrels, specs).means()
}

/// Two-sided paired t-test over per-query values.
///
/// Zero variance of the differences gives 1.0 when all differences are
/// zero and 0.0 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired lists differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Shape("paired t-test needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}
