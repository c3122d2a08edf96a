//! Pairwise training: pair sampling, hinge loss, Adam with separate head
//! and encoder learning rates, gradient accumulation and best-epoch
//! selection on a validation set.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::contextualizer::EncoderConfig;
use crate::data_io::{rank_scored, Corpus, Qrels, Run, Topics};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_queries, MetricSpec};
use crate::params::ParamSet;
use crate::pipeline::{Features, Gradients, Ranker};
use crate::text::TokenizedText;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query_id: String,
    pub pos_doc_id: String,
    pub neg_doc_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Hinge,
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(LossKind::Hinge),
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub pairs_per_batch: usize,
    pub lr_head: f64,
    pub lr_encoder: f64,
    pub rerank_cutoff_train: usize,
    pub grad_accum_chunk: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Candidates re-ranked per validation query.
    pub valid_cutoff: usize,
    pub valid_metric: MetricSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batches_per_epoch: 32,
            pairs_per_batch: 16,
            lr_head: 0.001,
            lr_encoder: 2e-5,
            rerank_cutoff_train: 150,
            grad_accum_chunk: 16,
            seed: 42,
            loss: LossKind::Hinge,
            valid_cutoff: 150,
            valid_metric: "nDCG@20".parse().expect("valid metric literal"),
        }
    }
}

fn parse_val<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("pairs_per_batch", self.pairs_per_batch),
            ("rerank_cutoff_train", self.rerank_cutoff_train),
            ("grad_accum_chunk", self.grad_accum_chunk),
            ("valid_cutoff", self.valid_cutoff),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if !(self.lr_head > 0.0 && self.lr_encoder > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.pairs_per_batch % self.grad_accum_chunk != 0 {
            return Err(Error::Config(format!(
                "grad_accum_chunk {} does not divide pairs_per_batch {}",
                self.grad_accum_chunk, self.pairs_per_batch
            )));
        }
        Ok(())
    }

    /// Sets one field from its textual form. Returns `false` for keys this
    /// struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_val(key, value)?,
            "batches_per_epoch" => self.batches_per_epoch = parse_val(key, value)?,
            "pairs_per_batch" => self.pairs_per_batch = parse_val(key, value)?,
            "lr_head" => self.lr_head = parse_val(key, value)?,
            "lr_encoder" => self.lr_encoder = parse_val(key, value)?,
            "rerank_cutoff_train" => self.rerank_cutoff_train = parse_val(key, value)?,
            "grad_accum_chunk" => self.grad_accum_chunk = parse_val(key, value)?,
            "seed" => self.seed = parse_val(key, value)?,
            "loss" => self.loss = value.parse()?,
            "valid_cutoff" => self.valid_cutoff = parse_val(key, value)?,
            "valid_metric" => self.valid_metric = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses flat `key = value` text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, value) in parse_key_values(text)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Config(format!("unknown training key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits flat `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn hinge_loss(score_pos: f64, score_neg: f64) -> f64 {
    (1.0 - score_pos + score_neg).max(0.0)
}

/// `-ln softmax(score_pos)` over the pair, i.e. `ln(1 + e^(neg - pos))`.
pub fn pairwise_cross_entropy(score_pos: f64, score_neg: f64) -> f64 {
    let z = score_neg - score_pos;
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LossKind {
    /// Loss and its derivatives with respect to the two scores.
    pub fn eval(self, sp: f64, sn: f64) -> (f64, f64, f64) {
        match self {
            LossKind::Hinge => {
                let l = hinge_loss(sp, sn);
                if l > 0.0 {
                    (l, -1.0, 1.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            LossKind::CrossEntropy => {
                let s = 1.0 / (1.0 + (sp - sn).exp());
                (pairwise_cross_entropy(sp, sn), -s, s)
            }
        }
    }
}

/// Positive and negative documents per trainable query.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPool {
    pub queries: Vec<(String, Vec<String>, Vec<String>)>,
}

impl PairPool {
    /// Positives are judged relevant (grade > 0) and appear in the top
    /// `cutoff` candidates; every other judged document is a negative.
    /// Queries lacking either side are dropped.
    pub fn new(qrels: &Qrels, candidates: &Run, cutoff: usize) -> Result<Self> {
        let mut queries = Vec::new();
        for (qid, judged) in qrels {
            let Some(run) = candidates.get(qid) else { continue };
            let top: std::collections::HashSet<&str> = run.iter().take(cutoff).map(|e| e.doc_id.as_str()).collect();
            let (pos, neg): (Vec<_>, Vec<_>) = judged
                .iter()
                .map(|(d, g)| (d.clone(), *g > 0 && top.contains(d.as_str())))
                .partition(|(_, p)| *p);
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            queries.push((
                qid.clone(),
                pos.into_iter().map(|(d, _)| d).collect(),
                neg.into_iter().map(|(d, _)| d).collect(),
            ));
        }
        if queries.is_empty() {
            return Err(Error::Empty("no query has both a positive and a negative document".into()));
        }
        Ok(PairPool { queries })
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = TrainingPair> + '_ {
        self.queries.iter().flat_map(|(q, pos, neg)| {
            pos.iter().flat_map(move |p| {
                neg.iter().map(move |n| TrainingPair {
                    query_id: q.clone(),
                    pos_doc_id: p.clone(),
                    neg_doc_id: n.clone(),
                })
            })
        })
    }
}

/// Endless stream of pairs drawn with replacement: a uniform query, then a
/// uniform positive and a uniform negative for it.
pub struct PairSampler {
    pool: PairPool,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(pool: PairPool, seed: u64) -> Self {
        PairSampler {
            pool,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Iterator for PairSampler {
    type Item = TrainingPair;

    fn next(&mut self) -> Option<TrainingPair> {
        let (q, pos, neg) = self.pool.queries.choose(&mut self.rng)?;
        let p = &pos[self.rng.gen_range(0..pos.len())];
        let n = &neg[self.rng.gen_range(0..neg.len())];
        Some(TrainingPair {
            query_id: q.clone(),
            pos_doc_id: p.clone(),
            neg_doc_id: n.clone(),
        })
    }
}

/// `sample_pairs` as a stream.
pub fn sample_pairs(qrels: &Qrels, candidates: &Run, cutoff: usize, seed: u64) -> Result<PairSampler> {
    Ok(PairSampler::new(PairPool::new(qrels, candidates, cutoff)?, seed))
}

/// Supplies head inputs for (query id, doc id).
///
/// A source is tied to one ranker; reusing it with a ranker that has a
/// different encoder or head family gives stale features.
pub trait FeatureSource {
    fn features(&mut self, ranker: &Ranker, query_id: &str, doc_id: &str) -> Result<Features>;
}

/// Features computed from topic and corpus text. Results are cached while
/// the encoder has no trainable parameters.
pub struct TextFeatures<'a> {
    topics: &'a Topics,
    corpus: &'a Corpus,
    queries: HashMap<String, TokenizedText>,
    cache: HashMap<(String, String), Features>,
}

impl<'a> TextFeatures<'a> {
    pub fn new(topics: &'a Topics, corpus: &'a Corpus) -> Self {
        TextFeatures {
            topics,
            corpus,
            queries: HashMap::new(),
            cache: HashMap::new(),
        }
    }

    fn compute(&mut self, ranker: &Ranker, query_id: &str, doc_id: &str) -> Result<Features> {
        if !self.queries.contains_key(query_id) {
            let topic = self
                .topics
                .get(query_id)
                .ok_or_else(|| Error::Config(format!("no topic for query `{query_id}`")))?;
            self.queries.insert(query_id.to_string(), ranker.tokenize(&topic.text));
        }
        let doc = self
            .corpus
            .get(doc_id)
            .ok_or_else(|| Error::MissingDoc(doc_id.to_string()))?;
        ranker.features(&self.queries[query_id], &ranker.prepare_doc(&doc.text))
    }
}

impl FeatureSource for TextFeatures<'_> {
    fn features(&mut self, ranker: &Ranker, query_id: &str, doc_id: &str) -> Result<Features> {
        if ranker.encoder.is_trainable() {
            return self.compute(ranker, query_id, doc_id);
        }
        let key = (query_id.to_string(), doc_id.to_string());
        if let Some(f) = self.cache.get(&key) {
            return Ok(f.clone());
        }
        let f = self.compute(ranker, query_id, doc_id)?;
        self.cache.insert(key, f.clone());
        Ok(f)
    }
}

/// Model-selection score computed after each epoch. Higher is better.
pub trait Validator {
    fn name(&self) -> String;
    fn validate(&self, ranker: &Ranker, source: &mut dyn FeatureSource) -> Result<f64>;
}

/// Re-ranks validation candidates and averages a ranking metric.
pub struct RerankValidator<'a> {
    pub qrels: &'a Qrels,
    pub candidates: &'a Run,
    pub cutoff: usize,
    pub metric: MetricSpec,
}

impl RerankValidator<'_> {
    pub fn rerank(&self, ranker: &Ranker, source: &mut dyn FeatureSource) -> Result<Run> {
        let mut run = Run::new();
        for (qid, entries) in self.candidates {
            let scored = entries
                .iter()
                .take(self.cutoff)
                .map(|e| {
                    let f = source.features(ranker, qid, &e.doc_id)?;
                    Ok((e.doc_id.clone(), ranker.score_features(&f)?))
                })
                .collect::<Result<Vec<_>>>()?;
            run.insert(qid.clone(), rank_scored(qid, scored, "valid"));
        }
        Ok(run)
    }
}

impl Validator for RerankValidator<'_> {
    fn name(&self) -> String {
        self.metric.label()
    }

    fn validate(&self, ranker: &Ranker, source: &mut dyn FeatureSource) -> Result<f64> {
        let run = self.rerank(ranker, source)?;
        Ok(evaluate_queries(&run, self.qrels, &[self.metric]).mean(0))
    }
}

/// Fraction of (positive, negative) pairs the model orders correctly.
pub struct PairAccuracy<'a> {
    pub pool: &'a PairPool,
}

impl Validator for PairAccuracy<'_> {
    fn name(&self) -> String {
        "pair_accuracy".into()
    }

    fn validate(&self, ranker: &Ranker, source: &mut dyn FeatureSource) -> Result<f64> {
        pair_accuracy(ranker, source, self.pool)
    }
}

pub fn pair_accuracy(ranker: &Ranker, source: &mut dyn FeatureSource, pool: &PairPool) -> Result<f64> {
    let mut scores: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut score = |q: &str, d: &str| -> Result<f64> {
        let key = (q.to_string(), d.to_string());
        if let Some(s) = scores.get(&key) {
            return Ok(*s);
        }
        let s = ranker.score_features(&source.features(ranker, q, d)?)?;
        scores.insert(key, s);
        Ok(s)
    };
    let (mut right, mut total) = (0usize, 0usize);
    for p in pool.all_pairs() {
        let sp = score(&p.query_id, &p.pos_doc_id)?;
        let sn = score(&p.query_id, &p.neg_doc_id)?;
        right += usize::from(sp > sn);
        total += 1;
    }
    Ok(right as f64 / total.max(1) as f64)
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamSet,
    v: ParamSet,
    t: i32,
}

impl Adam {
    pub fn new(shape_of: &ParamSet) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shape_of.zeros_like(),
            v: shape_of.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for k in 0..p.values.len() {
                let gk = g.values[k];
                m.values[k] = self.beta1 * m.values[k] + (1.0 - self.beta1) * gk;
                v.values[k] = self.beta2 * v.values[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.values[k] / c1;
                let vh = v.values[k] / c2;
                p.values[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Mean loss and accumulated gradients for one batch, processed in chunks
/// of `chunk` pairs. Gradients are of the batch-mean loss.
pub fn batch_gradients(
    ranker: &Ranker,
    source: &mut dyn FeatureSource,
    pairs: &[TrainingPair],
    chunk: usize,
    loss: LossKind,
) -> Result<(f64, Gradients)> {
    let scale = 1.0 / pairs.len() as f64;
    let mut total = ranker.zero_grads();
    let mut part = ranker.zero_grads();
    let mut loss_sum = 0.0;
    for group in pairs.chunks(chunk.max(1)) {
        part.fill_zero();
        for p in group {
            let fp = source.features(ranker, &p.query_id, &p.pos_doc_id)?;
            let fneg = source.features(ranker, &p.query_id, &p.neg_doc_id)?;
            let sp = ranker.score_features(&fp)?;
            let sn = ranker.score_features(&fneg)?;
            let (l, dp, dn) = loss.eval(sp, sn);
            loss_sum += l;
            if dp != 0.0 {
                ranker.backward(&fp, dp * scale, &mut part)?;
            }
            if dn != 0.0 {
                ranker.backward(&fneg, dn * scale, &mut part)?;
            }
        }
        total.add_scaled(&part, 1.0);
    }
    Ok((loss_sum * scale, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_mean: f64,
    pub valid_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<EpochStats>,
}

/// Where per-epoch checkpoints, `best.ckpt` and `train.log` are written.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub encoder: EncoderConfig,
}

impl RunDir {
    pub fn new(path: impl AsRef<Path>, encoder: EncoderConfig) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunDir { path, encoder })
    }

    fn checkpoint(&self, ranker: &Ranker, epoch: usize, metric: f64) -> Checkpoint {
        let mut ck = Checkpoint::from_ranker(ranker, &self.encoder);
        ck.config.meta.insert("epoch".into(), epoch.to_string());
        ck.config.meta.insert("valid_metric".into(), format!("{metric:?}"));
        ck
    }
}

/// Trains `ranker` in place. On return the ranker holds the parameters of
/// the best validation epoch (ties keep the earlier epoch).
pub fn train(
    ranker: &mut Ranker,
    source: &mut dyn FeatureSource,
    pool: &PairPool,
    validator: &dyn Validator,
    cfg: &TrainConfig,
    run_dir: Option<&RunDir>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut sampler = PairSampler::new(pool.clone(), cfg.seed);
    let mut head_opt = Adam::new(&ranker.head.params);
    let mut enc_opt = ranker.encoder.params().map(Adam::new);
    let mut best: Option<(usize, f64, ParamSet, Option<ParamSet>, Option<Checkpoint>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut log = format!("epoch\tloss_mean\t{}\n", validator.name());

    for epoch in 1..=cfg.epochs {
        let mut loss_total = 0.0;
        for batch in 1..=cfg.batches_per_epoch {
            let pairs: Vec<TrainingPair> = sampler.by_ref().take(cfg.pairs_per_batch).collect();
            let (loss, grads) = batch_gradients(ranker, source, &pairs, cfg.grad_accum_chunk, cfg.loss)?;
            if !loss.is_finite() || !grads.head.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_total += loss;
            head_opt.step(&mut ranker.head.params, &grads.head, cfg.lr_head);
            if let (Some(opt), Some(g), Some(p)) = (enc_opt.as_mut(), grads.encoder.as_ref(), ranker.encoder.params_mut()) {
                opt.step(p, g, cfg.lr_encoder);
            }
        }
        let loss_mean = loss_total / cfg.batches_per_epoch as f64;
        let metric = validator.validate(ranker, source)?;
        history.push(EpochStats {
            epoch,
            loss_mean,
            valid_metric: metric,
        });
        let _ = writeln!(log, "{epoch}\t{loss_mean:.6}\t{metric:.6}");

        let ck = run_dir.map(|d| d.checkpoint(ranker, epoch, metric));
        if let (Some(d), Some(ck)) = (run_dir, &ck) {
            ck.save(d.path.join(format!("epoch-{epoch}.ckpt")))?;
            let log_path = d.path.join("train.log");
            std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        }
        if best.as_ref().map_or(true, |b| metric > b.1) {
            best = Some((
                epoch,
                metric,
                ranker.head.params.clone(),
                ranker.encoder.params().cloned(),
                ck,
            ));
        }
    }

    let (best_epoch, best_metric, head, enc, ck) = best.ok_or_else(|| Error::Config("zero epochs".into()))?;
    ranker.head.params = head;
    if let (Some(dst), Some(src)) = (ranker.encoder.params_mut(), enc) {
        *dst = src;
    }
    if let (Some(d), Some(ck)) = (run_dir, ck) {
        ck.save(d.path.join("best.ckpt"))?;
    }
    Ok(TrainOutcome {
        best_epoch,
        best_metric,
        history,
    })
}
