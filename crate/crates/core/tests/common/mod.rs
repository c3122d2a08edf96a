//! Helpers shared by the integration tests: finite-difference gradient
//! checks, an independent metric oracle and a shuffled-tensor feature
//! source.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use ctxrank::heads::{HeadInput, ScoringHead};
use ctxrank::pipeline::{Features, Ranker};
use ctxrank::simtensor::SimilarityTensor;
use ctxrank::text::TokenizedText;
use ctxrank::training::{FeatureSource, TextFeatures};
use rand::seq::SliceRandom;
use rand::Rng;

pub const REL_TOL: f64 = 1e-4;
/// Below this magnitude both derivatives are treated as zero.
pub const ZERO_FLOOR: f64 = 1e-9;
pub const STEP: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failures: Vec<String>,
    pub max_rel: f64,
}

impl GradReport {
    pub fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        if scale < ZERO_FLOOR {
            return;
        }
        let rel = (analytic - numeric).abs() / scale;
        self.max_rel = self.max_rel.max(rel);
        if rel >= REL_TOL {
            self.failures.push(format!("{what}: analytic {analytic:e} numeric {numeric:e} rel {rel:e}"));
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Owned inputs for a head.
#[derive(Debug, Clone)]
pub struct HeadData {
    pub sim: SimilarityTensor,
    pub cls: Option<Vec<f64>>,
    pub query_features: Option<Vec<f64>>,
    pub query_idf: Option<Vec<f64>>,
}

impl HeadData {
    pub fn input(&self) -> HeadInput<'_> {
        HeadInput::new(&self.sim)
            .with_cls(self.cls.as_deref())
            .with_query_features(self.query_features.as_deref())
            .with_query_idf(self.query_idf.as_deref())
    }

    pub fn random(head: &ScoringHead, query_len: usize, doc_len: usize, rng: &mut impl Rng) -> Self {
        let c = &head.config;
        let layers = c.channels;
        let sim = SimilarityTensor::from_vec(
            layers,
            query_len,
            doc_len,
            (0..layers * query_len * doc_len).map(|_| rng.gen_range(-0.95..0.95)).collect(),
        )
        .unwrap();
        let cls = c.needs_cls().then(|| (0..c.cls_dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let query_features = matches!(c.kind, ctxrank::HeadKind::Drmm(_))
            .then(|| (0..query_len * c.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let query_idf = matches!(&c.kind, ctxrank::HeadKind::Pacrr(p) if p.use_idf)
            .then(|| (0..query_len).map(|_| rng.gen_range(0.0..4.0)).collect());
        HeadData {
            sim,
            cls,
            query_features,
            query_idf,
        }
    }
}

/// Checks `coords` random parameter coordinates and `coords` random input
/// coordinates of a head's score.
pub fn check_head(head: &ScoringHead, data: &HeadData, coords: usize, rng: &mut impl Rng) -> GradReport {
    let mut report = GradReport::default();
    let mut grads = head.params.zeros_like();
    let dinput = head.backward(&data.input(), 1.0, &mut grads).unwrap();

    let n = head.params.numel();
    let mut probe = head.clone();
    for _ in 0..coords {
        let k = rng.gen_range(0..n);
        let orig = probe.params.flat(k);
        *probe.params.flat_mut(k) = orig + STEP;
        let up = probe.forward(&data.input()).unwrap().score;
        *probe.params.flat_mut(k) = orig - STEP;
        let down = probe.forward(&data.input()).unwrap().score;
        *probe.params.flat_mut(k) = orig;
        report.record(format!("{} param #{k}", head.config), grads.flat(k), (up - down) / (2.0 * STEP));
    }

    // input coordinates: similarity cells, cls entries, query features
    let mut slots: Vec<(u8, usize)> = (0..data.sim.values.len()).map(|i| (0, i)).collect();
    if let Some(c) = &data.cls {
        slots.extend((0..c.len()).map(|i| (1, i)));
    }
    if let Some(q) = &data.query_features {
        slots.extend((0..q.len()).map(|i| (2, i)));
    }
    for _ in 0..coords {
        let (kind, i) = slots[rng.gen_range(0..slots.len())];
        let eval = |delta: f64| {
            let mut d = data.clone();
            match kind {
                0 => d.sim.values[i] += delta,
                1 => d.cls.as_mut().unwrap()[i] += delta,
                _ => d.query_features.as_mut().unwrap()[i] += delta,
            }
            head.forward(&d.input()).unwrap().score
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let analytic = match kind {
            0 => dinput.sim.values[i],
            1 => dinput.cls.as_ref().unwrap()[i],
            _ => dinput.query_features.as_ref().unwrap()[i],
        };
        let label = ["sim", "cls", "query_features"][kind as usize];
        report.record(format!("{} {label}[{i}]", head.config), analytic, numeric);
    }
    report
}

/// Checks random encoder and head parameter coordinates of a full ranker
/// score, including the reverse pass through the tensor and the encoder.
pub fn check_ranker(ranker: &mut Ranker, q: &TokenizedText, d: &TokenizedText, coords: usize, rng: &mut impl Rng) -> GradReport {
    let mut report = GradReport::default();
    let f = ranker.features(q, d).unwrap();
    let mut grads = ranker.zero_grads();
    ranker.backward(&f, 1.0, &mut grads).unwrap();

    let n_enc = ranker.encoder.params().map_or(0, |p| p.numel());
    for _ in 0..coords {
        let k = rng.gen_range(0..n_enc.max(1));
        if n_enc == 0 {
            break;
        }
        let orig = ranker.encoder.params().unwrap().flat(k);
        let at = |v: f64, r: &mut Ranker| {
            *r.encoder.params_mut().unwrap().flat_mut(k) = v;
            r.score_document(q, d).unwrap()
        };
        let up = at(orig + STEP, ranker);
        let down = at(orig - STEP, ranker);
        at(orig, ranker);
        let analytic = grads.encoder.as_ref().unwrap().flat(k);
        report.record(format!("{} encoder #{k}", ranker.head.config), analytic, (up - down) / (2.0 * STEP));
    }
    let n_head = ranker.head.params.numel();
    for _ in 0..coords {
        let k = rng.gen_range(0..n_head);
        let orig = ranker.head.params.flat(k);
        *ranker.head.params.flat_mut(k) = orig + STEP;
        let up = ranker.score_document(q, d).unwrap();
        *ranker.head.params.flat_mut(k) = orig - STEP;
        let down = ranker.score_document(q, d).unwrap();
        *ranker.head.params.flat_mut(k) = orig;
        report.record(format!("{} head #{k}", ranker.head.config), grads.head.flat(k), (up - down) / (2.0 * STEP));
    }
    report
}

// ───────────────────────────── metric oracle ─────────────────────────────

/// Direct evaluation of the metric formulas over doc-id lists, written
/// without reference to the library's implementation.
pub mod oracle {
    use super::*;

    fn g(judged: &BTreeMap<String, i32>, d: &str) -> i32 {
        *judged.get(d).unwrap_or(&0)
    }

    pub fn precision(run: &[&str], judged: &BTreeMap<String, i32>, k: usize) -> f64 {
        let mut hits = 0.0;
        for i in 0..k {
            if i < run.len() && g(judged, run[i]) > 0 {
                hits += 1.0;
            }
        }
        hits / k as f64
    }

    pub fn ndcg(run: &[&str], judged: &BTreeMap<String, i32>, k: usize) -> f64 {
        let mut dcg = 0.0;
        for i in 0..k.min(run.len()) {
            let rank = (i + 1) as f64;
            dcg += g(judged, run[i]).max(0) as f64 / (rank + 1.0).log2();
        }
        // brute-force ideal: repeatedly take the largest remaining grade
        let mut pool: Vec<i32> = judged.values().copied().filter(|x| *x > 0).collect();
        let mut idcg = 0.0;
        for i in 0..k {
            if pool.is_empty() {
                break;
            }
            let (pos, best) = pool.iter().enumerate().max_by_key(|(_, v)| **v).map(|(p, v)| (p, *v)).unwrap();
            pool.remove(pos);
            idcg += best as f64 / ((i + 2) as f64).log2();
        }
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg
        }
    }

    pub fn err(run: &[&str], judged: &BTreeMap<String, i32>, k: usize, max_grade: i32) -> f64 {
        let r = |d: &str| (2f64.powi(g(judged, d).max(0)) - 1.0) / 2f64.powi(max_grade);
        let mut total = 0.0;
        for i in 0..k.min(run.len()) {
            let mut p = 1.0;
            for prev in &run[..i] {
                p *= 1.0 - r(prev);
            }
            total += p * r(run[i]) / (i + 1) as f64;
        }
        total
    }
}

// ─────────────────────────── shuffled tensors ───────────────────────────

/// Feature source whose similarity tensor for (q, d) is taken from another
/// candidate of the same query, chosen by a fixed random permutation. The
/// classification vector stays with its own document.
pub struct ShuffledSimilarity<'a> {
    pub inner: TextFeatures<'a>,
    pub partner: HashMap<(String, String), String>,
}

impl<'a> ShuffledSimilarity<'a> {
    pub fn new(inner: TextFeatures<'a>, runs: &[&ctxrank::data_io::Run], rng: &mut impl Rng) -> Self {
        let mut partner = HashMap::new();
        for run in runs {
            for (q, entries) in run.iter() {
                let ids: Vec<String> = entries.iter().map(|e| e.doc_id.clone()).collect();
                let mut shuffled = ids.clone();
                shuffled.shuffle(rng);
                for (a, b) in ids.into_iter().zip(shuffled) {
                    partner.insert((q.clone(), a), b);
                }
            }
        }
        ShuffledSimilarity { inner, partner }
    }
}

impl FeatureSource for ShuffledSimilarity<'_> {
    fn features(&mut self, ranker: &Ranker, query_id: &str, doc_id: &str) -> ctxrank::Result<Features> {
        let mut f = self.inner.features(ranker, query_id, doc_id)?;
        let other = &self.partner[&(query_id.to_string(), doc_id.to_string())];
        f.sim = self.inner.features(ranker, query_id, other)?.sim;
        Ok(f)
    }
}
