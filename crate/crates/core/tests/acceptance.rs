//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed. Pass criterion numbers as arguments
//! to run a subset, e.g. `cargo test --test acceptance -- 1 4`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ctxrank::benchmark::{quality_vs_layers, BenchConfig};
use ctxrank::checkpoint::Checkpoint;
use ctxrank::contextualizer::{EncoderConfig, EncoderKind, StaticEmbeddings, StubEncoder};
use ctxrank::data_io::{format_run, load_qrels, load_run, write_qrels, write_run, Qrels, Run, RunEntry};
use ctxrank::evaluation::{evaluate_queries, MetricName, MetricSpec};
use ctxrank::heads::{HeadConfig, ScoringHead};
use ctxrank::params::ParamSet;
use ctxrank::simtensor::build_tensor;
use ctxrank::synthetic::{generate, SyntheticConfig, SyntheticData};
use ctxrank::text::{plan_splits, tokenize};
use ctxrank::training::{
    batch_gradients, train, PairAccuracy, PairPool, PairSampler, RerankValidator, RunDir, TextFeatures, TrainConfig,
    TrainingPair,
};
use ctxrank::{Contextualizer, Error, LayeredEmbeddings, Ranker};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{check_head, oracle, HeadData, ShuffledSimilarity};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("{what} took {took:.1?}, budget {budget:?}"))
}

// ─────────────────────────────── 1 ───────────────────────────────

fn entry(qid: &str, doc: &str, rank: usize) -> RunEntry {
    RunEntry {
        query_id: qid.into(),
        doc_id: doc.into(),
        rank,
        score: 100.0 - rank as f64,
        tag: "fixture".into(),
    }
}

/// q1: 25 candidates, five relevant in the top 20 (grades 2,1,3,1,1) and
///     one grade-2 document at rank 22.
/// q2: 10 candidates, single grade-1 document at rank 2.
/// q3: judged but absent from the run.
fn metric_fixture() -> (Run, Qrels) {
    let mut run = Run::new();
    run.insert("q1".into(), (1..=25).map(|r| entry("q1", &format!("a{r:02}"), r)).collect());
    run.insert("q2".into(), (1..=10).map(|r| entry("q2", &format!("b{r:02}"), r)).collect());
    let mut qrels = Qrels::new();
    let rows = [
        ("q1", "a01", 2),
        ("q1", "a03", 0),
        ("q1", "a04", 1),
        ("q1", "a09", 3),
        ("q1", "a15", 1),
        ("q1", "a20", 1),
        ("q1", "a22", 2),
        ("q2", "b02", 1),
        ("q2", "b05", 0),
        ("q3", "c01", 1),
    ];
    for (q, d, g) in rows {
        qrels.entry(q.to_string()).or_default().insert(d.to_string(), g);
    }
    (run, qrels)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (run, qrels) = metric_fixture();
    let specs = MetricSpec::defaults();
    let ev = evaluate_queries(&run, &qrels, &specs);
    let max_grade = 3;

    // hand-computed
    let hand = [
        ("q1", 0, 0.25),
        ("q2", 0, 0.05),
        ("q2", 1, 1.0 / 3f64.log2()),
        ("q2", 2, 0.5 * (1.0 / 8.0)),
        ("q3", 0, 0.0),
        ("q3", 1, 0.0),
        ("q3", 2, 0.0),
    ];
    for (q, m, want) in hand {
        let got = ev.per_query[q][m];
        ensure((got - want).abs() < 1e-6, || format!("{q} {}: {got} vs hand {want}", specs[m]))?;
    }

    // brute-force oracle, per query and mean
    let mut worst: f64 = 0.0;
    for (m, spec) in specs.iter().enumerate() {
        let mut sum = 0.0;
        for (q, judged) in &qrels {
            let ids: Vec<&str> = run.get(q).map(|v| v.iter().map(|e| e.doc_id.as_str()).collect()).unwrap_or_default();
            let want = match spec.name {
                MetricName::P => oracle::precision(&ids, judged, 20),
                MetricName::Ndcg => oracle::ndcg(&ids, judged, 20),
                MetricName::Err => oracle::err(&ids, judged, 20, max_grade),
            };
            let got = ev.per_query[q][m];
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() < 1e-6, || format!("{q} {spec}: {got} vs oracle {want}"))?;
            sum += want;
        }
        let mean = sum / qrels.len() as f64;
        ensure((ev.mean(m) - mean).abs() < 1e-6, || format!("{spec} mean {} vs oracle {mean}", ev.mean(m)))?;
    }
    within(Duration::from_secs(1), start, "metric oracle")?;
    Ok(format!(
        "P_20 {:.4} nDCG_20 {:.4} ERR_20 {:.4}, max |lib - oracle| {worst:.1e}",
        ev.mean(0),
        ev.mean(1),
        ev.mean(2)
    ))
}

// ─────────────────────────────── 2 ───────────────────────────────

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut variants: Vec<HeadConfig> = ["knrm", "pacrr", "drmm", "cedr-knrm", "cedr-pacrr", "cedr-drmm", "vanilla"]
        .iter()
        .map(|n| HeadConfig::named(n, 3, 6, 5).unwrap())
        .collect();
    let mut idf = HeadConfig::named("cedr-pacrr", 3, 6, 5).unwrap();
    if let ctxrank::HeadKind::Pacrr(p) = &mut idf.kind {
        p.use_idf = true;
    }
    variants.push(idf);

    let mut checked = 0;
    let mut max_rel: f64 = 0.0;
    for (n, cfg) in variants.iter().enumerate() {
        let head = ScoringHead::new(cfg.clone(), 100 + n as u64).unwrap();
        let data = HeadData::random(&head, 4, 9, &mut rng);
        let report = check_head(&head, &data, 20, &mut rng);
        checked += report.checked;
        max_rel = max_rel.max(report.max_rel);
        ensure(report.ok(), || report.failures.join("; "))?;
    }
    within(Duration::from_secs(60), start, "gradient suite")?;
    Ok(format!(
        "{} head variants, {checked} coordinates, max rel err {max_rel:.1e}",
        variants.len()
    ))
}

// ─────────────────────────────── 3 ───────────────────────────────

fn random_embeddings(rng: &mut ChaCha8Rng) -> LayeredEmbeddings {
    let layers = rng.gen_range(1..=4);
    let dim = rng.gen_range(1..=16);
    let (q, d) = (rng.gen_range(0..=6), rng.gen_range(0..=12));
    let mut e = LayeredEmbeddings::zeros(layers, dim, q, d, None);
    let scale = 10f64.powf(rng.gen_range(-8.0..8.0));
    for v in e.query_vecs.iter_mut().chain(e.doc_vecs.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0) * scale;
    }
    // plant zero, duplicate and opposite vectors
    for l in 0..layers {
        if q > 0 && d > 0 {
            let src = e.query_vec(l, 0).to_vec();
            match rng.gen_range(0..4) {
                0 => e.doc_vec_mut(l, 0).copy_from_slice(&src),
                1 => e.doc_vec_mut(l, 0).iter_mut().zip(&src).for_each(|(o, s)| *o = -s),
                2 => e.doc_vec_mut(l, 0).iter_mut().for_each(|o| *o = 0.0),
                _ => {}
            }
        }
    }
    e
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cells = 0usize;
    for set in 0..1000 {
        let e = random_embeddings(&mut rng);
        let s = build_tensor(&e);
        ensure(s.shape() == (e.layers, e.query_len, e.doc_len), || format!("set {set}: bad shape"))?;
        for v in &s.values {
            ensure((-1.0 - 1e-6..=1.0 + 1e-6).contains(v), || format!("set {set}: cell {v} out of range"))?;
        }
        cells += s.values.len();
    }

    // static: identical tokens give exactly matching vectors
    let words: Vec<String> = (0..30).map(|i| format!("tok{i}")).collect();
    let table = StaticEmbeddings::from_pairs(
        8,
        words.iter().map(|w| (w.clone(), (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())),
    )
    .unwrap();
    let mut static_matches = 0;
    for _ in 0..200 {
        let qt: Vec<&str> = (0..rng.gen_range(1..5)).map(|_| words[rng.gen_range(0..30)].as_str()).collect();
        let dt: Vec<&str> = (0..rng.gen_range(1..20)).map(|_| words[rng.gen_range(0..30)].as_str()).collect();
        let v = table.vocabulary();
        let (q, d) = (tokenize(&qt.join(" "), v), tokenize(&dt.join(" "), v));
        let s = build_tensor(&table.encode(&q, &d).unwrap());
        for (i, a) in qt.iter().enumerate() {
            for (j, b) in dt.iter().enumerate() {
                if a == b {
                    let c = s.get(0, i, j);
                    ensure((c - 1.0).abs() <= 1e-12, || format!("static identical-token cell {c}"))?;
                    static_matches += 1;
                }
            }
        }
    }

    // stub: a query token repeated in a different context is below 1 from layer 2 on
    let stub = StubEncoder::with_defaults(9);
    let v = stub.vocabulary().clone();
    let mut contextual = 0;
    let mut max_cell: f64 = f64::NEG_INFINITY;
    for trial in 0..200 {
        let qt: Vec<String> = (0..rng.gen_range(1..5)).map(|k| format!("query{trial}x{k}")).collect();
        let len = rng.gen_range(8..40);
        let mut dt: Vec<String> = (0..len).map(|_| format!("fill{}", rng.gen_range(0..1000))).collect();
        // query tokens at odd positions, never adjacent to each other
        let mut planted = Vec::new();
        for t in &qt {
            let pos = 1 + 2 * rng.gen_range(0..(len - 1) / 2);
            if !planted.iter().any(|(p, _)| *p == pos) {
                dt[pos] = t.clone();
                planted.push((pos, t.clone()));
            }
        }
        let (q, d) = (tokenize(&qt.join(" "), &v), tokenize(&dt.join(" "), &v));
        let s = build_tensor(&stub.encode(&q, &d).unwrap());
        for (i, a) in qt.iter().enumerate() {
            for (j, b) in dt.iter().enumerate() {
                if a != b {
                    continue;
                }
                let first = s.get(0, i, j);
                ensure((first - 1.0).abs() <= 1e-12, || format!("stub layer 1 identical-token cell {first}"))?;
                for l in 1..s.layers {
                    let c = s.get(l, i, j);
                    max_cell = max_cell.max(c);
                    ensure(c < 1.0, || format!("stub layer {} repeated-token cell {c}", l + 1))?;
                    contextual += 1;
                }
            }
        }
    }
    Ok(format!(
        "{cells} random cells in range; {static_matches} static matches = 1; {contextual} contextual cells < 1 (max {max_cell:.4})"
    ))
}

// ─────────────────────────────── 4 ───────────────────────────────

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (limit, control) = (512, 3);
    let mut split_docs = 0;
    for case in 0..10_000 {
        let doc_len = rng.gen_range(0..=5000);
        let query_len = rng.gen_range(1..=520);
        let plan = plan_splits(doc_len, query_len, limit, control);
        if query_len + control >= limit {
            ensure(matches!(plan, Err(Error::QueryTooLong { .. })), || {
                format!("case {case}: query {query_len} should not fit")
            })?;
            continue;
        }
        let plan = plan.map_err(|e| format!("case {case}: {e}"))?;
        let mut next = 0;
        for &(s, e) in &plan.segments {
            ensure(s == next && e >= s, || format!("case {case}: segments not contiguous"))?;
            ensure(query_len + (e - s) + control <= limit, || format!("case {case}: query not fully included"))?;
            next = e;
        }
        ensure(next == doc_len, || format!("case {case}: spans do not cover the document"))?;
        let lens: Vec<usize> = plan.lengths().collect();
        let (lo, hi) = (lens.iter().min().unwrap(), lens.iter().max().unwrap());
        ensure(hi - lo <= 1, || format!("case {case}: uneven segments {lens:?}"))?;
        let cap = limit - query_len - control;
        ensure(lens.len() == doc_len.div_ceil(cap).max(1), || format!("case {case}: not the fewest segments"))?;
        split_docs += usize::from(lens.len() > 1);
    }
    let p = plan_splits(800, 8, 512, 3).map_err(|e| e.to_string())?;
    let lens: Vec<usize> = p.lengths().collect();
    ensure(lens == [400, 400], || format!("800/8/512/3 gave {lens:?}"))?;

    // through the ranker: query kept whole, document cut to 800
    let r = Ranker::build("knrm", &EncoderConfig::default(), 0).unwrap();
    let q = r.tokenize("eight query tokens for the splitting check here");
    let d = r.prepare_doc(&"alpha beta gamma ".repeat(400));
    let (emb, plan) = r.encode(&q, &d).map_err(|e| e.to_string())?;
    ensure(emb.query_len == 8 && emb.doc_len == 800, || "ranker did not keep query/doc".into())?;
    ensure(plan.segments == [(0, 400), (400, 800)], || format!("ranker split {:?}", plan.segments))?;
    Ok(format!("10000 random cases ({split_docs} multi-segment); 800/8/512/3 -> 400/400"))
}

// ─────────────────────────────── 5 ───────────────────────────────

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let data = generate(&SyntheticConfig::default());
    let pool = PairPool::new(&data.train.qrels, &data.train.candidates, 150).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for name in ["knrm", "pacrr", "drmm", "vanilla", "cedr-knrm", "cedr-pacrr", "cedr-drmm"] {
        let mut ranker = Ranker::build(name, &EncoderConfig::default(), 5).unwrap();
        let mut source = TextFeatures::new(&data.train.topics, &data.corpus);
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let out = train(&mut ranker, &mut source, &pool, &PairAccuracy { pool: &pool }, &cfg, None)
            .map_err(|e| e.to_string())?;
        let first = out.history.iter().find(|e| e.valid_metric >= 0.99).map(|e| e.epoch);
        ensure(out.best_metric >= 0.99, || format!("{name} reached only {:.4}", out.best_metric))?;
        lines.push(format!("{name} {:.3}@{}", out.best_metric, first.unwrap_or(0)));
    }
    within(Duration::from_secs(300), start, "overfit")?;
    Ok(format!("pair accuracy (first epoch >= 0.99): {}", lines.join(", ")))
}

// ─────────────────────────────── 6 ───────────────────────────────

fn valid_ndcg_shuffled(data: &SyntheticData, head: &str, seed: u64) -> Result<f64, String> {
    let mut topics = data.train.topics.clone();
    topics.extend(data.valid.topics.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let mut source = ShuffledSimilarity::new(
        TextFeatures::new(&topics, &data.corpus),
        &[&data.train.candidates, &data.valid.candidates],
        &mut rng,
    );
    let enc = EncoderConfig {
        seed,
        ..EncoderConfig::default()
    };
    let mut ranker = Ranker::build(head, &enc, seed).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 20,
        seed,
        ..TrainConfig::default()
    };
    let pool = PairPool::new(&data.train.qrels, &data.train.candidates, cfg.rerank_cutoff_train).map_err(|e| e.to_string())?;
    let validator = RerankValidator {
        qrels: &data.valid.qrels,
        candidates: &data.valid.candidates,
        cutoff: cfg.valid_cutoff,
        metric: "nDCG@20".parse().unwrap(),
    };
    let out = train(&mut ranker, &mut source, &pool, &validator, &cfg, None).map_err(|e| e.to_string())?;
    Ok(out.best_metric)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut gaps = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let data = generate(&SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        });
        let plain = valid_ndcg_shuffled(&data, "knrm", seed)?;
        let joint = valid_ndcg_shuffled(&data, "cedr-knrm", seed)?;
        gaps.push(joint - plain);
        detail.push(format!("{joint:.3}/{plain:.3}"));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    within(Duration::from_secs(600), start, "cedr comparison")?;
    ensure(mean >= 0.05, || format!("mean nDCG@20 gain {mean:.4} < 0.05 ({})", detail.join(", ")))?;
    Ok(format!("mean nDCG@20 gain {mean:.4} (cedr-knrm/knrm per seed: {})", detail.join(", ")))
}

// ─────────────────────────────── 7 ───────────────────────────────

fn criterion_7() -> Outcome {
    let texts = [
        "contextual similarity between the query and a long document",
        "kernel pooling counts soft matches",
        "",
    ];
    let long = "layer truncation trades quality for speed ".repeat(120);
    for kind in [EncoderKind::Stub, EncoderKind::PretrainedAdapter] {
        let full = EncoderConfig {
            kind,
            ..EncoderConfig::default()
        };
        let unrestricted = Ranker::build("cedr-knrm", &full, 7).unwrap();
        let mut restored = Ranker::build("cedr-knrm", &full, 7).unwrap();
        restored.encoder.set_active_layers(5).unwrap();
        restored.encoder.set_active_layers(12).unwrap();
        let q = unrestricted.tokenize("query about layer truncation");
        for t in texts.iter().copied().chain([long.as_str()]) {
            let d = unrestricted.prepare_doc(t);
            let a = unrestricted.score_document(&q, &d).unwrap();
            let b = restored.score_document(&q, &d).unwrap();
            ensure(a.to_bits() == b.to_bits(), || format!("{kind}: {a} != {b}"))?;
            // a 5-layer tensor is the prefix of the 12-layer one
            let mut five = Ranker::build("knrm", &full, 7).unwrap();
            five.encoder.set_active_layers(5).unwrap();
            let s5 = build_tensor(&five.encode(&q, &d).unwrap().0);
            let s12 = build_tensor(&unrestricted.encode(&q, &d).unwrap().0);
            ensure(s5.values[..] == s12.values[..s5.values.len()], || format!("{kind}: layer prefix differs"))?;
        }
    }

    let cfg = BenchConfig {
        docs_per_point: 16,
        repetitions: 5,
        ..BenchConfig::default()
    };
    let factory = |layers: usize| {
        Ranker::build(
            "knrm",
            &EncoderConfig {
                active_layers: layers,
                ..EncoderConfig::default()
            },
            0,
        )
    };
    let rows = quality_vs_layers(&[1, 5, 12], &factory, None, 400, &cfg).map_err(|e| e.to_string())?;
    let rate = |i: usize| rows[i].rate.docs_per_second;
    ensure(rate(0) > rate(1) && rate(1) > rate(2), || {
        format!("rates not decreasing: {:.1} {:.1} {:.1}", rate(0), rate(1), rate(2))
    })?;
    Ok(format!(
        "bit-identical at 12 layers; docs/s 1:{:.0} 5:{:.0} 12:{:.0}, rate(5)/rate(12) = {:.2}x (reported only)",
        rate(0),
        rate(1),
        rate(2),
        rate(1) / rate(2)
    ))
}

// ─────────────────────────────── 8 ───────────────────────────────

fn max_abs_diff(a: &ParamSet, b: &ParamSet) -> f64 {
    (0..a.numel()).map(|k| (a.flat(k) - b.flat(k)).abs()).fold(0.0, f64::max)
}

fn criterion_8() -> Outcome {
    let data = generate(&SyntheticConfig::default());
    let enc = EncoderConfig {
        kind: EncoderKind::PretrainedAdapter,
        fine_tune: true,
        ..EncoderConfig::default()
    };
    let pool = PairPool::new(&data.train.qrels, &data.train.candidates, 150).map_err(|e| e.to_string())?;
    let pairs: Vec<TrainingPair> = PairSampler::new(pool.clone(), 8).take(16).collect();

    let ranker = Ranker::build("cedr-knrm", &enc, 8).unwrap();
    let mut source = TextFeatures::new(&data.train.topics, &data.corpus);
    let grads = |chunk: usize, source: &mut TextFeatures| {
        batch_gradients(&ranker, source, &pairs, chunk, ctxrank::training::LossKind::Hinge).unwrap()
    };
    let (loss16, g16) = grads(16, &mut source);
    let mut worst_grad: f64 = 0.0;
    for chunk in [1, 2, 4, 8] {
        let (loss, g) = grads(chunk, &mut source);
        ensure((loss - loss16).abs() < 1e-6, || format!("chunk {chunk}: loss {loss} vs {loss16}"))?;
        worst_grad = worst_grad
            .max(max_abs_diff(&g.head, &g16.head))
            .max(max_abs_diff(g.encoder.as_ref().unwrap(), g16.encoder.as_ref().unwrap()));
    }
    ensure(worst_grad < 1e-6, || format!("gradient mismatch {worst_grad:e}"))?;

    // one optimizer step through the trainer
    let step = |chunk: usize| {
        let mut r = Ranker::build("cedr-knrm", &enc, 8).unwrap();
        let mut src = TextFeatures::new(&data.train.topics, &data.corpus);
        let cfg = TrainConfig {
            epochs: 1,
            batches_per_epoch: 1,
            grad_accum_chunk: chunk,
            seed: 8,
            ..TrainConfig::default()
        };
        train(&mut r, &mut src, &pool, &PairAccuracy { pool: &pool }, &cfg, None).unwrap();
        r
    };
    let (a, b) = (step(16), step(4));
    let param_diff = max_abs_diff(&a.head.params, &b.head.params)
        .max(max_abs_diff(a.encoder.params().unwrap(), b.encoder.params().unwrap()));
    ensure(param_diff < 1e-6, || format!("parameters differ by {param_diff:e} after one batch"))?;
    Ok(format!(
        "chunks 1/2/4/8 vs 16: max grad diff {worst_grad:.1e}; params after one batch differ by {param_diff:.1e}"
    ))
}

// ─────────────────────────────── 9 ───────────────────────────────

fn train_once(data: &SyntheticData, dir: &std::path::Path) -> Result<Vec<u8>, String> {
    let enc = EncoderConfig {
        kind: EncoderKind::PretrainedAdapter,
        fine_tune: true,
        total_layers: 4,
        active_layers: 4,
        seed: 3,
        ..EncoderConfig::default()
    };
    let mut ranker = Ranker::build("cedr-drmm", &enc, 9).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        batches_per_epoch: 4,
        grad_accum_chunk: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let pool = PairPool::new(&data.train.qrels, &data.train.candidates, 150).map_err(|e| e.to_string())?;
    let mut topics = data.train.topics.clone();
    topics.extend(data.valid.topics.clone());
    let mut source = TextFeatures::new(&topics, &data.corpus);
    let validator = RerankValidator {
        qrels: &data.valid.qrels,
        candidates: &data.valid.candidates,
        cutoff: 150,
        metric: "nDCG@20".parse().unwrap(),
    };
    let run_dir = RunDir::new(dir, enc).map_err(|e| e.to_string())?;
    train(&mut ranker, &mut source, &pool, &validator, &cfg, Some(&run_dir)).map_err(|e| e.to_string())?;
    std::fs::read(dir.join("best.ckpt")).map_err(|e| e.to_string())
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    // run files
    let mut run = Run::new();
    for q in 0..5 {
        let qid = format!("q{q}");
        let mut scored: Vec<(String, f64)> = (0..30).map(|d| (format!("doc{d}"), rng.gen_range(-50.0..50.0))).collect();
        scored.push(("tie-a".into(), 0.5));
        scored.push(("tie-b".into(), 0.5));
        run.insert(qid.clone(), ctxrank::data_io::rank_scored(&qid, scored, "rt"));
    }
    let p1 = tmp.path().join("a.run");
    let p2 = tmp.path().join("b.run");
    write_run(&run, &p1, "rt").map_err(|e| e.to_string())?;
    let loaded = load_run(&p1).map_err(|e| e.to_string())?;
    write_run(&loaded, &p2, "rt").map_err(|e| e.to_string())?;
    let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    ensure(b1 == b2, || "run file bytes changed on round trip".into())?;
    let reloaded = load_run(&p2).map_err(|e| e.to_string())?;
    let bits = |r: &Run| -> Vec<(String, usize, u64)> {
        r.values()
            .flatten()
            .map(|e| (e.doc_id.clone(), e.rank, e.score.to_bits()))
            .collect()
    };
    ensure(bits(&loaded) == bits(&reloaded), || "run values changed on round trip".into())?;
    ensure(format_run(&loaded, "rt").into_bytes() == b1, || "format_run disagrees with write_run".into())?;

    // qrels
    let mut qrels = Qrels::new();
    for q in 0..5 {
        let m: BTreeMap<String, i32> = (0..20).map(|d| (format!("doc{d}"), rng.gen_range(-1..4))).collect();
        qrels.insert(format!("q{q}"), m);
    }
    let qp = tmp.path().join("a.qrels");
    write_qrels(&qrels, &qp).map_err(|e| e.to_string())?;
    let qb = std::fs::read(&qp).unwrap();
    let back = load_qrels(&qp).map_err(|e| e.to_string())?;
    ensure(back == qrels, || "qrels changed on round trip".into())?;
    write_qrels(&back, &qp).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&qp).unwrap() == qb, || "qrels bytes changed on round trip".into())?;

    // checkpoints
    let enc = EncoderConfig {
        kind: EncoderKind::PretrainedAdapter,
        fine_tune: true,
        ..EncoderConfig::default()
    };
    let mut ranker = Ranker::build("cedr-pacrr", &enc, 4).unwrap();
    for p in ranker.encoder.params_mut().unwrap().iter_mut() {
        p.values.iter_mut().for_each(|v| *v += rng.gen_range(-1e-3..1e-3));
    }
    let ck = Checkpoint::from_ranker(&ranker, &enc);
    let cp = tmp.path().join("m.ckpt");
    ck.save(&cp).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&cp).map_err(|e| e.to_string())?;
    ensure(back == ck, || "checkpoint contents changed".into())?;
    let same_bits = |a: &ParamSet, b: &ParamSet| (0..a.numel()).all(|k| a.flat(k).to_bits() == b.flat(k).to_bits());
    ensure(same_bits(&back.head_params, &ck.head_params), || "head bits changed".into())?;
    ensure(
        same_bits(back.encoder_params.as_ref().unwrap(), ck.encoder_params.as_ref().unwrap()),
        || "encoder bits changed".into(),
    )?;
    let rebuilt = back.to_ranker().map_err(|e| e.to_string())?;
    let q = ranker.tokenize("checkpoint round trip");
    let d = ranker.prepare_doc("a round trip must reproduce every score bit for bit");
    let (s1, s2) = (ranker.score_document(&q, &d).unwrap(), rebuilt.score_document(&q, &d).unwrap());
    ensure(s1.to_bits() == s2.to_bits(), || format!("rebuilt model scores {s2} vs {s1}"))?;

    // fixed-seed training twice
    let data = generate(&SyntheticConfig::default());
    let a = train_once(&data, &tmp.path().join("run-a"))?;
    let b = train_once(&data, &tmp.path().join("run-b"))?;
    ensure(a == b, || "best.ckpt differs between identical runs".into())?;
    Ok(format!(
        "run ({} bytes), qrels, checkpoint bit-exact; best.ckpt identical across two runs ({} bytes)",
        b1.len(),
        a.len()
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "metric oracle", criterion_1),
        (2, "gradient suite", criterion_2),
        (3, "similarity tensor invariants", criterion_3),
        (4, "splitting invariants", criterion_4),
        (5, "overfit", criterion_5),
        (6, "joint model benefit", criterion_6),
        (7, "layer truncation", criterion_7),
        (8, "accumulation equivalence", criterion_8),
        (9, "round-trip determinism", criterion_9),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{took:.2?}] {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{took:.2?}] {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
