//! Trains CEDR-KNRM on generated data, validating with nDCG@20 after each
//! epoch, and writes checkpoints to a run directory.
//!
//! ```text
//! cargo run --release --example train_cedr_knrm -- /tmp/cedr-run
//! ```

use ctxrank::contextualizer::EncoderConfig;
use ctxrank::synthetic::{generate, SyntheticConfig};
use ctxrank::training::{train, PairPool, RerankValidator, RunDir, TextFeatures, TrainConfig};
use ctxrank::Ranker;

fn main() -> ctxrank::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "cedr-run".into());
    let data = generate(&SyntheticConfig::default());
    let mut topics = data.train.topics.clone();
    topics.extend(data.valid.topics.clone());

    let enc = EncoderConfig::default();
    let mut ranker = Ranker::build("cedr-knrm", &enc, 42)?;
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let pool = PairPool::new(&data.train.qrels, &data.train.candidates, cfg.rerank_cutoff_train)?;
    let validator = RerankValidator {
        qrels: &data.valid.qrels,
        candidates: &data.valid.candidates,
        cutoff: cfg.valid_cutoff,
        metric: cfg.valid_metric,
    };
    let mut source = TextFeatures::new(&topics, &data.corpus);
    let run_dir = RunDir::new(&out, enc)?;
    let outcome = train(&mut ranker, &mut source, &pool, &validator, &cfg, Some(&run_dir))?;

    for e in &outcome.history {
        println!("epoch {:>2}  loss {:.4}  nDCG@20 {:.4}", e.epoch, e.loss_mean, e.valid_metric);
    }
    println!("best epoch {} ({:.4}), checkpoints in {out}", outcome.best_epoch, outcome.best_metric);
    Ok(())
}
