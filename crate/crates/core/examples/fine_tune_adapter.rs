//! Jointly trains a head and the per-layer projections of a pretrained
//! encoder adapter, then saves and reloads the checkpoint.

use ctxrank::checkpoint::Checkpoint;
use ctxrank::contextualizer::{EncoderConfig, EncoderKind};
use ctxrank::synthetic::{generate, SyntheticConfig};
use ctxrank::training::{train, PairAccuracy, PairPool, TextFeatures, TrainConfig};
use ctxrank::Ranker;

fn main() -> ctxrank::Result<()> {
    let enc = EncoderConfig {
        kind: EncoderKind::PretrainedAdapter,
        fine_tune: true,
        total_layers: 4,
        active_layers: 4,
        ..EncoderConfig::default()
    };
    let mut ranker = Ranker::build("cedr-knrm", &enc, 3)?;
    let before = ranker.encoder.params().map(|p| p.clone());

    let data = generate(&SyntheticConfig::default());
    let pool = PairPool::new(&data.train.qrels, &data.train.candidates, 150)?;
    let cfg = TrainConfig {
        epochs: 3,
        batches_per_epoch: 8,
        grad_accum_chunk: 4,
        ..TrainConfig::default()
    };
    let mut source = TextFeatures::new(&data.train.topics, &data.corpus);
    let out = train(&mut ranker, &mut source, &pool, &PairAccuracy { pool: &pool }, &cfg, None)?;
    println!("pair accuracy {:.3} at epoch {}", out.best_metric, out.best_epoch);

    let (a, b) = (before.unwrap(), ranker.encoder.params().unwrap().clone());
    let moved = (0..a.numel()).map(|k| (a.flat(k) - b.flat(k)).abs()).fold(0.0, f64::max);
    println!("largest encoder parameter change {moved:.2e}");

    let dir = std::env::temp_dir().join("ctxrank-fine-tune.ckpt");
    Checkpoint::from_ranker(&ranker, &enc).save(&dir)?;
    let back = Checkpoint::load(&dir)?.to_ranker()?;
    let q = back.tokenize("train0term0 train0term1");
    let d = back.prepare_doc("train0term0 appears here with train0term1");
    assert_eq!(back.score_document(&q, &d)?, ranker.score_document(&q, &d)?);
    println!("reloaded checkpoint from {} scores identically", dir.display());
    Ok(())
}
