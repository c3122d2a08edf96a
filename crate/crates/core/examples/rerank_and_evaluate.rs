//! Re-ranks a first-stage run with a lightly trained model and compares
//! both runs with P@20, nDCG@20 and ERR@20.

use ctxrank::contextualizer::EncoderConfig;
use ctxrank::evaluation::{evaluate_run, rerank_run, MetricSpec, RerankConfig};
use ctxrank::synthetic::{generate, SyntheticConfig};
use ctxrank::training::{train, PairAccuracy, PairPool, TextFeatures, TrainConfig};
use ctxrank::Ranker;

fn main() -> ctxrank::Result<()> {
    let data = generate(&SyntheticConfig::default());
    let mut ranker = Ranker::build("cedr-drmm", &EncoderConfig::default(), 1)?;
    let pool = PairPool::new(&data.train.qrels, &data.train.candidates, 150)?;
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let mut source = TextFeatures::new(&data.train.topics, &data.corpus);
    train(&mut ranker, &mut source, &pool, &PairAccuracy { pool: &pool }, &cfg, None)?;

    let rerank_cfg = RerankConfig {
        threads: 2,
        ..RerankConfig::default()
    };
    let run = rerank_run(&ranker, &data.valid.topics, &data.valid.candidates, &data.corpus, &rerank_cfg, "cedr-drmm")?;

    let specs = MetricSpec::defaults();
    let before = evaluate_run(&data.valid.candidates, &data.valid.qrels, &specs);
    let after = evaluate_run(&run, &data.valid.qrels, &specs);
    for (label, b) in &before {
        println!("{label:<8} first stage {b:.4}  reranked {:.4}", after[label]);
    }
    print!("{}", ctxrank::data_io::format_run(&run, "cedr-drmm").lines().take(5).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
