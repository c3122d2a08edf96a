//! Shows how a long document is truncated, split into balanced segments
//! that each fit beside the query, and stitched back together.

use ctxrank::contextualizer::EncoderConfig;
use ctxrank::text::plan_splits;
use ctxrank::Ranker;

fn main() -> ctxrank::Result<()> {
    let plan = plan_splits(800, 8, 512, 3)?;
    println!("800 tokens, 8-token query, limit 512: {:?}", plan.segments);

    let ranker = Ranker::build("cedr-knrm", &EncoderConfig::default(), 0)?;
    let q = ranker.tokenize("segment boundaries");
    let d = ranker.prepare_doc(&"words keep coming in this very long document ".repeat(200));
    let (emb, plan) = ranker.encode(&q, &d)?;
    println!(
        "document cut to {} tokens, {} segments of lengths {:?}",
        emb.doc_len,
        plan.segments.len(),
        plan.lengths().collect::<Vec<_>>()
    );
    println!("score {:.4}", ranker.score_document(&q, &d)?);
    Ok(())
}
