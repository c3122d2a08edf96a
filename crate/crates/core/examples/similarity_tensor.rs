//! Builds a layered similarity tensor for one query/document pair and
//! prints how the score of a repeated word changes with depth.

use ctxrank::contextualizer::EncoderConfig;
use ctxrank::simtensor::build_tensor;
use ctxrank::Ranker;

fn main() -> ctxrank::Result<()> {
    let ranker = Ranker::build("knrm", &EncoderConfig::default(), 0)?;
    let q = ranker.tokenize("river bank");
    let d = ranker.prepare_doc("the bank approved the loan near the river bank");
    let (emb, _) = ranker.encode(&q, &d)?;
    let sim = build_tensor(&emb);
    let (layers, ql, dl) = sim.shape();
    println!("tensor {layers} x {ql} x {dl}");

    // "bank" appears twice in the document, in different contexts
    let qi = q.tokens.iter().position(|t| t == "bank").unwrap();
    for l in [0, 1, 3, layers - 1] {
        let row: Vec<String> = d
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| *t == "bank")
            .map(|(j, _)| format!("{:.3}", sim.get(l, qi, j)))
            .collect();
        println!("layer {:>2}: bank/bank cells {}", l + 1, row.join(" "));
    }
    println!("{}", sim.to_csv(2, &q.tokens, &d.tokens)?);
    Ok(())
}
