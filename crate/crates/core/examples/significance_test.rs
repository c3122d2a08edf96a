//! Per-query comparison of two runs with a paired t-test.

use ctxrank::evaluation::{evaluate_queries, paired_t_test, rerank_run, MetricSpec, RerankConfig};
use ctxrank::synthetic::{generate, SyntheticConfig};

fn main() -> ctxrank::Result<()> {
    let data = generate(&SyntheticConfig {
        valid_queries: 12,
        ..SyntheticConfig::default()
    });
    // a term-overlap scorer as the competing system
    let overlap = |q: &str, d: &str| {
        let terms: Vec<&str> = q.split_whitespace().collect();
        d.split_whitespace().filter(|w| terms.contains(w)).count() as f64
    };
    let v = &data.valid;
    let run = rerank_run(&overlap, &v.topics, &v.candidates, &data.corpus, &RerankConfig::default(), "overlap")?;

    let specs = MetricSpec::defaults();
    let base = evaluate_queries(&v.candidates, &v.qrels, &specs);
    let ours = evaluate_queries(&run, &v.qrels, &specs);
    println!("metric\tfirst_stage\toverlap\tp_value");
    for (i, s) in specs.iter().enumerate() {
        let p = paired_t_test(&ours.column(i), &base.column(i))?;
        println!("{}\t{:.4}\t{:.4}\t{p:.4}", s.label(), base.mean(i), ours.mean(i));
    }
    Ok(())
}
