//! Throughput of the stub encoder as the number of active layers grows,
//! and versus document length at full depth.

use ctxrank::benchmark::{layers_tsv, length_tsv, quality_vs_layers, throughput_by_length, BenchConfig};
use ctxrank::contextualizer::EncoderConfig;
use ctxrank::Ranker;

fn main() -> ctxrank::Result<()> {
    let cfg = BenchConfig::default();
    let factory = |layers: usize| {
        let enc = EncoderConfig {
            active_layers: layers,
            ..EncoderConfig::default()
        };
        Ranker::build("knrm", &enc, 0)
    };
    let rows = quality_vs_layers(&[1, 3, 5, 8, 12], &factory, None, 400, &cfg)?;
    print!("{}", layers_tsv(&rows));
    println!();

    let full = factory(12)?;
    print!("{}", length_tsv(&throughput_by_length(&full, &[50, 100, 200, 400, 800], &cfg)?));
    Ok(())
}
