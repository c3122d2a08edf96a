//! Scores the same pair with every head over the default stub encoder.

use ctxrank::contextualizer::EncoderConfig;
use ctxrank::Ranker;

fn main() -> ctxrank::Result<()> {
    let enc = EncoderConfig::default();
    for head in ["knrm", "pacrr", "drmm", "vanilla", "cedr-knrm", "cedr-pacrr", "cedr-drmm"] {
        let r = Ranker::build(head, &enc, 0)?;
        let q = r.tokenize("solar panel efficiency");
        let d = r.prepare_doc("new solar panel designs improve efficiency in cloudy weather");
        println!("{head:<11} {:>9.4}  ({} params)", r.score_document(&q, &d)?, r.head.params.numel());
    }
    Ok(())
}
