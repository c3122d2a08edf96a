//! Writes a small generated dataset in the on-disk formats the CLI reads.
//!
//! ```text
//! cargo run --example toy_dataset -- /tmp/toy
//! ctxrank train --corpus /tmp/toy/corpus.tsv --topics /tmp/toy/topics.tsv \
//!     --qrels /tmp/toy/train.qrels --candidates /tmp/toy/train.run \
//!     --valid-qrels /tmp/toy/valid.qrels --valid-candidates /tmp/toy/valid.run \
//!     --set epochs=5 --out /tmp/toy/model
//! ```

use std::path::PathBuf;

use ctxrank::data_io::{write_corpus, write_qrels, write_run, write_topics};
use ctxrank::synthetic::{generate, SyntheticConfig};

fn main() -> ctxrank::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy-data".into()));
    std::fs::create_dir_all(&dir).map_err(|e| ctxrank::Error::Io { path: dir.clone(), source: e })?;

    let data = generate(&SyntheticConfig::default());
    let mut topics = data.train.topics.clone();
    topics.extend(data.valid.topics.clone());

    write_corpus(&data.corpus, dir.join("corpus.tsv"))?;
    write_topics(&topics, dir.join("topics.tsv"))?;
    write_qrels(&data.train.qrels, dir.join("train.qrels"))?;
    write_qrels(&data.valid.qrels, dir.join("valid.qrels"))?;
    write_run(&data.train.candidates, dir.join("train.run"), "first-stage")?;
    write_run(&data.valid.candidates, dir.join("valid.run"), "first-stage")?;

    println!(
        "{} documents, {} train and {} validation queries in {}",
        data.corpus.len(),
        data.train.topics.len(),
        data.valid.topics.len(),
        dir.display()
    );
    Ok(())
}
