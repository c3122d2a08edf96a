//! Readers and writers for corpora, topics, TREC qrels and TREC run files.
//!
//! All files are UTF-8. Loaders are strict: every malformed line is an
//! error carrying its 1-based line number, nothing is skipped silently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: String,
    pub text: String,
}

/// One line of a TREC run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

pub type Corpus = BTreeMap<String, DocRecord>;
pub type Topics = BTreeMap<String, Topic>;
/// `query_id -> doc_id -> grade`.
pub type Qrels = BTreeMap<String, BTreeMap<String, i32>>;
/// `query_id -> entries ordered by rank`.
pub type Run = BTreeMap<String, Vec<RunEntry>>;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Splits a `id<TAB>text` line. Any further tabs in the text become spaces.
fn split_tsv<'a>(path: &Path, lineno: usize, line: &'a str) -> Result<(&'a str, String)> {
    let (id, text) = line
        .split_once('\t')
        .ok_or_else(|| Error::parse(path, lineno, "expected `id<TAB>text`"))?;
    let id = id.trim();
    if id.is_empty() {
        return Err(Error::parse(path, lineno, "empty identifier"));
    }
    Ok((id, text.replace('\t', " ")))
}

/// Loads a TSV corpus, one `doc_id<TAB>text` record per non-blank line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut corpus = Corpus::new();
    for (idx, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (doc_id, text) = split_tsv(path, idx + 1, line)?;
        if corpus.contains_key(doc_id) {
            return Err(Error::Duplicate {
                what: "doc_id",
                id: doc_id.to_string(),
            });
        }
        corpus.insert(
            doc_id.to_string(),
            DocRecord {
                doc_id: doc_id.to_string(),
                text,
            },
        );
    }
    Ok(corpus)
}

/// Loads a TSV topic file, one `query_id<TAB>text` record per non-blank line.
pub fn load_topics(path: impl AsRef<Path>) -> Result<Topics> {
    let path = path.as_ref();
    let mut topics = Topics::new();
    for (idx, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (query_id, text) = split_tsv(path, idx + 1, line)?;
        if text.trim().is_empty() {
            return Err(Error::parse(path, idx + 1, "empty query text"));
        }
        if topics.contains_key(query_id) {
            return Err(Error::Duplicate {
                what: "query_id",
                id: query_id.to_string(),
            });
        }
        topics.insert(
            query_id.to_string(),
            Topic {
                query_id: query_id.to_string(),
                text,
            },
        );
    }
    Ok(topics)
}

pub fn write_topics(topics: &Topics, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for t in topics.values() {
        let _ = writeln!(out, "{}\t{}", t.query_id, t.text);
    }
    write(path.as_ref(), &out)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for d in corpus.values() {
        let _ = writeln!(out, "{}\t{}", d.doc_id, d.text.replace('\t', " "));
    }
    write(path.as_ref(), &out)
}

/// Loads TREC qrels (`query_id iter doc_id grade`).
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (idx, line) in read(path)?.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: i32 = cols[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("non-integer grade `{}`", cols[3])))?;
        let per_query = qrels.entry(cols[0].to_string()).or_default();
        if per_query.insert(cols[2].to_string(), grade).is_some() {
            return Err(Error::Duplicate {
                what: "judgment",
                id: format!("{}/{}", cols[0], cols[2]),
            });
        }
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (qid, docs) in qrels {
        for (did, grade) in docs {
            let _ = writeln!(out, "{qid} 0 {did} {grade}");
        }
    }
    write(path.as_ref(), &out)
}

/// Loads a six-column TREC run and validates rank contiguity and score order.
pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let mut run = Run::new();
    for (idx, line) in read(path)?.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let rank: usize = cols[3]
            .parse()
            .ok()
            .filter(|r| *r >= 1)
            .ok_or_else(|| Error::parse(path, lineno, format!("invalid rank `{}`", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(path, lineno, format!("invalid score `{}`", cols[4])))?;
        run.entry(cols[0].to_string()).or_default().push(RunEntry {
            query_id: cols[0].to_string(),
            doc_id: cols[2].to_string(),
            rank,
            score,
            tag: cols[5].to_string(),
        });
    }
    for (qid, entries) in run.iter_mut() {
        entries.sort_by_key(|e| e.rank);
        validate_ranking(qid, entries)?;
    }
    Ok(run)
}

fn validate_ranking(query_id: &str, entries: &[RunEntry]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        if e.rank == i && i > 0 {
            return Err(Error::Duplicate {
                what: "rank",
                id: format!("{query_id}/{}", e.rank),
            });
        }
        if e.rank != i + 1 {
            return Err(Error::RankGap {
                query_id: query_id.to_string(),
                expected: i + 1,
                found: e.rank,
            });
        }
        if !seen.insert(e.doc_id.as_str()) {
            return Err(Error::Duplicate {
                what: "doc_id in run",
                id: format!("{query_id}/{}", e.doc_id),
            });
        }
        if i > 0 && e.score > entries[i - 1].score {
            return Err(Error::ScoreInversion {
                query_id: query_id.to_string(),
                rank: e.rank,
            });
        }
    }
    Ok(())
}

/// Writes a run as `query_id Q0 doc_id rank score tag`, queries in ascending
/// id order and scores with six decimals.
pub fn write_run(entries: &Run, path: impl AsRef<Path>, tag: &str) -> Result<()> {
    write(path.as_ref(), &format_run(entries, tag))
}

pub fn format_run(entries: &Run, tag: &str) -> String {
    let mut out = String::new();
    for (qid, list) in entries {
        for e in list {
            let _ = writeln!(out, "{qid} Q0 {} {} {:.6} {tag}", e.doc_id, e.rank, e.score);
        }
    }
    out
}

/// Orders scored documents by score descending, ties by doc_id descending,
/// and assigns ranks 1..n.
pub fn rank_scored(query_id: &str, scored: Vec<(String, f64)>, tag: &str) -> Vec<RunEntry> {
    let mut scored = scored;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| b.0.cmp(&a.0)));
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (doc_id, score))| RunEntry {
            query_id: query_id.to_string(),
            doc_id,
            rank: i + 1,
            score,
            tag: tag.to_string(),
        })
        .collect()
}
