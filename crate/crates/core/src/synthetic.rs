//! Small generated datasets with a planted exact-term-overlap signal.
//!
//! Every query owns three unique terms and a pool of candidate documents.
//! Relevant documents contain some of the query's terms among filler words
//! (grade 2 documents contain all of them); non-relevant documents are pure
//! filler. Filler words never coincide with query terms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{Corpus, DocRecord, Qrels, Run, RunEntry, Topic, Topics};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub train_queries: usize,
    pub valid_queries: usize,
    pub docs_per_query: usize,
    pub relevant_per_query: usize,
    pub query_terms: usize,
    pub doc_len: usize,
    pub filler_vocab: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_queries: 8,
            valid_queries: 4,
            docs_per_query: 20,
            relevant_per_query: 6,
            query_terms: 3,
            doc_len: 20,
            filler_vocab: 500,
            seed: 0,
        }
    }
}

/// Topics, judgments and a first-stage candidate run for one query set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuerySet {
    pub topics: Topics,
    pub qrels: Qrels,
    pub candidates: Run,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub train: QuerySet,
    pub valid: QuerySet,
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corpus = Corpus::new();
    let mut build = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| {
        let mut set = QuerySet::default();
        for qi in 0..n {
            let qid = format!("{prefix}{qi}");
            let terms: Vec<String> = (0..cfg.query_terms).map(|t| format!("{qid}term{t}")).collect();
            set.topics.insert(
                qid.clone(),
                Topic {
                    query_id: qid.clone(),
                    text: terms.join(" "),
                },
            );
            let mut judged = std::collections::BTreeMap::new();
            let mut doc_ids = Vec::with_capacity(cfg.docs_per_query);
            for di in 0..cfg.docs_per_query {
                let doc_id = format!("{qid}-d{di:02}");
                let mut words: Vec<String> = (0..cfg.doc_len)
                    .map(|_| format!("filler{}", rng.gen_range(0..cfg.filler_vocab)))
                    .collect();
                let grade = if di < cfg.relevant_per_query {
                    let all = di % 2 == 0;
                    let planted: Vec<&String> = if all {
                        terms.iter().collect()
                    } else {
                        vec![&terms[rng.gen_range(0..terms.len())]]
                    };
                    for t in planted {
                        let pos = rng.gen_range(0..words.len());
                        words[pos] = t.clone();
                    }
                    if all {
                        2
                    } else {
                        1
                    }
                } else {
                    0
                };
                judged.insert(doc_id.clone(), grade);
                corpus.insert(
                    doc_id.clone(),
                    DocRecord {
                        doc_id: doc_id.clone(),
                        text: words.join(" "),
                    },
                );
                doc_ids.push(doc_id);
            }
            doc_ids.shuffle(rng);
            let entries = doc_ids
                .into_iter()
                .enumerate()
                .map(|(r, doc_id)| RunEntry {
                    query_id: qid.clone(),
                    doc_id,
                    rank: r + 1,
                    score: (cfg.docs_per_query - r) as f64,
                    tag: "first-stage".into(),
                })
                .collect();
            set.qrels.insert(qid.clone(), judged);
            set.candidates.insert(qid, entries);
        }
        set
    };
    let train = build("train", cfg.train_queries, &mut rng);
    let valid = build("valid", cfg.valid_queries, &mut rng);
    SyntheticData { corpus, train, valid }
}
