//! Document re-ranking with layered contextualized similarity tensors.
//!
//! A query and a document are encoded together by a [`Contextualizer`],
//! which yields per-token vectors for each encoder layer. Cosine
//! similarities between every query and document token at every layer form
//! an `L × |Q| × |D|` [`SimilarityTensor`]. Relevance-matching heads (KNRM,
//! PACRR, DRMM) read the layer axis as input channels, and their joint
//! variants also consume the encoder's classification vector.
//!
//! Around that core sit the pieces needed to use it: TREC file I/O,
//! query-preserving document splitting, pairwise training, re-ranking,
//! evaluation (P@k, nDCG@k, ERR@k, paired t-test) and throughput
//! benchmarks for layer truncation.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod benchmark;
pub mod checkpoint;
pub mod cli;
pub mod contextualizer;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod heads;
pub mod params;
pub mod pipeline;
pub mod simtensor;
pub mod synthetic;
pub mod text;
pub mod training;

pub use contextualizer::{Contextualizer, ContextualizerSpec, EncoderKind, LayeredEmbeddings};
pub use error::{Error, Result};
pub use heads::{HeadConfig, HeadKind, ScoringHead};
pub use pipeline::Ranker;

pub use simtensor::SimilarityTensor;
