//! Composition of the scoring path:
//! truncate → split → encode each segment → stitch → similarity tensor → head.

use std::collections::{HashMap, HashSet};

use crate::contextualizer::{stitch_segments, unstitch_grad, Contextualizer, EncoderConfig, LayeredEmbeddings};
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadInput, HeadKind, ScoringHead};
use crate::params::ParamSet;
use crate::simtensor::{build_tensor, tensor_backward, SimilarityTensor};
use crate::text::{plan_splits, tokenize, truncate_doc, SplitPlan, TokenId, TokenizedText};

/// Documents are cut to this many pipeline tokens before splitting.
pub const DEFAULT_DOC_LIMIT: usize = 800;

/// Document frequencies for the optional PACRR IDF input.
#[derive(Debug, Clone, Default)]
pub struct IdfTable {
    docs: usize,
    df: HashMap<TokenId, usize>,
}

impl IdfTable {
    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a TokenizedText>) -> Self {
        let mut t = IdfTable::default();
        for d in docs {
            t.docs += 1;
            for id in d.ids.iter().copied().collect::<HashSet<_>>() {
                *t.df.entry(id).or_default() += 1;
            }
        }
        t
    }

    /// `ln((N + 1) / (df + 0.5))`
    pub fn idf(&self, id: TokenId) -> f64 {
        let df = self.df.get(&id).copied().unwrap_or(0) as f64;
        ((self.docs as f64 + 1.0) / (df + 0.5)).ln()
    }
}

/// What the encoder produced for one pair, kept for the reverse pass when
/// the encoder is trainable.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub query: TokenizedText,
    pub doc: TokenizedText,
    pub plan: SplitPlan,
    pub embeddings: LayeredEmbeddings,
}

/// Head inputs for one (query, document) pair.
#[derive(Debug, Clone)]
pub struct Features {
    pub sim: SimilarityTensor,
    pub cls: Option<Vec<f64>>,
    pub query_features: Option<Vec<f64>>,
    pub query_idf: Option<Vec<f64>>,
    pub trace: Option<EncodeTrace>,
}

impl Features {
    pub fn head_input(&self) -> HeadInput<'_> {
        HeadInput::new(&self.sim)
            .with_cls(self.cls.as_deref())
            .with_query_features(self.query_features.as_deref())
            .with_query_idf(self.query_idf.as_deref())
    }
}

/// Gradient buffers for everything a [`Ranker`] can train.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head: ParamSet,
    pub encoder: Option<ParamSet>,
}

impl Gradients {
    pub fn fill_zero(&mut self) {
        self.head.fill_zero();
        if let Some(e) = self.encoder.as_mut() {
            e.fill_zero();
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        self.head.add_scaled(&other.head, scale);
        if let (Some(a), Some(b)) = (self.encoder.as_mut(), other.encoder.as_ref()) {
            a.add_scaled(b, scale);
        }
    }
}

/// A scoring head bound to a contextualizer.
pub struct Ranker {
    pub head: ScoringHead,
    pub encoder: Box<dyn Contextualizer>,
    pub doc_limit: usize,
    pub idf: Option<IdfTable>,
}

impl Ranker {
    pub fn new(head: ScoringHead, encoder: Box<dyn Contextualizer>) -> Result<Self> {
        let spec = encoder.spec();
        if head.config.kind != HeadKind::Vanilla && head.config.channels != spec.active_layers {
            return Err(Error::Config(format!(
                "{} expects {} channels but the encoder emits {} layers",
                head.config, head.config.channels, spec.active_layers
            )));
        }
        if head.config.needs_cls() && encoder.cls_dim() != Some(head.config.cls_dim) {
            return Err(Error::Config(format!(
                "{} needs a classification vector of width {}, encoder provides {:?}",
                head.config,
                head.config.cls_dim,
                encoder.cls_dim()
            )));
        }
        Ok(Ranker {
            head,
            encoder,
            doc_limit: DEFAULT_DOC_LIMIT,
            idf: None,
        })
    }

    /// Builds the encoder from `encoder` and a default head named like
    /// `knrm` or `cedr-pacrr` sized to it.
    pub fn build(head: &str, encoder: &EncoderConfig, seed: u64) -> Result<Self> {
        let enc = encoder.build()?;
        let spec = enc.spec();
        let cfg = HeadConfig::named(head, spec.active_layers, enc.cls_dim().unwrap_or(0), spec.dim)?;
        Ranker::new(ScoringHead::new(cfg, seed)?, enc)
    }

    pub fn tokenize(&self, text: &str) -> TokenizedText {
        tokenize(text, self.encoder.vocabulary())
    }

    /// Tokenizes and truncates a document body.
    pub fn prepare_doc(&self, text: &str) -> TokenizedText {
        truncate_doc(&self.tokenize(text), self.doc_limit)
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            head: self.head.params.zeros_like(),
            encoder: self.encoder.params().map(ParamSet::zeros_like),
        }
    }

    /// Encodes the pair (splitting the document as needed) and stitches the
    /// segments back into one set of layered embeddings.
    pub fn encode(&self, query: &TokenizedText, doc: &TokenizedText) -> Result<(LayeredEmbeddings, SplitPlan)> {
        let spec = self.encoder.spec();
        let doc = truncate_doc(doc, self.doc_limit);
        let plan = if spec.kind.pair_encoding() {
            plan_splits(doc.len(), query.len(), spec.model_limit, spec.control_tokens)?
        } else {
            SplitPlan {
                segments: vec![(0, doc.len())],
                capacity: doc.len().max(1),
            }
        };
        let segments = plan
            .segments
            .iter()
            .map(|(s, e)| self.encoder.encode(query, &doc.slice(*s, *e)))
            .collect::<Result<Vec<_>>>()?;
        Ok((stitch_segments(&segments, &plan)?, plan))
    }

    pub fn features(&self, query: &TokenizedText, doc: &TokenizedText) -> Result<Features> {
        let (emb, plan) = self.encode(query, doc)?;
        let sim = if self.head.config.kind == HeadKind::Vanilla {
            SimilarityTensor::filled(emb.layers, 0, 0, 0.0)
        } else {
            build_tensor(&emb)
        };
        let query_features = matches!(self.head.config.kind, HeadKind::Drmm(_)).then(|| emb.query_layer_mean());
        let query_idf = match &self.head.config.kind {
            HeadKind::Pacrr(c) if c.use_idf => {
                let table = self
                    .idf
                    .as_ref()
                    .ok_or_else(|| Error::Config("pacrr use_idf requires an idf table".into()))?;
                Some(query.ids.iter().map(|id| table.idf(*id)).collect())
            }
            _ => None,
        };
        let cls = emb.cls.clone();
        let trace = self.encoder.is_trainable().then(|| EncodeTrace {
            query: query.clone(),
            doc: truncate_doc(doc, self.doc_limit),
            plan,
            embeddings: emb,
        });
        Ok(Features {
            sim,
            cls,
            query_features,
            query_idf,
            trace,
        })
    }

    pub fn score_features(&self, f: &Features) -> Result<f64> {
        Ok(self.head.forward(&f.head_input())?.score)
    }

    /// Relevance estimate for a tokenized query and document.
    pub fn score_document(&self, query: &TokenizedText, doc: &TokenizedText) -> Result<f64> {
        self.score_features(&self.features(query, doc)?)
    }

    /// Accumulates `dscore · ∂score/∂θ` for head and (if trainable) encoder.
    pub fn backward(&self, f: &Features, dscore: f64, grads: &mut Gradients) -> Result<()> {
        let input = f.head_input();
        let dinput = self.head.backward(&input, dscore, &mut grads.head)?;
        let (Some(trace), Some(acc)) = (&f.trace, grads.encoder.as_mut()) else {
            return Ok(());
        };
        let emb = &trace.embeddings;
        let mut demb = if self.head.config.kind == HeadKind::Vanilla {
            emb.zeros_like()
        } else {
            tensor_backward(emb, &dinput.sim)?
        };
        if let (Some(dst), Some(src)) = (demb.cls.as_mut(), &dinput.cls) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        if let Some(dq) = &dinput.query_features {
            let inv = 1.0 / emb.layers as f64;
            for l in 0..emb.layers {
                for i in 0..emb.query_len {
                    let g = &dq[i * emb.dim..(i + 1) * emb.dim];
                    demb.query_vec_mut(l, i)
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, v)| *d += v * inv);
                }
            }
        }
        for (seg_grad, (s, e)) in unstitch_grad(&demb, &trace.plan).iter().zip(&trace.plan.segments) {
            self.encoder
                .backward(&trace.query, &trace.doc.slice(*s, *e), seg_grad, acc)?;
        }
        Ok(())
    }
}

/// Free-function form of [`Ranker::score_document`].
pub fn score_document(ranker: &Ranker, query: &TokenizedText, doc: &TokenizedText) -> Result<f64> {
    ranker.score_document(query, doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contextualizer::{StaticEmbeddings, StubEncoder};


    fn stub_ranker(head: &str) -> Ranker {
        let enc = StubEncoder::with_defaults(1);
        let cfg = HeadConfig::named(head, 12, 36, 32).unwrap();
        Ranker::new(ScoringHead::new(cfg, 2).unwrap(), Box::new(enc)).unwrap()
    }

    #[test]
    fn deterministic_and_empty_doc() {
        for head in ["knrm", "cedr-pacrr", "drmm", "vanilla"] {
            let r = stub_ranker(head);
            let q = r.tokenize("river bank");
            let d = r.prepare_doc("the bank of the river was steep");
            assert_eq!(r.score_document(&q, &d).unwrap(), r.score_document(&q, &d).unwrap());
            let empty = r.prepare_doc("");
            assert!(r.score_document(&q, &empty).unwrap().is_finite(), "{head}");
        }
    }

    #[test]
    fn long_documents_are_split() {
        let r = stub_ranker("knrm");
        let q = r.tokenize("alpha beta");
        let d = r.prepare_doc(&"gamma delta ".repeat(450));
        let (emb, plan) = r.encode(&q, &d).unwrap();
        assert_eq!(emb.doc_len, 800);
        assert_eq!(plan.segments, [(0, 400), (400, 800)]);
    }

    #[test]
    fn mismatched_channels_rejected() {
        let enc = StubEncoder::with_defaults(1);
        let cfg = HeadConfig::named("knrm", 4, 0, 32).unwrap();
        assert!(Ranker::new(ScoringHead::new(cfg, 0).unwrap(), Box::new(enc)).is_err());
    }

    #[test]
    fn static_identical_tokens_match_exactly() {
        let s = StaticEmbeddings::from_pairs(2, [("bank", vec![0.3, 0.4]), ("river", vec![1.0, 0.0])]).unwrap();
        let cfg = HeadConfig::named("knrm", 1, 0, 2).unwrap();
        let r = Ranker::new(ScoringHead::new(cfg, 0).unwrap(), Box::new(s)).unwrap();
        let f = r.features(&r.tokenize("bank"), &r.prepare_doc("river bank")).unwrap();
        assert!((f.sim.get(0, 0, 1) - 1.0).abs() < 1e-15);
    }
}
