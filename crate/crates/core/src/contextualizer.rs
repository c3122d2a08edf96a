//! Layered token representations for a (query, document segment) pair.
//!
//! Three implementations sit behind [`Contextualizer`]:
//!
//! * [`StaticEmbeddings`]: a word-vector table. One layer, no context, no
//!   classification vector.
//! * [`StubEncoder`]: a deterministic toy encoder whose deeper layers mix an
//!   ever wider window of neighbours, so the same token gets different
//!   vectors in different contexts. It also emits a classification vector.
//! * [`PretrainedAdapter`]: a bridge to any external encoder implementing
//!   [`PretrainedEncoder`], optionally with trainable per-layer projections
//!   that receive gradients during fine-tuning.
//!
//! All implementations can compute only the first `active_layers` layers.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};
use crate::text::{SplitPlan, TokenId, TokenizedText, Vocabulary};

/// Width of the overlap block appended to the stub's classification vector.
pub const STUB_OVERLAP_FEATURES: usize = 4;

/// Per-layer vectors for query and document tokens, stored layer-major
/// (`[layer][token][dim]`), plus an optional classification vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredEmbeddings {
    pub layers: usize,
    pub dim: usize,
    pub query_len: usize,
    pub doc_len: usize,
    pub query_vecs: Vec<f64>,
    pub doc_vecs: Vec<f64>,
    pub cls: Option<Vec<f64>>,
}

impl LayeredEmbeddings {
    pub fn zeros(layers: usize, dim: usize, query_len: usize, doc_len: usize, cls_dim: Option<usize>) -> Self {
        LayeredEmbeddings {
            layers,
            dim,
            query_len,
            doc_len,
            query_vecs: vec![0.0; layers * query_len * dim],
            doc_vecs: vec![0.0; layers * doc_len * dim],
            cls: cls_dim.map(|n| vec![0.0; n]),
        }
    }

    /// Same shape, all zeros. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.layers,
            self.dim,
            self.query_len,
            self.doc_len,
            self.cls.as_ref().map(Vec::len),
        )
    }

    /// Layer `l` is 0-based here.
    pub fn query_vec(&self, l: usize, i: usize) -> &[f64] {
        let o = (l * self.query_len + i) * self.dim;
        &self.query_vecs[o..o + self.dim]
    }

    pub fn doc_vec(&self, l: usize, j: usize) -> &[f64] {
        let o = (l * self.doc_len + j) * self.dim;
        &self.doc_vecs[o..o + self.dim]
    }

    pub fn query_vec_mut(&mut self, l: usize, i: usize) -> &mut [f64] {
        let o = (l * self.query_len + i) * self.dim;
        &mut self.query_vecs[o..o + self.dim]
    }

    pub fn doc_vec_mut(&mut self, l: usize, j: usize) -> &mut [f64] {
        let o = (l * self.doc_len + j) * self.dim;
        &mut self.doc_vecs[o..o + self.dim]
    }

    /// Keeps only the first `n` layers.
    pub fn truncate_layers(&mut self, n: usize) {
        if n < self.layers {
            self.query_vecs.truncate(n * self.query_len * self.dim);
            self.doc_vecs.truncate(n * self.doc_len * self.dim);
            self.layers = n;
        }
    }

    /// Mean over layers of each query token's vector, `[query_len][dim]`.
    pub fn query_layer_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.query_len * self.dim];
        for l in 0..self.layers {
            for i in 0..self.query_len {
                for (o, v) in out[i * self.dim..(i + 1) * self.dim].iter_mut().zip(self.query_vec(l, i)) {
                    *o += v;
                }
            }
        }
        let inv = 1.0 / self.layers as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.query_vecs.iter().chain(&self.doc_vecs).all(|v| v.is_finite())
            && self.cls.iter().flatten().all(|v| v.is_finite())
    }

    fn check_shape(&self) -> Result<()> {
        if self.query_vecs.len() != self.layers * self.query_len * self.dim
            || self.doc_vecs.len() != self.layers * self.doc_len * self.dim
        {
            return Err(Error::Shape("embedding buffers do not match declared shape".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Static,
    Stub,
    PretrainedAdapter,
}

impl EncoderKind {
    /// Whether query and document are encoded jointly under one token budget.
    pub fn pair_encoding(self) -> bool {
        !matches!(self, EncoderKind::Static)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Static => "static",
            EncoderKind::Stub => "stub",
            EncoderKind::PretrainedAdapter => "pretrained-adapter",
        })
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(EncoderKind::Static),
            "stub" => Ok(EncoderKind::Stub),
            "pretrained-adapter" | "adapter" => Ok(EncoderKind::PretrainedAdapter),
            _ => Err(Error::Config(format!("unknown contextualizer kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualizerSpec {
    pub kind: EncoderKind,
    pub total_layers: usize,
    pub active_layers: usize,
    pub dim: usize,
    pub model_limit: usize,
    /// Classification token plus separators per query+passage pair.
    pub control_tokens: usize,
}

impl ContextualizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.active_layers < 1 || self.active_layers > self.total_layers {
            return Err(Error::Config(format!(
                "active_layers must be in 1..={}, got {}",
                self.total_layers, self.active_layers
            )));
        }
        if self.kind == EncoderKind::Static && self.total_layers != 1 {
            return Err(Error::Config("static embeddings have exactly one layer".into()));
        }
        if self.dim == 0 || self.model_limit == 0 {
            return Err(Error::Config("dim and model_limit must be positive".into()));
        }
        Ok(())
    }

    fn check_budget(&self, query: &TokenizedText, segment: &TokenizedText) -> Result<()> {
        let needed = query.len() + segment.len() + self.control_tokens;
        if self.kind.pair_encoding() && needed > self.model_limit {
            return Err(Error::BudgetExceeded {
                needed,
                model_limit: self.model_limit,
            });
        }
        Ok(())
    }
}

/// Produces layered embeddings for a query and one document segment.
pub trait Contextualizer: Send + Sync {
    fn spec(&self) -> &ContextualizerSpec;

    fn vocabulary(&self) -> &Vocabulary;

    fn encode(&self, query: &TokenizedText, segment: &TokenizedText) -> Result<LayeredEmbeddings>;

    /// Width of the classification vector, if this encoder produces one.
    fn cls_dim(&self) -> Option<usize>;

    fn set_active_layers(&mut self, n: usize) -> Result<()>;

    /// Trainable parameters; `None` for frozen encoders.
    fn params(&self) -> Option<&ParamSet> {
        None
    }

    fn params_mut(&mut self) -> Option<&mut ParamSet> {
        None
    }

    /// Accumulates parameter gradients given gradients w.r.t. the output of
    /// `encode(query, segment)`. Frozen encoders do nothing.
    fn backward(
        &self,
        _query: &TokenizedText,
        _segment: &TokenizedText,
        _grad: &LayeredEmbeddings,
        _acc: &mut ParamSet,
    ) -> Result<()> {
        Ok(())
    }

    fn is_trainable(&self) -> bool {
        self.params().is_some()
    }
}

fn set_active(spec: &mut ContextualizerSpec, n: usize) -> Result<()> {
    let mut next = spec.clone();
    next.active_layers = n;
    next.validate()?;
    *spec = next;
    Ok(())
}

// ───────────────────────────── static table ─────────────────────────────

/// Context-free word vectors. Unknown tokens get the zero vector, which has
/// cosine 0 with everything.
#[derive(Debug, Clone)]
pub struct StaticEmbeddings {
    spec: ContextualizerSpec,
    vocab: Vocabulary,
    /// Row `id` holds the vector for token id `id`; row 0 is the OOV row.
    table: Vec<f64>,
}

impl StaticEmbeddings {
    pub fn from_pairs<I, S>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        let mut table = vec![0.0; dim];
        let mut seen = HashSet::new();
        for (tok, vec) in pairs {
            let tok = tok.into();
            if vec.len() != dim {
                return Err(Error::Shape(format!(
                    "vector for `{tok}` has {} components, expected {dim}",
                    vec.len()
                )));
            }
            if !seen.insert(tok.clone()) {
                return Err(Error::Duplicate { what: "token", id: tok });
            }
            table.extend_from_slice(&vec);
            tokens.push(tok);
        }
        Ok(StaticEmbeddings {
            spec: ContextualizerSpec {
                kind: EncoderKind::Static,
                total_layers: 1,
                active_layers: 1,
                dim,
                model_limit: usize::MAX,
                control_tokens: 0,
            },
            vocab: Vocabulary::from_tokens(tokens),
            table,
        })
    }

    /// Reads `token v1 v2 ... vd` lines (GloVe text layout).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        let mut dim = None;
        for (idx, line) in text.lines().enumerate() {
            let mut cols = line.split_whitespace();
            let Some(tok) = cols.next() else { continue };
            let vec: Vec<f64> = cols
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, idx + 1, "non-numeric vector component"))?;
            match dim {
                None => dim = Some(vec.len()),
                Some(d) if d != vec.len() => {
                    return Err(Error::parse(path, idx + 1, format!("expected {d} components")))
                }
                _ => {}
            }
            pairs.push((tok.to_string(), vec));
        }
        let dim = dim.filter(|d| *d > 0).ok_or_else(|| Error::Empty(format!("{}: no vectors", path.display())))?;
        Self::from_pairs(dim, pairs)
    }

    fn row(&self, id: TokenId) -> &[f64] {
        let d = self.spec.dim;
        let id = id as usize;
        if (id + 1) * d > self.table.len() {
            return &self.table[..d];
        }
        &self.table[id * d..(id + 1) * d]
    }
}

impl Contextualizer for StaticEmbeddings {
    fn spec(&self) -> &ContextualizerSpec {
        &self.spec
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, query: &TokenizedText, segment: &TokenizedText) -> Result<LayeredEmbeddings> {
        let d = self.spec.dim;
        let mut out = LayeredEmbeddings::zeros(1, d, query.len(), segment.len(), None);
        for (i, id) in query.ids.iter().enumerate() {
            out.query_vec_mut(0, i).copy_from_slice(self.row(*id));
        }
        for (j, id) in segment.ids.iter().enumerate() {
            out.doc_vec_mut(0, j).copy_from_slice(self.row(*id));
        }
        Ok(out)
    }

    fn cls_dim(&self) -> Option<usize> {
        None
    }

    fn set_active_layers(&mut self, n: usize) -> Result<()> {
        set_active(&mut self.spec, n)
    }
}

// ───────────────────────────── stub encoder ─────────────────────────────

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Deterministic stand-in for a deep pair encoder.
///
/// Layer 1 is a hash-seeded unit vector per token id. Layer `l + 1` at
/// position `i` is the normalized mean of layer-`l` vectors over the window
/// `[i - l, i + l]`, clipped to the token's own segment (query or document).
/// The classification vector is the normalized mean of top-layer vectors
/// over query and segment, followed by [`STUB_OVERLAP_FEATURES`] copies of
/// `ln(1 + overlap)` where `overlap` counts segment tokens that also occur
/// in the query.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    spec: ContextualizerSpec,
    seed: u64,
    vocab: Vocabulary,
}

impl StubEncoder {
    pub const DEFAULT_DIM: usize = 32;
    pub const DEFAULT_LAYERS: usize = 12;

    pub fn new(total_layers: usize, dim: usize, model_limit: usize, seed: u64) -> Result<Self> {
        let spec = ContextualizerSpec {
            kind: EncoderKind::Stub,
            total_layers,
            active_layers: total_layers,
            dim,
            model_limit,
            control_tokens: 3,
        };
        spec.validate()?;
        Ok(StubEncoder {
            spec,
            seed,
            vocab: Vocabulary::Hashing,
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(Self::DEFAULT_LAYERS, Self::DEFAULT_DIM, 512, seed).expect("default stub config is valid")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn token_vector(&self, id: TokenId, out: &mut [f64]) {
        let mut state = self.seed ^ (u64::from(id)).wrapping_mul(0x2545_f491_4f6c_dd1d);
        for v in out.iter_mut() {
            // Uniform in [-1, 1) from the top 53 bits.
            *v = (splitmix64(&mut state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
        }
        normalize_in_place(out);
    }

    /// Computes `layers` layers for one contiguous run of token ids,
    /// writing `[layer][token][dim]` into `out`.
    fn encode_run(&self, ids: &[TokenId], layers: usize, out: &mut [f64]) {
        let n = ids.len();
        let d = self.spec.dim;
        for (i, id) in ids.iter().enumerate() {
            self.token_vector(*id, &mut out[i * d..(i + 1) * d]);
        }
        for l in 1..layers {
            let (prev, rest) = out.split_at_mut(l * n * d);
            let prev = &prev[(l - 1) * n * d..];
            let cur = &mut rest[..n * d];
            for i in 0..n {
                let lo = i.saturating_sub(l);
                let hi = (i + l).min(n - 1);
                let dst = &mut cur[i * d..(i + 1) * d];
                dst.iter_mut().for_each(|v| *v = 0.0);
                for j in lo..=hi {
                    for (o, v) in dst.iter_mut().zip(&prev[j * d..(j + 1) * d]) {
                        *o += v;
                    }
                }
                let inv = 1.0 / (hi - lo + 1) as f64;
                dst.iter_mut().for_each(|v| *v *= inv);
                normalize_in_place(dst);
            }
        }
    }

    fn encode_ids_inner(&self, query: &[TokenId], segment: &[TokenId], layers: usize) -> LayeredEmbeddings {
        let d = self.spec.dim;
        let mut out = LayeredEmbeddings::zeros(layers, d, query.len(), segment.len(), None);
        self.encode_run(query, layers, &mut out.query_vecs);
        self.encode_run(segment, layers, &mut out.doc_vecs);

        let top = layers - 1;
        let mut pooled = vec![0.0; d];
        for i in 0..query.len() {
            pooled.iter_mut().zip(out.query_vec(top, i)).for_each(|(p, v)| *p += v);
        }
        for j in 0..segment.len() {
            pooled.iter_mut().zip(out.doc_vec(top, j)).for_each(|(p, v)| *p += v);
        }
        let count = (query.len() + segment.len()).max(1) as f64;
        pooled.iter_mut().for_each(|p| *p /= count);
        normalize_in_place(&mut pooled);

        let qset: HashSet<TokenId> = query.iter().copied().collect();
        let overlap = segment.iter().filter(|id| qset.contains(id)).count();
        let feat = (1.0 + overlap as f64).ln();
        pooled.extend(std::iter::repeat_n(feat, STUB_OVERLAP_FEATURES));
        out.cls = Some(pooled);
        out
    }
}

impl Contextualizer for StubEncoder {
    fn spec(&self) -> &ContextualizerSpec {
        &self.spec
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, query: &TokenizedText, segment: &TokenizedText) -> Result<LayeredEmbeddings> {
        self.spec.check_budget(query, segment)?;
        Ok(self.encode_ids_inner(&query.ids, &segment.ids, self.spec.active_layers))
    }

    fn cls_dim(&self) -> Option<usize> {
        Some(self.spec.dim + STUB_OVERLAP_FEATURES)
    }

    fn set_active_layers(&mut self, n: usize) -> Result<()> {
        set_active(&mut self.spec, n)
    }
}

// ─────────────────────────── pretrained adapter ───────────────────────────

/// Boundary contract for an external pretrained encoder: token ids in,
/// layered float arrays plus a classification vector out.
pub trait PretrainedEncoder: Send + Sync {
    /// Contextual layers, excluding any input-embedding layer.
    fn layer_count(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn cls_width(&self) -> usize;
    fn max_tokens(&self) -> usize;
    fn token_vocabulary(&self) -> &Vocabulary;

    /// Whether `encode_ids` emits the input-embedding layer as layer 0.
    fn emits_input_layer(&self) -> bool {
        false
    }

    /// Encodes the pair and returns the first `layers` layers (counting the
    /// input layer when [`emits_input_layer`](Self::emits_input_layer)).
    fn encode_ids(&self, query: &[TokenId], segment: &[TokenId], layers: usize) -> Result<LayeredEmbeddings>;
}

impl PretrainedEncoder for StubEncoder {
    fn layer_count(&self) -> usize {
        self.spec.total_layers
    }

    fn hidden_dim(&self) -> usize {
        self.spec.dim
    }

    fn cls_width(&self) -> usize {
        self.spec.dim + STUB_OVERLAP_FEATURES
    }

    fn max_tokens(&self) -> usize {
        self.spec.model_limit
    }

    fn token_vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode_ids(&self, query: &[TokenId], segment: &[TokenId], layers: usize) -> Result<LayeredEmbeddings> {
        if layers == 0 || layers > self.spec.total_layers {
            return Err(Error::Config(format!("cannot emit {layers} layers")));
        }
        Ok(self.encode_ids_inner(query, segment, layers))
    }
}

/// Adapter over a [`PretrainedEncoder`].
///
/// With fine-tuning enabled, every layer and the classification vector pass
/// through a square projection initialised to the identity. Those projections
/// are the adapter's trainable parameters.
pub struct PretrainedAdapter {
    spec: ContextualizerSpec,
    inner: Box<dyn PretrainedEncoder>,
    include_input_layer: bool,
    tuning: Option<ParamSet>,
}

impl PretrainedAdapter {
    pub fn new(inner: Box<dyn PretrainedEncoder>, fine_tune: bool, include_input_layer: bool) -> Result<Self> {
        let extra = usize::from(include_input_layer && inner.emits_input_layer());
        let total = inner.layer_count() + extra;
        let spec = ContextualizerSpec {
            kind: EncoderKind::PretrainedAdapter,
            total_layers: total,
            active_layers: total,
            dim: inner.hidden_dim(),
            model_limit: inner.max_tokens(),
            control_tokens: 3,
        };
        spec.validate()?;
        let tuning = fine_tune.then(|| {
            let mut ps = ParamSet::new();
            for l in 0..total {
                ps.push(Param::identity(format!("adapter.layer{}.proj", l + 1), inner.hidden_dim()));
            }
            ps.push(Param::identity("adapter.cls.proj", inner.cls_width()));
            ps
        });
        Ok(PretrainedAdapter {
            spec,
            inner,
            include_input_layer,
            tuning,
        })
    }

    fn raw(&self, query: &[TokenId], segment: &[TokenId]) -> Result<LayeredEmbeddings> {
        let active = self.spec.active_layers;
        let emits = self.inner.emits_input_layer();
        let mut emb = if emits && !self.include_input_layer {
            let mut e = self.inner.encode_ids(query, segment, active + 1)?;
            let skip_q = e.query_len * e.dim;
            let skip_d = e.doc_len * e.dim;
            e.query_vecs.drain(..skip_q);
            e.doc_vecs.drain(..skip_d);
            e.layers -= 1;
            e
        } else {
            self.inner.encode_ids(query, segment, active)?
        };
        emb.truncate_layers(active);
        emb.check_shape()?;
        if emb.layers != active || emb.dim != self.spec.dim {
            return Err(Error::Shape(format!(
                "encoder returned {} layers of dim {}, expected {} of dim {}",
                emb.layers, emb.dim, active, self.spec.dim
            )));
        }
        Ok(emb)
    }
}

fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = w[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `acc += g xᵀ`
fn outer_acc(acc: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (r, gr) in g.iter().enumerate() {
        for (a, xv) in acc[r * n..(r + 1) * n].iter_mut().zip(x) {
            *a += gr * xv;
        }
    }
}

impl Contextualizer for PretrainedAdapter {
    fn spec(&self) -> &ContextualizerSpec {
        &self.spec
    }

    fn vocabulary(&self) -> &Vocabulary {
        self.inner.token_vocabulary()
    }

    fn encode(&self, query: &TokenizedText, segment: &TokenizedText) -> Result<LayeredEmbeddings> {
        self.spec.check_budget(query, segment)?;
        let raw = self.raw(&query.ids, &segment.ids)?;
        let Some(tuning) = &self.tuning else {
            return Ok(raw);
        };
        let mut out = raw.zeros_like();
        for l in 0..raw.layers {
            let w = &tuning.at(l).values;
            for i in 0..raw.query_len {
                matvec(w, raw.query_vec(l, i), out.query_vec_mut(l, i));
            }
            for j in 0..raw.doc_len {
                matvec(w, raw.doc_vec(l, j), out.doc_vec_mut(l, j));
            }
        }
        if let (Some(c), Some(o)) = (&raw.cls, out.cls.as_mut()) {
            matvec(&tuning.at(tuning.len() - 1).values, c, o);
        }
        Ok(out)
    }

    fn cls_dim(&self) -> Option<usize> {
        Some(self.inner.cls_width())
    }

    fn set_active_layers(&mut self, n: usize) -> Result<()> {
        set_active(&mut self.spec, n)
    }

    fn params(&self) -> Option<&ParamSet> {
        self.tuning.as_ref()
    }

    fn params_mut(&mut self) -> Option<&mut ParamSet> {
        self.tuning.as_mut()
    }

    fn backward(
        &self,
        query: &TokenizedText,
        segment: &TokenizedText,
        grad: &LayeredEmbeddings,
        acc: &mut ParamSet,
    ) -> Result<()> {
        let Some(tuning) = &self.tuning else {
            return Ok(());
        };
        let raw = self.raw(&query.ids, &segment.ids)?;
        if grad.layers != raw.layers || grad.query_len != raw.query_len || grad.doc_len != raw.doc_len {
            return Err(Error::Shape("gradient does not match encoder output".into()));
        }
        for l in 0..raw.layers {
            let a = &mut acc.at_mut(l).values;
            for i in 0..raw.query_len {
                outer_acc(a, grad.query_vec(l, i), raw.query_vec(l, i));
            }
            for j in 0..raw.doc_len {
                outer_acc(a, grad.doc_vec(l, j), raw.doc_vec(l, j));
            }
        }
        if let (Some(c), Some(g)) = (&raw.cls, &grad.cls) {
            outer_acc(&mut acc.at_mut(tuning.len() - 1).values, g, c);
        }
        Ok(())
    }
}

// ───────────────────────── segment reassembly ─────────────────────────

/// Component-wise mean of per-segment classification vectors.
pub fn aggregate_cls(per_segment: &[&[f64]]) -> Result<Vec<f64>> {
    let first = per_segment
        .first()
        .ok_or_else(|| Error::Empty("cannot aggregate an empty list of classification vectors".into()))?;
    let mut out = vec![0.0; first.len()];
    for v in per_segment {
        if v.len() != out.len() {
            return Err(Error::Shape(format!(
                "classification vectors of width {} and {}",
                out.len(),
                v.len()
            )));
        }
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += x);
    }
    let inv = 1.0 / per_segment.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Concatenates segment encodings along the document axis. Query vectors come
/// from the first segment; the classification vector is the segment mean.
pub fn stitch_segments(per_segment: &[LayeredEmbeddings], plan: &SplitPlan) -> Result<LayeredEmbeddings> {
    if per_segment.len() != plan.segments.len() {
        return Err(Error::Shape(format!(
            "{} segment encodings for a plan of {} segments",
            per_segment.len(),
            plan.segments.len()
        )));
    }
    let first = &per_segment[0];
    let (layers, dim) = (first.layers, first.dim);
    for (seg, (s, e)) in per_segment.iter().zip(&plan.segments) {
        if seg.layers != layers || seg.dim != dim {
            return Err(Error::Shape(format!(
                "segment has {} layers of dim {}, expected {layers} of dim {dim}",
                seg.layers, seg.dim
            )));
        }
        if seg.doc_len != e - s {
            return Err(Error::Shape(format!(
                "segment encodes {} tokens for span [{s}, {e})",
                seg.doc_len
            )));
        }
    }
    if per_segment.len() == 1 {
        return Ok(first.clone());
    }
    let doc_len = plan.doc_len();
    let mut out = LayeredEmbeddings::zeros(layers, dim, first.query_len, doc_len, None);
    out.query_vecs.clone_from(&first.query_vecs);
    for l in 0..layers {
        for (seg, (s, _)) in per_segment.iter().zip(&plan.segments) {
            for j in 0..seg.doc_len {
                out.doc_vec_mut(l, s + j).copy_from_slice(seg.doc_vec(l, j));
            }
        }
    }
    let cls: Vec<&[f64]> = per_segment.iter().filter_map(|s| s.cls.as_deref()).collect();
    out.cls = match cls.len() {
        0 => None,
        n if n == per_segment.len() => Some(aggregate_cls(&cls)?),
        _ => return Err(Error::Shape("classification vector missing for some segments".into())),
    };
    Ok(out)
}

/// Inverse bookkeeping of [`stitch_segments`] for gradients: splits a
/// full-document gradient into per-segment gradients.
pub fn unstitch_grad(grad: &LayeredEmbeddings, plan: &SplitPlan) -> Vec<LayeredEmbeddings> {
    let n = plan.segments.len();
    plan.segments
        .iter()
        .enumerate()
        .map(|(k, (s, e))| {
            let mut g = LayeredEmbeddings::zeros(
                grad.layers,
                grad.dim,
                grad.query_len,
                e - s,
                grad.cls.as_ref().map(Vec::len),
            );
            if k == 0 {
                g.query_vecs.clone_from(&grad.query_vecs);
            }
            for l in 0..grad.layers {
                for j in 0..e - s {
                    g.doc_vec_mut(l, j).copy_from_slice(grad.doc_vec(l, s + j));
                }
            }
            if let (Some(dst), Some(src)) = (g.cls.as_mut(), &grad.cls) {
                dst.iter_mut().zip(src).for_each(|(d, v)| *d = v / n as f64);
            }
            g
        })
        .collect()
}

/// Serializable recipe for rebuilding a contextualizer, stored in
/// checkpoints and training configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub total_layers: usize,
    pub active_layers: usize,
    pub dim: usize,
    pub model_limit: usize,
    pub control_tokens: usize,
    pub seed: u64,
    /// Word-vector file for the static kind.
    pub vectors: Option<String>,
    /// Trainable projections for the adapter kind.
    pub fine_tune: bool,
    pub include_input_layer: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Stub,
            total_layers: StubEncoder::DEFAULT_LAYERS,
            active_layers: StubEncoder::DEFAULT_LAYERS,
            dim: StubEncoder::DEFAULT_DIM,
            model_limit: 512,
            control_tokens: 3,
            seed: 0,
            vectors: None,
            fine_tune: false,
            include_input_layer: false,
        }
    }
}

impl EncoderConfig {
    /// Builds the contextualizer. The adapter kind wraps the built-in stub
    /// as its pretrained encoder; external encoders are attached in code via
    /// [`PretrainedAdapter::new`].
    pub fn build(&self) -> Result<Box<dyn Contextualizer>> {
        match self.kind {
            EncoderKind::Static => {
                let path = self
                    .vectors
                    .as_ref()
                    .ok_or_else(|| Error::Config("static contextualizer needs a vectors file".into()))?;
                Ok(Box::new(StaticEmbeddings::load(path)?))
            }
            EncoderKind::Stub => {
                let mut stub = StubEncoder::new(self.total_layers, self.dim, self.model_limit, self.seed)?;
                stub.spec.control_tokens = self.control_tokens;
                stub.set_active_layers(self.active_layers)?;
                Ok(Box::new(stub))
            }
            EncoderKind::PretrainedAdapter => {
                let stub = StubEncoder::new(self.total_layers, self.dim, self.model_limit, self.seed)?;
                let mut ad = PretrainedAdapter::new(Box::new(stub), self.fine_tune, self.include_input_layer)?;
                ad.spec.control_tokens = self.control_tokens;
                ad.set_active_layers(self.active_layers)?;
                Ok(Box::new(ad))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn l2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    fn stub() -> StubEncoder {
        StubEncoder::with_defaults(7)
    }

    #[test]
    fn static_is_context_free() {
        let s = StaticEmbeddings::from_pairs(2, [("bank", vec![1.0, 0.0]), ("river", vec![0.0, 1.0])]).unwrap();
        let v = s.vocabulary();
        let q = tokenize("bank", v);
        let a = s.encode(&q, &tokenize("river bank", v)).unwrap();
        let b = s.encode(&q, &tokenize("bank deposit", v)).unwrap();
        assert_eq!(a.doc_vec(0, 1), b.doc_vec(0, 0));
        assert!(a.cls.is_none());
        // unknown token -> zero vector
        assert_eq!(b.doc_vec(0, 1), [0.0, 0.0]);
    }

    #[test]
    fn static_load_text_format() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "bank 1 0\nriver 0 1\n").unwrap();
        let s = StaticEmbeddings::load(f.path()).unwrap();
        assert_eq!(s.spec().dim, 2);
        std::fs::write(f.path(), "bank 1 0\nriver 0\n").unwrap();
        assert!(StaticEmbeddings::load(f.path()).is_err());
    }

    #[test]
    fn stub_layer_prefix() {
        let mut e = stub();
        let v = e.vocabulary().clone();
        let q = tokenize("bank", &v);
        let d = tokenize("the river bank was muddy", &v);
        e.set_active_layers(2).unwrap();
        let two = e.encode(&q, &d).unwrap();
        assert_eq!(two.layers, 2);
        e.set_active_layers(12).unwrap();
        let full = e.encode(&q, &d).unwrap();
        assert_eq!(&full.doc_vecs[..two.doc_vecs.len()], &two.doc_vecs[..]);
        assert_eq!(&full.query_vecs[..two.query_vecs.len()], &two.query_vecs[..]);
    }

    #[test]
    fn stub_context_changes_vectors() {
        let e = stub();
        let v = e.vocabulary().clone();
        let q = tokenize("bank", &v);
        let a = e.encode(&q, &tokenize("river bank", &v)).unwrap();
        let b = e.encode(&q, &tokenize("deposit bank", &v)).unwrap();
        assert_eq!(a.doc_vec(0, 1), b.doc_vec(0, 1));
        assert!(l2(a.doc_vec(1, 1), b.doc_vec(1, 1)) > 0.0);
    }

    #[test]
    fn stub_single_token_all_layers_equal() {
        let e = stub();
        let v = e.vocabulary().clone();
        let out = e.encode(&tokenize("x", &v), &tokenize("bank", &v)).unwrap();
        for l in 1..out.layers {
            assert!(l2(out.doc_vec(l, 0), out.doc_vec(0, 0)) < 1e-12);
        }
    }

    #[test]
    fn stub_unit_norm_and_deterministic() {
        let e = stub();
        let v = e.vocabulary().clone();
        let q = tokenize("a b c", &v);
        let d = tokenize("c d e f g a", &v);
        let x = e.encode(&q, &d).unwrap();
        assert_eq!(x, e.encode(&q, &d).unwrap());
        for l in 0..x.layers {
            for j in 0..x.doc_len {
                let n: f64 = x.doc_vec(l, j).iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        let cls = x.cls.unwrap();
        assert_eq!(cls.len(), 36);
        assert!((cls[35] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stub_budget() {
        let e = StubEncoder::new(2, 4, 8, 1).unwrap();
        let v = e.vocabulary().clone();
        let err = e.encode(&tokenize("a b", &v), &tokenize("c d e f", &v)).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { needed: 9, .. }));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_cls(&[&[1.0, 2.0]]).unwrap(), [1.0, 2.0]);
        assert_eq!(aggregate_cls(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(), [0.5, 0.5]);
        let v: &[f64] = &[0.3, 0.7];
        assert_eq!(aggregate_cls(&[v; 4]).unwrap(), [0.3, 0.7]);
        assert!(aggregate_cls(&[]).is_err());
        assert!(aggregate_cls(&[&[1.0], &[1.0, 2.0]]).is_err());
    }

    #[test]
    fn stitch_lengths() {
        let e = stub();
        let v = e.vocabulary().clone();
        let q = tokenize("w", &v);
        let doc = tokenize(&"x ".repeat(800), &v);
        let plan = crate::text::plan_splits(800, 8, 512, 3).unwrap();
        let segs: Vec<_> = plan
            .segments
            .iter()
            .map(|(s, t)| e.encode(&q, &doc.slice(*s, *t)).unwrap())
            .collect();
        let st = stitch_segments(&segs, &plan).unwrap();
        assert_eq!(st.doc_len, 800);
        assert!(stitch_segments(&segs[..1], &plan).is_err());

        let one = crate::text::plan_splits(5, 1, 512, 3).unwrap();
        let seg = e.encode(&q, &doc.slice(0, 5)).unwrap();
        assert_eq!(stitch_segments(std::slice::from_ref(&seg), &one).unwrap(), seg);
    }

    #[test]
    fn stitch_rejects_mismatched_layers() {
        let e = stub();
        let v = e.vocabulary().clone();
        let q = tokenize("w", &v);
        let plan = crate::text::plan_splits(4, 1, 6, 3).unwrap();
        assert_eq!(plan.segments.len(), 2);
        let a = e.encode(&q, &tokenize("a b", &v)).unwrap();
        let mut b = e.encode(&q, &tokenize("c d", &v)).unwrap();
        b.truncate_layers(3);
        assert!(stitch_segments(&[a, b], &plan).is_err());
    }

    #[test]
    fn adapter_identity_matches_inner() {
        let ad = PretrainedAdapter::new(Box::new(stub()), true, false).unwrap();
        let v = ad.vocabulary().clone();
        let q = tokenize("a b", &v);
        let d = tokenize("b c d", &v);
        let x = ad.encode(&q, &d).unwrap();
        let y = stub().encode(&q, &d).unwrap();
        assert!(l2(&x.doc_vecs, &y.doc_vecs) < 1e-12);
        assert_eq!(ad.params().unwrap().len(), 13);
    }
}
