//! Layered query × document cosine similarity tensors.

use std::fmt::Write as _;

use crate::contextualizer::LayeredEmbeddings;
use crate::error::{Error, Result};

/// Value written into cells that do not correspond to a real token pair.
/// It lands in the lowest bin / kernel of every head and never reads as a match.
pub const PADDING_SENTINEL: f64 = -1.0;

const ZERO_NORM: f64 = 1e-12;

/// `values[l][i][j]` = cosine between query token `i` and document token `j`
/// at layer `l` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTensor {
    pub layers: usize,
    pub query_len: usize,
    pub doc_len: usize,
    pub values: Vec<f64>,
}

impl SimilarityTensor {
    pub fn filled(layers: usize, query_len: usize, doc_len: usize, value: f64) -> Self {
        SimilarityTensor {
            layers,
            query_len,
            doc_len,
            values: vec![value; layers * query_len * doc_len],
        }
    }

    pub fn from_vec(layers: usize, query_len: usize, doc_len: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != layers * query_len * doc_len {
            return Err(Error::Shape(format!(
                "{} values for a {layers}x{query_len}x{doc_len} tensor",
                values.len()
            )));
        }
        Ok(SimilarityTensor {
            layers,
            query_len,
            doc_len,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.layers, self.query_len, self.doc_len)
    }

    #[inline]
    pub fn index(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.query_len + i) * self.doc_len + j
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize, j: usize) -> f64 {
        self.values[self.index(l, i, j)]
    }

    /// The similarity row of query token `i` at layer `l`.
    pub fn row(&self, l: usize, i: usize) -> &[f64] {
        let o = self.index(l, i, 0);
        &self.values[o..o + self.doc_len]
    }

    /// Copy of a single layer as a one-layer tensor.
    pub fn layer(&self, l: usize) -> SimilarityTensor {
        let n = self.query_len * self.doc_len;
        SimilarityTensor {
            layers: 1,
            query_len: self.query_len,
            doc_len: self.doc_len,
            values: self.values[l * n..(l + 1) * n].to_vec(),
        }
    }

    /// Pads both token axes up to the given lengths with [`PADDING_SENTINEL`].
    /// Batched callers use this to give every pair the same shape.
    pub fn padded(&self, query_len: usize, doc_len: usize) -> Result<SimilarityTensor> {
        if query_len < self.query_len || doc_len < self.doc_len {
            return Err(Error::Shape("padding target smaller than tensor".into()));
        }
        let mut out = SimilarityTensor::filled(self.layers, query_len, doc_len, PADDING_SENTINEL);
        for l in 0..self.layers {
            for i in 0..self.query_len {
                let o = out.index(l, i, 0);
                out.values[o..o + self.doc_len].copy_from_slice(self.row(l, i));
            }
        }
        Ok(out)
    }

    /// CSV grid of one layer (1-based `layer`), document tokens across,
    /// query tokens down.
    pub fn to_csv(&self, layer: usize, query_tokens: &[String], doc_tokens: &[String]) -> Result<String> {
        if layer == 0 || layer > self.layers {
            return Err(Error::Config(format!("layer {layer} outside 1..={}", self.layers)));
        }
        if query_tokens.len() != self.query_len || doc_tokens.len() != self.doc_len {
            return Err(Error::Shape("token labels do not match tensor shape".into()));
        }
        let mut out = String::from("query\\doc");
        for t in doc_tokens {
            out.push(',');
            out.push_str(&csv_field(t));
        }
        out.push('\n');
        for (i, q) in query_tokens.iter().enumerate() {
            out.push_str(&csv_field(q));
            for v in self.row(layer - 1, i) {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; 0 when either vector has (near) zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of vectors with dims {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok(0.0);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Builds the `L × |Q| × |D|` cosine tensor from layered embeddings.
pub fn build_tensor(emb: &LayeredEmbeddings) -> SimilarityTensor {
    let (nl, nq, nd) = (emb.layers, emb.query_len, emb.doc_len);
    let mut out = SimilarityTensor::filled(nl, nq, nd, 0.0);
    let mut doc_norms = vec![0.0; nd];
    for l in 0..nl {
        for (j, n) in doc_norms.iter_mut().enumerate() {
            *n = norm(emb.doc_vec(l, j));
        }
        for i in 0..nq {
            let q = emb.query_vec(l, i);
            let nqv = norm(q);
            let base = out.index(l, i, 0);
            if nqv < ZERO_NORM {
                continue;
            }
            for j in 0..nd {
                let nd_j = doc_norms[j];
                if nd_j >= ZERO_NORM {
                    out.values[base + j] = dot(q, emb.doc_vec(l, j)) / (nqv * nd_j);
                }
            }
        }
    }
    out
}

/// Gradient of `Σ grad[l,i,j] · S[l,i,j]` with respect to the embeddings.
/// The classification part of the result is left at zero.
pub fn tensor_backward(emb: &LayeredEmbeddings, grad: &SimilarityTensor) -> Result<LayeredEmbeddings> {
    if grad.shape() != (emb.layers, emb.query_len, emb.doc_len) {
        return Err(Error::Shape("tensor gradient does not match embeddings".into()));
    }
    let mut out = emb.zeros_like();
    let dim = emb.dim;
    let mut dq = vec![0.0; dim];
    for l in 0..emb.layers {
        for i in 0..emb.query_len {
            let q = emb.query_vec(l, i);
            let nqv = norm(q);
            if nqv < ZERO_NORM {
                continue;
            }
            dq.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..emb.doc_len {
                let g = grad.get(l, i, j);
                if g == 0.0 {
                    continue;
                }
                let d = emb.doc_vec(l, j);
                let ndv = norm(d);
                if ndv < ZERO_NORM {
                    continue;
                }
                let c = dot(q, d) / (nqv * ndv);
                let inv = 1.0 / (nqv * ndv);
                // dc/dq = d/(|q||d|) - c q/|q|², symmetric for d.
                for k in 0..dim {
                    dq[k] += g * (d[k] * inv - c * q[k] / (nqv * nqv));
                }
                let dd = out.doc_vec_mut(l, j);
                for k in 0..dim {
                    dd[k] += g * (q[k] * inv - c * d[k] / (ndv * ndv));
                }
            }
            out.query_vec_mut(l, i)
                .iter_mut()
                .zip(&dq)
                .for_each(|(o, v)| *o += v);
        }
    }
    Ok(out)
}
