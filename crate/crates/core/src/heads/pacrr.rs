//! Position-aware n-gram convolutions with k-max pooling.
//!
//! For every n-gram size `n`, `filters_per_size` learned `n × n` filters
//! convolve the multi-channel similarity tensor (stride 1, "same" output
//! size, borders padded with the −1 sentinel). The strongest filter is kept
//! per cell, then each query term keeps its `k_max` largest values along the
//! document axis. Query rows are padded or cut to `query_len` so the final
//! dense combination has a fixed width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dot, HeadConfig, HeadInput, HeadOutput, InputGrads};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};
use crate::simtensor::PADDING_SENTINEL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacrrConfig {
    pub ngram_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub k_max: usize,
    /// Fixed number of query rows seen by the dense combination.
    pub query_len: usize,
    /// Append the softmax-normalized IDF of each query term to its features.
    pub use_idf: bool,
}

impl Default for PacrrConfig {
    fn default() -> Self {
        PacrrConfig {
            ngram_sizes: vec![1, 2, 3],
            filters_per_size: 32,
            k_max: 30,
            query_len: 16,
            use_idf: false,
        }
    }
}

impl PacrrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_sizes.is_empty() || self.ngram_sizes.contains(&0) {
            return Err(Error::Config("pacrr n-gram sizes must be ≥ 1".into()));
        }
        if self.filters_per_size == 0 || self.k_max == 0 || self.query_len == 0 {
            return Err(Error::Config("pacrr filters, k_max and query_len must be ≥ 1".into()));
        }
        Ok(())
    }

    fn per_term_width(&self) -> usize {
        self.ngram_sizes.len() * self.k_max
    }

    fn feature_width(&self) -> usize {
        self.query_len * self.per_term_width() + if self.use_idf { self.query_len } else { 0 }
    }
}

pub(super) fn init(cfg: &PacrrConfig, head: &HeadConfig, rng: &mut impl Rng) -> ParamSet {
    let mut ps = ParamSet::new();
    for n in &cfg.ngram_sizes {
        let fan_in = (head.channels * n * n) as f64;
        ps.push(Param::uniform(
            format!("conv{n}.weight"),
            &[cfg.filters_per_size, head.channels, *n, *n],
            1.0 / fan_in.sqrt(),
            rng,
        ));
        ps.push(Param::zeros(format!("conv{n}.bias"), &[cfg.filters_per_size]));
    }
    let width = cfg.feature_width() + head.joint_cls_dim();
    ps.push(Param::uniform("dense.weight", &[width], 0.01, rng));
    ps.push(Param::zeros("dense.bias", &[1]));
    ps
}

/// Channels × rows × cols input padded for an `n × n` "same" convolution.
struct PaddedInput {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    top: usize,
    left: usize,
}

impl PaddedInput {
    /// Pads the tensor's first `rows` query rows (extra rows are sentinel)
    /// and all document columns.
    fn new(input: &HeadInput<'_>, rows: usize, n: usize) -> Self {
        let sim = input.sim;
        let before = (n - 1) / 2;
        let prows = rows + n - 1;
        let pcols = sim.doc_len + n - 1;
        let mut data = vec![PADDING_SENTINEL; sim.layers * prows * pcols];
        for c in 0..sim.layers {
            for i in 0..rows.min(sim.query_len) {
                let o = (c * prows + i + before) * pcols + before;
                data[o..o + sim.doc_len].copy_from_slice(sim.row(c, i));
            }
        }
        PaddedInput {
            rows: prows,
            cols: pcols,
            data,
            top: before,
            left: before,
        }
    }

    fn row(&self, c: usize, r: usize) -> &[f64] {
        let o = (c * self.rows + r) * self.cols;
        &self.data[o..o + self.cols]
    }
}

/// Max-over-filters response map and the winning filter per cell.
pub struct NgramResponse {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub argmax: Vec<usize>,
}

/// Convolves with `filters` (`[F][C][n][n]`) plus `bias` and keeps the
/// strongest filter per output cell.
fn ngram_response(padded: &PaddedInput, channels: usize, n: usize, filters: &[f64], bias: &[f64], rows: usize, cols: usize) -> NgramResponse {
    let nf = bias.len();
    let mut values = vec![f64::NEG_INFINITY; rows * cols];
    let mut argmax = vec![0; rows * cols];
    let mut acc = vec![0.0; cols];
    for f in 0..nf {
        for i in 0..rows {
            acc.iter_mut().for_each(|v| *v = bias[f]);
            for c in 0..channels {
                for a in 0..n {
                    let src = padded.row(c, i + a);
                    for b in 0..n {
                        let w = filters[((f * channels + c) * n + a) * n + b];
                        for (o, x) in acc.iter_mut().zip(&src[b..b + cols]) {
                            *o += w * x;
                        }
                    }
                }
            }
            for (j, v) in acc.iter().enumerate() {
                let k = i * cols + j;
                if *v > values[k] {
                    values[k] = *v;
                    argmax[k] = f;
                }
            }
        }
    }
    NgramResponse {
        rows,
        cols,
        values,
        argmax,
    }
}

/// The `k` largest values of `row` in non-increasing order, with their
/// source positions; missing slots are `(−1, None)`. Ties keep the earlier
/// position first.
pub fn kmax_pool(row: &[f64], k: usize) -> Vec<(f64, Option<usize>)> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|a, b| row[*b].total_cmp(&row[*a]).then(a.cmp(b)));
    let mut out: Vec<(f64, Option<usize>)> = idx.into_iter().take(k).map(|j| (row[j], Some(j))).collect();
    out.resize(k, (PADDING_SENTINEL, None));
    out
}

struct Forward {
    features: Vec<f64>,
    /// Per n-gram size: response map and pooled source columns `[row][k]`.
    responses: Vec<(NgramResponse, Vec<Option<usize>>)>,
}

fn run(cfg: &PacrrConfig, head: &HeadConfig, params: &ParamSet, input: &HeadInput<'_>) -> Result<Forward> {
    let rows = cfg.query_len;
    let cols = input.sim.doc_len;
    let mut features = vec![0.0; cfg.feature_width()];
    let mut responses = Vec::with_capacity(cfg.ngram_sizes.len());
    for (s, n) in cfg.ngram_sizes.iter().enumerate() {
        let padded = PaddedInput::new(input, rows, *n);
        let resp = ngram_response(
            &padded,
            head.channels,
            *n,
            &params.at(2 * s).values,
            &params.at(2 * s + 1).values,
            rows,
            cols,
        );
        let mut sources = vec![None; rows * cfg.k_max];
        for i in 0..rows {
            let pooled = kmax_pool(&resp.values[i * cols..(i + 1) * cols], cfg.k_max);
            for (t, (v, src)) in pooled.into_iter().enumerate() {
                features[i * cfg.per_term_width() + s * cfg.k_max + t] = v;
                sources[i * cfg.k_max + t] = src;
            }
        }
        responses.push((resp, sources));
    }
    if cfg.use_idf {
        let idf = input
            .query_idf
            .ok_or_else(|| Error::Config("pacrr with use_idf needs query idf values".into()))?;
        let shown = &idf[..idf.len().min(rows)];
        let max = shown.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = shown.iter().map(|v| (v - max).exp()).sum();
        let base = rows * cfg.per_term_width();
        for (i, v) in shown.iter().enumerate() {
            features[base + i] = (v - max).exp() / z;
        }
    }
    Ok(Forward { features, responses })
}

pub(super) fn forward(cfg: &PacrrConfig, head: &HeadConfig, params: &ParamSet, input: &HeadInput<'_>) -> Result<HeadOutput> {
    let fw = run(cfg, head, params, input)?;
    let w = &params.at(params.len() - 2).values;
    let b = params.at(params.len() - 1).values[0];
    let per = cfg.per_term_width();
    let mut signals: Vec<f64> = (0..cfg.query_len)
        .map(|i| dot(&w[i * per..(i + 1) * per], &fw.features[i * per..(i + 1) * per]))
        .collect();
    if cfg.use_idf {
        let base = cfg.query_len * per;
        for (i, s) in signals.iter_mut().enumerate() {
            *s += w[base + i] * fw.features[base + i];
        }
    }
    let mut score = signals.iter().sum::<f64>() + b;
    if head.joint {
        score += dot(&w[cfg.feature_width()..], input.cls.unwrap_or_default());
    }
    signals.truncate(input.sim.query_len.min(cfg.query_len));
    Ok(HeadOutput {
        score,
        per_query_term_signals: signals,
    })
}

pub(super) fn backward(
    cfg: &PacrrConfig,
    head: &HeadConfig,
    params: &ParamSet,
    input: &HeadInput<'_>,
    dscore: f64,
    grads: &mut ParamSet,
) -> Result<InputGrads> {
    let fw = run(cfg, head, params, input)?;
    let sim = input.sim;
    let mut out = InputGrads::zeros(input);
    let dense_w = params.len() - 2;
    let w = &params.at(dense_w).values;
    let width = cfg.feature_width();

    grads.at_mut(dense_w + 1).values[0] += dscore;
    {
        let gw = &mut grads.at_mut(dense_w).values;
        for (g, f) in gw.iter_mut().zip(&fw.features) {
            *g += dscore * f;
        }
        if head.joint {
            let cls = input.cls.unwrap_or_default();
            gw[width..].iter_mut().zip(cls).for_each(|(g, c)| *g += dscore * c);
        }
    }
    if head.joint {
        if let Some(dc) = out.cls.as_mut() {
            dc.iter_mut().zip(&w[width..]).for_each(|(g, wv)| *g += dscore * wv);
        }
    }

    let rows = cfg.query_len;
    let cols = sim.doc_len;
    let channels = head.channels;
    for (s, n) in cfg.ngram_sizes.iter().copied().enumerate() {
        let (resp, sources) = &fw.responses[s];
        // Upstream gradient on each response cell, routed to the winning filter.
        let mut dresp = vec![0.0; rows * cols];
        for i in 0..rows {
            for t in 0..cfg.k_max {
                if let Some(j) = sources[i * cfg.k_max + t] {
                    dresp[i * cols + j] += dscore * w[i * cfg.per_term_width() + s * cfg.k_max + t];
                }
            }
        }
        let padded = PaddedInput::new(input, rows, n);
        let filters = &params.at(2 * s).values;
        let (top, left) = (padded.top, padded.left);
        let mut dfilters = vec![0.0; filters.len()];
        let mut dbias = vec![0.0; cfg.filters_per_size];
        for i in 0..rows {
            for j in 0..cols {
                let g = dresp[i * cols + j];
                if g == 0.0 {
                    continue;
                }
                let f = resp.argmax[i * cols + j];
                dbias[f] += g;
                for c in 0..channels {
                    for a in 0..n {
                        let src = padded.row(c, i + a);
                        // Padded row i+a maps to query row i+a-top.
                        let qi = (i + a).checked_sub(top).filter(|q| *q < sim.query_len.min(rows));
                        for b in 0..n {
                            let widx = ((f * channels + c) * n + a) * n + b;
                            dfilters[widx] += g * src[j + b];
                            if let Some(qi) = qi {
                                if let Some(dj) = (j + b).checked_sub(left).filter(|d| *d < cols) {
                                    let k = sim.index(c, qi, dj);
                                    out.sim.values[k] += g * filters[widx];
                                }
                            }
                        }
                    }
                }
            }
        }
        grads
            .at_mut(2 * s)
            .values
            .iter_mut()
            .zip(&dfilters)
            .for_each(|(a, d)| *a += d);
        grads
            .at_mut(2 * s + 1)
            .values
            .iter_mut()
            .zip(&dbias)
            .for_each(|(a, d)| *a += d);
    }
    Ok(out)
}
