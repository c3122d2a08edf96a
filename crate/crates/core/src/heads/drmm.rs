//! Matching histograms with a per-term feed-forward network and term gating.
//!
//! Each (channel, query term) row of the tensor is counted into fixed bins
//! plus an exact-match bin, log-transformed as `ln(1 + count)`, and the
//! channel histograms of a term are concatenated into one feature vector.
//! A shared feed-forward network scores each term; the document score is
//! the gate-weighted sum of term scores, with gates from a softmax over a
//! learned projection of each query term's layer-averaged vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dot, HeadConfig, HeadInput, HeadOutput, InputGrads};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};

/// Similarities at or above `1 - EXACT_TOLERANCE` count as exact matches.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrmmConfig {
    /// Strictly increasing, from −1 to 1. Values in `[e_b, e_{b+1})` fall in
    /// bin `b`; an extra final bin holds exact matches.
    pub bin_edges: Vec<f64>,
    /// Layer widths of the per-term network; the last must be 1.
    pub hidden_sizes: Vec<usize>,
}

impl Default for DrmmConfig {
    fn default() -> Self {
        DrmmConfig {
            bin_edges: (0..=10).map(|k| -1.0 + 0.2 * k as f64).collect(),
            hidden_sizes: vec![5, 1],
        }
    }
}

impl DrmmConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.bin_edges;
        if e.len() < 2 || e.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("drmm bin edges must be strictly increasing".into()));
        }
        if (e[0] + 1.0).abs() > 1e-12 || (e[e.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::Config("drmm bin edges must span [-1, 1]".into()));
        }
        if self.hidden_sizes.last() != Some(&1) || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("drmm hidden sizes must be positive and end in 1".into()));
        }
        Ok(())
    }

    /// Regular bins plus the exact-match bin.
    pub fn bins(&self) -> usize {
        self.bin_edges.len()
    }

    pub fn bin_of(&self, s: f64) -> usize {
        if s >= 1.0 - EXACT_TOLERANCE {
            return self.bins() - 1;
        }
        // Last index whose edge is <= s, clamped to the regular bins.
        let regular = self.bins() - 1;
        let pos = self.bin_edges.partition_point(|e| *e <= s);
        pos.saturating_sub(1).min(regular - 1)
    }
}

/// `h[l][i][b]` raw counts for one tensor.
pub fn histograms(cfg: &DrmmConfig, input: &HeadInput<'_>) -> Vec<f64> {
    let sim = input.sim;
    let nb = cfg.bins();
    let mut h = vec![0.0; sim.layers * sim.query_len * nb];
    for l in 0..sim.layers {
        for i in 0..sim.query_len {
            let base = (l * sim.query_len + i) * nb;
            for s in sim.row(l, i) {
                h[base + cfg.bin_of(*s)] += 1.0;
            }
        }
    }
    h
}

pub(super) fn init(cfg: &DrmmConfig, head: &HeadConfig, rng: &mut impl Rng) -> ParamSet {
    let mut ps = ParamSet::new();
    let mut fan_in = head.channels * cfg.bins() + head.joint_cls_dim();
    for (k, width) in cfg.hidden_sizes.iter().enumerate() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        ps.push(Param::uniform(format!("ffn.{k}.weight"), &[*width, fan_in], scale, rng));
        ps.push(Param::zeros(format!("ffn.{k}.bias"), &[*width]));
        fan_in = *width;
    }
    ps.push(Param::uniform("gate.weight", &[head.embed_dim], 0.01, rng));
    ps
}

/// Per-term input features `[query_len][width]`.
fn term_features(cfg: &DrmmConfig, head: &HeadConfig, input: &HeadInput<'_>) -> (Vec<f64>, usize) {
    let sim = input.sim;
    let nb = cfg.bins();
    let h = histograms(cfg, input);
    let cls = if head.joint { input.cls.unwrap_or_default() } else { &[] };
    let width = sim.layers * nb + cls.len();
    let mut x = vec![0.0; sim.query_len * width];
    for i in 0..sim.query_len {
        let row = &mut x[i * width..(i + 1) * width];
        for l in 0..sim.layers {
            for b in 0..nb {
                row[l * nb + b] = h[(l * sim.query_len + i) * nb + b].ln_1p();
            }
        }
        row[sim.layers * nb..].copy_from_slice(cls);
    }
    (x, width)
}

/// Activations of every network layer for one term; the input is element 0.
fn ffn_forward(cfg: &DrmmConfig, params: &ParamSet, x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    let last = cfg.hidden_sizes.len() - 1;
    for (k, width) in cfg.hidden_sizes.iter().enumerate() {
        let w = &params.at(2 * k).values;
        let b = &params.at(2 * k + 1).values;
        let prev = acts.last().expect("input activation");
        let n = prev.len();
        let out: Vec<f64> = (0..*width)
            .map(|r| {
                let z = dot(&w[r * n..(r + 1) * n], prev) + b[r];
                if k == last {
                    z
                } else {
                    z.tanh()
                }
            })
            .collect();
        acts.push(out);
    }
    acts
}

fn gates(params: &ParamSet, input: &HeadInput<'_>, nq: usize) -> Result<Vec<f64>> {
    if nq == 0 {
        return Ok(Vec::new());
    }
    let wg = &params.at(params.len() - 1).values;
    let feats = input
        .query_features
        .ok_or_else(|| Error::Config("drmm needs query-term features for its gate".into()))?;
    if feats.len() != nq * wg.len() {
        return Err(Error::Shape(format!(
            "query features of length {} for {nq} terms of width {}",
            feats.len(),
            wg.len()
        )));
    }
    let logits: Vec<f64> = feats.chunks(wg.len()).map(|e| dot(wg, e)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

pub(super) fn forward(cfg: &DrmmConfig, head: &HeadConfig, params: &ParamSet, input: &HeadInput<'_>) -> Result<HeadOutput> {
    let nq = input.sim.query_len;
    let g = gates(params, input, nq)?;
    let (x, width) = term_features(cfg, head, input);
    let signals: Vec<f64> = (0..nq)
        .map(|i| {
            let acts = ffn_forward(cfg, params, &x[i * width..(i + 1) * width]);
            g[i] * acts.last().expect("output")[0]
        })
        .collect();
    Ok(HeadOutput {
        score: signals.iter().sum(),
        per_query_term_signals: signals,
    })
}

pub(super) fn backward(
    cfg: &DrmmConfig,
    head: &HeadConfig,
    params: &ParamSet,
    input: &HeadInput<'_>,
    dscore: f64,
    grads: &mut ParamSet,
) -> Result<InputGrads> {
    let nq = input.sim.query_len;
    let mut out = InputGrads::zeros(input);
    if nq == 0 {
        return Ok(out);
    }
    let g = gates(params, input, nq)?;
    let (x, width) = term_features(cfg, head, input);
    let last = cfg.hidden_sizes.len() - 1;
    let cls_off = width - if head.joint { head.cls_dim } else { 0 };

    let mut term_scores = vec![0.0; nq];
    for i in 0..nq {
        let acts = ffn_forward(cfg, params, &x[i * width..(i + 1) * width]);
        term_scores[i] = acts[acts.len() - 1][0];

        // Back through the network with upstream gradient g_i · dscore.
        let mut delta = vec![dscore * g[i]];
        for k in (0..=last).rev() {
            let prev = &acts[k];
            let n = prev.len();
            if k != last {
                // tanh' = 1 - a²
                for (d, a) in delta.iter_mut().zip(&acts[k + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let w = params.at(2 * k).values.clone();
            {
                let gw = &mut grads.at_mut(2 * k).values;
                for (r, d) in delta.iter().enumerate() {
                    for (gv, p) in gw[r * n..(r + 1) * n].iter_mut().zip(prev) {
                        *gv += d * p;
                    }
                }
            }
            grads
                .at_mut(2 * k + 1)
                .values
                .iter_mut()
                .zip(&delta)
                .for_each(|(gb, d)| *gb += d);
            let mut dprev = vec![0.0; n];
            for (r, d) in delta.iter().enumerate() {
                for (dp, wv) in dprev.iter_mut().zip(&w[r * n..(r + 1) * n]) {
                    *dp += d * wv;
                }
            }
            delta = dprev;
        }
        if let Some(dc) = out.cls.as_mut() {
            if head.joint {
                dc.iter_mut().zip(&delta[cls_off..]).for_each(|(a, d)| *a += d);
            }
        }
    }

    // Gate: score = Σ g_i t_i, g = softmax(a), a_i = w_g · e_i.
    let dg: Vec<f64> = term_scores.iter().map(|t| dscore * t).collect();
    let mean: f64 = g.iter().zip(&dg).map(|(a, b)| a * b).sum();
    let wg_idx = params.len() - 1;
    let wg = params.at(wg_idx).values.clone();
    let ed = wg.len();
    let feats = input.query_features.unwrap_or_default();
    for i in 0..nq {
        let da = g[i] * (dg[i] - mean);
        let e = &feats[i * ed..(i + 1) * ed];
        grads
            .at_mut(wg_idx)
            .values
            .iter_mut()
            .zip(e)
            .for_each(|(gw, ev)| *gw += da * ev);
        if let Some(df) = out.query_features.as_mut() {
            df[i * ed..(i + 1) * ed]
                .iter_mut()
                .zip(&wg)
                .for_each(|(d, w)| *d += da * w);
        }
    }
    Ok(out)
}
