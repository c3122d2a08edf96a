//! Kernel pooling over each channel of the similarity tensor.
//!
//! For channel `l`, kernel `k` and query term `i`:
//! `K[l,k,i] = Σ_j exp(-(S[l,i,j] - μ_k)² / (2σ_k²))`, and the pooled
//! feature is `φ[l,k] = Σ_i ln(max(K[l,k,i], ε))`. The score is an affine
//! map of `φ` (flattened channel-major), followed by the classification
//! vector in the joint variant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dot, HeadConfig, HeadInput, HeadOutput, InputGrads};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnrmConfig {
    pub kernel_mus: Vec<f64>,
    pub kernel_sigmas: Vec<f64>,
    pub epsilon: f64,
}

impl Default for KnrmConfig {
    fn default() -> Self {
        let kernel_mus = vec![1.0, 0.9, 0.7, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5, -0.7, -0.9];
        let kernel_sigmas = kernel_mus.iter().map(|m| if *m == 1.0 { 0.001 } else { 0.1 }).collect();
        KnrmConfig {
            kernel_mus,
            kernel_sigmas,
            epsilon: 1e-10,
        }
    }
}

impl KnrmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_mus.is_empty() || self.kernel_mus.len() != self.kernel_sigmas.len() {
            return Err(Error::Config("knrm needs equally many kernel means and widths (≥ 1)".into()));
        }
        if self.kernel_sigmas.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config("knrm kernel widths must be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("knrm epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn kernels(&self) -> usize {
        self.kernel_mus.len()
    }
}

const W: usize = 0;
const B: usize = 1;

pub(super) fn init(cfg: &KnrmConfig, head: &HeadConfig, rng: &mut impl Rng) -> ParamSet {
    let n = head.channels * cfg.kernels() + head.joint_cls_dim();
    let mut ps = ParamSet::new();
    ps.push(Param::uniform("dense.weight", &[n], 0.01, rng));
    ps.push(Param::zeros("dense.bias", &[1]));
    ps
}

/// Soft match count of one similarity row under one kernel.
pub fn kernel_count(row: &[f64], mu: f64, sigma: f64) -> f64 {
    let denom = 2.0 * sigma * sigma;
    row.iter().map(|s| (-(s - mu) * (s - mu) / denom).exp()).sum()
}

/// `K[l][k][i]`, flattened.
fn kernel_counts(cfg: &KnrmConfig, input: &HeadInput<'_>) -> Vec<f64> {
    let sim = input.sim;
    let nk = cfg.kernels();
    let mut out = vec![0.0; sim.layers * nk * sim.query_len];
    for l in 0..sim.layers {
        for i in 0..sim.query_len {
            let row = sim.row(l, i);
            for k in 0..nk {
                out[(l * nk + k) * sim.query_len + i] =
                    kernel_count(row, cfg.kernel_mus[k], cfg.kernel_sigmas[k]);
            }
        }
    }
    out
}

pub(super) fn forward(cfg: &KnrmConfig, head: &HeadConfig, params: &ParamSet, input: &HeadInput<'_>) -> HeadOutput {
    let nq = input.sim.query_len;
    let nk = cfg.kernels();
    let counts = kernel_counts(cfg, input);
    let w = &params.at(W).values;
    let mut signals = vec![0.0; nq];
    for lk in 0..input.sim.layers * nk {
        for (i, s) in signals.iter_mut().enumerate() {
            *s += w[lk] * counts[lk * nq + i].max(cfg.epsilon).ln();
        }
    }
    let mut score = signals.iter().sum::<f64>() + params.at(B).values[0];
    if head.joint {
        let off = input.sim.layers * nk;
        score += dot(&w[off..], input.cls.unwrap_or_default());
    }
    HeadOutput {
        score,
        per_query_term_signals: signals,
    }
}

pub(super) fn backward(
    cfg: &KnrmConfig,
    head: &HeadConfig,
    params: &ParamSet,
    input: &HeadInput<'_>,
    dscore: f64,
    grads: &mut ParamSet,
) -> InputGrads {
    let sim = input.sim;
    let nq = sim.query_len;
    let nk = cfg.kernels();
    let counts = kernel_counts(cfg, input);
    let w = &params.at(W).values;
    let mut out = InputGrads::zeros(input);

    grads.at_mut(B).values[0] += dscore;
    for l in 0..sim.layers {
        for k in 0..nk {
            let lk = l * nk + k;
            let (mu, sigma) = (cfg.kernel_mus[k], cfg.kernel_sigmas[k]);
            let mut phi = 0.0;
            for i in 0..nq {
                let kc = counts[lk * nq + i];
                phi += kc.max(cfg.epsilon).ln();
                if kc <= cfg.epsilon {
                    continue;
                }
                let dk = dscore * w[lk] / kc;
                let base = sim.index(l, i, 0);
                for (j, s) in sim.row(l, i).iter().enumerate() {
                    let e = (-(s - mu) * (s - mu) / (2.0 * sigma * sigma)).exp();
                    out.sim.values[base + j] += dk * e * (-(s - mu) / (sigma * sigma));
                }
            }
            grads.at_mut(W).values[lk] += dscore * phi;
        }
    }
    if head.joint {
        let off = sim.layers * nk;
        let cls = input.cls.unwrap_or_default();
        let gw = &mut grads.at_mut(W).values[off..];
        gw.iter_mut().zip(cls).for_each(|(g, c)| *g += dscore * c);
        if let Some(dc) = out.cls.as_mut() {
            dc.iter_mut().zip(&w[off..]).for_each(|(g, wv)| *g += dscore * wv);
        }
    }
    out
}
