//! Trainable scoring heads over similarity tensors.
//!
//! Each head maps a [`SimilarityTensor`] (plus, for joint variants, the
//! encoder's classification vector) to an unconstrained real score. The
//! layer axis of the tensor is treated as input channels, so every head
//! accepts a single-layer tensor from static vectors and a many-layer tensor
//! from a contextual encoder through the same code path.
//!
//! Joint ("CEDR") wiring:
//!
//! * KNRM and PACRR append the classification vector once, to the features
//!   of their final dense combination.
//! * DRMM appends it to every query term's histogram feature, before the
//!   per-term feed-forward network.
//!
//! Every head implements an exact reverse pass, giving gradients for its
//! parameters and for its inputs (tensor cells, classification vector and
//! query-term features).

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::simtensor::SimilarityTensor;

pub mod drmm;
pub mod knrm;
pub mod pacrr;
pub mod vanilla;

pub use drmm::DrmmConfig;
pub use knrm::KnrmConfig;
pub use pacrr::PacrrConfig;

/// Everything a head may consume for one (query, document) pair.
#[derive(Debug, Clone, Copy)]
pub struct HeadInput<'a> {
    pub sim: &'a SimilarityTensor,
    pub cls: Option<&'a [f64]>,
    /// `[query_len][embed_dim]` query-term vectors averaged over layers.
    pub query_features: Option<&'a [f64]>,
    /// Per query term inverse document frequency (PACRR's optional input).
    pub query_idf: Option<&'a [f64]>,
}

impl<'a> HeadInput<'a> {
    pub fn new(sim: &'a SimilarityTensor) -> Self {
        HeadInput {
            sim,
            cls: None,
            query_features: None,
            query_idf: None,
        }
    }

    pub fn with_cls(mut self, cls: Option<&'a [f64]>) -> Self {
        self.cls = cls;
        self
    }

    pub fn with_query_features(mut self, f: Option<&'a [f64]>) -> Self {
        self.query_features = f;
        self
    }

    pub fn with_query_idf(mut self, idf: Option<&'a [f64]>) -> Self {
        self.query_idf = idf;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub score: f64,
    /// Each query term's share of the score (excluding bias and any
    /// classification-vector term).
    pub per_query_term_signals: Vec<f64>,
}

/// Gradients with respect to a head's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub sim: SimilarityTensor,
    pub cls: Option<Vec<f64>>,
    pub query_features: Option<Vec<f64>>,
}

impl InputGrads {
    pub(crate) fn zeros(input: &HeadInput<'_>) -> Self {
        let (l, q, d) = input.sim.shape();
        InputGrads {
            sim: SimilarityTensor::filled(l, q, d, 0.0),
            cls: input.cls.map(|c| vec![0.0; c.len()]),
            query_features: input.query_features.map(|f| vec![0.0; f.len()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HeadKind {
    Knrm(KnrmConfig),
    Pacrr(PacrrConfig),
    Drmm(DrmmConfig),
    Vanilla,
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Knrm(_) => "knrm",
            HeadKind::Pacrr(_) => "pacrr",
            HeadKind::Drmm(_) => "drmm",
            HeadKind::Vanilla => "vanilla",
        }
    }

    /// Default configuration for a head name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "knrm" => Ok(HeadKind::Knrm(KnrmConfig::default())),
            "pacrr" => Ok(HeadKind::Pacrr(PacrrConfig::default())),
            "drmm" => Ok(HeadKind::Drmm(DrmmConfig::default())),
            "vanilla" => Ok(HeadKind::Vanilla),
            _ => Err(Error::Config(format!("unknown head `{name}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Joint variant consuming the classification vector.
    pub joint: bool,
    /// Number of tensor layers (input channels).
    pub channels: usize,
    /// Width of the classification vector (joint variants and Vanilla).
    pub cls_dim: usize,
    /// Width of the query-term features (DRMM gate).
    pub embed_dim: usize,
}

impl HeadConfig {
    /// Parses names like `knrm` or `cedr-knrm` into a default configuration.
    pub fn named(name: &str, channels: usize, cls_dim: usize, embed_dim: usize) -> Result<Self> {
        let (joint, base) = match name.strip_prefix("cedr-") {
            Some(b) => (true, b),
            None => (false, name),
        };
        let kind = HeadKind::from_name(base)?;
        if joint && kind == HeadKind::Vanilla {
            return Err(Error::Config("the vanilla head has no joint variant".into()));
        }
        Ok(HeadConfig {
            kind,
            joint,
            channels,
            cls_dim,
            embed_dim,
        })
    }

    pub fn needs_cls(&self) -> bool {
        self.joint || self.kind == HeadKind::Vanilla
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("heads need at least one channel".into()));
        }
        if self.needs_cls() && self.cls_dim == 0 {
            return Err(Error::Config(format!("{self} needs a classification vector")));
        }
        match &self.kind {
            HeadKind::Knrm(c) => c.validate(),
            HeadKind::Pacrr(c) => c.validate(),
            HeadKind::Drmm(c) => {
                if self.embed_dim == 0 {
                    return Err(Error::Config("drmm gate needs embed_dim > 0".into()));
                }
                c.validate()
            }
            HeadKind::Vanilla => Ok(()),
        }
    }

    fn joint_cls_dim(&self) -> usize {
        if self.joint {
            self.cls_dim
        } else {
            0
        }
    }
}

impl fmt::Display for HeadConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.joint {
            write!(f, "cedr-{}", self.kind.name())
        } else {
            f.write_str(self.kind.name())
        }
    }
}

/// A configured head together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringHead {
    pub config: HeadConfig,
    pub params: ParamSet,
}

impl ScoringHead {
    /// Randomly initialised head; the same seed and config give the same
    /// parameters.
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match &config.kind {
            HeadKind::Knrm(c) => knrm::init(c, &config, &mut rng),
            HeadKind::Pacrr(c) => pacrr::init(c, &config, &mut rng),
            HeadKind::Drmm(c) => drmm::init(c, &config, &mut rng),
            HeadKind::Vanilla => vanilla::init(&config, &mut rng),
        };
        Ok(ScoringHead { config, params })
    }

    fn check_input(&self, input: &HeadInput<'_>) -> Result<()> {
        if input.sim.layers != self.config.channels && self.config.kind != HeadKind::Vanilla {
            return Err(Error::Shape(format!(
                "{} expects {} channels, tensor has {}",
                self.config, self.config.channels, input.sim.layers
            )));
        }
        if self.config.needs_cls() {
            let cls = input
                .cls
                .ok_or_else(|| Error::Config(format!("{} requires a classification vector", self.config)))?;
            if cls.len() != self.config.cls_dim {
                return Err(Error::Shape(format!(
                    "classification vector has {} components, head expects {}",
                    cls.len(),
                    self.config.cls_dim
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &HeadInput<'_>) -> Result<HeadOutput> {
        self.check_input(input)?;
        let out = match &self.config.kind {
            HeadKind::Knrm(c) => knrm::forward(c, &self.config, &self.params, input),
            HeadKind::Pacrr(c) => pacrr::forward(c, &self.config, &self.params, input)?,
            HeadKind::Drmm(c) => drmm::forward(c, &self.config, &self.params, input)?,
            HeadKind::Vanilla => vanilla::forward(&self.params, input)?,
        };
        if !out.score.is_finite() {
            return Err(Error::Shape(format!("{} produced a non-finite score", self.config)));
        }
        Ok(out)
    }

    /// Accumulates `dscore · ∂score/∂θ` into `param_grads` and returns the
    /// gradients with respect to the inputs.
    pub fn backward(&self, input: &HeadInput<'_>, dscore: f64, param_grads: &mut ParamSet) -> Result<InputGrads> {
        self.check_input(input)?;
        match &self.config.kind {
            HeadKind::Knrm(c) => Ok(knrm::backward(c, &self.config, &self.params, input, dscore, param_grads)),
            HeadKind::Pacrr(c) => pacrr::backward(c, &self.config, &self.params, input, dscore, param_grads),
            HeadKind::Drmm(c) => drmm::backward(c, &self.config, &self.params, input, dscore, param_grads),
            HeadKind::Vanilla => vanilla::backward(&self.params, input, dscore, param_grads),
        }
    }

    /// Zeroes every weight that multiplies a classification-vector component.
    pub fn zero_cls_weights(&mut self) {
        if !self.config.joint {
            return;
        }
        let cd = self.config.cls_dim;
        match &self.config.kind {
            HeadKind::Knrm(_) | HeadKind::Pacrr(_) => {
                let idx = self.params.len() - 2;
                let p = self.params.at_mut(idx);
                let n = p.len();
                p.values[n - cd..].iter_mut().for_each(|v| *v = 0.0);
            }
            HeadKind::Drmm(_) => {
                let p = self.params.at_mut(0);
                let cols = p.shape[1];
                for row in p.values.chunks_mut(cols) {
                    row[cols - cd..].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            HeadKind::Vanilla => {}
        }
    }

    /// The non-joint head with this head's parameters, classification-vector
    /// weights dropped.
    pub fn without_cls(&self) -> Result<ScoringHead> {
        if !self.config.joint {
            return Ok(self.clone());
        }
        let mut config = self.config.clone();
        config.joint = false;
        let mut plain = ScoringHead::new(config, 0)?;
        let cd = self.config.cls_dim;
        let drmm = matches!(self.config.kind, HeadKind::Drmm(_));
        let last_dense = self.params.len() - 2;
        for (k, (dst, src)) in plain.params.iter_mut().zip(self.params.iter()).enumerate() {
            if drmm && k == 0 {
                let cols = src.shape[1];
                dst.values = src
                    .values
                    .chunks(cols)
                    .flat_map(|row| row[..cols - cd].iter().copied())
                    .collect();
            } else if !drmm && k == last_dense {
                dst.values = src.values[..src.len() - cd].to_vec();
            } else {
                dst.values.clone_from(&src.values);
            }
        }
        Ok(plain)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
