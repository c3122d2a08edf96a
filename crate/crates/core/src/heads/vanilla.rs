//! Linear layer on the classification vector alone.

use rand::Rng;

use super::{dot, HeadConfig, HeadInput, HeadOutput, InputGrads};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};

pub(super) fn init(head: &HeadConfig, rng: &mut impl Rng) -> ParamSet {
    let mut ps = ParamSet::new();
    ps.push(Param::uniform("cls.weight", &[head.cls_dim], 0.01, rng));
    ps.push(Param::zeros("cls.bias", &[1]));
    ps
}

fn cls<'a>(input: &HeadInput<'a>) -> Result<&'a [f64]> {
    input
        .cls
        .ok_or_else(|| Error::Config("vanilla head requires a classification vector".into()))
}

/// `w · cls + b`.
pub fn vanilla_cls_score(params: &ParamSet, cls: &[f64]) -> f64 {
    dot(&params.at(0).values, cls) + params.at(1).values[0]
}

pub(super) fn forward(params: &ParamSet, input: &HeadInput<'_>) -> Result<HeadOutput> {
    Ok(HeadOutput {
        score: vanilla_cls_score(params, cls(input)?),
        per_query_term_signals: Vec::new(),
    })
}

pub(super) fn backward(params: &ParamSet, input: &HeadInput<'_>, dscore: f64, grads: &mut ParamSet) -> Result<InputGrads> {
    let c = cls(input)?;
    grads
        .at_mut(0)
        .values
        .iter_mut()
        .zip(c)
        .for_each(|(g, v)| *g += dscore * v);
    grads.at_mut(1).values[0] += dscore;
    let mut out = InputGrads::zeros(input);
    if let Some(dc) = out.cls.as_mut() {
        dc.iter_mut()
            .zip(&params.at(0).values)
            .for_each(|(g, w)| *g += dscore * w);
    }
    Ok(out)
}
