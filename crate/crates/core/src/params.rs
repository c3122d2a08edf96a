//! Named dense parameter arrays shared by heads, trainable encoders,
//! the optimizer and checkpoints.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    /// Uniform in `[-scale, scale]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Param::zeros(name, shape);
        for v in &mut p.values {
            *v = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn identity(name: impl Into<String>, n: usize) -> Self {
        let mut p = Param::zeros(name, &[n, n]);
        for i in 0..n {
            p.values[i * n + i] = 1.0;
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of parameters. Order is significant: heads address
/// their parameters by position and checkpoints preserve it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Param) {
        self.params.push(p);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn at(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param::zeros(p.name.clone(), &p.shape))
                .collect(),
        }
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Scalar at a flat coordinate across all parameters.
    pub fn flat(&self, mut idx: usize) -> f64 {
        for p in &self.params {
            if idx < p.len() {
                return p.values[idx];
            }
            idx -= p.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_mut(&mut self, mut idx: usize) -> &mut f64 {
        for p in &mut self.params {
            if idx < p.len() {
                return &mut p.values[idx];
            }
            idx -= p.len();
        }
        panic!("flat index out of range");
    }

    /// `self += scale * other`, shapes must agree.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        debug_assert_eq!(self.params.len(), other.params.len());
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += scale * y;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Replaces values from `other`, requiring identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
            a.values.clone_from(&b.values);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.values.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_indexing_spans_params() {
        let mut ps = ParamSet::new();
        ps.push(Param::zeros("a", &[2]));
        ps.push(Param::identity("b", 2));
        assert_eq!(ps.numel(), 6);
        assert_eq!(ps.flat(2), 1.0);
        *ps.flat_mut(5) = 3.0;
        assert_eq!(ps.get("b").unwrap().values, [1.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn load_from_checks_names() {
        let mut a = ParamSet::new();
        a.push(Param::zeros("a", &[2]));
        let mut b = ParamSet::new();
        b.push(Param::zeros("b", &[2]));
        assert!(a.load_from(&b).is_err());
    }
}
