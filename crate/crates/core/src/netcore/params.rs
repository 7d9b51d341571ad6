use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::graph::Gradients;
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Parameter<T> {
    name: String,
    value: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named trainable tensors plus Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), step: 0 }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.into(),
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// `(name, tensor)` pairs in insertion order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// One Adam update. Parameters without a gradient are left untouched.
    pub fn adam_step(&mut self, grads: &Gradients<T>, lr: T, cfg: AdamConfig) -> Result<()> {
        if grads.n_params() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient set covers {} parameters, model has {}",
                grads.n_params(),
                self.params.len()
            )));
        }
        for (i, p) in self.params.iter().enumerate() {
            if let Some(g) = grads.param(ParamId(i)) {
                if g.shape() != p.value.shape() {
                    return Err(Error::Shape(format!(
                        "gradient for {} has shape {:?}, parameter {:?}",
                        p.name,
                        g.shape(),
                        p.value.shape()
                    )));
                }
            }
        }
        self.step += 1;
        let (b1, b2, eps) = (T::of(cfg.beta1), T::of(cfg.beta2), T::of(cfg.eps));
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (i, p) in self.params.iter_mut().enumerate() {
            // parameters that took no part in the loss are skipped, moments included
            let Some(g) = grads.param(ParamId(i)) else { continue };
            let gd = g.data();
            let (m, v) = (p.m.data_mut(), p.v.data_mut());
            for (((w, mi), vi), &gi) in p.value.data_mut().iter_mut().zip(m).zip(v).zip(gd) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
