use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Graph, NodeId, Tensor};
use crate::scalar::Scalar;

use super::config::Family;
use super::model::Model;

/// Everything one window produces on its way to the RUL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BottleneckOutput<T> {
    /// Scaled RUL prediction (cycles / 100).
    pub rul: T,
    /// Predicted concept probabilities before any threshold or substitution.
    pub probabilities: Vec<T>,
    /// Concept activations as seen downstream: thresholded for the Boolean
    /// CBM, overridden where an intervention applies; the mixing probability for CEM.
    pub activations: Vec<T>,
    /// CEM mixed embeddings, one per concept.
    pub embeddings: Vec<Vec<T>>,
    pub positive_embeddings: Vec<Vec<T>>,
    pub negative_embeddings: Vec<Vec<T>>,
    /// Hybrid CBM unsupervised dimensions.
    pub extra: Vec<T>,
    /// Latent code for CNN, CNN+CLS and CEM; raw (pre-activation) bottleneck for CBMs.
    pub latent: Vec<T>,
}

impl<T: Scalar> BottleneckOutput<T> {
    /// Hard 0/1 concept decisions (activation above 0.5).
    pub fn hard_activations(&self) -> Vec<u8> {
        let half = T::of(0.5);
        self.activations.iter().map(|&a| u8::from(a > half)).collect()
    }
}

/// Concept overrides for a batch: `mask[r * k + j]` replaces the activation of
/// concept `j` in row `r` by `values[r * k + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Substitution<T> {
    pub mask: Vec<bool>,
    pub values: Vec<T>,
}

impl<T: Scalar> Substitution<T> {
    /// Applies the same per-concept overrides to every row.
    pub fn uniform(rows: usize, overrides: &[Option<T>]) -> Self {
        let mut mask = Vec::with_capacity(rows * overrides.len());
        let mut values = Vec::with_capacity(rows * overrides.len());
        for _ in 0..rows {
            for o in overrides {
                mask.push(o.is_some());
                values.push(o.unwrap_or_else(T::zero));
            }
        }
        Self { mask, values }
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }
}

/// Node handles of one recorded forward pass.
pub(crate) struct Pass<'p, T: Scalar> {
    pub graph: Graph<'p, T>,
    pub batch: usize,
    pub rul: NodeId,
    pub probs: Option<NodeId>,
    pub activations: Option<NodeId>,
    pub latent: Option<NodeId>,
    pub extra: Option<NodeId>,
    pub pos: Vec<NodeId>,
    pub neg: Vec<NodeId>,
    pub embeddings: Vec<NodeId>,
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub mse: T,
    pub bce: T,
}

/// Training inputs for one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[B x C x W]`
    pub windows: Tensor<T>,
    /// Scaled RUL targets, length `B`.
    pub rul: Vec<T>,
    /// Row-major `[B x k]` binary labels.
    pub concepts: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&crate::preprocess::Sample<T>]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Input("empty batch".into()));
        };
        let shape = first.window.shape().to_vec();
        let per = first.window.len();
        let mut data = Vec::with_capacity(per * samples.len());
        let mut rul = Vec::with_capacity(samples.len());
        let mut concepts = Vec::new();
        for s in samples {
            if s.window.shape() != shape.as_slice() {
                return Err(Error::Shape("samples have different window shapes".into()));
            }
            data.extend_from_slice(s.window.data());
            rul.push(s.rul_target);
            concepts.extend(s.concepts.iter().map(|&c| if c == 1 { T::one() } else { T::zero() }));
        }
        let mut full = vec![samples.len()];
        full.extend(shape);
        Ok(Self { windows: Tensor::new(full, data)?, rul, concepts })
    }

    pub fn len(&self) -> usize {
        self.rul.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rul.is_empty()
    }
}

fn rows_of<T: Scalar>(t: &Tensor<T>, r: usize) -> Vec<T> {
    t.row(r).to_vec()
}

impl<T: Scalar> Model<T> {
    fn batch_dims(&self, windows: &Tensor<T>) -> Result<usize> {
        let c = &self.config;
        match *windows.shape() {
            [b, ch, w] if ch == c.in_channels && w == c.window => Ok(b),
            ref s => Err(Error::Shape(format!(
                "expected windows [B x {} x {}], got {s:?}",
                c.in_channels, c.window
            ))),
        }
    }

    /// Records a forward pass over a batch of windows.
    pub(crate) fn record<'p>(&'p self, windows: &Tensor<T>, subst: Option<&Substitution<T>>) -> Result<Pass<'p, T>> {
        let batch = self.batch_dims(windows)?;
        let k = self.config.k;
        if let Some(s) = subst {
            if s.mask.len() != batch * k || s.values.len() != batch * k {
                return Err(Error::Shape(format!("substitution must cover {batch} x {k} activations")));
            }
            if !self.config.family.is_bottleneck() && !s.is_empty() {
                return Err(Error::UnsupportedFamily(format!(
                    "{} has no concept bottleneck to intervene on",
                    self.config.family
                )));
            }
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(windows.clone());
        let enc = self.extract(&mut g, x, batch)?;
        let substitute = |g: &mut Graph<'p, T>, node: NodeId| -> Result<NodeId> {
            match subst {
                Some(s) if !s.is_empty() => g.substitute(node, s.mask.clone(), &s.values),
                _ => Ok(node),
            }
        };

        let mut pass = Pass {
            graph: g,
            batch,
            rul: enc,
            probs: None,
            activations: None,
            latent: None,
            extra: None,
            pos: Vec::new(),
            neg: Vec::new(),
            embeddings: Vec::new(),
        };
        let g = &mut pass.graph;
        match self.config.family {
            Family::Cnn | Family::CnnCls => {
                let z = g.relu(enc);
                pass.latent = Some(z);
                pass.rul = self.dense(g, z, self.layout.head)?;
                if let Some(cls) = self.layout.classifier {
                    let logits = self.dense(g, z, cls)?;
                    let p = g.sigmoid(logits);
                    pass.probs = Some(p);
                    pass.activations = Some(p);
                }
            }
            Family::CbmFuzzy => {
                pass.latent = Some(enc);
                let p = g.sigmoid(enc);
                let a = substitute(g, p)?;
                pass.probs = Some(p);
                pass.activations = Some(a);
                pass.rul = self.dense(g, a, self.layout.head)?;
            }
            Family::CbmBool => {
                pass.latent = Some(enc);
                let p = g.sigmoid(enc);
                let hard = g.threshold(p);
                let a = substitute(g, hard)?;
                pass.probs = Some(p);
                pass.activations = Some(a);
                pass.rul = self.dense(g, a, self.layout.head)?;
            }
            Family::CbmHybrid => {
                pass.latent = Some(enc);
                let e = self.config.extra();
                let sup = g.slice(enc, 0, k)?;
                let p = g.sigmoid(sup);
                let a = substitute(g, p)?;
                pass.probs = Some(p);
                pass.activations = Some(a);
                let head_in = if e > 0 {
                    let extra = g.slice(enc, k, e)?;
                    pass.extra = Some(extra);
                    g.concat(&[a, extra])?
                } else {
                    a
                };
                pass.rul = self.dense(g, head_in, self.layout.head)?;
            }
            Family::Cem => {
                let cem = self.layout.cem.as_ref().expect("CEM layout");
                let z = g.relu(enc);
                pass.latent = Some(z);
                let mut scores = Vec::with_capacity(k);
                for i in 0..k {
                    let pos_lin = self.dense(g, z, cem.pos[i])?;
                    let pos = g.relu(pos_lin);
                    let neg_lin = self.dense(g, z, cem.neg[i])?;
                    let neg = g.relu(neg_lin);
                    let pair = g.concat(&[pos, neg])?;
                    scores.push(self.dense(g, pair, cem.scorer)?);
                    pass.pos.push(pos);
                    pass.neg.push(neg);
                }
                let logits = g.concat(&scores)?;
                let p = g.sigmoid(logits);
                let used = substitute(g, p)?;
                pass.probs = Some(p);
                pass.activations = Some(used);
                for i in 0..k {
                    let pi = g.slice(used, i, 1)?;
                    let mixed = g.mix(pi, pass.pos[i], pass.neg[i])?;
                    pass.embeddings.push(mixed);
                }
                let all = g.concat(&pass.embeddings)?;
                pass.rul = self.dense(g, all, self.layout.head)?;
            }
        }
        Ok(pass)
    }

    fn collect(&self, pass: &Pass<'_, T>) -> Vec<BottleneckOutput<T>> {
        let g = &pass.graph;
        let rul = g.value(pass.rul).data();
        (0..pass.batch)
            .map(|r| {
                let rows = |n: Option<NodeId>| n.map(|n| rows_of(g.value(n), r)).unwrap_or_default();
                let each = |v: &[NodeId]| v.iter().map(|&n| rows_of(g.value(n), r)).collect();
                BottleneckOutput {
                    rul: rul[r],
                    probabilities: rows(pass.probs),
                    activations: rows(pass.activations),
                    embeddings: each(&pass.embeddings),
                    positive_embeddings: each(&pass.pos),
                    negative_embeddings: each(&pass.neg),
                    extra: rows(pass.extra),
                    latent: rows(pass.latent),
                }
            })
            .collect()
    }

    /// Forward pass over `[B x C x W]` windows.
    pub fn forward(&self, windows: &Tensor<T>) -> Result<Vec<BottleneckOutput<T>>> {
        let pass = self.record(windows, None)?;
        Ok(self.collect(&pass))
    }

    /// Forward pass with concept activations (CBMs) or probabilities (CEM) overridden.
    pub fn forward_with(&self, windows: &Tensor<T>, subst: &Substitution<T>) -> Result<Vec<BottleneckOutput<T>>> {
        let pass = self.record(windows, Some(subst))?;
        Ok(self.collect(&pass))
    }

    fn single(&self, window: &Tensor<T>) -> Result<BottleneckOutput<T>> {
        let mut shape = vec![1];
        shape.extend_from_slice(window.shape());
        let batch = window.clone().reshape(&shape)?;
        Ok(self.forward(&batch)?.remove(0))
    }

    fn expect_family(&self, allowed: &[Family], op: &str) -> Result<()> {
        if allowed.contains(&self.config.family) {
            Ok(())
        } else {
            Err(Error::Config(format!("{op} called on a {} model", self.config.family)))
        }
    }

    /// RUL of a plain CNN for one `[C x W]` window.
    pub fn forward_cnn(&self, window: &Tensor<T>) -> Result<T> {
        self.expect_family(&[Family::Cnn], "forward_cnn")?;
        Ok(self.single(window)?.rul)
    }

    /// RUL and classifier probabilities of a CNN+CLS model.
    pub fn forward_cnn_cls(&self, window: &Tensor<T>) -> Result<(T, Vec<T>)> {
        self.expect_family(&[Family::CnnCls], "forward_cnn_cls")?;
        let o = self.single(window)?;
        Ok((o.rul, o.probabilities))
    }

    /// Bottleneck output of a Boolean, fuzzy or hybrid CBM; `variant` must match the model.
    pub fn forward_cbm(&self, window: &Tensor<T>, variant: Family) -> Result<BottleneckOutput<T>> {
        if !variant.is_cbm() || variant != self.config.family {
            return Err(Error::Config(format!(
                "forward_cbm variant {variant} does not match a {} model",
                self.config.family
            )));
        }
        self.single(window)
    }

    pub fn forward_cem(&self, window: &Tensor<T>) -> Result<BottleneckOutput<T>> {
        self.expect_family(&[Family::Cem], "forward_cem")?;
        self.single(window)
    }

    /// Adds the training loss to a recorded pass: MSE, plus `lambda` times the
    /// BCE on predicted concept probabilities for every family but the plain CNN.
    pub(crate) fn loss_node(&self, pass: &mut Pass<'_, T>, batch: &Batch<T>) -> Result<(NodeId, NodeId, Option<NodeId>)> {
        if batch.concepts.len() != batch.len() * self.config.k && self.config.family.has_concepts() {
            return Err(Error::Shape(format!(
                "batch carries {} concept labels for {} rows and k = {}",
                batch.concepts.len(),
                batch.len(),
                self.config.k
            )));
        }
        let g = &mut pass.graph;
        let mse = g.mse(pass.rul, &batch.rul)?;
        match pass.probs {
            Some(p) if self.config.family.has_concepts() => {
                let bce = g.bce(p, &batch.concepts)?;
                let total = g.combine(mse, T::one(), bce, T::of(self.config.lambda))?;
                Ok((total, mse, Some(bce)))
            }
            _ => Ok((mse, mse, None)),
        }
    }

    /// Loss on a batch without recording gradients.
    pub fn loss(&self, batch: &Batch<T>) -> Result<LossBreakdown<T>> {
        let mut pass = self.record(&batch.windows, None)?;
        let (total, mse, bce) = self.loss_node(&mut pass, batch)?;
        let g = &pass.graph;
        Ok(LossBreakdown {
            total: g.value(total).data()[0],
            mse: g.value(mse).data()[0],
            bce: bce.map(|b| g.value(b).data()[0]).unwrap_or_else(T::zero),
        })
    }

    /// Loss and parameter gradients of one batch, with optional concept substitution.
    pub fn loss_and_gradients(
        &self,
        batch: &Batch<T>,
        subst: Option<&Substitution<T>>,
    ) -> Result<(LossBreakdown<T>, crate::netcore::Gradients<T>)> {
        let mut pass = self.record(&batch.windows, subst)?;
        let (total, mse, bce) = self.loss_node(&mut pass, batch)?;
        let breakdown = {
            let g = &pass.graph;
            LossBreakdown {
                total: g.value(total).data()[0],
                mse: g.value(mse).data()[0],
                bce: bce.map(|b| g.value(b).data()[0]).unwrap_or_else(T::zero),
            }
        };
        let grads = pass.graph.backward(total)?;
        Ok((breakdown, grads))
    }
}
