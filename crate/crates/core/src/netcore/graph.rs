//! Reverse-mode differentiation over a recorded forward pass.
//!
//! A [`Graph`] records every operation of one forward pass as a node on a
//! tape. [`Graph::backward`] walks the tape in reverse and returns exact
//! gradients for every parameter that took part. A tape can be
//! differentiated once; a new forward pass needs a new graph.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::{self, ConvDims};
use super::params::{ParamId, ParameterSet};
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Conv1d { x: NodeId, w: NodeId, b: NodeId, dims: ConvDims },
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Threshold(NodeId),
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize, len: usize },
    Substitute { x: NodeId, mask: Vec<bool> },
    Mix { p: NodeId, pos: NodeId, neg: NodeId },
    Mse { pred: NodeId, target: Vec<T> },
    Bce { prob: NodeId, label: Vec<T> },
    Combine { a: NodeId, b: NodeId, wa: T, wb: T },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of one forward pass.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParameterSet<T>,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    nodes: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter, `None` when it did not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a node created via [`Graph::variable`] or any op output.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    #[cfg(test)]
    pub(crate) fn from_params(params: Vec<Option<Tensor<T>>>) -> Self {
        Self { params, nodes: Vec::new() }
    }
}

fn rows_cols<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    match *t.shape() {
        [n] => (1, n),
        [r, c] => (r, c),
        _ => (t.rows(), t.shape().last().copied().unwrap_or(0)),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParameterSet<T>) -> Self {
        Self { params, nodes: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id.0].op {
            Op::Param(pid) => self.params.value(*pid),
            _ => self.nodes[id.0].value.as_ref().expect("node value present"),
        }
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::node`].
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let dims = ConvDims::infer(self.value(x), self.value(w), self.value(b))?;
        let out = ops::conv1d_raw(&dims, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let t = Tensor::new(vec![dims.batch, dims.c_out, dims.t_out()], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(t, Op::Conv1d { x, w, b, dims }, rg))
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, n) = ops::dense_dims(self.value(x), self.value(w), self.value(b))?;
        let m = self.value(w).shape()[0];
        let out = ops::dense_raw(batch, n, m, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let t = Tensor::new(vec![batch, m], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(t, Op::Dense { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = ops::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = ops::sigmoid(self.value(x));
        let rg = self.needs(&[x]);
        self.push(t, Op::Sigmoid(x), rg)
    }

    /// Hard step `1[x > 0.5]` whose backward pass is the identity (straight-through).
    pub fn threshold(&mut self, x: NodeId) -> NodeId {
        let half = T::of(0.5);
        let t = self.value(x).map(|v| if v > half { T::one() } else { T::zero() });
        let rg = self.needs(&[x]);
        self.push(t, Op::Threshold(x), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Column-wise concatenation of `[B x n_i]` tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let rows = rows_cols(self.value(*first)).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = rows_cols(self.value(p));
            if r != rows {
                return Err(Error::Shape(format!("concat row mismatch: {r} vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        let rg = self.needs(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start+len` of a `[B x n]` tensor.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = rows_cols(self.value(x));
        if start + len > cols {
            return Err(Error::Shape(format!("slice {start}..{} of width {cols}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let t = Tensor::new(vec![rows, len], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Slice { x, start, len }, rg))
    }

    /// Replaces entries where `mask` is set by `values`. Replaced entries pass no gradient.
    pub fn substitute(&mut self, x: NodeId, mask: Vec<bool>, values: &[T]) -> Result<NodeId> {
        let src = self.value(x);
        if mask.len() != src.len() || values.len() != src.len() {
            return Err(Error::Shape(format!(
                "substitute: tensor of {} values, mask {}, replacements {}",
                src.len(),
                mask.len(),
                values.len()
            )));
        }
        let data = src
            .data()
            .iter()
            .zip(&mask)
            .zip(values)
            .map(|((&v, &m), &r)| if m { r } else { v })
            .collect();
        let t = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Substitute { x, mask }, rg))
    }

    /// `p * pos + (1 - p) * neg` with `p: [B x 1]` and `pos, neg: [B x m]`.
    pub fn mix(&mut self, p: NodeId, pos: NodeId, neg: NodeId) -> Result<NodeId> {
        let (pr, pc) = rows_cols(self.value(p));
        let (r, m) = rows_cols(self.value(pos));
        if pc != 1 || pr != r || rows_cols(self.value(neg)) != (r, m) {
            return Err(Error::Shape("mix expects p [B x 1], pos/neg [B x m]".into()));
        }
        let (pv, a, b) = (self.value(p).data(), self.value(pos).data(), self.value(neg).data());
        let mut out = Vec::with_capacity(r * m);
        for i in 0..r {
            let w = pv[i];
            for j in 0..m {
                out.push(w * a[i * m + j] + (T::one() - w) * b[i * m + j]);
            }
        }
        let t = Tensor::new(vec![r, m], out)?;
        let rg = self.needs(&[p, pos, neg]);
        Ok(self.push(t, Op::Mix { p, pos, neg }, rg))
    }

    pub fn mse(&mut self, pred: NodeId, target: &[T]) -> Result<NodeId> {
        let v = ops::mse_loss(self.value(pred).data(), target)?;
        let rg = self.needs(&[pred]);
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target: target.to_vec() }, rg))
    }

    pub fn bce(&mut self, prob: NodeId, label: &[T]) -> Result<NodeId> {
        let v = ops::bce_loss(self.value(prob).data(), label)?;
        let rg = self.needs(&[prob]);
        Ok(self.push(Tensor::scalar(v), Op::Bce { prob, label: label.to_vec() }, rg))
    }

    /// `wa * a + wb * b` for scalar nodes.
    pub fn combine(&mut self, a: NodeId, wa: T, b: NodeId, wb: T) -> Result<NodeId> {
        if self.value(a).len() != 1 || self.value(b).len() != 1 {
            return Err(Error::Shape("combine expects scalar nodes".into()));
        }
        let v = wa * self.value(a).data()[0] + wb * self.value(b).data()[0];
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(v), Op::Combine { a, b, wa, wb }, rg))
    }

    /// Exact gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Usage(
                "backward already called on this graph; run a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = grads[i].take() {
                    match &mut params[pid.0] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn zeros_like(&self, id: NodeId) -> Tensor<T> {
        Tensor::zeros(self.value(id).shape())
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv1d { x, w, b, dims } => {
                let mut gw = self.zeros_like(*w);
                let mut gb = self.zeros_like(*b);
                let want_x = self.nodes[x.0].requires_grad;
                let mut gx = want_x.then(|| self.zeros_like(*x));
                ops::conv1d_backward(
                    dims,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.data_mut(),
                    gb.data_mut(),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx)?;
                }
                self.accumulate(grads, *w, gw)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::Dense { x, w, b } => {
                let (batch, n) = rows_cols(self.value(*x));
                let m = self.value(*w).shape()[0];
                let mut gw = self.zeros_like(*w);
                let mut gb = self.zeros_like(*b);
                let want_x = self.nodes[x.0].requires_grad;
                let mut gx = want_x.then(|| self.zeros_like(*x));
                ops::dense_backward(
                    batch,
                    n,
                    m,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.data_mut(),
                    gb.data_mut(),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx)?;
                }
                self.accumulate(grads, *w, gw)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let data = gd
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?)?;
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.as_ref().expect("sigmoid output").data();
                let data = gd
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?)?;
            }
            Op::Threshold(x) => {
                self.accumulate(grads, *x, g.clone())?;
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(&shape)?)?;
            }
            Op::Concat(parts) => {
                let (rows, total) = rows_cols(g);
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = rows_cols(self.value(p));
                    let mut out = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        out.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    let shape = self.value(p).shape().to_vec();
                    self.accumulate(grads, p, Tensor::new(shape, out)?)?;
                }
            }
            Op::Slice { x, start, len } => {
                let (rows, cols) = rows_cols(self.value(*x));
                let mut gx = self.zeros_like(*x);
                let d = gx.data_mut();
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::Substitute { x, mask } => {
                let data = gd
                    .iter()
                    .zip(mask)
                    .map(|(&gi, &m)| if m { T::zero() } else { gi })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?)?;
            }
            Op::Mix { p, pos, neg } => {
                let (rows, m) = rows_cols(self.value(*pos));
                let (pv, a, b) = (self.value(*p).data(), self.value(*pos).data(), self.value(*neg).data());
                let mut gp = vec![T::zero(); rows];
                let mut ga = vec![T::zero(); rows * m];
                let mut gb = vec![T::zero(); rows * m];
                for i in 0..rows {
                    for j in 0..m {
                        let k = i * m + j;
                        gp[i] += gd[k] * (a[k] - b[k]);
                        ga[k] = gd[k] * pv[i];
                        gb[k] = gd[k] * (T::one() - pv[i]);
                    }
                }
                let pshape = self.value(*p).shape().to_vec();
                let eshape = self.value(*pos).shape().to_vec();
                self.accumulate(grads, *p, Tensor::new(pshape, gp)?)?;
                self.accumulate(grads, *pos, Tensor::new(eshape.clone(), ga)?)?;
                self.accumulate(grads, *neg, Tensor::new(eshape, gb)?)?;
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred).data();
                let scale = gd[0] * T::of(2.0) / T::of_usize(pv.len());
                let data = pv.iter().zip(target).map(|(&p, &t)| scale * (p - t)).collect();
                let shape = self.value(*pred).shape().to_vec();
                self.accumulate(grads, *pred, Tensor::new(shape, data)?)?;
            }
            Op::Bce { prob, label } => {
                let pv = self.value(*prob).data();
                let scale = gd[0] / T::of_usize(pv.len());
                let eps = T::of(ops::BCE_EPS);
                let data = pv
                    .iter()
                    .zip(label)
                    .map(|(&p, &c)| {
                        if p < eps || p > T::one() - eps {
                            T::zero()
                        } else {
                            scale * (-c / p + (T::one() - c) / (T::one() - p))
                        }
                    })
                    .collect();
                let shape = self.value(*prob).shape().to_vec();
                self.accumulate(grads, *prob, Tensor::new(shape, data)?)?;
            }
            Op::Combine { a, b, wa, wb } => {
                self.accumulate(grads, *a, Tensor::scalar(gd[0] * *wa))?;
                self.accumulate(grads, *b, Tensor::scalar(gd[0] * *wb))?;
            }
        }
        Ok(())
    }
}
