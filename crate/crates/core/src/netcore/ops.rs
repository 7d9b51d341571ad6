//! Forward and backward kernels for the layer set: 1-D convolution, dense,
//! ReLU, sigmoid, and the two losses.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Dot product with eight independent accumulators so the loop vectorizes.
/// Summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Geometry of a batched convolution: `[batch x c_in x t_in] -> [batch x c_out x t_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvDims {
    pub fn t_out(&self) -> usize {
        self.t_in + 1 - self.kernel
    }

    pub fn infer<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Self> {
        let (batch, c_in, t_in) = match *input.shape() {
            [c, t] => (1, c, t),
            [b, c, t] => (b, c, t),
            ref s => return Err(Error::Shape(format!("conv1d input must be [C x T] or [B x C x T], got {s:?}"))),
        };
        let [c_out, wc_in, kernel] = *weights.shape() else {
            return Err(Error::Shape(format!(
                "conv1d weights must be [C_out x C_in x K], got {:?}",
                weights.shape()
            )));
        };
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d expects {wc_in} input channels, got {c_in}"
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "conv1d bias must be [{c_out}], got {:?}",
                bias.shape()
            )));
        }
        if kernel == 0 || kernel > t_in {
            return Err(Error::Shape(format!(
                "conv1d kernel {kernel} does not fit temporal length {t_in}"
            )));
        }
        Ok(Self { batch, c_in, t_in, c_out, kernel })
    }
}

/// Valid, stride-1 1-D convolution. Accepts `[C_in x T]` or `[B x C_in x T]`.
pub fn conv1d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let d = ConvDims::infer(input, weights, bias)?;
    let out = conv1d_raw(&d, input.data(), weights.data(), bias.data());
    let shape = if input.rank() == 2 {
        vec![d.c_out, d.t_out()]
    } else {
        vec![d.batch, d.c_out, d.t_out()]
    };
    Tensor::new(shape, out)
}

pub(crate) fn conv1d_raw<T: Scalar>(d: &ConvDims, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let t_out = d.t_out();
    let mut out = vec![T::zero(); d.batch * d.c_out * t_out];
    for n in 0..d.batch {
        let xin = &x[n * d.c_in * d.t_in..(n + 1) * d.c_in * d.t_in];
        for o in 0..d.c_out {
            let row = &mut out[(n * d.c_out + o) * t_out..(n * d.c_out + o + 1) * t_out];
            row.fill(b[o]);
            for i in 0..d.c_in {
                let xi = &xin[i * d.t_in..(i + 1) * d.t_in];
                for k in 0..d.kernel {
                    let wv = w[(o * d.c_in + i) * d.kernel + k];
                    axpy(wv, &xi[k..k + t_out], row);
                }
            }
        }
    }
    out
}

/// Accumulates gradients of a convolution given the output gradient.
pub(crate) fn conv1d_backward<T: Scalar>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let t_out = d.t_out();
    let mut grad_x = grad_x;
    for n in 0..d.batch {
        let xin = &x[n * d.c_in * d.t_in..(n + 1) * d.c_in * d.t_in];
        for o in 0..d.c_out {
            let g = &grad_out[(n * d.c_out + o) * t_out..(n * d.c_out + o + 1) * t_out];
            grad_b[o] += g.iter().fold(T::zero(), |a, &v| a + v);
            for i in 0..d.c_in {
                let xi = &xin[i * d.t_in..(i + 1) * d.t_in];
                for k in 0..d.kernel {
                    let widx = (o * d.c_in + i) * d.kernel + k;
                    grad_w[widx] += dot(g, &xi[k..k + t_out]);
                    if let Some(gx) = grad_x.as_deref_mut() {
                        let gxi = &mut gx[(n * d.c_in + i) * d.t_in..(n * d.c_in + i + 1) * d.t_in];
                        axpy(w[widx], g, &mut gxi[k..k + t_out]);
                    }
                }
            }
        }
    }
}

/// Affine map `W x + b`. Accepts `[n]` or `[B x n]`; weights are `[m x n]`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, n) = dense_dims(input, weights, bias)?;
    let m = weights.shape()[0];
    let out = dense_raw(batch, n, m, input.data(), weights.data(), bias.data());
    let shape = if input.rank() == 1 { vec![m] } else { vec![batch, m] };
    Tensor::new(shape, out)
}

pub(crate) fn dense_dims<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    let (batch, n) = match *input.shape() {
        [n] => (1, n),
        [b, n] => (b, n),
        ref s => return Err(Error::Shape(format!("dense input must be [n] or [B x n], got {s:?}"))),
    };
    let [m, wn] = *weights.shape() else {
        return Err(Error::Shape(format!("dense weights must be [m x n], got {:?}", weights.shape())));
    };
    if wn != n {
        return Err(Error::Shape(format!("dense expects input width {wn}, got {n}")));
    }
    if bias.shape() != [m] {
        return Err(Error::Shape(format!("dense bias must be [{m}], got {:?}", bias.shape())));
    }
    Ok((batch, n))
}

pub(crate) fn dense_raw<T: Scalar>(batch: usize, n: usize, m: usize, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * m);
    for r in 0..batch {
        let xr = &x[r * n..(r + 1) * n];
        for o in 0..m {
            out.push(b[o] + dot(&w[o * n..(o + 1) * n], xr));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Scalar>(
    batch: usize,
    n: usize,
    m: usize,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let mut grad_x = grad_x;
    for r in 0..batch {
        let xr = &x[r * n..(r + 1) * n];
        for o in 0..m {
            let g = grad_out[r * m + o];
            if g == T::zero() {
                continue;
            }
            grad_b[o] += g;
            axpy(g, xr, &mut grad_w[o * n..(o + 1) * n]);
            if let Some(gx) = grad_x.as_deref_mut() {
                axpy(g, &w[o * n..(o + 1) * n], &mut gx[r * n..(r + 1) * n]);
            }
        }
    }
}

/// `max(x, 0)`; NaN passes through so divergence stays visible.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Mean squared error.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "mse: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("mse of empty sequence".into()));
    }
    let s = pred
        .iter()
        .zip(target)
        .fold(T::zero(), |a, (&p, &t)| a + (p - t) * (p - t));
    Ok(s / T::of_usize(pred.len()))
}

pub(crate) fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::of(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

pub(crate) fn check_labels<T: Scalar>(labels: &[T]) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&c| c != T::zero() && c != T::one()) {
        return Err(Error::Input(format!("concept label {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Mean binary cross-entropy with probabilities clamped into `[eps, 1 - eps]`.
pub fn bce_loss<T: Scalar>(prob: &[T], label: &[T]) -> Result<T> {
    if prob.len() != label.len() {
        return Err(Error::Shape(format!(
            "bce: {} probabilities vs {} labels",
            prob.len(),
            label.len()
        )));
    }
    if prob.is_empty() {
        return Err(Error::Input("bce of empty sequence".into()));
    }
    check_labels(label)?;
    let s = prob.iter().zip(label).fold(T::zero(), |a, (&p, &c)| {
        let p = clamp_prob(p);
        a - (c * p.ln() + (T::one() - c) * (T::one() - p).ln())
    });
    Ok(s / T::of_usize(prob.len()))
}
