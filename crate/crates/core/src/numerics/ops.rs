//! Stateless forward kernels and their adjoints.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    fn check(self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = self {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::contract(format!(
                    "leaky relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// First derivative, given the input `x` and output `y`.
    #[inline]
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    /// Second derivative (zero almost everywhere for the piecewise-linear kinds).
    #[inline]
    pub(crate) fn second_derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu | Activation::LeakyRelu { .. } => 0.0,
            Activation::Tanh => -2.0 * y * (1.0 - y * y),
        }
    }
}

/// Elementwise activation. Rejects non-finite input.
pub fn activation_forward(x: &Tensor, kind: Activation) -> Result<Tensor> {
    kind.check()?;
    x.ensure_finite("activation input")?;
    Ok(x.map(|v| kind.apply(v)))
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::dim(format!(
            "{what} must be 4-dimensional, got {:?}",
            t.shape()
        ))),
    }
}

/// Output spatial size of a valid convolution.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

fn conv_geometry(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
) -> Result<([usize; 4], [usize; 4], usize, usize)> {
    let xi = dims4(input, "conv2d input")?;
    let ki = dims4(kernel, "conv2d kernel")?;
    if stride == 0 {
        return Err(Error::contract("conv2d stride must be positive"));
    }
    if xi[1] != ki[1] {
        return Err(Error::dim(format!(
            "conv2d: input {:?} has {} channels but kernel {:?} expects {}",
            input.shape(),
            xi[1],
            kernel.shape(),
            ki[1]
        )));
    }
    if ki[2] > xi[2] || ki[3] > xi[3] {
        return Err(Error::dim(format!(
            "conv2d: kernel {:?} larger than input {:?}",
            kernel.shape(),
            input.shape()
        )));
    }
    let oh = conv_out_len(xi[2], ki[2], stride);
    let ow = conv_out_len(xi[3], ki[3], stride);
    Ok((xi, ki, oh, ow))
}

/// Valid (unpadded) 2-D cross-correlation: the kernel is not flipped.
///
/// `input` is `n×c×h×w`, `kernel` is `o×c×kh×kw`; the result is
/// `n×o×h'×w'` with `h' = (h−kh)/stride + 1`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let ([n, c, h, w], [o, _, kh, kw], oh, ow) = conv_geometry(input, kernel, stride)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            let dst = &mut out[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            for ic in 0..c {
                let src = &x[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                let ker = &k[(oc * c + ic) * kh * kw..(oc * c + ic + 1) * kh * kw];
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for p in 0..kh {
                            let row = &src[(i * stride + p) * w + j * stride..];
                            let krow = &ker[p * kw..(p + 1) * kw];
                            for (q, &kv) in krow.iter().enumerate() {
                                acc += kv * row[q];
                            }
                        }
                        dst[i * ow + j] += acc;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, o, oh, ow], out))
}

/// Gradient of `Σ upstream ⊙ conv2d(input, kernel)` with respect to the kernel.
pub fn conv2d_kernel_grad(
    input: &Tensor,
    upstream: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
) -> Result<Tensor> {
    let probe = Tensor::zeros(kernel_shape);
    let ([n, c, h, w], [o, _, kh, kw], oh, ow) = conv_geometry(input, &probe, stride)?;
    if upstream.shape() != [n, o, oh, ow] {
        return Err(Error::dim(format!(
            "conv2d upstream {:?} does not match output [{n}, {o}, {oh}, {ow}]",
            upstream.shape()
        )));
    }
    let x = input.data();
    let g = upstream.data();
    let mut dk = vec![0.0; o * c * kh * kw];
    for b in 0..n {
        for oc in 0..o {
            let gmap = &g[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            for ic in 0..c {
                let src = &x[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                let dst = &mut dk[(oc * c + ic) * kh * kw..(oc * c + ic + 1) * kh * kw];
                for i in 0..oh {
                    for j in 0..ow {
                        let gv = gmap[i * ow + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for p in 0..kh {
                            let row = &src[(i * stride + p) * w + j * stride..];
                            for q in 0..kw {
                                dst[p * kw + q] += gv * row[q];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(kernel_shape.to_vec(), dk))
}

/// Gradient of `Σ upstream ⊙ conv2d(input, kernel)` with respect to the input.
pub fn conv2d_input_grad(
    upstream: &Tensor,
    kernel: &Tensor,
    input_shape: &[usize],
    stride: usize,
) -> Result<Tensor> {
    let probe = Tensor::zeros(input_shape);
    let ([n, c, h, w], [o, _, kh, kw], oh, ow) = conv_geometry(&probe, kernel, stride)?;
    if upstream.shape() != [n, o, oh, ow] {
        return Err(Error::dim(format!(
            "conv2d upstream {:?} does not match output [{n}, {o}, {oh}, {ow}]",
            upstream.shape()
        )));
    }
    let k = kernel.data();
    let g = upstream.data();
    let mut dx = vec![0.0; n * c * h * w];
    for b in 0..n {
        for oc in 0..o {
            let gmap = &g[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            for ic in 0..c {
                let dst = &mut dx[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                let ker = &k[(oc * c + ic) * kh * kw..(oc * c + ic + 1) * kh * kw];
                for i in 0..oh {
                    for j in 0..ow {
                        let gv = gmap[i * ow + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for p in 0..kh {
                            let base = (i * stride + p) * w + j * stride;
                            for q in 0..kw {
                                dst[base + q] += gv * ker[p * kw + q];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// Sums every channel over its spatial positions: `n×c×h×w → n×c`.
pub fn global_sum_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = dims4(x, "global_sum_pool input")?;
    let data = x
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().sum())
        .collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

/// Adjoint of [`global_sum_pool`]: broadcasts `n×c` back over `h×w`.
pub fn global_sum_pool_backward(upstream: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (n, c) = (input_shape[0], input_shape[1]);
    if upstream.shape() != [n, c] {
        return Err(Error::dim(format!(
            "pool upstream {:?} does not match [{n}, {c}]",
            upstream.shape()
        )));
    }
    let plane: usize = input_shape[2..].iter().product();
    let mut out = Vec::with_capacity(n * c * plane);
    for &g in upstream.data() {
        out.extend(std::iter::repeat_n(g, plane));
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), out))
}
