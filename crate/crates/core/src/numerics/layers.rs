//! Layer stacks with hand-written reverse passes.
//!
//! Besides the usual forward/backward pair, a [`Sequential`] can propagate a
//! tangent (a directional derivative with respect to its input) alongside the
//! primal values and back-propagate through both. The gradient penalty uses
//! this to differentiate an input-gradient norm with respect to parameters.

use serde::{Deserialize, Serialize};

use super::ops::{
    self, conv2d_forward, conv2d_input_grad, conv2d_kernel_grad, global_sum_pool,
    global_sum_pool_backward, Activation,
};
use super::{gaussian_sample, matmul, SeededRng, Tensor};
use crate::error::{Error, Result};

/// Standard deviation of the normal weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Square-kernel valid convolution.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Relu,
    Tanh,
    GlobalSumPool,
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => Err(
                Error::contract(format!("dense dimensions must be positive: {self:?}")),
            ),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 => Err(
                Error::contract(format!("conv2d dimensions must be positive: {self:?}")),
            ),
            LayerSpec::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(
                Error::contract(format!("leaky relu slope must lie in (0, 1), got {slope}")),
            ),
            _ => Ok(()),
        }
    }

    fn activation(&self) -> Option<Activation> {
        match *self {
            LayerSpec::LeakyRelu { slope } => Some(Activation::LeakyRelu { slope }),
            LayerSpec::Relu => Some(Activation::Relu),
            LayerSpec::Tanh => Some(Activation::Tanh),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::dim(format!(
                        "dense layer expects [{inputs}] per sample, got {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => match *input {
                [c, h, w] if c == in_channels && h >= kernel && w >= kernel => Ok(vec![
                    out_channels,
                    ops::conv_out_len(h, kernel, stride),
                    ops::conv_out_len(w, kernel, stride),
                ]),
                _ => Err(Error::dim(format!(
                    "conv2d ({in_channels}→{out_channels}, k{kernel}) cannot take {input:?}"
                ))),
            },
            LayerSpec::GlobalSumPool => match *input {
                [c, _, _] => Ok(vec![c]),
                _ => Err(Error::dim(format!(
                    "global_sum_pool needs [c, h, w], got {input:?}"
                ))),
            },
            _ => Ok(input.to_vec()),
        }
    }
}

/// One layer and its parameters (weight and bias for dense/conv layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl Layer {
    fn init(spec: LayerSpec, rng: &mut SeededRng, std: f64) -> Result<Self> {
        spec.validate()?;
        let (weight, bias) = match spec {
            LayerSpec::Dense { inputs, outputs } => (
                Some(gaussian_sample(rng, &[inputs, outputs], 0.0, std)?),
                Some(Tensor::zeros(&[outputs])),
            ),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                Some(gaussian_sample(
                    rng,
                    &[out_channels, in_channels, kernel, kernel],
                    0.0,
                    std,
                )?),
                Some(Tensor::zeros(&[out_channels])),
            ),
            _ => (None, None),
        };
        Ok(Self { spec, weight, bias })
    }

    fn params(&self) -> (&Tensor, &Tensor) {
        (
            self.weight.as_ref().expect("parametric layer has a weight"),
            self.bias.as_ref().expect("parametric layer has a bias"),
        )
    }

    /// Forward through the linear part only (no bias), used for tangents.
    fn linear(&self, x: &Tensor) -> Result<Tensor> {
        match self.spec {
            LayerSpec::Dense { .. } => matmul(x, self.params().0),
            LayerSpec::Conv2d { stride, .. } => conv2d_forward(x, self.params().0, stride),
            LayerSpec::GlobalSumPool => global_sum_pool(x),
            _ => unreachable!("linear() called on an activation"),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if let Some(act) = self.spec.activation() {
            return Ok(x.map(|v| act.apply(v)));
        }
        let mut y = self.linear(x)?;
        if let Some(b) = &self.bias {
            add_channel_bias(&mut y, b);
        }
        Ok(y)
    }

    /// Adjoint of the linear part: returns (weight grad, bias grad, input grad).
    fn linear_backward(
        &self,
        x: &Tensor,
        g: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
        match self.spec {
            LayerSpec::Dense { .. } => {
                let w = self.params().0;
                let dw = matmul(&x.transpose()?, g)?;
                let db = channel_sums(g);
                let dx = matmul(g, &w.transpose()?)?;
                Ok((Some(dw), Some(db), dx))
            }
            LayerSpec::Conv2d { stride, .. } => {
                let w = self.params().0;
                let dw = conv2d_kernel_grad(x, g, w.shape(), stride)?;
                let db = channel_sums(g);
                let dx = conv2d_input_grad(g, w, x.shape(), stride)?;
                Ok((Some(dw), Some(db), dx))
            }
            LayerSpec::GlobalSumPool => Ok((None, None, global_sum_pool_backward(g, x.shape())?)),
            _ => unreachable!("linear_backward() called on an activation"),
        }
    }
}

/// Adds a per-channel bias to `n×c` or `n×c×h×w`.
fn add_channel_bias(y: &mut Tensor, b: &Tensor) {
    let c = b.len();
    let plane = y.row_len() / c;
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        *v += b.data()[(i / plane) % c];
    }
}

/// Sums `n×c` or `n×c×h×w` down to one value per channel.
fn channel_sums(g: &Tensor) -> Tensor {
    let c = g.shape()[1];
    let plane = g.row_len() / c;
    let mut out = vec![0.0; c];
    for (i, v) in g.data().iter().enumerate() {
        out[(i / plane) % c] += v;
    }
    Tensor::from_parts(vec![c], out)
}

/// Values retained by a forward pass: the input and every layer's output.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    acts: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn output(&self) -> Option<&Tensor> {
        self.acts.last()
    }

    /// Output of layer `i` (0-based).
    pub fn layer_output(&self, i: usize) -> Option<&Tensor> {
        self.acts.get(i + 1)
    }
}

/// Primal values and tangents retained by [`Sequential::forward_tangent`].
#[derive(Debug, Clone, Default)]
pub struct TangentTrace {
    acts: Vec<Tensor>,
    tans: Vec<Tensor>,
}

impl TangentTrace {
    pub fn output(&self) -> Option<(&Tensor, &Tensor)> {
        Some((self.acts.last()?, self.tans.last()?))
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// One tensor per parameter, in [`Sequential::params`] order.
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

#[derive(Debug, Clone)]
pub struct TangentGradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
    pub input_tangent: Tensor,
}

/// Feed-forward stack of layers operating on batched tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    /// Builds the stack with weights drawn from N(0, 0.02²) and zero biases.
    pub fn new(specs: &[LayerSpec], rng: &mut SeededRng) -> Result<Self> {
        Self::with_init_std(specs, rng, INIT_STD)
    }

    pub fn with_init_std(specs: &[LayerSpec], rng: &mut SeededRng, std: f64) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|&s| Layer::init(s, rng, std))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for l in &layers {
            l.spec.validate()?;
            let parametric = matches!(l.spec, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. });
            if parametric != (l.weight.is_some() && l.bias.is_some()) {
                return Err(Error::contract(format!(
                    "layer {:?} has mismatched parameters",
                    l.spec
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Per-sample output shape, checking that the specs compose.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.spec.output_shape(&shape))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        self.output_shape(&x.shape()[1..]).map(|_| ())
    }

    /// Forward pass without retaining intermediates.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for l in &self.layers {
            let next = l.forward(acts.last().unwrap())?;
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, ForwardTrace { acts }))
    }

    fn check_trace(&self, n_acts: usize, upstream: &Tensor, out: &Tensor) -> Result<()> {
        if n_acts != self.layers.len() + 1 {
            return Err(Error::State(
                "backward called without a matching forward pass".into(),
            ));
        }
        if upstream.shape() != out.shape() {
            return Err(Error::dim(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        Ok(())
    }

    /// Reverse pass: gradients of `Σ upstream ⊙ output` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Tensor) -> Result<Gradients> {
        let out = trace.output().ok_or_else(|| {
            Error::State("backward called without a matching forward pass".into())
        })?;
        self.check_trace(trace.acts.len(), upstream, out)?;
        let mut grads: Vec<Tensor> = Vec::new();
        let mut g = upstream.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            if let Some(act) = l.spec.activation() {
                let y = &trace.acts[i + 1];
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gv, (&xv, &yv))| gv * act.derivative(xv, yv))
                    .collect();
                g = Tensor::from_parts(x.shape().to_vec(), data);
            } else {
                let (dw, db, dx) = l.linear_backward(x, &g)?;
                // Pushed in reverse; flipped below to match params() order.
                if let (Some(dw), Some(db)) = (dw, db) {
                    grads.push(db);
                    grads.push(dw);
                }
                g = dx;
            }
        }
        grads.reverse();
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }

    /// Forward pass that also carries the directional derivative along
    /// `x_tangent`.
    pub fn forward_tangent(&self, x: &Tensor, x_tangent: &Tensor) -> Result<TangentTrace> {
        self.check_input(x)?;
        if x.shape() != x_tangent.shape() {
            return Err(Error::dim(format!(
                "tangent {:?} does not match input {:?}",
                x_tangent.shape(),
                x.shape()
            )));
        }
        let mut acts = vec![x.clone()];
        let mut tans = vec![x_tangent.clone()];
        for l in &self.layers {
            let (a, t) = (acts.last().unwrap(), tans.last().unwrap());
            let y = l.forward(a)?;
            let ty = match l.spec.activation() {
                Some(act) => {
                    let data = t
                        .data()
                        .iter()
                        .zip(a.data().iter().zip(y.data()))
                        .map(|(&tv, (&av, &yv))| tv * act.derivative(av, yv))
                        .collect();
                    Tensor::from_parts(a.shape().to_vec(), data)
                }
                None => l.linear(t)?,
            };
            acts.push(y);
            tans.push(ty);
        }
        Ok(TangentTrace { acts, tans })
    }

    /// Reverse pass through a tangent forward pass, for the scalar
    /// `Σ g_out ⊙ output + Σ g_tangent ⊙ output_tangent`.
    pub fn backward_tangent(
        &self,
        trace: &TangentTrace,
        g_out: &Tensor,
        g_tangent: &Tensor,
    ) -> Result<TangentGradients> {
        let (out, _) = trace.output().ok_or_else(|| {
            Error::State("backward called without a matching forward pass".into())
        })?;
        self.check_trace(trace.acts.len(), g_out, out)?;
        self.check_trace(trace.tans.len(), g_tangent, out)?;
        let mut grads: Vec<Tensor> = Vec::new();
        let mut g = g_out.clone();
        let mut gt = g_tangent.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (x, xt) = (&trace.acts[i], &trace.tans[i]);
            if let Some(act) = l.spec.activation() {
                let y = &trace.acts[i + 1];
                let n = x.len();
                let mut gx = Vec::with_capacity(n);
                let mut gxt = Vec::with_capacity(n);
                for k in 0..n {
                    let (xv, yv) = (x.data()[k], y.data()[k]);
                    let d1 = act.derivative(xv, yv);
                    let d2 = act.second_derivative(yv);
                    gx.push(g.data()[k] * d1 + gt.data()[k] * d2 * xt.data()[k]);
                    gxt.push(gt.data()[k] * d1);
                }
                g = Tensor::from_parts(x.shape().to_vec(), gx);
                gt = Tensor::from_parts(x.shape().to_vec(), gxt);
            } else {
                let (dw, db, dx) = l.linear_backward(x, &g)?;
                let (dwt, _, dxt) = l.linear_backward(xt, &gt)?;
                if let (Some(mut dw), Some(db), Some(dwt)) = (dw, db, dwt) {
                    dw.add_assign(&dwt)?;
                    grads.push(db);
                    grads.push(dw);
                }
                g = dx;
                gt = dxt;
            }
        }
        grads.reverse();
        Ok(TangentGradients {
            params: grads,
            input: g,
            input_tangent: gt,
        })
    }
}
