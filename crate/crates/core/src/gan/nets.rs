use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    gaussian_sample, ForwardTrace, LayerSpec, SeededRng, Sequential, Tensor, INIT_STD,
};

/// Final linear layer of the discriminator: `score = ⟨w, y⟩ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Tensor,
    /// Single-element tensor so it can be optimised like any other parameter.
    pub bias: Tensor,
}

impl LinearHead {
    pub fn new(weight: Tensor, bias: f64) -> Self {
        Self {
            weight,
            bias: Tensor::scalar(bias),
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.len()
    }

    pub fn b(&self) -> f64 {
        self.bias.data()[0]
    }

    /// Scores for an `n×C` feature matrix.
    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        if y.rank() != 2 || y.shape()[1] != c {
            return Err(Error::dim(format!(
                "head with {c} weights cannot score features {:?}",
                y.shape()
            )));
        }
        let b = self.b();
        let w = self.weight.data();
        let scores = (0..y.rows())
            .map(|i| y.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect();
        Tensor::new(vec![y.rows()], scores)
    }

    /// Gradients of `Σ g ⊙ scores` for weight, bias and features.
    pub fn backward(&self, y: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (n, c) = (y.rows(), self.channels());
        if g.shape() != [n] {
            return Err(Error::dim(format!(
                "score gradient {:?} does not match {n} samples",
                g.shape()
            )));
        }
        let w = self.weight.data();
        let mut gw = vec![0.0; c];
        let mut gy = Vec::with_capacity(n * c);
        for i in 0..n {
            let gi = g.data()[i];
            for (k, &yv) in y.row(i).iter().enumerate() {
                gw[k] += gi * yv;
                gy.push(gi * w[k]);
            }
        }
        Ok((
            Tensor::new(vec![c], gw)?,
            Tensor::scalar(g.sum()),
            Tensor::new(vec![n, c], gy)?,
        ))
    }
}

/// Discriminator split into a feature body (ending in a `C`-vector per
/// sample) and a scalar linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub body: Sequential,
    pub head: LinearHead,
    input_shape: Vec<usize>,
}

/// Forward results needed for a later reverse pass.
#[derive(Debug, Clone)]
pub struct DiscriminatorPass {
    pub features: Tensor,
    pub scores: Tensor,
    trace: ForwardTrace,
}

impl DiscriminatorNet {
    pub fn new(specs: &[LayerSpec], input_shape: &[usize], rng: &mut SeededRng) -> Result<Self> {
        let body = Sequential::new(specs, rng)?;
        let c = feature_width(&body, input_shape)?;
        let head = LinearHead::new(gaussian_sample(rng, &[c], 0.0, INIT_STD)?, 0.0);
        Ok(Self {
            body,
            head,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn from_parts(body: Sequential, head: LinearHead, input_shape: &[usize]) -> Result<Self> {
        let c = feature_width(&body, input_shape)?;
        if head.channels() != c {
            return Err(Error::dim(format!(
                "head has {} weights but the body produces {c} features",
                head.channels()
            )));
        }
        Ok(Self {
            body,
            head,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn channels(&self) -> usize {
        self.head.channels()
    }

    /// True when the body pools a spatial feature map.
    pub fn is_convolutional(&self) -> bool {
        self.body
            .layers()
            .iter()
            .any(|l| matches!(l.spec, LayerSpec::GlobalSumPool))
    }

    /// Body parameters followed by head weight and bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.body.params();
        p.push(&self.head.weight);
        p.push(&self.head.bias);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.body.params_mut();
        p.push(&mut self.head.weight);
        p.push(&mut self.head.bias);
        p
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.shape()[1..] != self.input_shape[..] {
            return Err(Error::dim(format!(
                "discriminator expects samples of shape {:?}, got batch {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Pooled features `Y = D_R(x)` and scores `⟨w, Y[i]⟩ + b`.
    pub fn forward_split(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_batch(x)?;
        let y = self.body.infer(x)?;
        let s = self.head.forward(&y)?;
        Ok((y, s))
    }

    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_split(x)?.1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscriminatorPass> {
        self.check_batch(x)?;
        let (features, trace) = self.body.forward(x)?;
        let scores = self.head.forward(&features)?;
        Ok(DiscriminatorPass {
            features,
            scores,
            trace,
        })
    }

    /// Gradients of `Σ g ⊙ scores` for all parameters and the input batch.
    pub fn backward_scores(
        &self,
        pass: &DiscriminatorPass,
        g: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let (gw, gb, gy) = self.head.backward(&pass.features, g)?;
        let mut grads = self.body.backward(&pass.trace, &gy)?;
        grads.params.push(gw);
        grads.params.push(gb);
        Ok((grads.params, grads.input))
    }

    /// Gradient with respect to the input only, for a feature-space upstream.
    pub fn backward_features(
        &self,
        pass: &DiscriminatorPass,
        g_features: &Tensor,
    ) -> Result<Tensor> {
        Ok(self.body.backward(&pass.trace, g_features)?.input)
    }

    /// Spatial map entering the final global sum pool, `n×C×h'×w'`.
    pub fn feature_map(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let layers = self.body.layers();
        let pool = layers
            .iter()
            .rposition(|l| matches!(l.spec, LayerSpec::GlobalSumPool))
            .ok_or_else(|| {
                Error::contract("discriminator body has no global sum pool (not convolutional)")
            })?;
        if pool + 1 != layers.len() {
            return Err(Error::contract(
                "global sum pool must be the last body layer for a feature map",
            ));
        }
        let (_, trace) = self.body.forward(x)?;
        let map = if pool == 0 {
            x.clone()
        } else {
            trace.layer_output(pool - 1).unwrap().clone()
        };
        Ok(map)
    }
}

fn feature_width(body: &Sequential, input_shape: &[usize]) -> Result<usize> {
    match body.output_shape(input_shape)?.as_slice() {
        [c] => Ok(*c),
        other => Err(Error::dim(format!(
            "discriminator body must end in a feature vector, produces {other:?}"
        ))),
    }
}

/// Generator: an MLP from latent vectors, reshaped to the sample shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub latent_dim: usize,
    pub body: Sequential,
    sample_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GeneratorPass {
    pub samples: Tensor,
    trace: ForwardTrace,
}

impl GeneratorNet {
    pub fn new(
        latent_dim: usize,
        specs: &[LayerSpec],
        sample_shape: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let body = Sequential::new(specs, rng)?;
        Self::from_parts(latent_dim, body, sample_shape)
    }

    pub fn from_parts(latent_dim: usize, body: Sequential, sample_shape: &[usize]) -> Result<Self> {
        let out = body.output_shape(&[latent_dim])?;
        let want: usize = sample_shape.iter().product();
        if out != [want] {
            return Err(Error::dim(format!(
                "generator produces {out:?} per sample, sample shape {sample_shape:?} needs [{want}]"
            )));
        }
        Ok(Self {
            latent_dim,
            body,
            sample_shape: sample_shape.to_vec(),
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    fn batch_shape(&self, n: usize) -> Vec<usize> {
        let mut s = vec![n];
        s.extend_from_slice(&self.sample_shape);
        s
    }

    pub fn infer(&self, z: &Tensor) -> Result<Tensor> {
        let out = self.body.infer(z)?;
        out.reshape(&self.batch_shape(z.rows()))
    }

    pub fn forward(&self, z: &Tensor) -> Result<GeneratorPass> {
        let (out, trace) = self.body.forward(z)?;
        Ok(GeneratorPass {
            samples: out.reshape(&self.batch_shape(z.rows()))?,
            trace,
        })
    }

    /// Parameter gradients of `Σ g ⊙ samples`.
    pub fn backward(&self, pass: &GeneratorPass, g: &Tensor) -> Result<Vec<Tensor>> {
        let flat = g.reshape(&[g.rows(), g.row_len()])?;
        Ok(self.body.backward(&pass.trace, &flat)?.params)
    }

    pub fn latent(&self, n: usize, rng: &mut SeededRng) -> Result<Tensor> {
        gaussian_sample(rng, &[n, self.latent_dim], 0.0, 1.0)
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Tensor> {
        let z = self.latent(n, rng)?;
        self.infer(&z)
    }
}

/// Network layouts for the two data families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// 2-D points: generator 8→64→64→2, discriminator body 2→64→64→64.
    Points,
    /// `1×h×w` images: MLP generator with tanh output, three stride-2 conv
    /// layers (kernel 2) plus global sum pooling in the discriminator, C = 128.
    Images,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Architecture {
    pub fn latent_dim(self) -> usize {
        match self {
            Architecture::Points => 8,
            Architecture::Images => 32,
        }
    }

    pub fn generator_specs(self, sample_shape: &[usize]) -> Vec<LayerSpec> {
        let leaky = LayerSpec::LeakyRelu { slope: LEAKY_SLOPE };
        let out: usize = sample_shape.iter().product();
        match self {
            Architecture::Points => vec![
                LayerSpec::Dense {
                    inputs: 8,
                    outputs: 64,
                },
                leaky,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: 64,
                },
                leaky,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: out,
                },
            ],
            Architecture::Images => vec![
                LayerSpec::Dense {
                    inputs: 32,
                    outputs: 256,
                },
                leaky,
                LayerSpec::Dense {
                    inputs: 256,
                    outputs: out,
                },
                LayerSpec::Tanh,
            ],
        }
    }

    pub fn discriminator_specs(self, sample_shape: &[usize]) -> Vec<LayerSpec> {
        let leaky = LayerSpec::LeakyRelu { slope: LEAKY_SLOPE };
        match self {
            Architecture::Points => vec![
                LayerSpec::Dense {
                    inputs: sample_shape[0],
                    outputs: 64,
                },
                leaky,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: 64,
                },
                leaky,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: 64,
                },
                leaky,
            ],
            Architecture::Images => {
                let conv = |i, o| LayerSpec::Conv2d {
                    in_channels: i,
                    out_channels: o,
                    kernel: 2,
                    stride: 2,
                };
                vec![
                    conv(sample_shape[0], 32),
                    leaky,
                    conv(32, 64),
                    leaky,
                    conv(64, 128),
                    leaky,
                    LayerSpec::GlobalSumPool,
                ]
            }
        }
    }

    pub fn build(
        self,
        sample_shape: &[usize],
        rng: &mut SeededRng,
    ) -> Result<(GeneratorNet, DiscriminatorNet)> {
        let g = GeneratorNet::new(
            self.latent_dim(),
            &self.generator_specs(sample_shape),
            sample_shape,
            rng,
        )?;
        let d = DiscriminatorNet::new(&self.discriminator_specs(sample_shape), sample_shape, rng)?;
        Ok((g, d))
    }
}
