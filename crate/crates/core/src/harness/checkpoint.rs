//! Checkpoints as named arrays: network layouts, parameters, optimizer
//! moments, feature statistics and the UFS configuration.

use std::collections::HashMap;
use std::path::Path;

use super::formats::{decode_arrays, encode_arrays, write_atomic, NamedArray};
use crate::error::{Error, Result};
use crate::gan::{DiscriminatorNet, GanState, GeneratorNet, LinearHead};
use crate::numerics::{AdamConfig, AdamState, Layer, LayerSpec, Sequential, Tensor};
use crate::ufs::{BetaAnneal, FeatureStats, UfsConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A saved training state and the UFS settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: GanState,
    pub ufs: Option<UfsConfig>,
}

fn encode_spec(s: &LayerSpec) -> Vec<f64> {
    match *s {
        LayerSpec::Dense { inputs, outputs } => vec![0.0, inputs as f64, outputs as f64],
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => vec![
            1.0,
            in_channels as f64,
            out_channels as f64,
            kernel as f64,
            stride as f64,
        ],
        LayerSpec::LeakyRelu { slope } => vec![2.0, slope],
        LayerSpec::Relu => vec![3.0],
        LayerSpec::Tanh => vec![4.0],
        LayerSpec::GlobalSumPool => vec![5.0],
    }
}

fn decode_spec(v: &[f64], name: &str) -> Result<LayerSpec> {
    let u = |i: usize| v[i] as usize;
    let bad = || Error::Incompatible(format!("{name}: unrecognised layer code {v:?}"));
    let spec = match (v.first().copied(), v.len()) {
        (Some(c), 3) if c == 0.0 => LayerSpec::Dense {
            inputs: u(1),
            outputs: u(2),
        },
        (Some(c), 5) if c == 1.0 => LayerSpec::Conv2d {
            in_channels: u(1),
            out_channels: u(2),
            kernel: u(3),
            stride: u(4),
        },
        (Some(c), 2) if c == 2.0 => LayerSpec::LeakyRelu { slope: v[1] },
        (Some(c), 1) if c == 3.0 => LayerSpec::Relu,
        (Some(c), 1) if c == 4.0 => LayerSpec::Tanh,
        (Some(c), 1) if c == 5.0 => LayerSpec::GlobalSumPool,
        _ => return Err(bad()),
    };
    Ok(spec)
}

fn shape_values(s: &[usize]) -> Vec<f64> {
    s.iter().map(|&d| d as f64).collect()
}

fn push_net(out: &mut Vec<NamedArray>, prefix: &str, body: &Sequential) {
    for (i, l) in body.layers().iter().enumerate() {
        out.push(NamedArray::values(
            format!("{prefix}/layer{i}/spec"),
            encode_spec(&l.spec),
        ));
        if let (Some(w), Some(b)) = (&l.weight, &l.bias) {
            out.push(NamedArray::from_tensor(
                format!("{prefix}/layer{i}/weight"),
                w,
            ));
            out.push(NamedArray::from_tensor(
                format!("{prefix}/layer{i}/bias"),
                b,
            ));
        }
    }
}

fn push_adam(out: &mut Vec<NamedArray>, prefix: &str, a: &AdamState) {
    let c = a.config;
    out.push(NamedArray::values(
        format!("{prefix}/config"),
        vec![c.lr, c.b1, c.b2, c.eps],
    ));
    out.push(NamedArray::values(
        format!("{prefix}/step"),
        vec![a.step as f64],
    ));
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        out.push(NamedArray::from_tensor(format!("{prefix}/m{i}"), m));
        out.push(NamedArray::from_tensor(format!("{prefix}/v{i}"), v));
    }
}

fn encode_ufs(u: &UfsConfig) -> Vec<f64> {
    let mut v = vec![
        u.alpha,
        u.beta,
        u.epsilon,
        u.gamma,
        u.denom_floor,
        u.near_real_ratio,
        u.momentum,
        u.strict as u8 as f64,
    ];
    if let Some(a) = u.beta_anneal {
        v.extend([a.beta_start, a.beta_end, a.anneal_fraction]);
    }
    v
}

fn decode_ufs(v: &[f64]) -> Result<UfsConfig> {
    if v.len() != 8 && v.len() != 11 {
        return Err(Error::Incompatible(format!(
            "ufs/config has {} values",
            v.len()
        )));
    }
    Ok(UfsConfig {
        alpha: v[0],
        beta: v[1],
        epsilon: v[2],
        gamma: v[3],
        denom_floor: v[4],
        near_real_ratio: v[5],
        momentum: v[6],
        strict: v[7] != 0.0,
        beta_anneal: (v.len() == 11).then(|| BetaAnneal {
            beta_start: v[8],
            beta_end: v[9],
            anneal_fraction: v[10],
        }),
    })
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let st = &ck.state;
    let mut a = vec![
        NamedArray::values("meta/iteration", vec![st.iteration as f64]),
        NamedArray::values("meta/d_steps", vec![st.d_steps as f64]),
        NamedArray::values("generator/latent_dim", vec![st.generator.latent_dim as f64]),
        NamedArray::values(
            "generator/sample_shape",
            shape_values(st.generator.sample_shape()),
        ),
        NamedArray::values(
            "discriminator/input_shape",
            shape_values(st.discriminator.input_shape()),
        ),
    ];
    push_net(&mut a, "generator", &st.generator.body);
    push_net(&mut a, "discriminator", &st.discriminator.body);
    a.push(NamedArray::from_tensor(
        "discriminator/head/weight",
        &st.discriminator.head.weight,
    ));
    a.push(NamedArray::from_tensor(
        "discriminator/head/bias",
        &st.discriminator.head.bias,
    ));
    push_adam(&mut a, "opt_g", &st.opt_g);
    push_adam(&mut a, "opt_d", &st.opt_d);
    a.push(NamedArray::from_tensor("stats/mu_real", &st.stats.mu_real));
    a.push(NamedArray::from_tensor("stats/mu_fake", &st.stats.mu_fake));
    a.push(NamedArray::values(
        "stats/meta",
        vec![st.stats.momentum, st.stats.initialized as u8 as f64],
    ));
    if let Some(u) = &ck.ufs {
        a.push(NamedArray::values("ufs/config", encode_ufs(u)));
    }
    encode_arrays(CHECKPOINT_VERSION, &a)
}

struct Lookup {
    arrays: HashMap<String, NamedArray>,
}

impl Lookup {
    fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Incompatible(format!("checkpoint lacks array {name}")))
    }

    fn tensor(&self, name: &str) -> Result<Tensor> {
        let a = self.get(name)?;
        Tensor::new(a.shape.clone(), a.data.clone())
            .map_err(|e| Error::Incompatible(format!("array {name}: {e}")))
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let a = self.get(name)?;
        a.data
            .first()
            .copied()
            .ok_or_else(|| Error::Incompatible(format!("array {name} is empty")))
    }

    fn dims(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self.get(name)?.data.iter().map(|&v| v as usize).collect())
    }

    fn net(&self, prefix: &str) -> Result<Sequential> {
        let mut layers = Vec::new();
        for i in 0.. {
            let key = format!("{prefix}/layer{i}/spec");
            if !self.arrays.contains_key(&key) {
                break;
            }
            let spec = decode_spec(&self.get(&key)?.data, &key)?;
            let parametric = matches!(spec, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. });
            let (weight, bias) = if parametric {
                (
                    Some(self.tensor(&format!("{prefix}/layer{i}/weight"))?),
                    Some(self.tensor(&format!("{prefix}/layer{i}/bias"))?),
                )
            } else {
                (None, None)
            };
            layers.push(Layer { spec, weight, bias });
        }
        Sequential::from_layers(layers)
    }

    fn adam(&self, prefix: &str, n: usize) -> Result<AdamState> {
        let c = &self.get(&format!("{prefix}/config"))?.data;
        if c.len() != 4 {
            return Err(Error::Incompatible(format!(
                "{prefix}/config has {} values",
                c.len()
            )));
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            m.push(self.tensor(&format!("{prefix}/m{i}"))?);
            v.push(self.tensor(&format!("{prefix}/v{i}"))?);
        }
        Ok(AdamState {
            config: AdamConfig {
                lr: c[0],
                b1: c[1],
                b2: c[2],
                eps: c[3],
            },
            step: self.scalar(&format!("{prefix}/step"))? as u64,
            m,
            v,
        })
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let arrays = decode_arrays(bytes, CHECKPOINT_VERSION)?;
    let l = Lookup {
        arrays: arrays.into_iter().map(|a| (a.name.clone(), a)).collect(),
    };
    let generator = GeneratorNet::from_parts(
        l.scalar("generator/latent_dim")? as usize,
        l.net("generator")?,
        &l.dims("generator/sample_shape")?,
    )?;
    let head = LinearHead {
        weight: l.tensor("discriminator/head/weight")?,
        bias: l.tensor("discriminator/head/bias")?,
    };
    let discriminator = DiscriminatorNet::from_parts(
        l.net("discriminator")?,
        head,
        &l.dims("discriminator/input_shape")?,
    )?;
    let opt_g = l.adam("opt_g", generator.body.params().len())?;
    let opt_d = l.adam("opt_d", discriminator.params().len())?;
    let meta = &l.get("stats/meta")?.data;
    if meta.len() != 2 {
        return Err(Error::Incompatible("stats/meta must hold 2 values".into()));
    }
    let stats = FeatureStats {
        mu_real: l.tensor("stats/mu_real")?,
        mu_fake: l.tensor("stats/mu_fake")?,
        momentum: meta[0],
        initialized: meta[1] != 0.0,
    };
    let ufs = match l.arrays.get("ufs/config") {
        Some(a) => Some(decode_ufs(&a.data)?),
        None => None,
    };
    Ok(Checkpoint {
        state: GanState {
            generator,
            discriminator,
            opt_g,
            opt_d,
            stats,
            iteration: l.scalar("meta/iteration")? as u64,
            d_steps: l.scalar("meta/d_steps")? as u64,
        },
        ufs,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
