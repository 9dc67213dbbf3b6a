use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Settings used for adversarial training runs (lr 1e-4, b1 0, b2 0.9).
    pub const GAN: AdamConfig = AdamConfig {
        lr: 1e-4,
        b1: 0.0,
        b2: 0.9,
        eps: 1e-8,
    };

    /// Textbook defaults (lr 1e-3, b1 0.9, b2 0.999).
    pub const STANDARD: AdamConfig = AdamConfig {
        lr: 1e-3,
        b1: 0.9,
        b2: 0.999,
        eps: 1e-8,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.b1)
            && (0.0..1.0).contains(&self.b2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid Adam settings {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::GAN
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "adam tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::dim(format!(
                    "adam parameter {i}: parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
            g.ensure_finite("adam gradient")?;
        }
        self.step += 1;
        let AdamConfig { lr, b1, b2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.7, -0.01, 250.0] {
            let mut p = Tensor::scalar(1.0);
            let mut opt = AdamState::new(AdamConfig::STANDARD, &[&p]).unwrap();
            opt.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();
            let delta = p.data()[0] - 1.0;
            assert!(
                (delta + 0.001 * g.signum()).abs() < 1e-6,
                "g={g} delta={delta}"
            );
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let mut opt = AdamState::new(AdamConfig::GAN, &[&p]).unwrap();
        for _ in 0..100 {
            opt.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(opt.step, 100);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut x = Tensor::scalar(2.0);
        let mut opt = AdamState::new(AdamConfig::STANDARD, &[&x]).unwrap();
        let f = |x: &Tensor| x.data()[0].powi(2);
        let f0 = f(&x);
        for _ in 0..2 {
            let g = x.scale(2.0);
            opt.step(&mut [&mut x], &[g]).unwrap();
        }
        assert!(f(&x) < f0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut opt = AdamState::new(AdamConfig::STANDARD, &[&p]).unwrap();
        let err = opt.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert_eq!(opt.step, 0);
    }
}
