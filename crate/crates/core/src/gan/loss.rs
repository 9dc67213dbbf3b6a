use serde::{Deserialize, Serialize};

use super::DiscriminatorNet;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Wgan,
    WganGp,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialLoss {
    pub kind: LossKind,
    /// Gradient-penalty weight; only read for `wgan_gp`.
    #[serde(default = "default_gp_lambda")]
    pub gp_lambda: f64,
}

fn default_gp_lambda() -> f64 {
    10.0
}

impl AdversarialLoss {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            gp_lambda: default_gp_lambda(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gp_lambda >= 0.0) || !self.gp_lambda.is_finite() {
            return Err(Error::Config(format!(
                "gp_lambda must be >= 0, got {}",
                self.gp_lambda
            )));
        }
        Ok(())
    }

    /// Discriminator updates per generator update unless configured.
    pub fn default_n_critic(&self) -> usize {
        match self.kind {
            LossKind::Wgan | LossKind::WganGp => 5,
            LossKind::Hinge => 1,
        }
    }

    /// Discriminator loss (without penalty) and its gradients with respect
    /// to the real and fake scores.
    pub fn discriminator_loss(
        &self,
        real: &Tensor,
        fake: &Tensor,
    ) -> Result<(f64, Tensor, Tensor)> {
        check_nonempty(real, fake)?;
        let (nr, nf) = (real.len() as f64, fake.len() as f64);
        match self.kind {
            LossKind::Wgan | LossKind::WganGp => Ok((
                wgan_d_loss(real, fake)?,
                Tensor::full(real.shape(), -1.0 / nr),
                Tensor::full(fake.shape(), 1.0 / nf),
            )),
            LossKind::Hinge => Ok((
                hinge_d_loss(real, fake)?,
                real.map(|r| if 1.0 - r > 0.0 { -1.0 / nr } else { 0.0 }),
                fake.map(|f| if 1.0 + f > 0.0 { 1.0 / nf } else { 0.0 }),
            )),
        }
    }
}

fn check_nonempty(real: &Tensor, fake: &Tensor) -> Result<()> {
    if real.rank() != 1 || fake.rank() != 1 {
        return Err(Error::dim(format!(
            "score vectors expected, got {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    if real.is_empty() || fake.is_empty() {
        return Err(Error::contract("adversarial loss needs non-empty batches"));
    }
    Ok(())
}

/// `mean(fake) − mean(real)`.
pub fn wgan_d_loss(real: &Tensor, fake: &Tensor) -> Result<f64> {
    check_nonempty(real, fake)?;
    Ok(fake.mean() - real.mean())
}

/// `mean(max(0, 1 − real)) + mean(max(0, 1 + fake))`.
pub fn hinge_d_loss(real: &Tensor, fake: &Tensor) -> Result<f64> {
    check_nonempty(real, fake)?;
    let r = real.map(|v| (1.0 - v).max(0.0)).mean();
    let f = fake.map(|v| (1.0 + v).max(0.0)).mean();
    Ok(r + f)
}

/// Per-sample `u·real + (1−u)·fake` with `u ~ U(0, 1)`.
pub fn interpolate(real: &Tensor, fake: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
    if real.shape() != fake.shape() {
        return Err(Error::dim(format!(
            "cannot interpolate {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let mut out = real.clone();
    for i in 0..real.rows() {
        let u = rng.uniform();
        for (o, &f) in out.row_mut(i).iter_mut().zip(fake.row(i)) {
            *o = u * *o + (1.0 - u) * f;
        }
    }
    Ok(out)
}

/// Value of the gradient penalty and its derivatives.
#[derive(Debug, Clone)]
pub struct PenaltyGrad {
    pub value: f64,
    /// `∇_x D(x)` per sample.
    pub input_grads: Tensor,
    /// Derivative of `value` with respect to every discriminator parameter.
    pub param_grads: Vec<Tensor>,
}

/// `λ · mean_i (‖∇_x D(x_i)‖ − 1)²` at the given points, with its exact
/// parameter gradient.
///
/// With `v_i = ∂P/∂g_i` held fixed, `∂P/∂θ = ∂/∂θ Σ_i ⟨v_i, ∇_x D(x_i)⟩`,
/// the parameter gradient of the directional derivative of `D` along `v_i`.
/// That is computed by pushing `v` forward as a tangent and reversing
/// through the primal/tangent pair.
pub fn penalty_with_grads(
    d: &DiscriminatorNet,
    x_hat: &Tensor,
    lambda: f64,
) -> Result<PenaltyGrad> {
    let n = x_hat.rows();
    let pass = d.forward(x_hat)?;
    let (_, input_grads) = d.backward_scores(&pass, &Tensor::full(&[n], 1.0))?;
    let mut value = 0.0;
    let mut v = input_grads.clone();
    for i in 0..n {
        let norm = input_grads.row(i).iter().map(|g| g * g).sum::<f64>().sqrt();
        value += (norm - 1.0).powi(2);
        let coef = if norm > 1e-12 {
            2.0 * lambda * (norm - 1.0) / (n as f64 * norm)
        } else {
            0.0
        };
        for g in v.row_mut(i) {
            *g *= coef;
        }
    }
    value *= lambda / n as f64;

    let trace = d.body.forward_tangent(x_hat, &v)?;
    let (features, feat_tangent) = trace.output().expect("tangent trace has output");
    let c = d.channels();
    let mut g_tan = Tensor::zeros(features.shape());
    for i in 0..n {
        g_tan.row_mut(i).copy_from_slice(d.head.weight.data());
    }
    let tg = d
        .body
        .backward_tangent(&trace, &Tensor::zeros(features.shape()), &g_tan)?;
    let mut gw = vec![0.0; c];
    for i in 0..n {
        for (a, b) in gw.iter_mut().zip(feat_tangent.row(i)) {
            *a += b;
        }
    }
    let mut param_grads = tg.params;
    param_grads.push(Tensor::new(vec![c], gw)?);
    param_grads.push(Tensor::scalar(0.0));
    Ok(PenaltyGrad {
        value,
        input_grads,
        param_grads,
    })
}

/// WGAN-GP penalty on random interpolates of a real and a fake batch.
pub fn gradient_penalty(
    d: &DiscriminatorNet,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut SeededRng,
    lambda: f64,
) -> Result<f64> {
    let x_hat = interpolate(real, fake, rng)?;
    Ok(penalty_with_grads(d, &x_hat, lambda)?.value)
}
