use serde::{Deserialize, Serialize};

use super::loss::{interpolate, penalty_with_grads, AdversarialLoss, LossKind};
use super::nets::{DiscriminatorNet, GeneratorNet};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, SeededRng, Tensor};
use crate::selection::{anneal_k, select_indices, SelectionConfig, SelectionMode};
use crate::ufs::{apply_suppression, suppression_for, FeatureStats, SuppressionMatrix, UfsConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Discriminator steps per generator step; defaults by loss kind.
    #[serde(default)]
    pub n_critic: Option<usize>,
    /// Total generator iterations.
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    pub loss: AdversarialLoss,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub ufs: Option<UfsConfig>,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
}

impl TrainConfig {
    pub fn new(batch_size: usize, iterations: u64, loss: LossKind) -> Self {
        Self {
            batch_size,
            n_critic: None,
            iterations,
            seed: 0,
            loss: AdversarialLoss::new(loss),
            adam: AdamConfig::GAN,
            ufs: None,
            selection: None,
        }
    }

    pub fn critic_steps(&self) -> usize {
        self.n_critic
            .unwrap_or_else(|| self.loss.default_n_critic())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.critic_steps() < 1 {
            return Err(Error::Config("n_critic must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        self.loss.validate()?;
        self.adam.validate()?;
        if let Some(u) = &self.ufs {
            u.validate()?;
        }
        if let Some(s) = &self.selection {
            s.validate(self.batch_size)?;
        }
        Ok(())
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct GanState {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub stats: FeatureStats,
    /// Completed generator iterations.
    pub iteration: u64,
    pub d_steps: u64,
}

impl GanState {
    pub fn new(
        generator: GeneratorNet,
        discriminator: DiscriminatorNet,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let momentum = cfg.ufs.map_or(0.0, |u| u.momentum);
        Ok(Self {
            opt_g: AdamState::new(cfg.adam, &generator.body.params())?,
            opt_d: AdamState::new(cfg.adam, &discriminator.params())?,
            stats: FeatureStats::new(discriminator.channels(), momentum)?,
            generator,
            discriminator,
            iteration: 0,
            d_steps: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DStepReport {
    /// Adversarial loss plus penalty.
    pub loss: f64,
    pub penalty: f64,
    pub real_scores: Tensor,
    pub fake_scores: Tensor,
}

#[derive(Debug, Clone)]
pub struct GStepReport {
    pub loss: f64,
    /// Head scores of the (masked) fake features, one per sample.
    pub scores: Tensor,
    pub suppression: SuppressionMatrix,
    pub selected: Vec<usize>,
}

/// Intermediate values of one generator objective evaluation.
#[derive(Debug, Clone)]
pub struct GeneratorObjective {
    pub loss: f64,
    pub scores: Tensor,
    pub suppression: SuppressionMatrix,
    pub selected: Vec<usize>,
    /// `∂loss/∂Y` for the pooled fake features.
    pub feature_grad: Tensor,
}

/// Suppression mask for a batch of fake features under `cfg` at iteration
/// `t`. Returns S ≡ 1 when UFS is off, or when statistics are not yet
/// populated and `strict` is unset.
pub fn generator_mask(
    state: &GanState,
    cfg: &TrainConfig,
    features: &Tensor,
) -> Result<SuppressionMatrix> {
    let (n, c) = (features.rows(), features.shape()[1]);
    let Some(ufs) = &cfg.ufs else {
        return Ok(SuppressionMatrix::ones(n, c));
    };
    if !state.stats.initialized {
        if ufs.strict {
            return Err(Error::State(
                "UFS statistics are uninitialised; run a discriminator step first".into(),
            ));
        }
        return Ok(SuppressionMatrix::ones(n, c));
    }
    let at = ufs.at_iteration(state.iteration, cfg.iterations);
    suppression_for(
        &state.stats,
        &state.discriminator.head.weight,
        features,
        &at,
    )
}

/// `−mean_{i∈K} ȳ_i` with `ȳ = D_L(Y ⊗ S)`, S held constant, and K the
/// selected subset (all samples when selection is off).
pub fn generator_objective(
    state: &GanState,
    cfg: &TrainConfig,
    features: &Tensor,
    rng: &mut SeededRng,
) -> Result<GeneratorObjective> {
    let d = &state.discriminator;
    let suppression = generator_mask(state, cfg, features)?;
    let scores = apply_suppression(features, &suppression, &d.head)?;
    let n = scores.len();
    let selected = match &cfg.selection {
        Some(sel) if sel.mode != SelectionMode::None => {
            let k = anneal_k(sel, state.iteration, cfg.iterations).min(n);
            select_indices(&scores, k, sel.mode, rng)?
        }
        _ => (0..n).collect(),
    };
    let k = selected.len() as f64;
    let loss = -selected.iter().map(|&i| scores.data()[i]).sum::<f64>() / k;
    let c = d.channels();
    let w = d.head.weight.data();
    let mut feature_grad = Tensor::zeros(features.shape());
    for &i in &selected {
        let s_row = suppression.values().row(i);
        for ((g, &wc), &sc) in feature_grad.row_mut(i).iter_mut().zip(w).zip(s_row) {
            *g = -wc * sc / k;
        }
    }
    debug_assert_eq!(feature_grad.row_len(), c);
    Ok(GeneratorObjective {
        loss,
        scores,
        suppression,
        selected,
        feature_grad,
    })
}

/// Drives the alternating updates.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: GanState,
    pub rng: SeededRng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, state: GanState, rng: SeededRng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, state, rng })
    }

    /// One discriminator update on `real` against a fresh fake batch. Feeds
    /// the pre-update head weight and features into the UFS statistics; the
    /// suppression mask is never used here.
    pub fn train_discriminator_step(&mut self, real: &Tensor) -> Result<DStepReport> {
        let n = real.rows();
        let st = &mut self.state;
        let z = st.generator.latent(n, &mut self.rng)?;
        let fake = st.generator.infer(&z)?;
        let d = &st.discriminator;
        let real_pass = d.forward(real)?;
        let fake_pass = d.forward(&fake)?;
        let (adv, g_real, g_fake) = self
            .cfg
            .loss
            .discriminator_loss(&real_pass.scores, &fake_pass.scores)?;
        let (mut grads, _) = d.backward_scores(&real_pass, &g_real)?;
        let (fake_grads, _) = d.backward_scores(&fake_pass, &g_fake)?;
        for (a, b) in grads.iter_mut().zip(&fake_grads) {
            a.add_assign(b)?;
        }
        let mut penalty = 0.0;
        if self.cfg.loss.kind == LossKind::WganGp {
            let x_hat = interpolate(real, &fake, &mut self.rng)?;
            let pg = penalty_with_grads(d, &x_hat, self.cfg.loss.gp_lambda)?;
            penalty = pg.value;
            for (a, b) in grads.iter_mut().zip(&pg.param_grads) {
                a.add_assign(b)?;
            }
        }
        let loss = adv + penalty;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "discriminator loss is {loss} at d-step {} (adversarial {adv}, penalty {penalty})",
                st.d_steps
            )));
        }
        st.stats
            .update(&d.head.weight, &real_pass.features, &fake_pass.features)?;
        st.opt_d.step(&mut st.discriminator.params_mut(), &grads)?;
        st.d_steps += 1;
        Ok(DStepReport {
            loss,
            penalty,
            real_scores: real_pass.scores,
            fake_scores: fake_pass.scores,
        })
    }

    /// One generator update through the masked head.
    pub fn train_generator_step(&mut self) -> Result<GStepReport> {
        let n = self.cfg.batch_size;
        let st = &mut self.state;
        let z = st.generator.latent(n, &mut self.rng)?;
        let g_pass = st.generator.forward(&z)?;
        let d_pass = st.discriminator.forward(&g_pass.samples)?;
        let obj = generator_objective(st, &self.cfg, &d_pass.features, &mut self.rng)?;
        if !obj.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "generator loss is {} at iteration {}",
                obj.loss, st.iteration
            )));
        }
        let g_x = st
            .discriminator
            .backward_features(&d_pass, &obj.feature_grad)?;
        let grads = st.generator.backward(&g_pass, &g_x)?;
        st.opt_g.step(&mut st.generator.body.params_mut(), &grads)?;
        st.iteration += 1;
        Ok(GStepReport {
            loss: obj.loss,
            scores: obj.scores,
            suppression: obj.suppression,
            selected: obj.selected,
        })
    }

    /// `n_critic` discriminator steps followed by one generator step.
    /// Returns the last discriminator loss and the generator loss.
    pub fn iteration<F>(&mut self, mut real_batch: F) -> Result<(f64, f64)>
    where
        F: FnMut(usize) -> Result<Tensor>,
    {
        let mut d_loss = f64::NAN;
        for _ in 0..self.cfg.critic_steps() {
            let real = real_batch(self.cfg.batch_size)?;
            d_loss = self.train_discriminator_step(&real)?.loss;
        }
        let g_loss = self.train_generator_step()?.loss;
        Ok((d_loss, g_loss))
    }
}
