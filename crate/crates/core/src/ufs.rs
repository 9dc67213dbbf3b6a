//! Unrealistic feature suppression.
//!
//! During discriminator updates the module records the head-weighted mean
//! real and fake features, `μ_real = mean(w ⊗ Y_real)` and
//! `μ_fake = mean(w ⊗ Y_fake)`. During generator updates every fake sample's
//! weighted features `ŷ = w ⊗ y` are compared channel by channel against
//! those means:
//!
//! ```text
//! M = μ_real − μ_fake          (margin)
//! D = μ_real − ŷ               (distance)
//! R = D / M   if |D| ≥ γ, otherwise near_real_ratio
//! S = ε − clamp(R, α, β)
//! ```
//!
//! and the head scores the masked features `y ⊗ S` instead of `y`.
//! Channels whose fake features already sit on the real side of the margin
//! (small `R`) keep weight `ε − α`; channels at or beyond the fake mean are
//! scaled down to `ε − β`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::LinearHead;
use crate::numerics::Tensor;

/// Running head-weighted feature means.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mu_real: Tensor,
    pub mu_fake: Tensor,
    /// 0 replaces the means with each new batch; otherwise an EMA factor.
    pub momentum: f64,
    pub initialized: bool,
}

impl FeatureStats {
    pub fn new(channels: usize, momentum: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::contract("feature stats need at least one channel"));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::contract(format!(
                "momentum must lie in [0, 1], got {momentum}"
            )));
        }
        Ok(Self {
            mu_real: Tensor::zeros(&[channels]),
            mu_fake: Tensor::zeros(&[channels]),
            momentum,
            initialized: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.mu_real.len()
    }

    /// Folds one discriminator batch into the means.
    pub fn update(&mut self, w: &Tensor, y_real: &Tensor, y_fake: &Tensor) -> Result<()> {
        if w.len() != self.channels() {
            return Err(Error::dim(format!(
                "head weight has {} channels, stats track {}",
                w.len(),
                self.channels()
            )));
        }
        let m_real = batch_weighted_mean(w, y_real)?;
        let m_fake = batch_weighted_mean(w, y_fake)?;
        if !self.initialized || self.momentum == 0.0 {
            self.mu_real = m_real;
            self.mu_fake = m_fake;
        } else {
            let a = self.momentum;
            self.mu_real = self.mu_real.scale(a).add(&m_real.scale(1.0 - a))?;
            self.mu_fake = self.mu_fake.scale(a).add(&m_fake.scale(1.0 - a))?;
        }
        self.initialized = true;
        Ok(())
    }
}

/// Free-function form of [`FeatureStats::update`].
pub fn update_stats(
    stats: &mut FeatureStats,
    w: &Tensor,
    y_real: &Tensor,
    y_fake: &Tensor,
) -> Result<()> {
    stats.update(w, y_real, y_fake)
}

fn batch_weighted_mean(w: &Tensor, y: &Tensor) -> Result<Tensor> {
    let weighted = weighted_features(w, y)?;
    let (n, c) = (weighted.rows(), w.len());
    let mut mean = vec![0.0; c];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(weighted.row(i)) {
            *m += v;
        }
    }
    let inv = 1.0 / n as f64;
    Tensor::new(vec![c], mean.into_iter().map(|m| m * inv).collect())
}

/// Per-sample elementwise product `w ⊗ y[i]`; no batch averaging.
pub fn weighted_features(w: &Tensor, y: &Tensor) -> Result<Tensor> {
    if w.rank() != 1 || y.rank() != 2 || y.shape()[1] != w.len() {
        return Err(Error::dim(format!(
            "weights {:?} do not match features {:?}",
            w.shape(),
            y.shape()
        )));
    }
    let c = w.len();
    let data = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * w.data()[i % c])
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaAnneal {
    pub beta_start: f64,
    pub beta_end: f64,
    /// Portion of the run over which β moves linearly, in (0, 1].
    pub anneal_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UfsConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Distances below this count as "at the real mean".
    pub gamma: f64,
    /// Smallest admissible |margin|.
    pub denom_floor: f64,
    /// Ratio assigned to channels with |D| < γ.
    pub near_real_ratio: f64,
    pub momentum: f64,
    /// Fail the generator step instead of using S ≡ 1 before stats exist.
    pub strict: bool,
    pub beta_anneal: Option<BetaAnneal>,
}

impl Default for UfsConfig {
    fn default() -> Self {
        Self::new(0.0, 1.0, 1.0)
    }
}

impl UfsConfig {
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Self {
        Self {
            alpha,
            beta,
            epsilon,
            gamma: 1e-4,
            denom_floor: 1e-8,
            near_real_ratio: 1.0,
            momentum: 0.0,
            strict: false,
            beta_anneal: None,
        }
    }

    /// α=0, β=1, ε=1: unrealistic channels are zeroed.
    pub fn dismission() -> Self {
        Self::new(0.0, 1.0, 1.0)
    }

    /// α=1, β=1.5, ε=2: S stays within [0.5, 1].
    pub fn suppression() -> Self {
        Self::new(1.0, 1.5, 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha,
            self.beta,
            self.epsilon,
            self.gamma,
            self.denom_floor,
            self.near_real_ratio,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(format!("non-finite UFS setting in {self:?}")));
        }
        if self.gamma < 0.0 || self.denom_floor <= 0.0 {
            return Err(Error::Config(format!(
                "need gamma >= 0 and denom_floor > 0, got gamma {} floor {}",
                self.gamma, self.denom_floor
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "UFS momentum {} outside [0, 1]",
                self.momentum
            )));
        }
        let check_beta = |beta: f64| -> Result<()> {
            if self.alpha > beta {
                return Err(Error::Config(format!(
                    "alpha {} exceeds beta {beta}",
                    self.alpha
                )));
            }
            if self.epsilon - beta < 0.0 {
                return Err(Error::Config(format!(
                    "epsilon {} below beta {beta} would give negative suppression values",
                    self.epsilon
                )));
            }
            Ok(())
        };
        check_beta(self.beta)?;
        if let Some(a) = self.beta_anneal {
            if !(a.anneal_fraction > 0.0 && a.anneal_fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "beta anneal_fraction {} outside (0, 1]",
                    a.anneal_fraction
                )));
            }
            check_beta(a.beta_start)?;
            check_beta(a.beta_end)?;
        }
        Ok(())
    }

    /// Copy of this config with β set for generator iteration `t` of `total`.
    pub fn at_iteration(&self, t: u64, total: u64) -> Self {
        Self {
            beta: anneal_beta(self, t, total),
            ..*self
        }
    }
}

/// Per-sample, per-channel suppression values.
#[derive(Debug, Clone, PartialEq)]
pub struct SuppressionMatrix {
    values: Tensor,
}

impl SuppressionMatrix {
    /// The inert mask S ≡ 1.
    pub fn ones(n: usize, channels: usize) -> Self {
        Self {
            values: Tensor::full(&[n, channels], 1.0),
        }
    }

    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::dim(format!(
                "suppression matrix must be n×C, got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    /// `1 − S`.
    pub fn complement(&self) -> Self {
        Self {
            values: self.values.map(|v| 1.0 - v),
        }
    }
}

/// Distance ratio of each fake feature to the real mean, relative to the
/// real–fake margin of its channel.
pub fn compute_ratio(stats: &FeatureStats, y_hat: &Tensor, cfg: &UfsConfig) -> Result<Tensor> {
    if !stats.initialized {
        return Err(Error::State(
            "feature statistics have not been populated by a discriminator step".into(),
        ));
    }
    let c = stats.channels();
    if y_hat.rank() != 2 || y_hat.shape()[1] != c {
        return Err(Error::dim(format!(
            "weighted features {:?} do not match {c} tracked channels",
            y_hat.shape()
        )));
    }
    let margin: Vec<f64> = stats
        .mu_real
        .data()
        .iter()
        .zip(stats.mu_fake.data())
        .map(|(r, f)| {
            let m = r - f;
            if m.abs() < cfg.denom_floor {
                if m < 0.0 {
                    -cfg.denom_floor
                } else {
                    cfg.denom_floor
                }
            } else {
                m
            }
        })
        .collect();
    let mu_real = stats.mu_real.data();
    let data = y_hat
        .data()
        .iter()
        .enumerate()
        .map(|(i, &yh)| {
            let ch = i % c;
            let d = mu_real[ch] - yh;
            if d.abs() >= cfg.gamma {
                d / margin[ch]
            } else {
                cfg.near_real_ratio
            }
        })
        .collect();
    Tensor::new(y_hat.shape().to_vec(), data)
}

/// Piecewise-linear suppression of a single ratio.
#[inline]
pub fn suppression_value(r: f64, alpha: f64, beta: f64, epsilon: f64) -> f64 {
    if r < alpha {
        -alpha + epsilon
    } else if r <= beta {
        -r + epsilon
    } else {
        -beta + epsilon
    }
}

pub fn compute_suppression(r: &Tensor, cfg: &UfsConfig) -> Result<SuppressionMatrix> {
    let values = r.map(|v| suppression_value(v, cfg.alpha, cfg.beta, cfg.epsilon));
    SuppressionMatrix::from_tensor(values)
}

/// Full mask for a batch of fake features: weight, ratio, then suppress.
pub fn suppression_for(
    stats: &FeatureStats,
    w: &Tensor,
    y_fake: &Tensor,
    cfg: &UfsConfig,
) -> Result<SuppressionMatrix> {
    let y_hat = weighted_features(w, y_fake)?;
    let r = compute_ratio(stats, &y_hat, cfg)?;
    compute_suppression(&r, cfg)
}

/// Head scores of masked features: `⟨w, y[i] ⊗ S[i]⟩ + b`.
pub fn apply_suppression(
    y_fake: &Tensor,
    s: &SuppressionMatrix,
    head: &LinearHead,
) -> Result<Tensor> {
    let masked = y_fake.mul(s.values())?;
    head.forward(&masked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Unrealistic channels are scaled by a positive factor.
    Suppression,
    /// Unrealistic channels are zeroed (ε = β).
    Dismission,
}

/// Classifies a config by the floor `ε − β` of its suppression values.
///
/// A floor of exactly zero dismisses unrealistic channels; any positive
/// floor suppresses them. A floor of 1 or more never attenuates any channel
/// below its original scale, which is logged as a warning.
pub fn classify_mode(cfg: &UfsConfig) -> Result<Regime> {
    cfg.validate()?;
    let floor = cfg.epsilon - cfg.beta;
    if floor.abs() <= 1e-12 {
        return Ok(Regime::Dismission);
    }
    if floor >= 1.0 {
        warn!(
            "epsilon - beta = {floor} >= 1: suppression values never drop below 1, \
             so unrealistic channels are not attenuated"
        );
    }
    Ok(Regime::Suppression)
}

/// β for generator iteration `t` of `total`: linear from `beta_start` to
/// `beta_end` over the first `anneal_fraction · total` iterations.
pub fn anneal_beta(cfg: &UfsConfig, t: u64, total: u64) -> f64 {
    let Some(a) = cfg.beta_anneal else {
        return cfg.beta;
    };
    let end = a.anneal_fraction * total as f64;
    let t = t.min(total) as f64;
    if end <= 0.0 || t >= end {
        a.beta_end
    } else {
        a.beta_start + (a.beta_end - a.beta_start) * (t / end)
    }
}
