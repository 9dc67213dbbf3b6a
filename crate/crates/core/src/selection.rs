//! Sample-level gradient selection and Gaussian-density instance selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{fit_gaussian, random_feature_embed};
use crate::numerics::{SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// k highest generator scores.
    Top,
    /// k lowest generator scores.
    Bottom,
    /// k uniformly chosen samples.
    Random,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub mode: SelectionMode,
    pub k_start: usize,
    pub k_end: usize,
    #[serde(default = "default_anneal_fraction")]
    pub anneal_fraction: f64,
}

fn default_anneal_fraction() -> f64 {
    0.5
}

impl SelectionConfig {
    /// k annealed linearly from `k_start` to `k_end` over half the run.
    pub fn new(mode: SelectionMode, k_start: usize, k_end: usize) -> Self {
        Self {
            mode,
            k_start,
            k_end,
            anneal_fraction: default_anneal_fraction(),
        }
    }

    pub fn validate(&self, batch_size: usize) -> Result<()> {
        if !(1 <= self.k_end && self.k_end <= self.k_start && self.k_start <= batch_size) {
            return Err(Error::Config(format!(
                "selection needs 1 <= k_end ({}) <= k_start ({}) <= batch size ({batch_size})",
                self.k_end, self.k_start
            )));
        }
        if !(self.anneal_fraction > 0.0 && self.anneal_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "selection anneal_fraction {} outside (0, 1]",
                self.anneal_fraction
            )));
        }
        Ok(())
    }
}

/// Indices of the `k` selected samples, in ascending order. Ties are broken
/// towards the lower index.
pub fn select_indices(
    scores: &Tensor,
    k: usize,
    mode: SelectionMode,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let n = scores.len();
    if mode == SelectionMode::None {
        return Ok((0..n).collect());
    }
    if k == 0 || k > n {
        return Err(Error::contract(format!("k = {k} outside 1..={n}")));
    }
    let s = scores.data();
    let mut idx: Vec<usize> = (0..n).collect();
    match mode {
        SelectionMode::Top => idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b))),
        SelectionMode::Bottom => idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b))),
        SelectionMode::Random => idx = rng.sample_indices(n, k),
        SelectionMode::None => unreachable!(),
    }
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// k for generator iteration `t` of `total`: linear from `k_start` to
/// `k_end` over the first `anneal_fraction · total` iterations, rounded to
/// the nearest integer.
pub fn anneal_k(cfg: &SelectionConfig, t: u64, total: u64) -> usize {
    let end = cfg.anneal_fraction * total as f64;
    let t = t.min(total) as f64;
    if end <= 0.0 || t >= end {
        return cfg.k_end;
    }
    let (a, b) = (cfg.k_start as f64, cfg.k_end as f64);
    (a + (b - a) * (t / end)).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    FullShrinkage,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSelectionConfig {
    pub retention_ratio: f64,
    #[serde(default)]
    pub embedder_seed: u64,
    #[serde(default = "default_cov_mode")]
    pub covariance: CovarianceMode,
}

fn default_cov_mode() -> CovarianceMode {
    CovarianceMode::FullShrinkage
}

impl InstanceSelectionConfig {
    pub fn new(retention_ratio: f64) -> Self {
        Self {
            retention_ratio,
            embedder_seed: 0,
            covariance: default_cov_mode(),
        }
    }
}

/// Embeds a dataset for instance selection: images go through the
/// random-feature embedder, point clouds (`N×d`) are used as they are.
pub fn embed_dataset(dataset: &Tensor, seed: u64) -> Result<Tensor> {
    match dataset.rank() {
        2 => Ok(dataset.clone()),
        3 => {
            let s = dataset.shape();
            random_feature_embed(&dataset.reshape(&[s[0], 1, s[1], s[2]])?, seed)
        }
        4 => random_feature_embed(dataset, seed),
        _ => Err(Error::dim(format!(
            "cannot embed a dataset of shape {:?}",
            dataset.shape()
        ))),
    }
}

/// Gaussian log-density of every row of `emb` under a Gaussian fitted to
/// `emb` itself, with `δ = 1e-6·tr(Σ)/d` added to the covariance diagonal.
pub fn gaussian_log_density(emb: &Tensor, mode: CovarianceMode) -> Result<Vec<f64>> {
    let fit = fit_gaussian(emb)?;
    let d = fit.dim();
    let cov = fit.covariance.data();
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let delta = 1e-6 * trace / d as f64;
    let log_2pi = (2.0 * std::f64::consts::PI).ln();
    let mu = fit.mean.data();
    match mode {
        CovarianceMode::Diagonal => {
            let var: Vec<f64> = (0..d).map(|i| cov[i * d + i] + delta).collect();
            if let Some(j) = var.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Numeric(format!(
                    "singular diagonal covariance: variance {} in dimension {j} (trace {trace}, dim {d})",
                    var[j]
                )));
            }
            let log_det: f64 = var.iter().map(|v| v.ln()).sum();
            Ok((0..emb.rows())
                .map(|i| {
                    let m: f64 = emb
                        .row(i)
                        .iter()
                        .zip(mu)
                        .zip(&var)
                        .map(|((x, m), v)| (x - m).powi(2) / v)
                        .sum();
                    -0.5 * (m + log_det + d as f64 * log_2pi)
                })
                .collect())
        }
        CovarianceMode::FullShrinkage => {
            let mut sigma = DMatrix::from_row_slice(d, d, cov);
            for i in 0..d {
                sigma[(i, i)] += delta;
            }
            let chol = sigma.cholesky().ok_or_else(|| {
                Error::Numeric(format!(
                    "covariance is singular after shrinkage δ = {delta} (trace {trace}, dim {d})"
                ))
            })?;
            let l = chol.l();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let mut out = Vec::with_capacity(emb.rows());
            for i in 0..emb.rows() {
                let diff = DVector::from_iterator(d, emb.row(i).iter().zip(mu).map(|(x, m)| x - m));
                let z = l
                    .solve_lower_triangular(&diff)
                    .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
                out.push(-0.5 * (z.norm_squared() + log_det + d as f64 * log_2pi));
            }
            Ok(out)
        }
    }
}

/// Keeps the `⌈retention · N⌉` samples with the highest Gaussian
/// log-density in embedding space. Returned indices are ascending.
pub fn instance_select(dataset: &Tensor, cfg: &InstanceSelectionConfig) -> Result<Vec<usize>> {
    let n = dataset.rows();
    if n < 4 {
        return Err(Error::contract(format!(
            "instance selection needs N >= 4, got {n}"
        )));
    }
    let r = cfg.retention_ratio;
    if !(r > 0.0 && r <= 1.0) || r * (n as f64) < 2.0 {
        return Err(Error::contract(format!(
            "retention ratio {r} must lie in (0, 1] and keep at least 2 of {n} samples"
        )));
    }
    let keep = ((r * n as f64).ceil() as usize).min(n);
    let emb = embed_dataset(dataset, cfg.embedder_seed)?;
    let scores = gaussian_log_density(&emb, cfg.covariance)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(idx)
}

/// Writes kept indices as newline-terminated decimal integers.
pub fn format_index_list(indices: &[usize]) -> String {
    let mut s = String::with_capacity(indices.len() * 6);
    for i in indices {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    let mut offset = 0;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.parse().map_err(|_| Error::Parse {
                offset,
                msg: format!("not an index: {t:?}"),
            })?);
        }
        offset += line.len();
    }
    Ok(out)
}
