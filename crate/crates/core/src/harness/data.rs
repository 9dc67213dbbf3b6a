use std::f64::consts::TAU;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::formats::load_idx_images;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

/// Which training distribution to draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Eight Gaussians evenly spaced on a circle, mode 0 on the +x axis.
    Ring8 {
        #[serde(default = "ring_radius")]
        radius: f64,
        #[serde(default = "ring_sigma")]
        sigma: f64,
    },
    /// 5×5 grid of Gaussians centred on the origin.
    Grid25 {
        #[serde(default = "grid_spacing")]
        spacing: f64,
        #[serde(default = "grid_sigma")]
        sigma: f64,
    },
    /// Grayscale images from an IDX file.
    IdxImages { path: PathBuf },
    /// Procedural 16×16 shapes.
    SyntheticShapes {
        #[serde(default = "shape_count")]
        count: usize,
    },
}

fn ring_radius() -> f64 {
    2.0
}
fn ring_sigma() -> f64 {
    0.02
}
fn grid_spacing() -> f64 {
    2.0
}
fn grid_sigma() -> f64 {
    0.05
}
fn shape_count() -> usize {
    4096
}

impl DatasetConfig {
    pub fn ring8() -> Self {
        DatasetConfig::Ring8 {
            radius: ring_radius(),
            sigma: ring_sigma(),
        }
    }

    pub fn grid25() -> Self {
        DatasetConfig::Grid25 {
            spacing: grid_spacing(),
            sigma: grid_sigma(),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(
            self,
            DatasetConfig::IdxImages { .. } | DatasetConfig::SyntheticShapes { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::Ring8 { radius: a, sigma }
            | DatasetConfig::Grid25 { spacing: a, sigma } => {
                if !(*a > 0.0 && *sigma > 0.0) {
                    return Err(Error::Config(format!(
                        "mixture geometry must be positive, got scale {a} and sigma {sigma}"
                    )));
                }
            }
            DatasetConfig::IdxImages { path } => {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "IDX file {} does not exist",
                        path.display()
                    )));
                }
            }
            DatasetConfig::SyntheticShapes { count } => {
                if *count < 4 {
                    return Err(Error::Config(format!(
                        "synthetic_shapes needs count >= 4, got {count}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Centres of the eight-mode ring.
pub fn ring8_centers(radius: f64) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|k| {
            let a = k as f64 * TAU / 8.0;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect();
    Tensor::from_rows(&rows).expect("ring centres are finite")
}

/// Centres of the 5×5 grid, row-major from (−2s, −2s).
pub fn grid25_centers(spacing: f64) -> Tensor {
    let mut rows = Vec::with_capacity(25);
    for i in -2..=2 {
        for j in -2..=2 {
            rows.push(vec![i as f64 * spacing, j as f64 * spacing]);
        }
    }
    Tensor::from_rows(&rows).expect("grid centres are finite")
}

/// Seeded `count×1×16×16` images in [−1, 1]: squares, discs, crosses and
/// rings of random size and position on a −1 background.
pub fn synthetic_shapes(count: usize, rng: &mut SeededRng) -> Result<Tensor> {
    const S: usize = 16;
    let mut data = vec![-1.0; count * S * S];
    for img in data.chunks_mut(S * S) {
        let kind = rng.below(4);
        let r = 2.0 + 3.0 * rng.uniform();
        let cy = r + (S as f64 - 2.0 * r) * rng.uniform();
        let cx = r + (S as f64 - 2.0 * r) * rng.uniform();
        for y in 0..S {
            for x in 0..S {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let d = (dx * dx + dy * dy).sqrt();
                let on = match kind {
                    0 => dx.abs() <= r && dy.abs() <= r,
                    1 => d <= r,
                    2 => (dx.abs() <= r && dy.abs() <= 1.0) || (dy.abs() <= r && dx.abs() <= 1.0),
                    _ => d <= r && d >= r - 1.5,
                };
                if on {
                    img[y * S + x] = 1.0;
                }
            }
        }
    }
    Tensor::new(vec![count, 1, S, S], data)
}

/// A seeded sampler for training or evaluation batches.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Isotropic Gaussian mixture with equal weights.
    Mixture { centers: Tensor, sigma: f64 },
    /// Uniform draws with replacement from a fixed set.
    Finite { samples: Tensor },
}

impl DataSource {
    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            DataSource::Mixture { centers, .. } => vec![centers.shape()[1]],
            DataSource::Finite { samples } => samples.shape()[1..].to_vec(),
        }
    }

    /// Mixture centres and per-mode sigma, when known.
    pub fn modes(&self) -> Option<(&Tensor, f64)> {
        match self {
            DataSource::Mixture { centers, sigma } => Some((centers, *sigma)),
            DataSource::Finite { .. } => None,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Tensor> {
        match self {
            DataSource::Mixture { centers, sigma } => {
                let d = centers.shape()[1];
                let mut out = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let c = centers.row(rng.below(centers.rows()));
                    for &m in c {
                        out.push(m + sigma * rng.normal());
                    }
                }
                Tensor::new(vec![n, d], out)
            }
            DataSource::Finite { samples } => {
                let idx: Vec<usize> = (0..n).map(|_| rng.below(samples.rows())).collect();
                samples.select_rows(&idx)
            }
        }
    }
}

/// Builds the sampler for `cfg`. `rng` seeds procedural datasets only.
pub fn make_dataset(cfg: &DatasetConfig, rng: &mut SeededRng) -> Result<DataSource> {
    cfg.validate()?;
    Ok(match cfg {
        DatasetConfig::Ring8 { radius, sigma } => DataSource::Mixture {
            centers: ring8_centers(*radius),
            sigma: *sigma,
        },
        DatasetConfig::Grid25 { spacing, sigma } => DataSource::Mixture {
            centers: grid25_centers(*spacing),
            sigma: *sigma,
        },
        DatasetConfig::IdxImages { path } => DataSource::Finite {
            samples: load_idx_images(path)?,
        },
        DatasetConfig::SyntheticShapes { count } => DataSource::Finite {
            samples: synthetic_shapes(*count, rng)?,
        },
    })
}
