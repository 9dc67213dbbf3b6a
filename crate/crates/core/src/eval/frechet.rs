use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mean and covariance of a sample cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Tensor,
    pub covariance: Tensor,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, self.covariance.data())
    }
}

/// Sample mean and unbiased (m−1) covariance, symmetrised.
pub fn fit_gaussian(samples: &Tensor) -> Result<GaussianFit> {
    if samples.rank() != 2 {
        return Err(Error::dim(format!(
            "fit_gaussian needs an m×d matrix, got {:?}",
            samples.shape()
        )));
    }
    let (m, d) = (samples.rows(), samples.shape()[1]);
    if m < 2 {
        return Err(Error::contract(format!(
            "fit_gaussian needs at least 2 samples, got {m}"
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (a, v) in mean.iter_mut().zip(samples.row(i)) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for i in 0..m {
        for ((c, v), mu) in centred.iter_mut().zip(samples.row(i)).zip(&mean) {
            *c = v - mu;
        }
        for a in 0..d {
            let ca = centred[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..d {
                cov[a * d + b] += ca * centred[b];
            }
        }
    }
    let denom = (m - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    Ok(GaussianFit {
        mean: Tensor::new(vec![d], mean)?,
        covariance: Tensor::new(vec![d, d], cov)?,
    })
}

const EIG_CLIP: f64 = 1e-10;

/// Square root of a symmetric PSD matrix by eigendecomposition.
fn psd_sqrt(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut root = eig.eigenvalues.clone();
    for v in root.iter_mut() {
        if *v < -1e-6 * scale {
            return Err(Error::Numeric(format!(
                "{what}: eigenvalue {v} is too negative for a PSD matrix"
            )));
        }
        *v = if *v < EIG_CLIP { 0.0 } else { v.sqrt() };
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½)`.
///
/// The trace term is evaluated as `tr((Σa^½ Σb Σa^½)^½)`, which has the same
/// eigenvalues as `(ΣaΣb)^½` but only needs symmetric decompositions.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d || a.covariance.shape() != [d, d] || b.covariance.shape() != [d, d] {
        return Err(Error::contract(format!(
            "frechet_distance: dimensions {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a
        .mean
        .data()
        .iter()
        .zip(b.mean.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let ca = sym(&a.cov_matrix());
    let cb = sym(&b.cov_matrix());
    let root_a = psd_sqrt(&ca, "covariance")?;
    let inner = sym(&(&root_a * &cb * &root_a));
    let eig = SymmetricEigen::new(inner);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut tr_root = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -1e-6 * scale {
            return Err(Error::Numeric(format!(
                "matrix square root failed: eigenvalue {v} of the covariance product"
            )));
        }
        if v >= EIG_CLIP {
            tr_root += v.sqrt();
        }
    }
    let fd = mean_term + ca.trace() + cb.trace() - 2.0 * tr_root;
    Ok(fd.max(0.0))
}
