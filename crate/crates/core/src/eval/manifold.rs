use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// k-NN manifold overlap between a real and a fake sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMetrics {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from every point to its k-th nearest other point.
fn knn_radii_sq(points: &Tensor, k: usize) -> Vec<f64> {
    let n = points.rows();
    let mut buf = Vec::with_capacity(n - 1);
    (0..n)
        .map(|i| {
            buf.clear();
            let pi = points.row(i);
            buf.extend(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| sq_dist(pi, points.row(j))),
            );
            let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Precision, recall, density and coverage with k-NN balls (self excluded).
///
/// A point lies inside a ball when its distance to the centre is at most the
/// ball's radius.
pub fn manifold_metrics(real: &Tensor, fake: &Tensor, k: usize) -> Result<ManifoldMetrics> {
    if real.rank() != 2 || fake.rank() != 2 || real.shape()[1] != fake.shape()[1] {
        return Err(Error::dim(format!(
            "manifold_metrics needs matrices of equal width, got {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let (m, n) = (real.rows(), fake.rows());
    if k == 0 || m <= k || n <= k {
        return Err(Error::contract(format!(
            "need M, N > k >= 1, got M={m}, N={n}, k={k}"
        )));
    }
    let real_r = knn_radii_sq(real, k);
    let fake_r = knn_radii_sq(fake, k);

    let mut fake_in_real = vec![0usize; n];
    let mut real_covered = vec![false; m];
    let mut real_in_fake = vec![false; m];
    for i in 0..m {
        let ri = real.row(i);
        for j in 0..n {
            let d = sq_dist(ri, fake.row(j));
            if d <= real_r[i] {
                fake_in_real[j] += 1;
                real_covered[i] = true;
            }
            if d <= fake_r[j] {
                real_in_fake[i] = true;
            }
        }
    }
    let precision = fake_in_real.iter().filter(|&&c| c > 0).count() as f64 / n as f64;
    let recall = real_in_fake.iter().filter(|&&b| b).count() as f64 / m as f64;
    let density = fake_in_real.iter().sum::<usize>() as f64 / (k * n) as f64;
    let coverage = real_covered.iter().filter(|&&b| b).count() as f64 / m as f64;
    Ok(ManifoldMetrics {
        precision,
        recall,
        density,
        coverage,
    })
}
