use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mode-coverage diagnostic for mixtures with known centres.
///
/// A sample is high quality when it lies within `thresh_sigmas · sigma` of its
/// nearest centre; a mode is covered when at least one high-quality sample
/// maps to it. Returns `(covered_modes, high_quality_fraction)`.
pub fn mode_coverage(
    samples: &Tensor,
    centers: &Tensor,
    sigma: f64,
    thresh_sigmas: f64,
) -> Result<(usize, f64)> {
    if samples.rank() != 2 || centers.rank() != 2 || samples.shape()[1] != centers.shape()[1] {
        return Err(Error::dim(format!(
            "samples {:?} and centres {:?} must share their width",
            samples.shape(),
            centers.shape()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::contract(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let limit = thresh_sigmas * sigma;
    let mut covered = vec![false; centers.rows()];
    let mut hq = 0usize;
    for i in 0..samples.rows() {
        let s = samples.row(i);
        let (best, dist) = (0..centers.rows())
            .map(|c| {
                let d: f64 = s
                    .iter()
                    .zip(centers.row(c))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (c, d.sqrt())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one centre");
        if dist <= limit {
            hq += 1;
            covered[best] = true;
        }
    }
    Ok((
        covered.iter().filter(|&&c| c).count(),
        hq as f64 / samples.rows() as f64,
    ))
}
