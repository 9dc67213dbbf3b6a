use super::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function:
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate.
///
/// `f` returns a tensor so that non-scalar outputs can be rejected.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = scalar_of(f(&probe)?)?;
        probe.data_mut()[i] = orig - h;
        let minus = scalar_of(f(&probe)?)?;
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

fn scalar_of(t: Tensor) -> Result<f64> {
    if t.len() != 1 {
        return Err(Error::contract(format!(
            "finite_diff_grad needs a scalar function, got output shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.sub(b).expect("relative_error: shapes differ").norm();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
