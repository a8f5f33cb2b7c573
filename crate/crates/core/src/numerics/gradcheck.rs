use super::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function, one entry at a time.
pub fn finite_difference_gradient<F>(mut f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = x.get(r, c);
            probe.set(r, c, orig + h);
            let up = f(&probe);
            probe.set(r, c, orig - h);
            let down = f(&probe);
            probe.set(r, c, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at probed entry ({r}, {c})"
                )));
            }
            grad.set(r, c, (up - down) / (2.0 * h));
        }
    }
    Ok(grad)
}
