use super::Tensor;
use crate::error::{check_shape, Error, Result};

/// Max over coordinates of `|central difference - analytic| / (|analytic| + 1e-12)`.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, analytic_grad: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    check_shape("finite_diff_check", x.shape(), analytic_grad.shape())?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = x.data()[k];
        probe.data_mut()[k] = orig + h;
        let f_plus = f(&probe);
        probe.data_mut()[k] = orig - h;
        let f_minus = f(&probe);
        probe.data_mut()[k] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_diff_check: f at coordinate {k}"),
            });
        }
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let analytic = analytic_grad.data()[k];
        let rel = (numeric - analytic).abs() / (analytic.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
