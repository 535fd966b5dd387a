use crate::error::{Error, Result};

/// `|a − n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Largest relative error between `analytic` and central differences of
/// `loss` around `params`.
///
/// `loss` must be deterministic (no dropout sampling).
pub fn gradient_check<F>(mut loss: F, params: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let plus = loss(&probe);
        probe[i] = params[i] - step;
        let minus = loss(&probe);
        probe[i] = params[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(format!("loss while perturbing parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
