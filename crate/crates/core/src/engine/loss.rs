use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax − onehot) / B`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if classes < 2 {
        return Err(Error::InvalidInput(format!("cross-entropy over {classes} class(es)")));
    }
    if targets.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {batch} rows of logits",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidInput(format!(
            "target {t} out of range for {classes} classes"
        )));
    }

    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let top = row
            .iter()
            .enumerate()
            .fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
        let max = row[top];
        // ln Σ exp(v − max) = ln(1 + Σ_{k≠top} exp(v_k − max))
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != top)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        loss += rest.ln_1p() - (row[t] - max);
        grad[[i, t]] -= 1.0;
    }
    let scale = 1.0 / batch as f64;
    grad.mapv_inplace(|g| g * scale);
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss * scale, grad))
}
