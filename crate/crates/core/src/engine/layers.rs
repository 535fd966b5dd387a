use ndarray::{Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

fn mean_rows(x: &Array2<f64>) -> Array2<f64> {
    x.mean_axis(Axis(0)).expect("non-empty batch").insert_axis(Axis(0))
}

fn sum_rows(x: &Array2<f64>) -> Array2<f64> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// `y = x·W + b` for a batch `x` (`B × in`), `W` (`in × out`), `b` (`1 × out`).
pub fn dense_forward(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != w.nrows() || b.dim() != (1, w.ncols()) {
        return Err(Error::ShapeMismatch(format!(
            "dense: x {:?}, W {:?}, b {:?}",
            x.dim(),
            w.dim(),
            b.dim()
        )));
    }
    Ok(x.dot(w) + b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub dx: Array2<f64>,
    pub dw: Array2<f64>,
    pub db: Array2<f64>,
}

pub fn dense_backward(x: &Array2<f64>, w: &Array2<f64>, dy: &Array2<f64>) -> Result<DenseGrads> {
    if x.ncols() != w.nrows() || dy.dim() != (x.nrows(), w.ncols()) {
        return Err(Error::ShapeMismatch(format!(
            "dense backward: x {:?}, W {:?}, dy {:?}",
            x.dim(),
            w.dim(),
            dy.dim()
        )));
    }
    Ok(DenseGrads {
        dx: dy.dot(&w.t()),
        dw: x.t().dot(dy),
        db: sum_rows(dy),
    })
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of ReLU given its *input* `x`.
pub fn relu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Inverted dropout. Returns the output and, in training mode, the scaling
/// mask to multiply into the upstream gradient.
pub fn dropout<R: Rng>(
    x: &Array2<f64>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / (1.0 - rate);
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.gen::<f64>() < rate { 0.0 } else { scale });
    Ok((x * &mask, Some(mask)))
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormState {
    pub running_mean: Array2<f64>,
    pub running_var: Array2<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: Array2::zeros((1, features)),
            running_var: Array2::ones((1, features)),
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array2<f64>,
    gamma: Array2<f64>,
}

/// Per-feature batch normalization. Training mode standardizes with batch
/// statistics (biased variance) and folds them into the running averages;
/// inference mode uses the running averages.
pub fn batch_norm_forward(
    x: &Array2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
    state: &mut BatchNormState,
    training: bool,
) -> Result<(Array2<f64>, Option<BatchNormCache>)> {
    let features = x.ncols();
    if gamma.dim() != (1, features) || beta.dim() != (1, features) || state.running_mean.dim() != (1, features) {
        return Err(Error::ShapeMismatch(format!(
            "batch norm: x {:?}, gamma {:?}, beta {:?}",
            x.dim(),
            gamma.dim(),
            beta.dim()
        )));
    }
    if !training {
        let inv_std = state.running_var.mapv(|v| 1.0 / (v + state.eps).sqrt());
        let y = (x - &state.running_mean) * &inv_std * gamma + beta;
        return Ok((y, None));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidInput(
            "batch norm needs a batch of at least 2 in training".into(),
        ));
    }

    let mean = mean_rows(x);
    let centered = x - &mean;
    let var = mean_rows(&centered.mapv(|v| v * v));
    let inv_std = var.mapv(|v| 1.0 / (v + state.eps).sqrt());
    let x_hat = &centered * &inv_std;
    let y = &x_hat * gamma + beta;

    let m = state.momentum;
    state.running_mean = &state.running_mean * m + &mean * (1.0 - m);
    state.running_var = &state.running_var * m + &var * (1.0 - m);

    Ok((
        y,
        Some(BatchNormCache {
            x_hat,
            inv_std,
            gamma: gamma.clone(),
        }),
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    dy: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    if dy.dim() != cache.x_hat.dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch norm backward: dy {:?}, cached {:?}",
            dy.dim(),
            cache.x_hat.dim()
        )));
    }
    let n = dy.nrows() as f64;
    let dgamma = sum_rows(&(dy * &cache.x_hat));
    let dbeta = sum_rows(dy);
    let dx_hat = dy * &cache.gamma;
    let sum_dx_hat = sum_rows(&dx_hat);
    let sum_dx_hat_xhat = sum_rows(&(&dx_hat * &cache.x_hat));
    let dx = (&dx_hat * n - &sum_dx_hat - &cache.x_hat * &sum_dx_hat_xhat) * &cache.inv_std / n;
    Ok((dx, dgamma, dbeta))
}
