use ndarray::{Array2, ArrayView2, Axis};

use super::Hyperparams;
use crate::engine::{
    adam_step, ensure_finite, softmax_cross_entropy, softmax_rows, AdamConfig, Checkpoint, ParamStore,
};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_MAX_ITER: usize = 500;
const GRAD_NORM_STOP: f64 = 1e-6;

/// Multinomial logistic regression, `softmax(x·W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Array2<f64>,
    pub bias: Array2<f64>,
}

impl LogisticModel {
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "logistic model expects {} features, got {}",
                self.weights.nrows(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weights) + &self.bias)
    }

    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut store = ParamStore::new();
        store.add("logistic.w", self.weights.clone());
        store.add("logistic.b", self.bias.clone());
        store.to_checkpoint()
    }
}

/// Minimizes mean cross-entropy + `l2·‖W‖²/2` with full-batch Adam, from
/// zero weights, until `max_iter` or a gradient norm below 1e-6.
///
/// Returns the model, the iterations run and the final objective.
pub fn fit_logistic(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    hp: &Hyperparams,
) -> Result<(LogisticModel, usize, f64)> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::ShapeMismatch(format!("{n} rows, {} labels", y.len())));
    }
    if n < n_classes {
        return Err(Error::InvalidInput(format!("{n} samples for {n_classes} classes")));
    }
    ensure_finite(&x, "logistic features")?;
    let l2 = hp.l2.unwrap_or(0.0);
    let lr = hp.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE);
    let max_iter = hp.max_iter.unwrap_or(DEFAULT_MAX_ITER);

    let mut store = ParamStore::new();
    let w = store.add("logistic.w", Array2::zeros((d, n_classes)));
    let b = store.add("logistic.b", Array2::zeros((1, n_classes)));
    let adam = AdamConfig::default();
    let mut iters = 0;
    let mut objective = f64::NAN;
    while iters < max_iter {
        let logits = x.dot(store.get(w)) + store.get(b);
        let (loss, dlogits) = softmax_cross_entropy(&logits, y)?;
        let weights = store.get(w);
        objective = loss + 0.5 * l2 * weights.iter().map(|v| v * v).sum::<f64>();
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("logistic loss at iteration {iters}")));
        }
        let dw = x.t().dot(&dlogits) + weights * l2;
        let db = dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let norm = dw.iter().chain(db.iter()).map(|g| g * g).sum::<f64>().sqrt();
        if norm < GRAD_NORM_STOP {
            break;
        }
        adam_step(&mut store, &[dw, db], lr, &adam)?;
        iters += 1;
    }
    let model = LogisticModel {
        weights: store.get(w).clone(),
        bias: store.get(b).clone(),
    };
    Ok((model, iters, objective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((2 * n, 2));
        let mut y = Vec::new();
        for i in 0..2 * n {
            let class = i % 2;
            let center = if class == 0 { -3.0 } else { 3.0 };
            x[[i, 0]] = center + noise.sample(&mut rng);
            x[[i, 1]] = center + noise.sample(&mut rng);
            y.push(class);
        }
        (x, y)
    }

    #[test]
    fn separates_gaussian_blobs() {
        let (x, y) = blobs(100, 1);
        let (model, _, _) = fit_logistic(x.view(), &y, 2, &Hyperparams::default()).unwrap();
        let (xt, yt) = blobs(200, 2);
        let pred = super::super::argmax_rows(&model.probabilities(xt.view()).unwrap());
        let acc = pred.iter().zip(&yt).filter(|(p, t)| p == t).count() as f64 / yt.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn huge_l2_shrinks_weights_to_zero() {
        let (x, mut y) = blobs(30, 3);
        // make class 1 the majority
        y[0] = 1;
        y[2] = 1;
        let hp = Hyperparams {
            l2: Some(1e6),
            ..Default::default()
        };
        let (model, _, _) = fit_logistic(x.view(), &y, 2, &hp).unwrap();
        let norm = model.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "‖W‖ = {norm}");
        let pred = super::super::argmax_rows(&model.probabilities(x.view()).unwrap());
        assert!(pred.iter().all(|&p| p == 1));
    }

    #[test]
    fn zero_features_predict_majority_through_bias() {
        let x = Array2::zeros((10, 4));
        let y = vec![2, 2, 2, 2, 0, 1, 2, 0, 2, 1];
        let (model, _, _) = fit_logistic(x.view(), &y, 3, &Hyperparams::default()).unwrap();
        let pred = super::super::argmax_rows(&model.probabilities(x.view()).unwrap());
        assert!(pred.iter().all(|&p| p == 2));
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let model = LogisticModel {
            weights: Array2::zeros((3, 4)),
            bias: Array2::zeros((1, 4)),
        };
        let x = Array2::from_elem((2, 3), 1.5);
        let p = model.probabilities(x.view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(super::super::argmax_rows(&p), [0, 0]);
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let (mut x, y) = blobs(10, 4);
        x.mapv_inplace(|v| v * 1e300);
        let hp = Hyperparams {
            learning_rate: Some(1e300),
            ..Default::default()
        };
        let err = fit_logistic(x.view(), &y, 2, &hp).unwrap_err();
        assert_eq!(err.kind(), "non_finite");
    }
}
