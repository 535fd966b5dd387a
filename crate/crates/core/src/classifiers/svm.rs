//! One-vs-rest support vector machines trained by dual coordinate descent.
//!
//! Each binary problem solves
//! `min ½ αᵀQα − Σα` subject to `0 ≤ α ≤ C`, with `Q_ij = y_i y_j K'(x_i, x_j)`
//! and `K' = K + 1` (the bias is folded into the kernel, which removes the
//! equality constraint). The linear kernel keeps the primal weight vector
//! up to date instead of materializing the Gram matrix.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Hyperparams, Kernel};
use crate::engine::ensure_finite;
use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub enum SvmModel {
    Linear {
        /// `D × K`
        weights: Array2<f64>,
        /// `1 × K`
        bias: Array2<f64>,
    },
    Rbf {
        gamma: f64,
        /// Training inputs with at least one non-zero dual coefficient.
        support: Array2<f64>,
        /// `S × K`: `α_i·y_i` per support vector and class.
        coefs: Array2<f64>,
    },
}

impl SvmModel {
    /// `N × K` one-vs-rest decision values.
    pub fn decision_function(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            SvmModel::Linear { weights, bias } => {
                if x.ncols() != weights.nrows() {
                    return Err(Error::ShapeMismatch(format!(
                        "svm expects {} features, got {}",
                        weights.nrows(),
                        x.ncols()
                    )));
                }
                Ok(x.dot(weights) + bias)
            }
            SvmModel::Rbf { gamma, support, coefs } => {
                if x.ncols() != support.ncols() {
                    return Err(Error::ShapeMismatch(format!(
                        "svm expects {} features, got {}",
                        support.ncols(),
                        x.ncols()
                    )));
                }
                let k = rbf_cross(x, support.view(), *gamma).mapv(|v| v + 1.0);
                Ok(k.dot(coefs))
            }
        }
    }
}

fn sq_norms(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r))
}

/// `exp(−γ‖a_i − b_j‖²)` for every pair of rows.
fn rbf_cross(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let (na, nb) = (sq_norms(a), sq_norms(b));
    let mut k = a.dot(&b.t());
    for ((i, j), v) in k.indexed_iter_mut() {
        let d2 = (na[i] + nb[j] - 2.0 * *v).max(0.0);
        *v = (-gamma * d2).exp();
    }
    k
}

/// `1 / (d · Var(X))` over all entries; 1 when the features are constant.
pub fn default_gamma(x: ArrayView2<'_, f64>) -> f64 {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

/// What the coordinate solver needs from a kernel: the current decision
/// value of a training point and a rank-one update after `α_i` moves.
trait DualState {
    fn decision(&self, i: usize) -> f64;
    /// Adds `step · K'(x_i, ·)` to the decision function.
    fn update(&mut self, i: usize, step: f64);
    fn is_finite(&self) -> bool;
}

/// Linear kernel: keeps the primal weights `w` and bias `b`.
struct LinearState<'a> {
    x: ArrayView2<'a, f64>,
    w: Array1<f64>,
    b: f64,
}

impl DualState for LinearState<'_> {
    fn decision(&self, i: usize) -> f64 {
        self.x.row(i).dot(&self.w) + self.b
    }

    fn update(&mut self, i: usize, step: f64) {
        self.w.scaled_add(step, &self.x.row(i));
        self.b += step;
    }

    fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|v| v.is_finite())
    }
}

/// Precomputed kernel: keeps the decision values of every training point.
struct GramState<'a> {
    gram: &'a Array2<f64>,
    f: Vec<f64>,
}

impl DualState for GramState<'_> {
    fn decision(&self, i: usize) -> f64 {
        self.f[i]
    }

    fn update(&mut self, i: usize, step: f64) {
        for (fj, &k) in self.f.iter_mut().zip(self.gram.row(i)) {
            *fj += step * k;
        }
    }

    fn is_finite(&self) -> bool {
        self.f.iter().all(|v| v.is_finite())
    }
}

/// Solves one binary problem with labels `signs` (±1); `diag[i]` is `K'(x_i, x_i)`.
fn dual_coordinate_descent<S: DualState>(
    state: &mut S,
    signs: &[f64],
    diag: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<DualSolution> {
    let n = signs.len();
    if let Some(i) = diag.iter().position(|&q| !(q.is_finite() && q > 0.0)) {
        return Err(Error::Numerical(format!(
            "kernel diagonal entry {i} is {}; matrix is not positive definite",
            diag[i]
        )));
    }
    let mut alpha = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epochs = 0;
    let mut converged = false;
    while epochs < max_iter {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = signs[i] * state.decision(i) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / diag[i]).clamp(0.0, c);
                let delta = alpha[i] - old;
                if delta != 0.0 {
                    state.update(i, delta * signs[i]);
                }
            }
        }
        epochs += 1;
        if !state.is_finite() {
            return Err(Error::Numerical("non-finite decision values in svm solver".into()));
        }
        if pg_max - pg_min < tol {
            converged = true;
            break;
        }
    }
    Ok(DualSolution {
        alpha,
        epochs,
        converged,
    })
}

fn linear_diag(x: ArrayView2<'_, f64>) -> Vec<f64> {
    sq_norms(x).iter().map(|v| v + 1.0).collect()
}

/// Binary dual solve on explicit data, exposed for inspection and tests.
#[allow(clippy::too_many_arguments)]
pub fn solve_binary_dual(
    x: ArrayView2<'_, f64>,
    signs: &[f64],
    kernel: Kernel,
    gamma: f64,
    c: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<DualSolution> {
    match kernel {
        Kernel::Linear => {
            let mut state = LinearState {
                x,
                w: Array1::zeros(x.ncols()),
                b: 0.0,
            };
            dual_coordinate_descent(&mut state, signs, &linear_diag(x), c, tol, max_iter, seed)
        }
        Kernel::Rbf => {
            let gram = rbf_cross(x, x, gamma).mapv(|v| v + 1.0);
            let diag = gram.diag().to_vec();
            let mut state = GramState {
                gram: &gram,
                f: vec![0.0; x.nrows()],
            };
            dual_coordinate_descent(&mut state, signs, &diag, c, tol, max_iter, seed)
        }
    }
}

/// Trains the one-vs-rest model. Returns it with the largest epoch count
/// any binary problem needed.
pub fn fit_svm(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(SvmModel, usize)> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::ShapeMismatch(format!("{n} rows, {} labels", y.len())));
    }
    ensure_finite(&x, "svm features")?;
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "label index {bad} out of range for {n_classes} classes"
        )));
    }
    let c = hp.c.unwrap_or(DEFAULT_C);
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidInput(format!("svm C = {c} must be positive")));
    }
    let kernel = hp.kernel.unwrap_or(Kernel::Rbf);
    let tol = hp.tol.unwrap_or(DEFAULT_TOL);
    let max_iter = hp.max_iter.unwrap_or(DEFAULT_MAX_ITER);
    let signs_for = |k: usize| -> Vec<f64> { y.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect() };

    let mut worst_epochs = 0;
    let mut note = |k: usize, sol: &DualSolution| {
        if !sol.converged {
            log::warn!("svm for class {k} stopped at max_iter = {max_iter}");
        }
        worst_epochs = worst_epochs.max(sol.epochs);
    };
    match kernel {
        Kernel::Linear => {
            let diag = linear_diag(x);
            let mut weights = Array2::zeros((d, n_classes));
            let mut bias = Array2::zeros((1, n_classes));
            for k in 0..n_classes {
                let mut state = LinearState {
                    x,
                    w: Array1::zeros(d),
                    b: 0.0,
                };
                let sol = dual_coordinate_descent(
                    &mut state,
                    &signs_for(k),
                    &diag,
                    c,
                    tol,
                    max_iter,
                    seed.wrapping_add(k as u64),
                )?;
                note(k, &sol);
                weights.column_mut(k).assign(&state.w);
                bias[[0, k]] = state.b;
            }
            Ok((SvmModel::Linear { weights, bias }, worst_epochs))
        }
        Kernel::Rbf => {
            let gamma = hp.gamma.unwrap_or_else(|| default_gamma(x));
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(Error::InvalidInput(format!("rbf gamma = {gamma} must be positive")));
            }
            let gram = rbf_cross(x, x, gamma).mapv(|v| v + 1.0);
            let diag = gram.diag().to_vec();
            let mut coefs = Array2::zeros((n, n_classes));
            for k in 0..n_classes {
                let signs = signs_for(k);
                let mut state = GramState {
                    gram: &gram,
                    f: vec![0.0; n],
                };
                let sol =
                    dual_coordinate_descent(&mut state, &signs, &diag, c, tol, max_iter, seed.wrapping_add(k as u64))?;
                note(k, &sol);
                for (i, a) in sol.alpha.iter().enumerate() {
                    coefs[[i, k]] = a * signs[i];
                }
            }
            let keep: Vec<usize> = (0..n).filter(|&i| coefs.row(i).iter().any(|&v| v != 0.0)).collect();
            Ok((
                SvmModel::Rbf {
                    gamma,
                    support: x.select(Axis(0), &keep),
                    coefs: coefs.select(Axis(0), &keep),
                },
                worst_epochs,
            ))
        }
    }
}
