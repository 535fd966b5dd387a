use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ensure_finite;
use crate::error::{Error, Result};

/// Named parameter matrices plus their Adam moments.
///
/// Biases are stored as `1 × n` matrices so every parameter has the same type.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.first_moment.push(Array2::zeros(value.raw_dim()));
        self.second_moment.push(Array2::zeros(value.raw_dim()));
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Array2<f64> {
        &self.values[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Array2<f64> {
        &mut self.values[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, slot: usize) -> &Array2<f64> {
        &self.first_moment[slot]
    }

    pub fn second_moment(&self, slot: usize) -> &Array2<f64> {
        &self.second_moment[slot]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    /// All parameters concatenated in slot order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::ShapeMismatch(format!(
                "{} scalars for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for v in &mut self.values {
            for (dst, &src) in v.iter_mut().zip(&flat[offset..]) {
                *dst = src;
            }
            offset += v.len();
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: Checkpoint::FORMAT.into(),
            version: Checkpoint::VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, v)| CheckpointParam {
                    name: name.clone(),
                    shape: [v.nrows(), v.ncols()],
                    values: v.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a store (with fresh optimizer state) from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != Checkpoint::FORMAT || ckpt.version != Checkpoint::VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut store = Self::new();
        for p in &ckpt.params {
            let value = Array2::from_shape_vec(p.shape, p.values.clone())
                .map_err(|e| Error::ShapeMismatch(format!("{}: {e}", p.name)))?;
            store.add(p.name.clone(), value);
        }
        Ok(store)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Versioned JSON form of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "signphono-params";
    pub const VERSION: u32 = 1;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &[Array2<f64>], lr: f64, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    for (slot, g) in grads.iter().enumerate() {
        if g.dim() != store.values[slot].dim() {
            return Err(Error::ShapeMismatch(format!(
                "gradient of `{}` is {:?}, parameter is {:?}",
                store.names[slot],
                g.dim(),
                store.values[slot].dim()
            )));
        }
        ensure_finite(g, &format!("gradient of `{}`", store.names[slot]))?;
    }

    store.step += 1;
    let t = store.step as i32;
    let correct1 = 1.0 - cfg.beta1.powi(t);
    let correct2 = 1.0 - cfg.beta2.powi(t);
    for (slot, g) in grads.iter().enumerate() {
        let m = &mut store.first_moment[slot];
        let v = &mut store.second_moment[slot];
        let p = &mut store.values[slot];
        ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        });
    }
    Ok(())
}

/// Uniform in ±√(6 / (rows + cols)).
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..=limit))
}
