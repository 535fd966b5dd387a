//! Deterministic 64-bit numerical core: layers with analytic gradients,
//! softmax cross-entropy, Adam, dropout, batch normalization and a
//! central-difference gradient checker.

mod gradcheck;
mod layers;
mod loss;
mod params;
mod recurrent;

pub use gradcheck::{gradient_check, relative_error};
pub use layers::{
    batch_norm_backward, batch_norm_forward, dense_backward, dense_forward, dropout, relu, relu_backward,
    BatchNormCache, BatchNormState, DenseGrads,
};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use params::{adam_step, glorot_uniform, AdamConfig, Checkpoint, ParamStore};
pub use recurrent::{
    gru_cell_step, gru_sequence_backward, gru_sequence_forward, lstm_cell_step, lstm_sequence_backward,
    lstm_sequence_forward, GruParams, GruSequenceCache, LstmParams, LstmSequenceCache, RecurrentGrads,
};

use ndarray::{ArrayBase, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Tensor2 = ndarray::Array2<f64>;
pub type Tensor3 = ndarray::Array3<f64>;

/// Errors if any entry of `x` is NaN or infinite.
pub fn ensure_finite<S, D>(x: &ArrayBase<S, D>, what: &str) -> Result<()>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Training hyperparameters shared by the neural families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub use_batch_norm: bool,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 32,
            dropout_rate: 0.0,
            use_batch_norm: false,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput(format!("learning rate {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::InvalidInput(format!("l2 {} is negative", self.l2)));
        }
        Ok(())
    }
}
