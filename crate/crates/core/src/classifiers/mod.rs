//! The classifier families behind one fit/predict contract.

mod baseline;
mod deep;
mod logistic;
mod svm;

pub use baseline::{fit_majority_baseline, fit_stratified_baseline, stratified_draw};
pub use deep::{fit_deep, Cell, MlpModel, RecurrentModel};
pub use logistic::{fit_logistic, LogisticModel};
pub use svm::{fit_svm, solve_binary_dual, DualSolution, SvmModel};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelSpace, PhonoClass};
use crate::engine::{Checkpoint, TrainConfig};
use crate::error::{Error, Result};
use crate::preprocess::PaddedTensorSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MajorityBaseline,
    StratifiedBaseline,
    Logistic,
    Svm,
    Mlp,
    Lstm,
    Gru,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::MajorityBaseline,
        Family::StratifiedBaseline,
        Family::Logistic,
        Family::Svm,
        Family::Mlp,
        Family::Lstm,
        Family::Gru,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::MajorityBaseline => "majority_baseline",
            Family::StratifiedBaseline => "stratified_baseline",
            Family::Logistic => "logistic",
            Family::Svm => "svm",
            Family::Mlp => "mlp",
            Family::Lstm => "lstm",
            Family::Gru => "gru",
        }
    }

    pub fn input_mode(self) -> InputMode {
        match self {
            Family::Lstm | Family::Gru => InputMode::Sequence,
            _ => InputMode::Flat,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Family::MajorityBaseline | Family::StratifiedBaseline)
    }

    pub fn is_deep(self) -> bool {
        matches!(self, Family::Mlp | Family::Lstm | Family::Gru)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Flat,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Last,
    Mean,
}

/// Family-specific hyperparameters; unset fields fall back to family defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_batch_norm: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Pooling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked: Option<bool>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl Hyperparams {
    pub const KEYS: [&'static str; 15] = [
        "l2",
        "max_iter",
        "learning_rate",
        "c",
        "kernel",
        "gamma",
        "tol",
        "hidden_sizes",
        "hidden_units",
        "dropout_rate",
        "use_batch_norm",
        "epochs",
        "batch_size",
        "pooling",
        "masked",
    ];

    /// Sets one field from its text form (`hidden_sizes = 256,128`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "l2" => self.l2 = Some(parse_value(key, value)?),
            "max_iter" => self.max_iter = Some(parse_value(key, value)?),
            "learning_rate" => self.learning_rate = Some(parse_value(key, value)?),
            "c" => self.c = Some(parse_value(key, value)?),
            "kernel" => {
                self.kernel = Some(match value.trim() {
                    "linear" => Kernel::Linear,
                    "rbf" => Kernel::Rbf,
                    other => return Err(Error::Config(format!("unsupported kernel `{other}`"))),
                })
            }
            "gamma" => self.gamma = Some(parse_value(key, value)?),
            "tol" => self.tol = Some(parse_value(key, value)?),
            "hidden_sizes" => {
                self.hidden_sizes = Some(
                    value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_value(key, s))
                        .collect::<Result<_>>()?,
                )
            }
            "hidden_units" => self.hidden_units = Some(parse_value(key, value)?),
            "dropout_rate" => self.dropout_rate = Some(parse_value(key, value)?),
            "use_batch_norm" => self.use_batch_norm = Some(parse_value(key, value)?),
            "epochs" => self.epochs = Some(parse_value(key, value)?),
            "batch_size" => self.batch_size = Some(parse_value(key, value)?),
            "pooling" => {
                self.pooling = Some(match value.trim() {
                    "last" => Pooling::Last,
                    "mean" => Pooling::Mean,
                    other => return Err(Error::Config(format!("unknown pooling `{other}`"))),
                })
            }
            "masked" => self.masked = Some(parse_value(key, value)?),
            other => return Err(Error::Config(format!("unknown hyperparameter `{other}`"))),
        }
        Ok(())
    }

    /// `(key, value)` text pairs of every set field, in [`Self::KEYS`] order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let json = serde_json::to_value(self).expect("hyperparams serialize");
        let map = json.as_object().expect("object");
        Self::KEYS
            .iter()
            .filter_map(|k| {
                map.get(*k).map(|v| {
                    let text = match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                        other => other.to_string(),
                    };
                    (k.to_string(), text)
                })
            })
            .collect()
    }

    /// Compact `k=v;k=v` label used in CV tables.
    pub fn label(&self) -> String {
        let e = self.entries();
        if e.is_empty() {
            "defaults".into()
        } else {
            e.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
        }
    }

    /// Fields set in `other` override those in `self`.
    pub fn merged(&self, other: &Hyperparams) -> Hyperparams {
        let mut out = self.clone();
        for (k, v) in other.entries() {
            out.set(&k, &v).expect("round-tripped hyperparameter");
        }
        out
    }

    /// The neural training regime: `base` with any overrides set here.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            dropout_rate: self.dropout_rate.unwrap_or(base.dropout_rate),
            use_batch_norm: self.use_batch_norm.unwrap_or(base.use_batch_norm),
            l2: self.l2.unwrap_or(base.l2),
            seed: base.seed,
        }
    }
}

/// Default search grids per family.
pub fn default_grid(family: Family) -> Vec<Hyperparams> {
    let mut grid = Vec::new();
    let mut cell = |pairs: &[(&str, String)]| {
        let mut hp = Hyperparams::default();
        for (k, v) in pairs {
            hp.set(k, v).expect("valid default grid");
        }
        grid.push(hp);
    };
    match family {
        Family::MajorityBaseline | Family::StratifiedBaseline => cell(&[]),
        Family::Logistic => {
            for l2 in ["0", "1e-3", "1e-1"] {
                cell(&[("l2", l2.into())]);
            }
        }
        Family::Svm => {
            for c in ["0.1", "1", "10"] {
                for kernel in ["linear", "rbf"] {
                    cell(&[("c", c.into()), ("kernel", kernel.into())]);
                }
            }
        }
        Family::Mlp => {
            for hidden in ["128", "256,128"] {
                for dropout in ["0", "0.3"] {
                    cell(&[("hidden_sizes", hidden.into()), ("dropout_rate", dropout.into())]);
                }
            }
        }
        Family::Lstm | Family::Gru => {
            for hidden in ["64", "128"] {
                for dropout in ["0", "0.3"] {
                    cell(&[("hidden_units", hidden.into()), ("dropout_rate", dropout.into())]);
                }
            }
        }
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub class_name: PhonoClass,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    pub input_mode: InputMode,
}

impl ModelSpec {
    pub fn new(family: Family, class_name: PhonoClass) -> Self {
        Self {
            family,
            class_name,
            hyperparams: Hyperparams::default(),
            input_mode: family.input_mode(),
        }
    }

    pub fn with_hyperparams(mut self, hyperparams: Hyperparams) -> Self {
        self.hyperparams = hyperparams;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_mode != self.family.input_mode() {
            return Err(Error::InvalidInput(format!(
                "{} expects {:?} input, spec says {:?}",
                self.family,
                self.family.input_mode(),
                self.input_mode
            )));
        }
        Ok(())
    }
}

/// Model inputs in the shape a family consumes.
#[derive(Clone, Copy, Debug)]
pub enum Inputs<'a> {
    /// `N × (T·D)`
    Flat(ArrayView2<'a, f64>),
    /// `N × T × D` plus the real length of each sample.
    Sequence {
        x: ArrayView3<'a, f64>,
        lengths: &'a [usize],
    },
}

impl<'a> Inputs<'a> {
    pub fn from_set(set: &'a PaddedTensorSet, mode: InputMode) -> Self {
        match mode {
            InputMode::Flat => Inputs::Flat(set.x_flat.view()),
            InputMode::Sequence => Inputs::Sequence {
                x: set.x_seq.view(),
                lengths: &set.lengths,
            },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Inputs::Flat(x) => x.nrows(),
            Inputs::Sequence { x, .. } => x.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> InputMode {
        match self {
            Inputs::Flat(_) => InputMode::Flat,
            Inputs::Sequence { .. } => InputMode::Sequence,
        }
    }

    /// Raw values of sample `i`, for per-sample hashing.
    pub(crate) fn sample_values(&self, i: usize) -> Vec<f64> {
        match self {
            Inputs::Flat(x) => x.row(i).to_vec(),
            Inputs::Sequence { x, .. } => x.index_axis(Axis(0), i).iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<EpochLoss>,
}

#[derive(Clone, Debug)]
pub enum FittedParams {
    Majority { class_index: usize },
    Stratified { probabilities: Vec<f64> },
    Logistic(LogisticModel),
    Svm(SvmModel),
    Mlp(MlpModel),
    Recurrent(RecurrentModel),
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub label_space: LabelSpace,
    pub params: FittedParams,
    pub meta: TrainingMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// Class-probability rows for the softmax families.
    pub probabilities: Option<Array2<f64>>,
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fits `spec` on `train`. `config.seed` drives every random choice;
/// `validation`, when given, only feeds the learning curve of neural families.
pub fn fit(
    spec: &ModelSpec,
    train: &PaddedTensorSet,
    label_space: &LabelSpace,
    config: &TrainConfig,
    validation: Option<&PaddedTensorSet>,
) -> Result<TrainedModel> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let k = label_space.len();
    if let Some(&bad) = train.y.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!(
            "label index {bad} out of range for {k} classes"
        )));
    }
    let hp = &spec.hyperparams;
    let seed = config.seed;
    let mut meta = TrainingMeta {
        seed,
        ..Default::default()
    };
    let params = match spec.family {
        Family::MajorityBaseline => FittedParams::Majority {
            class_index: fit_majority_baseline(&train.y, k)?,
        },
        Family::StratifiedBaseline => FittedParams::Stratified {
            probabilities: fit_stratified_baseline(&train.y, k)?,
        },
        Family::Logistic => {
            let (model, iters, loss) = fit_logistic(train.x_flat.view(), &train.y, k, hp)?;
            meta.epochs_run = iters;
            meta.final_train_loss = Some(loss);
            FittedParams::Logistic(model)
        }
        Family::Svm => {
            let (model, epochs) = fit_svm(train.x_flat.view(), &train.y, k, hp, seed)?;
            meta.epochs_run = epochs;
            FittedParams::Svm(model)
        }
        Family::Mlp | Family::Lstm | Family::Gru => {
            let (params, curve) = fit_deep(spec, train, k, &hp.train_config(config), validation)?;
            meta.epochs_run = curve.len();
            meta.final_train_loss = curve.last().map(|e| e.train_loss);
            meta.final_val_loss = curve.last().and_then(|e| e.val_loss);
            meta.curve = curve;
            params
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        label_space: label_space.clone(),
        params,
        meta,
    })
}

impl TrainedModel {
    pub fn predict(&self, inputs: Inputs<'_>) -> Result<Prediction> {
        if !self.spec.family.is_baseline() && inputs.mode() != self.spec.input_mode {
            return Err(Error::InvalidInput(format!(
                "{} expects {:?} input, got {:?}",
                self.spec.family,
                self.spec.input_mode,
                inputs.mode()
            )));
        }
        let n = inputs.len();
        let k = self.label_space.len();
        Ok(match &self.params {
            FittedParams::Majority { class_index } => Prediction {
                labels: vec![*class_index; n],
                probabilities: None,
            },
            FittedParams::Stratified { probabilities } => Prediction {
                labels: (0..n)
                    .map(|i| stratified_draw(probabilities, self.meta.seed, &inputs.sample_values(i)))
                    .collect(),
                probabilities: None,
            },
            FittedParams::Logistic(m) => {
                let Inputs::Flat(x) = inputs else { unreachable!() };
                let probs = m.probabilities(x)?;
                Prediction {
                    labels: argmax_rows(&probs),
                    probabilities: Some(probs),
                }
            }
            FittedParams::Svm(m) => {
                let Inputs::Flat(x) = inputs else { unreachable!() };
                Prediction {
                    labels: argmax_rows(&m.decision_function(x)?),
                    probabilities: None,
                }
            }
            FittedParams::Mlp(m) => {
                let Inputs::Flat(x) = inputs else { unreachable!() };
                let probs = m.probabilities(x)?;
                debug_assert_eq!(probs.ncols(), k);
                Prediction {
                    labels: argmax_rows(&probs),
                    probabilities: Some(probs),
                }
            }
            FittedParams::Recurrent(m) => {
                let Inputs::Sequence { x, lengths } = inputs else {
                    unreachable!()
                };
                let probs = m.probabilities(x, lengths)?;
                Prediction {
                    labels: argmax_rows(&probs),
                    probabilities: Some(probs),
                }
            }
        })
    }

    pub fn predict_set(&self, set: &PaddedTensorSet) -> Result<Prediction> {
        self.predict(Inputs::from_set(set, self.spec.input_mode))
    }

    /// Trained weights, for families that have them.
    pub fn checkpoint(&self) -> Option<Checkpoint> {
        match &self.params {
            FittedParams::Mlp(m) => Some(m.store.to_checkpoint()),
            FittedParams::Recurrent(m) => Some(m.store.to_checkpoint()),
            FittedParams::Logistic(m) => Some(m.to_checkpoint()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_goes_low() {
        let s = ndarray::array![[0.2, 0.2, 0.1], [0.0, 1.0, 1.0], [0.3, 0.3, 0.3]];
        assert_eq!(argmax_rows(&s), [0, 1, 0]);
    }

    #[test]
    fn hyperparams_text_round_trip() {
        let mut hp = Hyperparams::default();
        hp.set("hidden_sizes", "256,128").unwrap();
        hp.set("kernel", "rbf").unwrap();
        hp.set("l2", "0.001").unwrap();
        assert_eq!(hp.label(), "l2=0.001;kernel=rbf;hidden_sizes=256,128");
        let mut back = Hyperparams::default();
        for (k, v) in hp.entries() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, hp);
        assert!(hp.clone().set("kernel", "poly").is_err());
        assert!(hp.set("momentum", "0.9").is_err());
    }

    #[test]
    fn default_grids_have_expected_sizes() {
        assert_eq!(default_grid(Family::Logistic).len(), 3);
        assert_eq!(default_grid(Family::Svm).len(), 6);
        assert_eq!(default_grid(Family::Mlp).len(), 4);
        assert_eq!(default_grid(Family::Gru).len(), 4);
    }

    #[test]
    fn input_mode_is_checked() {
        let mut spec = ModelSpec::new(Family::Lstm, PhonoClass::SignType);
        assert_eq!(spec.input_mode, InputMode::Sequence);
        spec.input_mode = InputMode::Flat;
        assert!(spec.validate().is_err());
    }
}
