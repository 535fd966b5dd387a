//! MLP and recurrent classifiers trained with minibatch Adam.
//!
//! Both share the same head: optional batch norm and dropout on the feature
//! vector, then a dense layer to class logits. The MLP puts ReLU hidden
//! layers in front of it; the recurrent models pool LSTM/GRU hidden states.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpochLoss, Family, FittedParams, Inputs, ModelSpec, Pooling};
use crate::engine::{
    adam_step, batch_norm_backward, batch_norm_forward, dense_backward, dense_forward, dropout, ensure_finite,
    glorot_uniform, gru_sequence_backward, gru_sequence_forward, lstm_sequence_backward, lstm_sequence_forward, relu,
    relu_backward, softmax_cross_entropy, softmax_rows, AdamConfig, BatchNormCache, BatchNormState, GruParams,
    GruSequenceCache, LstmParams, LstmSequenceCache, ParamStore, TrainConfig,
};
use crate::error::{Error, Result};
use crate::preprocess::PaddedTensorSet;

pub const DEFAULT_HIDDEN_SIZES: [usize; 1] = [128];
pub const DEFAULT_HIDDEN_UNITS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Lstm,
    Gru,
}

impl Cell {
    fn gates(self) -> usize {
        match self {
            Cell::Lstm => 4,
            Cell::Gru => 3,
        }
    }
}

/// Slots of one dense layer with optional batch norm behind it.
#[derive(Clone, Debug)]
struct DenseSlots {
    w: usize,
    b: usize,
    bn: Option<(usize, usize)>,
}

fn add_dense(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> DenseSlots {
    DenseSlots {
        w: store.add(format!("{prefix}.w"), glorot_uniform(fan_in, fan_out, rng)),
        b: store.add(format!("{prefix}.b"), Array2::zeros((1, fan_out))),
        bn: None,
    }
}

fn add_bn(store: &mut ParamStore, prefix: &str, width: usize) -> (usize, usize) {
    (
        store.add(format!("{prefix}.gamma"), Array2::ones((1, width))),
        store.add(format!("{prefix}.beta"), Array2::zeros((1, width))),
    )
}

/// Batch norm (when configured) then dropout, with what backward needs.
struct RegCache {
    bn: Option<BatchNormCache>,
    mask: Option<Array2<f64>>,
}

fn regularize(
    store: &ParamStore,
    x: &Array2<f64>,
    bn: Option<((usize, usize), &mut BatchNormState)>,
    rate: f64,
    training: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Array2<f64>, RegCache)> {
    let (mut h, bn_cache) = match bn {
        Some(((gamma, beta), state)) => batch_norm_forward(x, store.get(gamma), store.get(beta), state, training)?,
        None => (x.clone(), None),
    };
    let mut mask = None;
    if let Some(rng) = rng {
        let (dropped, m) = dropout(&h, rate, rng, training)?;
        h = dropped;
        mask = m;
    }
    Ok((h, RegCache { bn: bn_cache, mask }))
}

/// Backward through [`regularize`]; writes batch-norm gradients into `grads`.
fn regularize_backward(
    cache: &RegCache,
    slots: Option<(usize, usize)>,
    mut dy: Array2<f64>,
    grads: &mut [Array2<f64>],
) -> Result<Array2<f64>> {
    if let Some(m) = &cache.mask {
        dy *= m;
    }
    match (&cache.bn, slots) {
        (Some(bn), Some((gamma, beta))) => {
            let (dx, dg, db) = batch_norm_backward(bn, &dy)?;
            grads[gamma] = dg;
            grads[beta] = db;
            Ok(dx)
        }
        _ => Ok(dy),
    }
}

/// Feed-forward classifier on flattened, padded sequences.
#[derive(Clone, Debug)]
pub struct MlpModel {
    pub store: ParamStore,
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    /// Running statistics per hidden layer; empty without batch norm.
    pub bn_states: Vec<BatchNormState>,
    layers: Vec<DenseSlots>,
    out: DenseSlots,
}

struct MlpLayerCache {
    input: Array2<f64>,
    pre_relu: Array2<f64>,
    bn: Option<BatchNormCache>,
    mask: Option<Array2<f64>>,
}

impl MlpModel {
    pub fn new(
        input_dim: usize,
        n_classes: usize,
        hidden_sizes: &[usize],
        use_batch_norm: bool,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || n_classes < 2 || hidden_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "mlp with input {input_dim}, hidden {hidden_sizes:?}, {n_classes} classes"
            )));
        }
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut bn_states = Vec::new();
        let mut width = input_dim;
        for (l, &h) in hidden_sizes.iter().enumerate() {
            let mut slots = add_dense(&mut store, &format!("dense{l}"), width, h, rng);
            if use_batch_norm {
                slots.bn = Some(add_bn(&mut store, &format!("bn{l}"), h));
                bn_states.push(BatchNormState::new(h));
            }
            layers.push(slots);
            width = h;
        }
        let out = add_dense(&mut store, "out", width, n_classes, rng);
        Ok(Self {
            store,
            hidden_sizes: hidden_sizes.to_vec(),
            dropout_rate,
            bn_states,
            layers,
            out,
        })
    }

    fn forward(
        &mut self,
        x: &Array2<f64>,
        training: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, Vec<MlpLayerCache>, Array2<f64>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (l, slots) in self.layers.iter().enumerate() {
            let z = dense_forward(&a, self.store.get(slots.w), self.store.get(slots.b))?;
            let bn = slots.bn.map(|s| (s, &mut self.bn_states[l]));
            let (pre_relu, bn) = match bn {
                Some(((gamma, beta), state)) => {
                    batch_norm_forward(&z, self.store.get(gamma), self.store.get(beta), state, training)?
                }
                None => (z, None),
            };
            let mut h = relu(&pre_relu);
            let mut mask = None;
            if let Some(r) = rng.as_deref_mut() {
                let (dropped, m) = dropout(&h, self.dropout_rate, r, training)?;
                h = dropped;
                mask = m;
            }
            caches.push(MlpLayerCache {
                input: std::mem::replace(&mut a, h),
                pre_relu,
                bn,
                mask,
            });
        }
        let logits = dense_forward(&a, self.store.get(self.out.w), self.store.get(self.out.b))?;
        Ok((logits, caches, a))
    }

    /// Mean cross-entropy and its gradient for every parameter (slot order)
    /// on one batch, in training mode. Dropout is applied only when `rng`
    /// is given.
    pub fn loss_and_gradients(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        let (logits, caches, top) = self.forward(&x.to_owned(), true, rng)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, y)?;
        let mut grads = self.store.zeros_like();
        let g = dense_backward(&top, self.store.get(self.out.w), &dlogits)?;
        grads[self.out.w] = g.dw;
        grads[self.out.b] = g.db;
        let mut da = g.dx;
        for (slots, cache) in self.layers.iter().zip(&caches).rev() {
            if let Some(m) = &cache.mask {
                da *= m;
            }
            let mut dz = relu_backward(&cache.pre_relu, &da);
            if let (Some(bn), Some((gamma, beta))) = (&cache.bn, slots.bn) {
                let (dx, dg, db) = batch_norm_backward(bn, &dz)?;
                grads[gamma] = dg;
                grads[beta] = db;
                dz = dx;
            }
            let g = dense_backward(&cache.input, self.store.get(slots.w), &dz)?;
            grads[slots.w] = g.dw;
            grads[slots.b] = g.db;
            da = g.dx;
        }
        Ok((loss, grads))
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let expected = self.store.get(self.layers.first().map_or(self.out.w, |l| l.w)).nrows();
        if x.ncols() != expected {
            return Err(Error::ShapeMismatch(format!(
                "mlp expects {expected} features, got {}",
                x.ncols()
            )));
        }
        let mut probe = self.clone();
        Ok(probe.forward(&x.to_owned(), false, None)?.0)
    }

    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    fn weight_slots(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.w).chain([self.out.w]).collect()
    }
}

/// LSTM or GRU over the padded sequence, pooled, then the shared head.
#[derive(Clone, Debug)]
pub struct RecurrentModel {
    pub store: ParamStore,
    pub cell: Cell,
    pub hidden_units: usize,
    pub pooling: Pooling,
    /// Whether padded frames are skipped (state carried through unchanged).
    pub masked: bool,
    pub dropout_rate: f64,
    pub bn_state: Option<BatchNormState>,
    wx: usize,
    wh: usize,
    b: usize,
    bn: Option<(usize, usize)>,
    out: DenseSlots,
}

enum SeqCache {
    Lstm(LstmSequenceCache),
    Gru(GruSequenceCache),
}

struct RecurrentCache {
    seq: SeqCache,
    steps: usize,
    lengths: Vec<usize>,
    reg: RegCache,
    features: Array2<f64>,
}

fn lengths_mask(lengths: &[usize], steps: usize) -> Array2<bool> {
    Array2::from_shape_fn((lengths.len(), steps), |(b, t)| t < lengths[b])
}

impl RecurrentModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cell: Cell,
        input_dim: usize,
        hidden_units: usize,
        n_classes: usize,
        pooling: Pooling,
        masked: bool,
        use_batch_norm: bool,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_units == 0 || n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "recurrent model with input {input_dim}, {hidden_units} units, {n_classes} classes"
            )));
        }
        let width = cell.gates() * hidden_units;
        let name = match cell {
            Cell::Lstm => "lstm",
            Cell::Gru => "gru",
        };
        let mut store = ParamStore::new();
        let wx = store.add(format!("{name}.wx"), glorot_uniform(input_dim, width, rng));
        let wh = store.add(format!("{name}.wh"), glorot_uniform(hidden_units, width, rng));
        let mut bias = Array2::zeros((1, width));
        if cell == Cell::Lstm {
            // forget gate starts open
            bias.slice_mut(s![.., hidden_units..2 * hidden_units]).fill(1.0);
        }
        let b = store.add(format!("{name}.b"), bias);
        let bn = use_batch_norm.then(|| add_bn(&mut store, "bn", hidden_units));
        let out = add_dense(&mut store, "out", hidden_units, n_classes, rng);
        Ok(Self {
            store,
            cell,
            hidden_units,
            pooling,
            masked,
            dropout_rate,
            bn_state: use_batch_norm.then(|| BatchNormState::new(hidden_units)),
            wx,
            wh,
            b,
            bn,
            out,
        })
    }

    fn input_dim(&self) -> usize {
        self.store.get(self.wx).nrows()
    }

    fn pool(&self, hs: &Array3<f64>, lengths: &[usize]) -> Array2<f64> {
        let steps = hs.dim().1;
        match self.pooling {
            Pooling::Last => hs.index_axis(Axis(1), steps - 1).to_owned(),
            Pooling::Mean => {
                let mut out = Array2::zeros((hs.dim().0, hs.dim().2));
                for (b, mut row) in out.rows_mut().into_iter().enumerate() {
                    let n = self.pool_len(lengths[b], steps);
                    row.assign(&hs.slice(s![b, ..n, ..]).sum_axis(Axis(0)));
                    row /= n as f64;
                }
                out
            }
        }
    }

    fn pool_len(&self, length: usize, steps: usize) -> usize {
        if self.masked {
            length.clamp(1, steps)
        } else {
            steps
        }
    }

    fn pool_backward(&self, dpooled: &Array2<f64>, lengths: &[usize], steps: usize) -> Array3<f64> {
        let (batch, hidden) = dpooled.dim();
        let mut dhs = Array3::zeros((batch, steps, hidden));
        match self.pooling {
            Pooling::Last => dhs.index_axis_mut(Axis(1), steps - 1).assign(dpooled),
            Pooling::Mean => {
                for b in 0..batch {
                    let n = self.pool_len(lengths[b], steps);
                    let share = &dpooled.row(b) / n as f64;
                    for t in 0..n {
                        dhs.slice_mut(s![b, t, ..]).assign(&share);
                    }
                }
            }
        }
        dhs
    }

    fn forward(
        &mut self,
        x: &Array3<f64>,
        lengths: &[usize],
        training: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, RecurrentCache)> {
        let (batch, steps, dim) = x.dim();
        if dim != self.input_dim() || lengths.len() != batch || steps == 0 {
            return Err(Error::ShapeMismatch(format!(
                "recurrent model expects B × T × {}, got {:?} with {} lengths",
                self.input_dim(),
                x.dim(),
                lengths.len()
            )));
        }
        let mask = self.masked.then(|| lengths_mask(lengths, steps));
        let (wx, wh, b) = (self.store.get(self.wx), self.store.get(self.wh), self.store.get(self.b));
        let (hs, seq) = match self.cell {
            Cell::Lstm => {
                let (hs, _, cache) = lstm_sequence_forward(x, &LstmParams { wx, wh, b }, None, mask.as_ref())?;
                (hs, SeqCache::Lstm(cache))
            }
            Cell::Gru => {
                let (hs, cache) = gru_sequence_forward(x, &GruParams { wx, wh, b }, None, mask.as_ref())?;
                (hs, SeqCache::Gru(cache))
            }
        };
        let pooled = self.pool(&hs, lengths);
        let bn = self.bn.zip(self.bn_state.as_mut());
        let (features, reg) = regularize(&self.store, &pooled, bn, self.dropout_rate, training, rng)?;
        let logits = dense_forward(&features, self.store.get(self.out.w), self.store.get(self.out.b))?;
        Ok((
            logits,
            RecurrentCache {
                seq,
                steps,
                lengths: lengths.to_vec(),
                reg,
                features,
            },
        ))
    }

    /// Mean cross-entropy and per-slot gradients on one batch in training
    /// mode; dropout only when `rng` is given.
    pub fn loss_and_gradients(
        &mut self,
        x: ArrayView3<'_, f64>,
        lengths: &[usize],
        y: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        let (logits, cache) = self.forward(&x.to_owned(), lengths, true, rng)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, y)?;
        let mut grads = self.store.zeros_like();
        let g = dense_backward(&cache.features, self.store.get(self.out.w), &dlogits)?;
        grads[self.out.w] = g.dw;
        grads[self.out.b] = g.db;
        let dpooled = regularize_backward(&cache.reg, self.bn, g.dx, &mut grads)?;
        let dhs = self.pool_backward(&dpooled, &cache.lengths, cache.steps);
        let (wx, wh, b) = (self.store.get(self.wx), self.store.get(self.wh), self.store.get(self.b));
        let rg = match &cache.seq {
            SeqCache::Lstm(c) => lstm_sequence_backward(&LstmParams { wx, wh, b }, c, &dhs, None)?,
            SeqCache::Gru(c) => gru_sequence_backward(&GruParams { wx, wh, b }, c, &dhs)?,
        };
        grads[self.wx] = rg.dwx;
        grads[self.wh] = rg.dwh;
        grads[self.b] = rg.db;
        Ok((loss, grads))
    }

    pub fn logits(&self, x: ArrayView3<'_, f64>, lengths: &[usize]) -> Result<Array2<f64>> {
        let mut probe = self.clone();
        Ok(probe.forward(&x.to_owned(), lengths, false, None)?.0)
    }

    pub fn probabilities(&self, x: ArrayView3<'_, f64>, lengths: &[usize]) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(x, lengths)?))
    }

    fn weight_slots(&self) -> Vec<usize> {
        vec![self.wx, self.wh, self.out.w]
    }
}

enum Net {
    Mlp(MlpModel),
    Recurrent(RecurrentModel),
}

impl Net {
    fn batch_step(
        &mut self,
        inputs: &Inputs<'_>,
        batch: &[usize],
        y: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        match (self, inputs) {
            (Net::Mlp(m), Inputs::Flat(x)) => m.loss_and_gradients(x.select(Axis(0), batch).view(), y, Some(rng)),
            (Net::Recurrent(m), Inputs::Sequence { x, lengths }) => {
                let lens: Vec<usize> = batch.iter().map(|&i| lengths[i]).collect();
                m.loss_and_gradients(x.select(Axis(0), batch).view(), &lens, y, Some(rng))
            }
            _ => Err(Error::InvalidInput("input mode does not match the network".into())),
        }
    }

    fn eval_loss(&self, set: &PaddedTensorSet) -> Result<f64> {
        let probs = match self {
            Net::Mlp(m) => m.logits(set.x_flat.view())?,
            Net::Recurrent(m) => m.logits(set.x_seq.view(), &set.lengths)?,
        };
        Ok(softmax_cross_entropy(&probs, &set.y)?.0)
    }

    fn store(&mut self) -> &mut ParamStore {
        match self {
            Net::Mlp(m) => &mut m.store,
            Net::Recurrent(m) => &mut m.store,
        }
    }

    fn weight_slots(&self) -> Vec<usize> {
        match self {
            Net::Mlp(m) => m.weight_slots(),
            Net::Recurrent(m) => m.weight_slots(),
        }
    }
}

/// Shuffled minibatches; with batch norm a trailing batch of one sample is
/// folded into the one before it.
fn minibatches(n: usize, size: usize, merge_singleton: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if merge_singleton && batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Trains an MLP, LSTM or GRU. The returned curve has one entry per epoch
/// with the mean training loss and, when `validation` is given, the
/// inference-mode loss on it.
pub fn fit_deep(
    spec: &ModelSpec,
    train: &PaddedTensorSet,
    n_classes: usize,
    config: &TrainConfig,
    validation: Option<&PaddedTensorSet>,
) -> Result<(FittedParams, Vec<EpochLoss>)> {
    config.validate()?;
    if validation.is_some_and(PaddedTensorSet::is_empty) {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    let inputs = Inputs::from_set(train, spec.input_mode);
    match inputs {
        Inputs::Flat(x) => ensure_finite(&x, "training inputs")?,
        Inputs::Sequence { x, .. } => ensure_finite(&x, "training inputs")?,
    }
    let n = train.len();
    if config.use_batch_norm && n < 2 {
        return Err(Error::InvalidInput(
            "batch norm needs at least 2 training samples".into(),
        ));
    }
    let hp = &spec.hyperparams;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = match spec.family {
        Family::Mlp => {
            let hidden = hp.hidden_sizes.clone().unwrap_or_else(|| DEFAULT_HIDDEN_SIZES.to_vec());
            Net::Mlp(MlpModel::new(
                train.x_flat.ncols(),
                n_classes,
                &hidden,
                config.use_batch_norm,
                config.dropout_rate,
                &mut rng,
            )?)
        }
        Family::Lstm | Family::Gru => Net::Recurrent(RecurrentModel::new(
            if spec.family == Family::Lstm {
                Cell::Lstm
            } else {
                Cell::Gru
            },
            train.feature_dim(),
            hp.hidden_units.unwrap_or(DEFAULT_HIDDEN_UNITS),
            n_classes,
            hp.pooling.unwrap_or(Pooling::Last),
            hp.masked.unwrap_or(false),
            config.use_batch_norm,
            config.dropout_rate,
            &mut rng,
        )?),
        other => return Err(Error::InvalidInput(format!("{other} is not a neural family"))),
    };

    let adam = AdamConfig::default();
    let weight_slots = net.weight_slots();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for batch in minibatches(n, config.batch_size, config.use_batch_norm, &mut rng) {
            let y: Vec<usize> = batch.iter().map(|&i| train.y[i]).collect();
            let (loss, mut grads) = net.batch_step(&inputs, &batch, &y, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            if config.l2 > 0.0 {
                let store = net.store();
                for &slot in &weight_slots {
                    grads[slot].scaled_add(config.l2, store.get(slot));
                }
            }
            adam_step(net.store(), &grads, config.learning_rate, &adam)?;
        }
        let val_loss = validation.map(|v| net.eval_loss(v)).transpose()?;
        curve.push(EpochLoss {
            epoch,
            train_loss: total / n as f64,
            val_loss,
        });
        log::debug!("{} epoch {epoch}: train {:.4}", spec.family, total / n as f64);
    }
    let params = match net {
        Net::Mlp(m) => FittedParams::Mlp(m),
        Net::Recurrent(m) => FittedParams::Recurrent(m),
    };
    Ok((params, curve))
}
