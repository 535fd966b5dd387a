//! Fixed-shape model inputs, coordinate normalization, stratified splits and folds.

use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{KeypointSequence, LabelSpace, LabeledDataset, PhonoClass};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PaddedFrames {
    /// `t_max × (J·3)`, zero past the real frames.
    pub frames: Array2<f64>,
    pub mask: Vec<bool>,
    pub truncated: bool,
}

/// Tail zero-padding to `t_max` frames; longer sequences lose their tail.
pub fn zero_pad(seq: &KeypointSequence, t_max: usize) -> PaddedFrames {
    let dim = seq.feature_dim();
    let mut frames = Array2::zeros((t_max, dim));
    let kept = seq.len().min(t_max);
    for (t, frame) in seq.frames.iter().take(kept).enumerate() {
        for (j, xyz) in frame.iter().enumerate() {
            for (a, &v) in xyz.iter().enumerate() {
                frames[[t, j * 3 + a]] = v;
            }
        }
    }
    let truncated = seq.len() > t_max;
    if truncated {
        warn!(
            "sequence `{}` truncated from {} to {} frames",
            seq.lemma,
            seq.len(),
            t_max
        );
    }
    PaddedFrames {
        frames,
        mask: (0..t_max).map(|t| t < kept).collect(),
        truncated,
    }
}

fn joint(seq: &KeypointSequence, name: &str) -> Result<usize> {
    seq.joint_index(name)
        .ok_or_else(|| Error::DegeneratePose(format!("joint `{name}` is missing")))
}

/// Centers every frame on the chest and scales by the mean shoulder width.
///
/// The chest is the `chest` joint when the layout has one, otherwise the
/// midpoint of the two shoulders.
pub fn normalize(seq: &KeypointSequence) -> Result<KeypointSequence> {
    let left = joint(seq, "left_shoulder")?;
    let right = joint(seq, "right_shoulder")?;
    let chest = seq.joint_index("chest");
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }

    let width: f64 = seq
        .frames
        .iter()
        .map(|f| {
            let (l, r) = (f[left], f[right]);
            ((l[0] - r[0]).powi(2) + (l[1] - r[1]).powi(2) + (l[2] - r[2]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / seq.len() as f64;
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::DegeneratePose(format!(
            "mean shoulder distance is {width} in `{}`",
            seq.lemma
        )));
    }

    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let center = match chest {
                Some(c) => f[c],
                None => std::array::from_fn(|a| (f[left][a] + f[right][a]) / 2.0),
            };
            f.iter()
                .map(|p| std::array::from_fn(|a| (p[a] - center[a]) / width))
                .collect()
        })
        .collect();
    Ok(KeypointSequence { frames, ..seq.clone() })
}

/// Padded model inputs for a set of samples, in one shared frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedTensorSet {
    /// `N × t_max × D`
    pub x_seq: Array3<f64>,
    /// `N × (t_max·D)`, row-major flattening of `x_seq`.
    pub x_flat: Array2<f64>,
    pub y: Vec<usize>,
    pub t_max: usize,
    /// `N × t_max`, true on real frames.
    pub mask: Array2<bool>,
    /// Real (pre-padding, post-truncation) frame count per sample.
    pub lengths: Vec<usize>,
    /// Samples whose tail was cut off.
    pub truncated: Vec<usize>,
}

impl PaddedTensorSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.x_seq.shape()[2]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let x_seq = self.x_seq.select(Axis(0), indices);
        let x_flat = self.x_flat.select(Axis(0), indices);
        Self {
            x_seq,
            x_flat,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            t_max: self.t_max,
            mask: self.mask.select(Axis(0), indices),
            lengths: indices.iter().map(|&i| self.lengths[i]).collect(),
            truncated: indices
                .iter()
                .enumerate()
                .filter(|(_, i)| self.truncated.contains(i))
                .map(|(k, _)| k)
                .collect(),
        }
    }
}

/// Longest sequence among `indices`; the padding length for a training set.
pub fn t_max_for(dataset: &LabeledDataset, indices: &[usize]) -> Result<usize> {
    indices
        .iter()
        .map(|&i| dataset.samples[i].sequence.len())
        .max()
        .ok_or_else(|| Error::InvalidInput("cannot pick a padding length from zero samples".into()))
}

/// Pads (and optionally normalizes) every sample of `dataset` to `t_max`.
pub fn build_tensors(
    dataset: &LabeledDataset,
    class: PhonoClass,
    t_max: usize,
    normalize_coords: bool,
) -> Result<PaddedTensorSet> {
    if t_max == 0 {
        return Err(Error::InvalidInput("t_max must be at least 1".into()));
    }
    let n = dataset.len();
    let dim = dataset
        .samples
        .first()
        .map(|s| s.sequence.feature_dim())
        .ok_or_else(|| Error::InvalidInput("empty dataset".into()))?;
    let y = dataset.label_indices(class)?;

    let mut x_seq = Array3::zeros((n, t_max, dim));
    let mut mask = Array2::from_elem((n, t_max), false);
    let mut lengths = Vec::with_capacity(n);
    let mut truncated = Vec::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        let seq = if normalize_coords {
            normalize(&sample.sequence)?
        } else {
            sample.sequence.clone()
        };
        if seq.feature_dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "sample `{}` has {} joints, expected {}",
                seq.lemma,
                seq.n_joints(),
                dim / 3
            )));
        }
        let padded = zero_pad(&seq, t_max);
        x_seq.slice_mut(s![i, .., ..]).assign(&padded.frames);
        for (t, &m) in padded.mask.iter().enumerate() {
            mask[[i, t]] = m;
        }
        lengths.push(seq.len().min(t_max));
        if padded.truncated {
            truncated.push(i);
        }
    }
    let x_flat = x_seq
        .clone()
        .into_shape_with_order((n, t_max * dim))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(PaddedTensorSet {
        x_seq,
        x_flat,
        y,
        t_max,
        mask,
        lengths,
        truncated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Validation indices of each fold.
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    /// Indices used for fitting when `fold` is held out.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

macro_rules! json_io {
    ($t:ty) => {
        impl $t {
            pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
                let path = path.as_ref();
                fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
            }

            pub fn read(path: impl AsRef<Path>) -> Result<Self> {
                let path = path.as_ref();
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    };
}

json_io!(SplitPlan);
json_io!(FoldPlan);

// Snaps products like 0.15 * 50 = 7.499999... onto the intended grid.
fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Per-class test counts by largest-remainder apportionment of `ratio · count`.
///
/// Leftover seats go to the largest fractional parts; equal remainders
/// favour the class that sorts first.
pub fn apportion(counts: &[usize], ratio: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = snap(ratio * total as f64).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| snap(ratio * c as f64)).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();

    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().take(target.saturating_sub(assigned)) {
        if seats[k] < counts[k] {
            seats[k] += 1;
        }
    }
    seats
}

fn members_by_class(labels: &[usize], n_classes: usize, pool: impl Iterator<Item = usize>) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); n_classes];
    for i in pool {
        members[labels[i]].push(i);
    }
    members
}

/// Stratified train/test split of all samples labelled by `labels`
/// (indices into `space`). `ratio` is the test fraction.
pub fn stratified_split(labels: &[usize], space: &LabelSpace, ratio: f64, seed: u64) -> Result<SplitPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!("split ratio {ratio} outside [0, 1]")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= space.len()) {
        return Err(Error::InvalidInput(format!("label index {bad} out of range")));
    }
    let members = members_by_class(labels, space.len(), 0..labels.len());
    if ratio > 0.0 {
        if let Some((k, m)) = members.iter().enumerate().find(|(_, m)| m.len() == 1) {
            return Err(Error::CannotStratify {
                class: space.values[k].clone(),
                count: m.len(),
            });
        }
    }

    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let seats = apportion(&counts, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for (mut m, n_test) in members.into_iter().zip(seats) {
        m.shuffle(&mut rng);
        test.extend_from_slice(&m[..n_test]);
        train.extend_from_slice(&m[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        seed,
        ratio,
    })
}

/// Stratified k-fold partition of `indices`. `labels` is indexed by the
/// values in `indices` (i.e. dataset-wide).
///
/// Classes are visited in label order; each class is shuffled and dealt
/// round-robin, continuing from the fold where the previous class stopped.
pub fn stratified_kfold(indices: &[usize], labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > indices.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds the {} available samples",
            indices.len()
        )));
    }
    let n_classes = indices.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let members = members_by_class(labels, n_classes, indices.iter().copied());
    for (c, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < k {
            warn!("class {c} has {} samples, fewer than {k} folds", m.len());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut m in members {
        m.shuffle(&mut rng);
        for i in m {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, folds, seed })
}
