use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn class_counts(y: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    if y.is_empty() {
        return Err(Error::InvalidInput("baseline fitted on zero labels".into()));
    }
    let mut counts = vec![0; n_classes];
    for &label in y {
        *counts
            .get_mut(label)
            .ok_or_else(|| Error::InvalidInput(format!("label {label} out of range")))? += 1;
    }
    Ok(counts)
}

/// Most frequent training class; ties go to the class that sorts first.
pub fn fit_majority_baseline(y: &[usize], n_classes: usize) -> Result<usize> {
    let counts = class_counts(y, n_classes)?;
    Ok(counts
        .iter()
        .enumerate()
        .fold(0, |best, (k, &c)| if c > counts[best] { k } else { best }))
}

/// Empirical class distribution of the training labels.
pub fn fit_stratified_baseline(y: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let counts = class_counts(y, n_classes)?;
    let n = y.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / n).collect())
}

// FNV-1a over the bit patterns, then a splitmix64 finalizer with the seed.
fn sample_seed(seed: u64, values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws one class from `probabilities` for a sample.
///
/// The draw is keyed on the run seed and the sample's own values, so a
/// prediction does not depend on where the sample sits in the evaluation set.
pub fn stratified_draw(probabilities: &[f64], seed: u64, sample: &[f64]) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, sample));
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the last partial sum; take the last populated class
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
