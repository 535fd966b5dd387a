//! Synthetic keypoint sequences with known phonological labels.
//!
//! Each profile fixes a target location for the dominant wrist, a symmetry
//! mode and a handful of sinusoids. Samples draw a length, small location
//! jitter and phases from a per-sample seed, then add Gaussian noise from a
//! separate stream, so the noiseless twin of any sample is reproducible.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{KeypointSequence, LabeledSample, PhonoClass};
use crate::error::{Error, Result};
use crate::keypoint::{default_joints, write_keypoint_file};

pub const MIN_FRAMES: usize = 10;
pub const MAX_FRAMES: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// The non-dominant wrist stays at rest.
    OneHanded,
    /// The non-dominant wrist mirrors the dominant one about `x = 0`.
    Symmetric,
    /// The non-dominant wrist holds still at `passive_target`.
    Asymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Right,
    Left,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    /// Per-axis amplitude.
    pub amplitude: [f64; 3],
    pub frequency_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    /// Where the dominant wrist hovers, in body coordinates with the
    /// dominant side at negative `x`.
    pub active_target: [f64; 3],
    #[serde(default)]
    pub passive_target: Option<[f64; 3]>,
    pub dominant: Hand,
    pub symmetry: Symmetry,
    pub components: Vec<Sinusoid>,
    /// Uniform per-sample jitter of the target location.
    #[serde(default)]
    pub location_jitter: f64,
    pub noise_sigma: f64,
    pub length_range: [usize; 2],
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub class_name: PhonoClass,
    pub value: String,
    /// Labels for the other classes; missing ones are written as `Other`.
    #[serde(default)]
    pub other_labels: BTreeMap<PhonoClass, String>,
    pub template: Template,
}

impl SynthProfile {
    pub fn labels(&self) -> BTreeMap<PhonoClass, String> {
        PhonoClass::ALL
            .into_iter()
            .map(|c| {
                let v = if c == self.class_name {
                    self.value.clone()
                } else {
                    self.other_labels.get(&c).cloned().unwrap_or_else(|| "Other".into())
                };
                (c, v)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.template;
        let [lo, hi] = t.length_range;
        if !(MIN_FRAMES <= lo && lo <= hi && hi <= MAX_FRAMES) {
            return Err(Error::InvalidInput(format!(
                "length range [{lo}, {hi}] outside [{MIN_FRAMES}, {MAX_FRAMES}]"
            )));
        }
        if !(t.noise_sigma >= 0.0 && t.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("noise sigma {}", t.noise_sigma)));
        }
        if !(t.fps > 0.0 && t.fps.is_finite()) {
            return Err(Error::InvalidInput(format!("fps {}", t.fps)));
        }
        if !(1..=3).contains(&t.components.len()) {
            return Err(Error::InvalidInput(format!(
                "{} sinusoids; expected 1 to 3",
                t.components.len()
            )));
        }
        if !(t.location_jitter >= 0.0) {
            return Err(Error::InvalidInput(format!("location jitter {}", t.location_jitter)));
        }
        Ok(())
    }
}

/// A profile file: profiles plus how many samples to draw from each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub profiles: Vec<SynthProfile>,
}

impl SynthSpec {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

// Rest pose, dominant (right) side at negative x.
const HEAD: [f64; 3] = [0.0, 0.65, 0.0];
const SHOULDER: [f64; 3] = [-0.2, 0.4, 0.0];
const WRIST_REST: [f64; 3] = [-0.2, -0.05, 0.1];

fn mirror(p: [f64; 3]) -> [f64; 3] {
    [-p[0], p[1], p[2]]
}

fn elbow(shoulder: [f64; 3], wrist: [f64; 3]) -> [f64; 3] {
    [
        (shoulder[0] + wrist[0]) / 2.0,
        (shoulder[1] + wrist[1]) / 2.0 - 0.08,
        (shoulder[2] + wrist[2]) / 2.0,
    ]
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_seed(seed: u64, profile: usize, index: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ profile as u64) ^ index as u64)
}

/// One sequence of `profile`. The structure (length, jitter, phases) comes
/// from `seed`; noise comes from an independent stream of the same seed.
pub fn generate_sequence(profile: &SynthProfile, lemma: &str, seed: u64) -> Result<KeypointSequence> {
    profile.validate()?;
    let t = &profile.template;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.gen_range(t.length_range[0]..=t.length_range[1]);
    let jitter: [f64; 3] = std::array::from_fn(|_| {
        if t.location_jitter > 0.0 {
            rng.gen_range(-t.location_jitter..=t.location_jitter)
        } else {
            0.0
        }
    });
    let phases: Vec<f64> = t.components.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let target: [f64; 3] = std::array::from_fn(|a| t.active_target[a] + jitter[a]);
    let passive_rest = mirror(WRIST_REST);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, t.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let time = f as f64 / t.fps;
        let mut active = target;
        for (c, phase) in t.components.iter().zip(&phases) {
            let s = (2.0 * PI * c.frequency_hz * time + phase).sin();
            for a in 0..3 {
                active[a] += c.amplitude[a] * s;
            }
        }
        let passive = match t.symmetry {
            Symmetry::Symmetric => mirror(active),
            Symmetry::OneHanded => passive_rest,
            Symmetry::Asymmetric => t.passive_target.unwrap_or(passive_rest),
        };
        // dominant side is drawn at negative x; a left-dominant signer swaps sides
        let (right_w, left_w, right_s, left_s) = match t.dominant {
            Hand::Right => (active, passive, SHOULDER, mirror(SHOULDER)),
            Hand::Left => (mirror(active), mirror(passive), SHOULDER, mirror(SHOULDER)),
        };
        let mut frame = vec![
            HEAD,
            left_s,
            right_s,
            elbow(left_s, left_w),
            elbow(right_s, right_w),
            left_w,
            right_w,
        ];
        if t.noise_sigma > 0.0 {
            for p in &mut frame {
                for v in p.iter_mut() {
                    *v += noise.sample(&mut noise_rng);
                }
            }
        }
        out.push(frame);
    }
    Ok(KeypointSequence {
        lemma: lemma.to_string(),
        fps: t.fps,
        joints: default_joints(),
        frames: out,
    })
}

/// `n_per_class` samples of every profile, in profile order.
pub fn synth_generate(profiles: &[SynthProfile], n_per_class: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no synthetic profiles".into()));
    }
    if n_per_class < 1 {
        return Err(Error::InvalidInput("n_per_class must be at least 1".into()));
    }
    let varied = PhonoClass::ALL.into_iter().any(|c| {
        let mut values: Vec<String> = profiles.iter().map(|p| p.labels()[&c].clone()).collect();
        values.sort();
        values.dedup();
        values.len() >= 2
    });
    if !varied {
        return Err(Error::InvalidInput(
            "profiles need at least 2 distinct class values".into(),
        ));
    }
    for p in profiles {
        p.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..profiles.len())
        .flat_map(|p| (0..n_per_class).map(move |i| (p, i)))
        .collect();
    jobs.par_iter()
        .map(|&(p, i)| {
            let profile = &profiles[p];
            let lemma = format!("synth_p{p}_{i:04}");
            Ok(LabeledSample {
                sequence: generate_sequence(profile, &lemma, sample_seed(seed, p, i))?,
                labels: profile.labels(),
                source: None,
            })
        })
        .collect()
}

/// Writes `keypoints/<lemma>.json` per sample and a `lexicon.csv` with the
/// default column names.
pub fn write_synth(out_dir: impl AsRef<Path>, samples: &[LabeledSample]) -> Result<()> {
    let out_dir = out_dir.as_ref();
    let kp_dir = out_dir.join("keypoints");
    fs::create_dir_all(&kp_dir).map_err(|e| Error::io(&kp_dir, e))?;
    samples
        .par_iter()
        .try_for_each(|s| write_keypoint_file(kp_dir.join(format!("{}.json", s.sequence.lemma)), &s.sequence))?;
    let lex_path = out_dir.join("lexicon.csv");
    let mut w = csv::Writer::from_path(&lex_path)?;
    w.write_record(["lemma", "sign_type", "major_location"])?;
    for s in samples {
        w.write_record([
            s.sequence.lemma.as_str(),
            s.labels[&PhonoClass::SignType].as_str(),
            s.labels[&PhonoClass::MajorLocation].as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&lex_path, e))?;
    Ok(())
}

fn profile(
    location: &str,
    sign_type: &str,
    active: [f64; 3],
    symmetry: Symmetry,
    passive: Option<[f64; 3]>,
    components: Vec<Sinusoid>,
) -> SynthProfile {
    SynthProfile {
        class_name: PhonoClass::MajorLocation,
        value: location.into(),
        other_labels: BTreeMap::from([(PhonoClass::SignType, sign_type.into())]),
        template: Template {
            active_target: active,
            passive_target: passive,
            dominant: Hand::Right,
            symmetry,
            components,
            location_jitter: 0.02,
            noise_sigma: 0.02,
            length_range: [56, 64],
            fps: 30.0,
        },
    }
}

fn wave(amplitude: [f64; 3], frequency_hz: f64) -> Sinusoid {
    Sinusoid {
        amplitude,
        frequency_hz,
    }
}

/// The five-location benchmark: head, neutral space, trunk, arm and hand,
/// each with a distinct sign type and movement.
pub fn benchmark_profiles() -> Vec<SynthProfile> {
    vec![
        profile(
            "Head",
            "OneHanded",
            [-0.05, 0.65, 0.15],
            Symmetry::OneHanded,
            None,
            vec![wave([0.0, 0.0, 0.05], 1.5)],
        ),
        profile(
            "Neutral",
            "SymmetricalOrAlternating",
            [-0.15, 0.15, 0.35],
            Symmetry::Symmetric,
            None,
            vec![wave([0.05, 0.0, 0.0], 1.0), wave([0.0, 0.03, 0.0], 2.0)],
        ),
        profile(
            "Trunk",
            "SymmetricalOrAlternating",
            [-0.1, 0.25, 0.12],
            Symmetry::Symmetric,
            None,
            vec![wave([0.0, 0.05, 0.0], 1.0)],
        ),
        profile(
            "Arm",
            "AsymmetricalSameHandshape",
            [0.2, 0.2, 0.1],
            Symmetry::Asymmetric,
            Some([0.2, 0.05, 0.15]),
            vec![wave([0.0, 0.04, 0.02], 1.2)],
        ),
        profile(
            "Hand",
            "AsymmetricalDifferentHandshape",
            [0.0, 0.05, 0.3],
            Symmetry::Asymmetric,
            Some([0.05, 0.0, 0.28]),
            vec![
                wave([0.03, 0.0, 0.0], 2.0),
                wave([0.0, 0.0, 0.02], 1.0),
                wave([0.0, 0.02, 0.0], 0.5),
            ],
        ),
    ]
}

pub fn benchmark_spec() -> SynthSpec {
    SynthSpec {
        n_per_class: 120,
        profiles: benchmark_profiles(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(mut p: SynthProfile) -> SynthProfile {
        p.template.noise_sigma = 0.0;
        p
    }

    const LW: usize = 5;
    const RW: usize = 6;

    #[test]
    fn symmetric_profile_mirrors_exactly() {
        let p = noiseless(benchmark_profiles()[1].clone());
        let seq = generate_sequence(&p, "s", 3).unwrap();
        for f in &seq.frames {
            assert_eq!(f[LW][0], -f[RW][0]);
            assert_eq!(f[LW][1], f[RW][1]);
            assert_eq!(f[LW][2], f[RW][2]);
        }
    }

    #[test]
    fn one_handed_passive_wrist_is_still() {
        let p = noiseless(benchmark_profiles()[0].clone());
        let seq = generate_sequence(&p, "s", 3).unwrap();
        let first = seq.frames[0][LW];
        assert!(seq.frames.iter().all(|f| f[LW] == first));
        assert!(seq.frames.iter().any(|f| f[RW] != seq.frames[0][RW]));
    }

    #[test]
    fn noise_stays_within_three_sigma() {
        let p = benchmark_profiles()[4].clone();
        let sigma = p.template.noise_sigma;
        let clean_p = noiseless(p.clone());
        let (mut inside, mut total) = (0usize, 0usize);
        for seed in 0..20 {
            let noisy = generate_sequence(&p, "s", seed).unwrap();
            let clean = generate_sequence(&clean_p, "s", seed).unwrap();
            assert_eq!(noisy.len(), clean.len());
            for (a, b) in noisy.frames.iter().flatten().zip(clean.frames.iter().flatten()) {
                for k in 0..3 {
                    total += 1;
                    inside += usize::from((a[k] - b[k]).abs() <= 3.0 * sigma);
                }
            }
        }
        assert!(inside as f64 / total as f64 >= 0.99);
    }

    #[test]
    fn generation_is_reproducible_and_labeled() {
        let profiles = benchmark_profiles();
        let a = synth_generate(&profiles, 4, 7).unwrap();
        let b = synth_generate(&profiles, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_ne!(a, synth_generate(&profiles, 4, 8).unwrap());
        assert_eq!(a[0].labels[&PhonoClass::MajorLocation], "Head");
        assert_eq!(a[19].labels[&PhonoClass::SignType], "AsymmetricalDifferentHandshape");
        for s in &a {
            assert!((56..=64).contains(&s.sequence.len()));
            assert!(crate::keypoint::validate_sequence(&s.sequence).is_empty());
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let profiles = benchmark_profiles();
        assert!(synth_generate(&[], 3, 0).is_err());
        assert!(synth_generate(&profiles, 0, 0).is_err());
        assert!(synth_generate(&profiles[..1], 3, 0).is_err());
        let mut p = profiles[0].clone();
        p.template.length_range = [5, 20];
        assert!(generate_sequence(&p, "s", 0).is_err());
        p.template.length_range = [10, 301];
        assert!(generate_sequence(&p, "s", 0).is_err());
    }
}
