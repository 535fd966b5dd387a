//! Keypoint file parsing, validation and corpus summaries.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::KeypointSequence;
use crate::error::{Error, Result};

/// Joint layout emitted by the extraction adapter unless configured otherwise.
pub const DEFAULT_JOINTS: [&str; 7] = [
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

pub fn default_joints() -> Vec<String> {
    DEFAULT_JOINTS.iter().map(|s| s.to_string()).collect()
}

#[derive(Deserialize)]
struct RawKeypointFile {
    lemma: String,
    fps: f64,
    joints: Vec<String>,
    frames: Vec<Vec<Vec<Option<f64>>>>,
}

/// Replaces the bare `NaN` / `Infinity` / `-Infinity` tokens that some JSON
/// writers emit with `null`, leaving string contents untouched.
fn null_out_non_finite(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if let Some(tok) = ["-Infinity", "Infinity", "NaN"].iter().find(|t| rest.starts_with(**t)) {
            out.push_str("null");
            rest = &rest[tok.len()..];
            continue;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

/// Parses keypoint JSON text. `expected_joints` is the corpus-wide joint count.
pub fn parse_keypoint_str(text: &str, expected_joints: Option<usize>) -> Result<KeypointSequence> {
    let raw: RawKeypointFile =
        serde_json::from_str(&null_out_non_finite(text)).map_err(|e| Error::MalformedKeypoints(e.to_string()))?;

    let n_joints = raw.joints.len();
    if let Some(expected) = expected_joints {
        if n_joints != expected {
            return Err(Error::WrongJointCount {
                expected,
                found: n_joints,
                frame: None,
            });
        }
    }
    if raw.frames.is_empty() {
        return Err(Error::EmptySequence);
    }

    let mut frames = Vec::with_capacity(raw.frames.len());
    for (t, frame) in raw.frames.into_iter().enumerate() {
        if frame.len() != n_joints {
            return Err(Error::WrongJointCount {
                expected: n_joints,
                found: frame.len(),
                frame: Some(t),
            });
        }
        let mut joints = Vec::with_capacity(n_joints);
        for (j, coords) in frame.into_iter().enumerate() {
            if coords.len() != 3 {
                return Err(Error::MalformedKeypoints(format!(
                    "frame {t}, joint {j}: expected 3 coordinates, found {}",
                    coords.len()
                )));
            }
            let mut xyz = [0.0; 3];
            for (axis, v) in coords.into_iter().enumerate() {
                match v {
                    Some(v) if v.is_finite() => xyz[axis] = v,
                    _ => {
                        return Err(Error::NonFiniteCoordinate {
                            frame: t,
                            joint: j,
                            axis,
                        })
                    }
                }
            }
            joints.push(xyz);
        }
        frames.push(joints);
    }

    Ok(KeypointSequence {
        lemma: raw.lemma,
        fps: raw.fps,
        joints: raw.joints,
        frames,
    })
}

pub fn parse_keypoint_file(path: impl AsRef<Path>, expected_joints: Option<usize>) -> Result<KeypointSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoint_str(&text, expected_joints)
}

/// Serializes with shortest round-trip float formatting, so parsing the
/// output reproduces every coordinate bit-for-bit.
pub fn to_keypoint_json(seq: &KeypointSequence) -> Result<String> {
    Ok(serde_json::to_string(seq)?)
}

pub fn write_keypoint_file(path: impl AsRef<Path>, seq: &KeypointSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_keypoint_json(seq)?).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    EmptyLemma,
    NonEmptyFrames,
    PositiveFps {
        fps: f64,
    },
    JointCount {
        frame: usize,
        expected: usize,
        found: usize,
    },
    FiniteCoordinates {
        frame: usize,
        joint: usize,
    },
}

/// Every violated sequence invariant; an empty list means the sequence is accepted.
pub fn validate_sequence(seq: &KeypointSequence) -> Vec<Violation> {
    let mut violations = Vec::new();
    if seq.lemma.trim().is_empty() {
        violations.push(Violation::EmptyLemma);
    }
    if seq.frames.is_empty() {
        violations.push(Violation::NonEmptyFrames);
    }
    if !(seq.fps.is_finite() && seq.fps > 0.0) {
        violations.push(Violation::PositiveFps { fps: seq.fps });
    }
    for (t, frame) in seq.frames.iter().enumerate() {
        if frame.len() != seq.joints.len() {
            violations.push(Violation::JointCount {
                frame: t,
                expected: seq.joints.len(),
                found: frame.len(),
            });
        }
        for (j, xyz) in frame.iter().enumerate() {
            if xyz.iter().any(|v| !v.is_finite()) {
                violations.push(Violation::FiniteCoordinates { frame: t, joint: j });
            }
        }
    }
    violations
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub median: f64,
}

pub fn length_stats(lengths: &[usize]) -> Result<LengthStats> {
    if lengths.is_empty() {
        return Err(Error::InvalidInput("length stats of zero sequences".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    Ok(LengthStats {
        min: sorted[0],
        max: sorted[n - 1],
        mean: sorted.iter().sum::<usize>() as f64 / n as f64,
        median,
    })
}

pub fn sequence_stats(sequences: &[KeypointSequence]) -> Result<LengthStats> {
    length_stats(&sequences.iter().map(KeypointSequence::len).collect::<Vec<_>>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files_read: usize,
    pub sequences_accepted: usize,
    pub rejections: Vec<Rejection>,
    pub length_stats: Option<LengthStats>,
}

/// Reads every `*.json` file in `dir` (sorted by file name), keeping the
/// sequences that parse and validate. Rejected files are listed, not fatal.
pub fn ingest_dir(
    dir: impl AsRef<Path>,
    expected_joints: Option<usize>,
) -> Result<(Vec<(PathBuf, KeypointSequence)>, IngestReport)> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();

    let parsed: Vec<(PathBuf, Result<KeypointSequence, String>)> = paths
        .into_par_iter()
        .map(|path| {
            let outcome = parse_keypoint_file(&path, expected_joints)
                .map_err(|e| format!("{}: {e}", e.kind()))
                .and_then(|seq| {
                    let violations = validate_sequence(&seq);
                    if violations.is_empty() {
                        Ok(seq)
                    } else {
                        Err(format!("validation: {violations:?}"))
                    }
                });
            (path, outcome)
        })
        .collect();

    let files_read = parsed.len();
    let mut accepted = Vec::new();
    let mut rejections = Vec::new();
    for (path, outcome) in parsed {
        match outcome {
            Ok(seq) => accepted.push((path, seq)),
            Err(reason) => rejections.push(Rejection { path, reason }),
        }
    }
    let lengths: Vec<usize> = accepted.iter().map(|(_, s)| s.len()).collect();
    let report = IngestReport {
        files_read,
        sequences_accepted: accepted.len(),
        rejections,
        length_stats: length_stats(&lengths).ok(),
    };
    Ok((accepted, report))
}
