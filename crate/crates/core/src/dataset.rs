//! Canonical data model and the lemma-keyed join between lexicon records
//! and keypoint sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoint;

/// Phonological class a classifier can target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhonoClass {
    SignType,
    MajorLocation,
}

impl PhonoClass {
    pub const ALL: [PhonoClass; 2] = [PhonoClass::SignType, PhonoClass::MajorLocation];

    pub fn as_str(self) -> &'static str {
        match self {
            PhonoClass::SignType => "sign_type",
            PhonoClass::MajorLocation => "major_location",
        }
    }
}

impl fmt::Display for PhonoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhonoClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sign_type" => Ok(PhonoClass::SignType),
            "major_location" => Ok(PhonoClass::MajorLocation),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}

/// Lowercase, trim, and collapse internal whitespace runs to a single `_`.
pub fn normalize_lemma(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub lemma: String,
    pub sign_type: String,
    pub major_location: String,
    /// Remaining lexicon columns, carried verbatim.
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

impl LexiconEntry {
    pub fn label(&self, class: PhonoClass) -> &str {
        match class {
            PhonoClass::SignType => &self.sign_type,
            PhonoClass::MajorLocation => &self.major_location,
        }
    }
}

/// Header names for the required lexicon columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub lemma: String,
    pub sign_type: String,
    pub major_location: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            lemma: "lemma".into(),
            sign_type: "sign_type".into(),
            major_location: "major_location".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconLoad {
    pub entries: Vec<LexiconEntry>,
    /// Rows skipped because the lemma or a selected class label was empty.
    pub dropped: usize,
}

pub fn load_lexicon(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<LexiconLoad> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();

    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let lemma_col = find(&columns.lemma)?;
    let sign_type_col = find(&columns.sign_type)?;
    let location_col = find(&columns.major_location)?;

    let mut entries = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let lemma = normalize_lemma(cell(lemma_col));
        let sign_type = cell(sign_type_col);
        let major_location = cell(location_col);
        if lemma.is_empty() || sign_type.is_empty() || major_location.is_empty() {
            dropped += 1;
            continue;
        }
        let extras = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![lemma_col, sign_type_col, location_col].contains(i))
            .map(|(i, h)| (h.trim().to_string(), cell(i).to_string()))
            .collect();
        entries.push(LexiconEntry {
            lemma,
            sign_type: sign_type.to_string(),
            major_location: major_location.to_string(),
            extras,
        });
    }

    if entries.is_empty() {
        return Err(Error::ZeroValidRows(path.to_path_buf()));
    }
    Ok(LexiconLoad { entries, dropped })
}

/// Ordered vocabulary of one phonological class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub class_name: PhonoClass,
    pub values: Vec<String>,
    pub counts: Vec<usize>,
}

impl LabelSpace {
    /// Sorted distinct values of `labels` with their counts.
    pub fn from_labels<S: AsRef<str>>(class_name: PhonoClass, labels: &[S]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "cannot build {class_name} label space from zero samples"
            )));
        }
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        for label in labels {
            *tally.entry(label.as_ref()).or_default() += 1;
        }
        Ok(Self {
            class_name,
            values: tally.keys().map(|s| s.to_string()).collect(),
            counts: tally.values().copied().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.values.binary_search_by(|v| v.as_str().cmp(label)).ok()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index(label).ok_or_else(|| Error::UnknownLabel {
            class: self.class_name.to_string(),
            label: label.to_string(),
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Index of the most frequent value; ties go to the lower index.
    pub fn majority_index(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-video time series of upper-body joint positions.
///
/// Serializes to the keypoint file schema:
/// `{"lemma", "fps", "joints": [name; J], "frames": [[[x, y, z]; J]; T]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointSequence {
    pub lemma: String,
    pub fps: f64,
    pub joints: Vec<String>,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl KeypointSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Per-frame feature width, `J * 3`.
    pub fn feature_dim(&self) -> usize {
        self.joints.len() * 3
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sequence: KeypointSequence,
    pub labels: BTreeMap<PhonoClass, String>,
    /// Keypoint file the sequence was read from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

impl LabeledSample {
    pub fn lemma(&self) -> &str {
        &self.sequence.lemma
    }

    pub fn label(&self, class: PhonoClass) -> Result<&str> {
        self.labels
            .get(&class)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
    pub label_spaces: BTreeMap<PhonoClass, LabelSpace>,
}

impl LabeledDataset {
    /// Builds a dataset, rejecting duplicate lemmas and deriving label spaces.
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if !seen.insert(s.lemma()) {
                return Err(Error::DuplicateLemma {
                    lemma: s.lemma().to_string(),
                    side: "dataset",
                });
            }
        }
        let mut label_spaces = BTreeMap::new();
        if !samples.is_empty() {
            for class in PhonoClass::ALL {
                label_spaces.insert(class, build_label_space(&samples, class)?);
            }
        }
        Ok(Self { samples, label_spaces })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_space(&self, class: PhonoClass) -> Result<&LabelSpace> {
        self.label_spaces
            .get(&class)
            .ok_or_else(|| Error::InvalidInput(format!("dataset has no {class} label space")))
    }

    /// Class indices of every sample under `class`.
    pub fn label_indices(&self, class: PhonoClass) -> Result<Vec<usize>> {
        let space = self.label_space(class)?;
        self.samples.iter().map(|s| space.index_of(s.label(class)?)).collect()
    }

    /// Drops samples whose `class` value occurs fewer than `min_count` times.
    pub fn drop_rare(&self, class: PhonoClass, min_count: usize) -> Result<Self> {
        let space = self.label_space(class)?;
        let keep: Vec<LabeledSample> = self
            .samples
            .iter()
            .filter(|s| {
                s.label(class)
                    .ok()
                    .and_then(|l| space.index(l))
                    .is_some_and(|i| space.counts[i] >= min_count)
            })
            .cloned()
            .collect();
        Self::new(keep)
    }
}

pub fn build_label_space(samples: &[LabeledSample], class: PhonoClass) -> Result<LabelSpace> {
    let labels = samples.iter().map(|s| s.label(class)).collect::<Result<Vec<_>>>()?;
    LabelSpace::from_labels(class, &labels)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub matched: usize,
    pub unmatched_lexicon: Vec<String>,
    pub unmatched_sequences: Vec<String>,
}

/// Inner join on normalized lemma. Samples come out sorted by lemma.
pub fn join(
    entries: &[LexiconEntry],
    sequences: Vec<(KeypointSequence, Option<PathBuf>)>,
) -> Result<(LabeledDataset, JoinReport)> {
    let mut lexicon: BTreeMap<String, &LexiconEntry> = BTreeMap::new();
    for e in entries {
        let lemma = normalize_lemma(&e.lemma);
        if lexicon.insert(lemma.clone(), e).is_some() {
            return Err(Error::DuplicateLemma { lemma, side: "lexicon" });
        }
    }

    let mut by_lemma: BTreeMap<String, (KeypointSequence, Option<PathBuf>)> = BTreeMap::new();
    for (mut seq, source) in sequences {
        let lemma = normalize_lemma(&seq.lemma);
        seq.lemma = lemma.clone();
        if by_lemma.insert(lemma.clone(), (seq, source)).is_some() {
            return Err(Error::DuplicateLemma {
                lemma,
                side: "sequences",
            });
        }
    }

    let mut report = JoinReport::default();
    let mut samples = Vec::new();
    for (lemma, (sequence, source)) in by_lemma {
        match lexicon.get(&lemma) {
            Some(entry) => {
                let labels = PhonoClass::ALL
                    .iter()
                    .map(|&c| (c, entry.label(c).to_string()))
                    .collect();
                samples.push(LabeledSample {
                    sequence,
                    labels,
                    source,
                });
            }
            None => report.unmatched_sequences.push(lemma),
        }
    }
    let matched: BTreeSet<&str> = samples.iter().map(|s| s.lemma()).collect();
    report.unmatched_lexicon = lexicon
        .keys()
        .filter(|l| !matched.contains(l.as_str()))
        .cloned()
        .collect();
    report.matched = samples.len();

    Ok((LabeledDataset::new(samples)?, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub lemma: String,
    pub labels: BTreeMap<PhonoClass, String>,
    pub keypoint_path: PathBuf,
}

/// JSON description of a joined dataset, consumed by downstream commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<ManifestSample>,
    pub label_spaces: Vec<LabelSpace>,
    pub join: JoinReport,
}

impl Manifest {
    pub fn from_dataset(dataset: &LabeledDataset, join: JoinReport) -> Result<Self> {
        let samples = dataset
            .samples
            .iter()
            .map(|s| {
                let keypoint_path = s
                    .source
                    .clone()
                    .ok_or_else(|| Error::InvalidInput(format!("sample `{}` has no source path", s.lemma())))?;
                Ok(ManifestSample {
                    lemma: s.lemma().to_string(),
                    labels: s.labels.clone(),
                    keypoint_path,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            samples,
            label_spaces: dataset.label_spaces.values().cloned().collect(),
            join,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-reads every keypoint file and rebuilds the dataset.
    pub fn load_dataset(&self, expected_joints: Option<usize>) -> Result<LabeledDataset> {
        let samples = self
            .samples
            .iter()
            .map(|m| {
                let mut sequence = keypoint::parse_keypoint_file(&m.keypoint_path, expected_joints)?;
                sequence.lemma = normalize_lemma(&sequence.lemma);
                if sequence.lemma != m.lemma {
                    return Err(Error::InvalidInput(format!(
                        "manifest lemma `{}` does not match keypoint file lemma `{}`",
                        m.lemma, sequence.lemma
                    )));
                }
                Ok(LabeledSample {
                    sequence,
                    labels: m.labels.clone(),
                    source: Some(m.keypoint_path.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(samples)
    }
}
