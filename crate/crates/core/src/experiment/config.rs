//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! paths.lexicon = data/lexicon.csv
//! data.class = major_location
//! model.family = gru
//! model.hidden_units = 128
//! run.seeds = 0-9
//! ```
//!
//! Relative paths resolve against the directory of the config file. The
//! canonical form lists every key in a fixed order with its effective
//! value; its SHA-256 identifies the experiment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::classifiers::{Family, Hyperparams};
use crate::dataset::{ColumnMap, PhonoClass};
use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::evaluation::StdKind;
use crate::keypoint::DEFAULT_JOINTS;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub lexicon: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub out: PathBuf,
    /// Defaults to `<out>/manifest.json`.
    pub manifest: Option<PathBuf>,
    /// Defaults to `<out>/split.json`.
    pub split_plan: Option<PathBuf>,
    /// Synthetic profile file; the built-in benchmark when unset.
    pub profiles: Option<PathBuf>,
    pub columns: ColumnMap,
    pub class_name: PhonoClass,
    pub joints: usize,
    /// Drop label values with fewer samples than this (0 keeps all).
    pub drop_rare: usize,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub normalize: bool,
    pub family: Family,
    /// Run the default grid search before the seeded runs.
    pub grid: bool,
    pub hyperparams: Hyperparams,
    /// `seed` is ignored; the run seeds drive training.
    pub train: TrainConfig,
    pub cv_folds: usize,
    pub cv_seed: u64,
    pub seeds: Vec<u64>,
    pub std_kind: StdKind,
    pub synth_seed: u64,
    pub synth_n_per_class: Option<usize>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lexicon: None,
            keypoints: None,
            out: PathBuf::from("out"),
            manifest: None,
            split_plan: None,
            profiles: None,
            columns: ColumnMap::default(),
            class_name: PhonoClass::SignType,
            joints: DEFAULT_JOINTS.len(),
            drop_rare: 0,
            split_ratio: 0.15,
            split_seed: 0,
            normalize: false,
            family: Family::Mlp,
            grid: false,
            hyperparams: Hyperparams::default(),
            train: TrainConfig::default(),
            cv_folds: 5,
            cv_seed: 0,
            seeds: (0..10).collect(),
            std_kind: StdKind::Population,
            synth_seed: 0,
            synth_n_per_class: None,
            base_dir: PathBuf::from("."),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

/// `0-9`, `1,3,5` or a mix such as `0-2,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse("run.seeds", a.trim())?, parse("run.seeds", b.trim())?);
                if a > b {
                    return Err(Error::Config(format!("empty seed range `{part}`")));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(parse("run.seeds", part)?),
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("run.seeds lists no seeds".into()));
    }
    Ok(seeds)
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    pub fn from_text(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg = Self {
            base_dir: base_dir.into(),
            ..Self::default()
        };
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` set twice", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(
            &text,
            if base.as_os_str().is_empty() {
                PathBuf::from(".")
            } else {
                base
            },
        )
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "paths.lexicon" => self.lexicon = path_value(value),
            "paths.keypoints" => self.keypoints = path_value(value),
            "paths.out" => {
                self.out = path_value(value).ok_or_else(|| Error::Config("paths.out cannot be empty".into()))?
            }
            "paths.manifest" => self.manifest = path_value(value),
            "paths.split" => self.split_plan = path_value(value),
            "paths.profiles" => self.profiles = path_value(value),
            "lexicon.lemma" => self.columns.lemma = value.to_string(),
            "lexicon.sign_type" => self.columns.sign_type = value.to_string(),
            "lexicon.major_location" => self.columns.major_location = value.to_string(),
            "data.class" => self.class_name = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "data.joints" => self.joints = parse(key, value)?,
            "data.drop_rare" => self.drop_rare = parse(key, value)?,
            "split.ratio" => self.split_ratio = parse(key, value)?,
            "split.seed" => self.split_seed = parse(key, value)?,
            "preprocess.normalize" => self.normalize = parse_bool(key, value)?,
            "model.family" => self.family = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "model.grid" => {
                self.grid = match value {
                    "default" => true,
                    "none" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "model.grid must be `default` or `none`, got `{other}`"
                        )))
                    }
                }
            }
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.dropout_rate" => self.train.dropout_rate = parse(key, value)?,
            "train.use_batch_norm" => self.train.use_batch_norm = parse_bool(key, value)?,
            "train.l2" => self.train.l2 = parse(key, value)?,
            "cv.folds" => self.cv_folds = parse(key, value)?,
            "cv.seed" => self.cv_seed = parse(key, value)?,
            "run.seeds" => self.seeds = parse_seeds(value)?,
            "run.std" => {
                self.std_kind = match value {
                    "population" => StdKind::Population,
                    "sample" => StdKind::Sample,
                    other => {
                        return Err(Error::Config(format!(
                            "run.std must be `population` or `sample`, got `{other}`"
                        )))
                    }
                }
            }
            "synth.seed" => self.synth_seed = parse(key, value)?,
            "synth.n_per_class" => {
                self.synth_n_per_class = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            other => match other.strip_prefix("model.") {
                Some(hp) => self.hyperparams.set(hp, value)?,
                None => return Err(Error::Config(format!("unknown key `{other}`"))),
            },
        }
        Ok(())
    }

    /// Every key with its effective value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut e: Vec<(String, String)> = vec![
            ("paths.lexicon".into(), opt_path(&self.lexicon)),
            ("paths.keypoints".into(), opt_path(&self.keypoints)),
            ("paths.out".into(), self.out.display().to_string()),
            ("paths.manifest".into(), opt_path(&self.manifest)),
            ("paths.split".into(), opt_path(&self.split_plan)),
            ("paths.profiles".into(), opt_path(&self.profiles)),
            ("lexicon.lemma".into(), self.columns.lemma.clone()),
            ("lexicon.sign_type".into(), self.columns.sign_type.clone()),
            ("lexicon.major_location".into(), self.columns.major_location.clone()),
            ("data.class".into(), self.class_name.to_string()),
            ("data.joints".into(), self.joints.to_string()),
            ("data.drop_rare".into(), self.drop_rare.to_string()),
            ("split.ratio".into(), self.split_ratio.to_string()),
            ("split.seed".into(), self.split_seed.to_string()),
            ("preprocess.normalize".into(), self.normalize.to_string()),
            ("model.family".into(), self.family.to_string()),
            ("model.grid".into(), if self.grid { "default" } else { "none" }.into()),
        ];
        e.extend(
            self.hyperparams
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("model.{k}"), v)),
        );
        e.extend([
            ("train.learning_rate".into(), t.learning_rate.to_string()),
            ("train.epochs".into(), t.epochs.to_string()),
            ("train.batch_size".into(), t.batch_size.to_string()),
            ("train.dropout_rate".into(), t.dropout_rate.to_string()),
            ("train.use_batch_norm".into(), t.use_batch_norm.to_string()),
            ("train.l2".into(), t.l2.to_string()),
            ("cv.folds".into(), self.cv_folds.to_string()),
            ("cv.seed".into(), self.cv_seed.to_string()),
            (
                "run.seeds".into(),
                self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            ),
            (
                "run.std".into(),
                match self.std_kind {
                    StdKind::Population => "population",
                    StdKind::Sample => "sample",
                }
                .into(),
            ),
            ("synth.seed".into(), self.synth_seed.to_string()),
            (
                "synth.n_per_class".into(),
                self.synth_n_per_class.map(|n| n.to_string()).unwrap_or_default(),
            ),
        ]);
        e
    }

    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }

    /// The same config with every path made absolute, so it can be stored
    /// anywhere and still re-run.
    pub fn resolved(&self) -> Self {
        let base = if self.base_dir.is_absolute() {
            self.base_dir.clone()
        } else {
            std::env::current_dir()
                .map(|d| d.join(&self.base_dir))
                .unwrap_or_else(|_| self.base_dir.clone())
        };
        let abs = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self {
            lexicon: self.lexicon.as_ref().map(abs),
            keypoints: self.keypoints.as_ref().map(abs),
            out: abs(&self.out),
            manifest: self.manifest.as_ref().map(abs),
            split_plan: self.split_plan.as_ref().map(abs),
            profiles: self.profiles.as_ref().map(abs),
            base_dir: base.clone(),
            ..self.clone()
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn manifest_path(&self) -> PathBuf {
        match &self.manifest {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("manifest.json"),
        }
    }

    pub fn split_path(&self) -> PathBuf {
        match &self.split_plan {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("split.json"),
        }
    }

    pub(crate) fn require(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        p.as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split.ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!("cv.folds {} must be at least 2", self.cv_folds)));
        }
        if self.joints == 0 {
            return Err(Error::Config("data.joints must be positive".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
