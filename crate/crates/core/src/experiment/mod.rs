//! Reproducible experiment commands. Every command reads an
//! [`ExperimentConfig`], writes its outputs under the configured output
//! directory and records a `provenance.<command>.json` next to them.

mod config;

pub use config::{parse_seeds, sha256_hex, ExperimentConfig};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{default_grid, ModelSpec};
use crate::dataset::{join, load_lexicon, LabelSpace, LabeledDataset, Manifest};
use crate::error::{Error, Result};
use crate::evaluation::{
    grid_search, learning_curve_csv, repeated_runs, write_json, GridResult, RunSummary, SummaryTable,
};
use crate::keypoint::{ingest_dir, IngestReport};
use crate::preprocess::{build_tensors, stratified_kfold, stratified_split, t_max_for, PaddedTensorSet, SplitPlan};
use crate::synth::{benchmark_spec, synth_generate, write_synth, SynthSpec};

/// What produced a set of outputs. Contains no timestamps, so identical
/// runs produce identical records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config: String,
    pub seeds: Vec<u64>,
    /// SHA-256 of each input file (a keypoint directory hashes its listing).
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn hash_dir(dir: &Path) -> Result<String> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            names.push(path);
        }
    }
    names.sort();
    let mut listing = String::new();
    for p in names {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        listing.push_str(&format!("{name}\0{}\n", hash_file(&p)?));
    }
    Ok(sha256_hex(listing.as_bytes()))
}

struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    command: &'static str,
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a ExperimentConfig, command: &'static str, dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            cfg,
            command,
            dir,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        let digest = if path.is_dir() {
            hash_dir(path)?
        } else {
            hash_file(path)?
        };
        self.inputs.insert(key.to_string(), digest);
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)
    }

    fn finish(self, seeds: Vec<u64>) -> Result<PathBuf> {
        let record = Provenance {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.cfg.resolved().hash(),
            config: self.cfg.resolved().canonical_text(),
            seeds,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.dir.join(format!("provenance.{}.json", self.command));
        write_json(&path, &record)?;
        Ok(path)
    }
}

/// Parses and validates every keypoint file in `paths.keypoints`.
pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<IngestReport> {
    cfg.validate()?;
    let dir = cfg.require(&cfg.keypoints, "paths.keypoints")?;
    let (_, report) = ingest_dir(&dir, Some(cfg.joints))?;
    let mut rec = Recorder::new(cfg, "ingest", cfg.out_dir())?;
    rec.input("keypoints", &dir)?;
    rec.json("ingest_report.json", &report)?;
    rec.finish(vec![])?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinOutcome {
    pub manifest: PathBuf,
    pub report: crate::dataset::JoinReport,
    pub ingest: IngestReport,
    pub lexicon_rows_dropped: usize,
}

/// Joins `paths.lexicon` with the keypoint files and writes the manifest.
pub fn cmd_join(cfg: &ExperimentConfig) -> Result<JoinOutcome> {
    cfg.validate()?;
    let lexicon = cfg.require(&cfg.lexicon, "paths.lexicon")?;
    let dir = cfg.require(&cfg.keypoints, "paths.keypoints")?;
    let dir = fs::canonicalize(&dir).map_err(|e| Error::io(&dir, e))?;
    let lex = load_lexicon(&lexicon, &cfg.columns)?;
    let (sequences, ingest) = ingest_dir(&dir, Some(cfg.joints))?;
    for r in &ingest.rejections {
        log::warn!("skipping {}: {}", r.path.display(), r.reason);
    }
    let (dataset, report) = join(&lex.entries, sequences.into_iter().map(|(p, s)| (s, Some(p))).collect())?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput(
            "no lemma matched between lexicon and keypoints".into(),
        ));
    }
    let manifest_path = cfg.manifest_path();
    let dir_out = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir());
    let mut rec = Recorder::new(cfg, "join", dir_out)?;
    rec.input("lexicon", &lexicon)?;
    rec.input("keypoints", &dir)?;
    let manifest = Manifest::from_dataset(&dataset, report.clone())?;
    let name = manifest_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    rec.json(&name, &manifest)?;
    rec.finish(vec![])?;
    log::info!(
        "joined {} samples ({} lexicon-only, {} keypoint-only)",
        report.matched,
        report.unmatched_lexicon.len(),
        report.unmatched_sequences.len()
    );
    Ok(JoinOutcome {
        manifest: manifest_path,
        report,
        ingest,
        lexicon_rows_dropped: lex.dropped,
    })
}

/// The manifest's dataset with rare values of the target class dropped.
pub fn load_experiment_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let dataset = Manifest::read(&path)?.load_dataset(Some(cfg.joints))?;
    if cfg.drop_rare > 0 {
        dataset.drop_rare(cfg.class_name, cfg.drop_rare)
    } else {
        Ok(dataset)
    }
}

fn make_split(cfg: &ExperimentConfig, dataset: &LabeledDataset) -> Result<SplitPlan> {
    let y = dataset.label_indices(cfg.class_name)?;
    stratified_split(
        &y,
        dataset.label_space(cfg.class_name)?,
        cfg.split_ratio,
        cfg.split_seed,
    )
}

/// Stratified train/test split of the manifest, written to `paths.split`.
pub fn cmd_split(cfg: &ExperimentConfig) -> Result<SplitPlan> {
    cfg.validate()?;
    let dataset = load_experiment_dataset(cfg)?;
    let plan = make_split(cfg, &dataset)?;
    let path = cfg.split_path();
    let mut rec = Recorder::new(
        cfg,
        "split",
        path.parent().map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir()),
    )?;
    rec.input("manifest", &cfg.manifest_path())?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    rec.json(&name, &plan)?;
    rec.finish(vec![cfg.split_seed])?;
    Ok(plan)
}

struct Prepared {
    space: LabelSpace,
    plan: SplitPlan,
    all: PaddedTensorSet,
}

/// Loads the dataset and split, then pads everything to the longest
/// training sequence.
fn prepare(cfg: &ExperimentConfig, plan_from_file: bool) -> Result<Prepared> {
    let dataset = load_experiment_dataset(cfg)?;
    let plan = if plan_from_file {
        SplitPlan::read(cfg.split_path())?
    } else {
        make_split(cfg, &dataset)?
    };
    if let Some(&bad) = plan
        .train_indices
        .iter()
        .chain(&plan.test_indices)
        .find(|&&i| i >= dataset.len())
    {
        return Err(Error::InvalidInput(format!(
            "split index {bad} out of range for {} samples",
            dataset.len()
        )));
    }
    let t_max = t_max_for(&dataset, &plan.train_indices)?;
    let all = build_tensors(&dataset, cfg.class_name, t_max, cfg.normalize)?;
    if !all.truncated.is_empty() {
        log::warn!(
            "{} sequences longer than t_max = {t_max} were truncated",
            all.truncated.len()
        );
    }
    Ok(Prepared {
        space: dataset.label_space(cfg.class_name)?.clone(),
        plan,
        all,
    })
}

fn base_spec(cfg: &ExperimentConfig) -> ModelSpec {
    ModelSpec::new(cfg.family, cfg.class_name).with_hyperparams(cfg.hyperparams.clone())
}

fn run_grid(cfg: &ExperimentConfig, data: &Prepared) -> Result<GridResult> {
    let folds = stratified_kfold(&data.plan.train_indices, &data.all.y, cfg.cv_folds, cfg.cv_seed)?;
    let train_config = crate::engine::TrainConfig {
        seed: cfg.cv_seed,
        ..cfg.train.clone()
    };
    grid_search(
        &base_spec(cfg),
        &default_grid(cfg.family),
        &data.all,
        &data.space,
        &folds,
        &train_config,
    )
}

/// Grid search with k-fold CV on the training split. Reads `paths.split`
/// when it is set, otherwise splits as `cmd_split` would.
pub fn cmd_grid(cfg: &ExperimentConfig) -> Result<GridResult> {
    cfg.validate()?;
    let data = prepare(cfg, cfg.split_plan.is_some())?;
    let result = run_grid(cfg, &data)?;
    let mut rec = Recorder::new(cfg, "grid", run_dir(cfg))?;
    rec.input("manifest", &cfg.manifest_path())?;
    rec.text("cv_table.csv", &result.to_csv())?;
    rec.json("grid.json", &result)?;
    rec.finish(vec![cfg.split_seed, cfg.cv_seed])?;
    Ok(result)
}

/// `<out>/<class>/<family>`: where per-model outputs go.
pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir().join(cfg.class_name.as_str()).join(cfg.family.as_str())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub spec: ModelSpec,
    pub seed: u64,
    pub grid_cell: Option<usize>,
    pub cv_micro_f1: Option<f64>,
    pub config_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainEvalOutcome {
    pub summary: RunSummary,
    pub grid: Option<GridResult>,
    pub dir: PathBuf,
}

/// Full experiment: join if needed, split, optional grid search, one fit
/// per seed, and all artifacts under [`run_dir`].
pub fn cmd_train_eval(cfg: &ExperimentConfig) -> Result<TrainEvalOutcome> {
    cfg.validate()?;
    if cfg.manifest.is_none() && cfg.lexicon.is_some() && cfg.keypoints.is_some() {
        cmd_join(cfg)?;
    }
    let data = prepare(cfg, cfg.split_plan.is_some())?;
    let grid = if cfg.grid && !cfg.family.is_baseline() {
        Some(run_grid(cfg, &data)?)
    } else {
        None
    };
    let spec = match &grid {
        Some(g) => base_spec(cfg).with_hyperparams(cfg.hyperparams.merged(&g.best)),
        None => base_spec(cfg),
    };
    let train = data.all.subset(&data.plan.train_indices);
    let test = data.all.subset(&data.plan.test_indices);
    let (summary, models) = repeated_runs(
        &spec,
        &train,
        &test,
        &data.space,
        &cfg.train,
        &cfg.seeds,
        cfg.std_kind,
        cfg.family.is_deep(),
    )?;

    let dir = run_dir(cfg);
    let mut rec = Recorder::new(cfg, "train_eval", dir.clone())?;
    rec.input("manifest", &cfg.manifest_path())?;
    if cfg.split_plan.is_some() {
        rec.input("split", &cfg.split_path())?;
    }
    rec.json("metrics.json", &summary)?;
    rec.json("split.json", &data.plan)?;
    rec.text("config.txt", &cfg.resolved().canonical_text())?;
    let first = &summary.runs[0];
    rec.text("confusion.csv", &first.metrics.confusion.to_csv())?;
    if !first.training.curve.is_empty() {
        rec.text("learning_curve.csv", &learning_curve_csv(&first.training.curve))?;
    }
    if let Some(ckpt) = models[0].checkpoint() {
        rec.json("checkpoint.json", &ckpt)?;
    }
    if let Some(g) = &grid {
        rec.text("cv_table.csv", &g.to_csv())?;
    }
    rec.json(
        "model_card.json",
        &ModelCard {
            spec: spec.clone(),
            seed: first.seed,
            grid_cell: grid.as_ref().map(|g| g.best_cell),
            cv_micro_f1: grid.as_ref().map(|g| g.table[g.best_cell].mean_micro_f1),
            config_sha256: cfg.resolved().hash(),
        },
    )?;
    rec.finish(cfg.seeds.clone())?;
    Ok(TrainEvalOutcome { summary, grid, dir })
}

/// Writes a synthetic corpus (keypoint files plus `lexicon.csv`) to the
/// output directory. Returns the number of samples.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<usize> {
    let mut spec = match &cfg.profiles {
        Some(p) => SynthSpec::read(cfg.resolve(p))?,
        None => benchmark_spec(),
    };
    if let Some(n) = cfg.synth_n_per_class {
        spec.n_per_class = n;
    }
    let samples = synth_generate(&spec.profiles, spec.n_per_class, cfg.synth_seed)?;
    let out = cfg.out_dir();
    let mut rec = Recorder::new(cfg, "synth", out.clone())?;
    if let Some(p) = &cfg.profiles {
        rec.input("profiles", &cfg.resolve(p))?;
    }
    write_synth(&out, &samples)?;
    rec.outputs
        .extend(["keypoints/".to_string(), "lexicon.csv".to_string()]);
    rec.json("synth_spec.json", &spec)?;
    rec.finish(vec![cfg.synth_seed])?;
    Ok(samples.len())
}

/// Every `metrics.json` under `<out>/<class>/<family>/`, in path order.
pub fn find_summaries(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if !out.is_dir() {
        return Ok(found);
    }
    for class_dir in fs::read_dir(out).map_err(|e| Error::io(out, e))? {
        let class_dir = class_dir.map_err(|e| Error::io(out, e))?.path();
        if !class_dir.is_dir() {
            continue;
        }
        for fam in fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))? {
            let p = fam.map_err(|e| Error::io(&class_dir, e))?.path().join("metrics.json");
            if p.is_file() {
                found.push(p);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Renders the results table from run summaries (found under the output
/// directory when `summaries` is empty). Rows follow the usual family order.
pub fn cmd_report(cfg: &ExperimentConfig, summaries: &[PathBuf]) -> Result<SummaryTable> {
    let paths = if summaries.is_empty() {
        find_summaries(&cfg.out_dir())?
    } else {
        summaries.iter().map(|p| cfg.resolve(p)).collect()
    };
    let mut runs = paths.iter().map(RunSummary::read).collect::<Result<Vec<_>>>()?;
    let order = |s: &RunSummary| crate::classifiers::Family::ALL.iter().position(|f| *f == s.spec.family);
    runs.sort_by_key(order);
    let table = SummaryTable::from_summaries(&runs)?;
    let mut rec = Recorder::new(cfg, "report", cfg.out_dir())?;
    for (i, p) in paths.iter().enumerate() {
        rec.input(&format!("summary{i}"), p)?;
    }
    rec.text("table.csv", &table.to_csv())?;
    rec.text("table.txt", &table.to_text())?;
    rec.finish(vec![])?;
    Ok(table)
}
