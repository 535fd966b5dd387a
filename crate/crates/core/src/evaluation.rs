//! F1 metrics, confusion matrices, repeated-seed runs, grid search and the
//! summary table renderer.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{fit, EpochLoss, Hyperparams, ModelSpec, TrainedModel, TrainingMeta};
use crate::dataset::{LabelSpace, PhonoClass};
use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::preprocess::{FoldPlan, PaddedTensorSet};

/// Counts with rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(y_true: &[usize], y_pred: &[usize], space: &LabelSpace) -> Result<Self> {
        if y_true.is_empty() {
            return Err(Error::InvalidInput("no samples to score".into()));
        }
        if y_true.len() != y_pred.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} true labels, {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let k = space.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= k || p >= k {
                return Err(Error::InvalidInput(format!(
                    "label index {} out of range for {k} classes",
                    t.max(p)
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self {
            labels: space.values.clone(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn predicted(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|k| self.counts[k][k]).sum()
    }

    /// `2·TP / (2·TP + FP + FN)`, 0 when the denominator is 0.
    pub fn f1(&self, k: usize) -> f64 {
        let tp = self.counts[k][k];
        let denom = self.support(k) + self.predicted(k);
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(&csv_field(l));
            for c in row {
                write!(out, ",{c}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let k = confusion.labels.len();
        let per_class_f1: Vec<f64> = (0..k).map(|c| confusion.f1(c)).collect();
        Self {
            micro_f1: confusion.correct() as f64 / confusion.total() as f64,
            macro_f1: per_class_f1.iter().sum::<f64>() / k as f64,
            per_class_f1,
            confusion,
        }
    }
}

/// Micro F1 (= accuracy for single-label data), macro F1 and per-class F1.
pub fn metrics(y_true: &[usize], y_pred: &[usize], space: &LabelSpace) -> Result<MetricsReport> {
    Ok(MetricsReport::from_confusion(ConfusionMatrix::new(
        y_true, y_pred, space,
    )?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

/// `(mean, std)`; the sample std of a single value is 0.
pub fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    let n = values.len() as f64;
    // Identical values must give exactly that value and a zero spread, which
    // a summed mean does not guarantee.
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = match kind {
        StdKind::Population => (ss / n).sqrt(),
        StdKind::Sample if values.len() > 1 => (ss / (n - 1.0)).sqrt(),
        StdKind::Sample => 0.0,
    };
    (mean, std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub training: TrainingMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spec: ModelSpec,
    pub seeds: Vec<u64>,
    pub std_kind: StdKind,
    pub micro_f1_mean: f64,
    pub micro_f1_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub runs: Vec<SeedRun>,
}

impl RunSummary {
    pub fn from_runs(spec: ModelSpec, runs: Vec<SeedRun>, std_kind: StdKind) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidInput("a run summary needs at least one seed".into()));
        }
        let micro: Vec<f64> = runs.iter().map(|r| r.metrics.micro_f1).collect();
        let macro_: Vec<f64> = runs.iter().map(|r| r.metrics.macro_f1).collect();
        let (micro_f1_mean, micro_f1_std) = mean_std(&micro, std_kind);
        let (macro_f1_mean, macro_f1_std) = mean_std(&macro_, std_kind);
        Ok(Self {
            spec,
            seeds: runs.iter().map(|r| r.seed).collect(),
            std_kind,
            micro_f1_mean,
            micro_f1_std,
            macro_f1_mean,
            macro_f1_std,
            runs,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fits and scores `spec` once per seed on a fixed split. Seeds run in
/// parallel; results come back in seed-list order. `with_curve` passes the
/// test set to neural families for their learning curve only.
#[allow(clippy::too_many_arguments)]
pub fn repeated_runs(
    spec: &ModelSpec,
    train: &PaddedTensorSet,
    test: &PaddedTensorSet,
    space: &LabelSpace,
    base: &TrainConfig,
    seeds: &[u64],
    std_kind: StdKind,
    with_curve: bool,
) -> Result<(RunSummary, Vec<TrainedModel>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("no seeds given".into()));
    }
    let outcomes: Vec<Result<(SeedRun, TrainedModel)>> = seeds
        .par_iter()
        .map(|&seed| {
            let run = || -> Result<(SeedRun, TrainedModel)> {
                let config = TrainConfig { seed, ..base.clone() };
                let model = fit(spec, train, space, &config, with_curve.then_some(test))?;
                let pred = model.predict_set(test)?;
                let metrics = metrics(&test.y, &pred.labels, space)?;
                Ok((
                    SeedRun {
                        seed,
                        metrics,
                        training: model.meta.clone(),
                    },
                    model,
                ))
            };
            run().map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    let mut runs = Vec::with_capacity(seeds.len());
    let mut models = Vec::with_capacity(seeds.len());
    for outcome in outcomes {
        let (run, model) = outcome?;
        runs.push(run);
        models.push(model);
    }
    Ok((RunSummary::from_runs(spec.clone(), runs, std_kind)?, models))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub cell: usize,
    pub hyperparams: Hyperparams,
    pub fold_micro_f1: Vec<f64>,
    pub mean_micro_f1: f64,
    pub mean_macro_f1: f64,
    /// Set when a fold diverged; the cell then has no scores and cannot win.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_cell: usize,
    pub best: Hyperparams,
    pub table: Vec<CvRow>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let k = self.table.iter().map(|r| r.fold_micro_f1.len()).max().unwrap_or(0);
        let mut out = String::from("cell,hyperparams");
        for f in 0..k {
            write!(out, ",fold{f}_micro_f1").expect("write to string");
        }
        out.push_str(",mean_micro_f1,mean_macro_f1,selected,failure\n");
        for row in &self.table {
            write!(out, "{},{}", row.cell, csv_field(&row.hyperparams.label())).expect("write to string");
            match &row.failure {
                None => {
                    for v in &row.fold_micro_f1 {
                        write!(out, ",{v}").expect("write to string");
                    }
                    write!(out, ",{},{}", row.mean_micro_f1, row.mean_macro_f1).expect("write to string");
                }
                Some(_) => out.push_str(&",".repeat(k + 2)),
            }
            let failure = row.failure.as_deref().map(csv_field).unwrap_or_default();
            writeln!(out, ",{},{failure}", row.cell == self.best_cell).expect("write to string");
        }
        out
    }
}

/// k-fold cross-validation of every grid cell on `data` (indexed as in
/// `folds`). The cell with the highest mean fold micro F1 wins; ties go to
/// the earlier cell. A cell whose training diverges (a numerical error) is
/// recorded as failed instead of aborting the search.
pub fn grid_search(
    base: &ModelSpec,
    grid: &[Hyperparams],
    data: &PaddedTensorSet,
    space: &LabelSpace,
    folds: &FoldPlan,
    config: &TrainConfig,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    if folds.folds.len() < 2 {
        return Err(Error::InvalidInput("grid search needs at least 2 folds".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.folds.len()).map(move |f| (c, f)))
        .collect();
    let scores: Vec<Result<MetricsReport>> = jobs
        .par_iter()
        .map(|&(cell, fold)| {
            let spec = base.clone().with_hyperparams(base.hyperparams.merged(&grid[cell]));
            let train = data.subset(&folds.train_indices(fold));
            let val = data.subset(&folds.folds[fold]);
            let model = fit(&spec, &train, space, config, None)?;
            let pred = model.predict_set(&val)?;
            metrics(&val.y, &pred.labels, space)
        })
        .collect();
    let mut table: Vec<CvRow> = Vec::with_capacity(grid.len());
    let mut it = scores.into_iter();
    for (cell, hp) in grid.iter().enumerate() {
        // Drain this cell's folds first; collecting straight into a Result
        // would stop at the first error and misalign later cells.
        let cell_scores: Vec<Result<MetricsReport>> = (0..folds.folds.len())
            .map(|_| it.next().expect("one score per job"))
            .collect();
        let reports = cell_scores.into_iter().collect::<Result<Vec<_>>>();
        let reports = match reports {
            Ok(r) => r,
            Err(e @ (Error::Numerical(_) | Error::NonFinite(_))) => {
                log::warn!("grid cell {cell} ({}) failed: {e}", hp.label());
                table.push(CvRow {
                    cell,
                    hyperparams: hp.clone(),
                    fold_micro_f1: Vec::new(),
                    mean_micro_f1: 0.0,
                    mean_macro_f1: 0.0,
                    failure: Some(e.to_string()),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let micro: Vec<f64> = reports.iter().map(|r| r.micro_f1).collect();
        let k = micro.len() as f64;
        table.push(CvRow {
            cell,
            hyperparams: hp.clone(),
            mean_micro_f1: micro.iter().sum::<f64>() / k,
            mean_macro_f1: reports.iter().map(|r| r.macro_f1).sum::<f64>() / k,
            fold_micro_f1: micro,
            failure: None,
        });
    }
    let mut best: Option<usize> = None;
    for row in table.iter().filter(|r| r.failure.is_none()) {
        if best.is_none_or(|b| row.mean_micro_f1 > table[b].mean_micro_f1) {
            best = Some(row.cell);
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("every grid cell diverged".into()))?;
    Ok(GridResult {
        best_cell: best,
        best: grid[best].clone(),
        table,
    })
}

/// Percentage improvement of `model` over `baseline`.
pub fn relative_gain(model: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::InvalidInput(format!(
            "baseline score {baseline} must be positive"
        )));
    }
    Ok(100.0 * (model - baseline) / baseline)
}

/// `epoch,train_loss,val_loss` rows.
pub fn learning_curve_csv(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in curve {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{val}", e.epoch, e.train_loss).expect("write to string");
    }
    out
}

/// A results table: one row per model, micro and macro F1 per class.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    pub classes: Vec<PhonoClass>,
    /// Model name and, per class, `(micro μ, micro σ, macro μ, macro σ)`.
    pub rows: Vec<(String, Vec<Option<[f64; 4]>>)>,
}

fn display_name(spec: &ModelSpec) -> String {
    match spec.family.as_str() {
        "majority_baseline" => "Majority baseline".into(),
        "stratified_baseline" => "Stratified baseline".into(),
        "logistic" => "Logistic regression".into(),
        "svm" => "SVM".into(),
        "mlp" => "MLP".into(),
        "lstm" => "LSTM".into(),
        "gru" => "GRU".into(),
        other => other.into(),
    }
}

impl SummaryTable {
    /// Groups summaries by family (first-seen order) and class.
    pub fn from_summaries(summaries: &[RunSummary]) -> Result<Self> {
        if summaries.is_empty() {
            return Err(Error::InvalidInput("no run summaries to report".into()));
        }
        let classes: Vec<PhonoClass> = PhonoClass::ALL
            .into_iter()
            .filter(|c| summaries.iter().any(|s| s.spec.class_name == *c))
            .collect();
        let mut rows: Vec<(String, Vec<Option<[f64; 4]>>)> = Vec::new();
        for s in summaries {
            let name = display_name(&s.spec);
            let col = classes
                .iter()
                .position(|c| *c == s.spec.class_name)
                .expect("class listed");
            let idx = match rows.iter().position(|(n, _)| *n == name) {
                Some(i) => i,
                None => {
                    rows.push((name.clone(), vec![None; classes.len()]));
                    rows.len() - 1
                }
            };
            if rows[idx].1[col].is_some() {
                return Err(Error::InvalidInput(format!(
                    "two summaries for {name} on {}",
                    s.spec.class_name
                )));
            }
            rows[idx].1[col] = Some([s.micro_f1_mean, s.micro_f1_std, s.macro_f1_mean, s.macro_f1_std]);
        }
        Ok(Self { classes, rows })
    }

    fn cell(v: Option<[f64; 4]>, micro: bool) -> String {
        match v {
            Some(v) => {
                let (m, s) = if micro { (v[0], v[1]) } else { (v[2], v[3]) };
                format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s)
            }
            None => "-".into(),
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["Model".to_string()];
        for c in &self.classes {
            h.push(format!("{c} micro F1"));
            h.push(format!("{c} macro F1"));
        }
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(name, cells)| {
                let mut r = vec![name.clone()];
                for &c in cells {
                    r.push(Self::cell(c, true));
                    r.push(Self::cell(c, false));
                }
                r
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        std::iter::once(self.header())
            .chain(self.body())
            .map(|r| r.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",") + "\n")
            .collect()
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = std::iter::once(self.header()).chain(self.body()).collect();
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (f, &w))| {
                    let pad = w - f.chars().count();
                    if c == 0 {
                        format!("{f}{}", " ".repeat(pad))
                    } else {
                        format!("{}{f}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}
