use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use signphono::experiment::{
    cmd_grid, cmd_ingest, cmd_join, cmd_report, cmd_split, cmd_synth, cmd_train_eval, ExperimentConfig,
};
use signphono::{Error, Result};

/// Phonological class recognition from 3D keypoint sequences.
#[derive(Parser, Debug)]
#[command(name = "signphono", version)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat `key = value` experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `paths.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for the split, the CV folds and the synthetic generator.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Turn on per-sequence pose normalization.
    #[arg(long, global = true)]
    normalize: bool,

    /// Override any config key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a directory of keypoint files.
    Ingest {
        #[arg(long)]
        keypoints: Option<PathBuf>,
    },
    /// Join a lexicon with keypoint files into a manifest.
    Join {
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        keypoints: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Stratified train/test split of a manifest.
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Grid search with stratified k-fold CV on the training split.
    Grid {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        class: Option<String>,
    },
    /// Train and evaluate one model family over the configured seeds.
    TrainEval {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        class: Option<String>,
        /// e.g. `0-9` or `1,4,7`.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Generate a synthetic corpus with known class structure.
    Synth {
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Collect run summaries into a results table.
    Report {
        /// `metrics.json` files; defaults to every run under the output dir.
        summaries: Vec<PathBuf>,
    },
}

/// Paths given on the command line are relative to the working directory,
/// not to the config file.
fn absolute(p: &Path) -> String {
    let p = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    };
    p.to_string_lossy().into_owned()
}

fn build_config(global: &Global, command: &Command) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut sets: Vec<(String, String)> = Vec::new();
    let mut path = |key: &str, p: &Option<PathBuf>| {
        if let Some(p) = p {
            sets.push((key.into(), absolute(p)));
        }
    };
    path("paths.out", &global.out);
    match command {
        Command::Ingest { keypoints } => path("paths.keypoints", keypoints),
        Command::Join {
            lexicon,
            keypoints,
            manifest,
        } => {
            path("paths.lexicon", lexicon);
            path("paths.keypoints", keypoints);
            path("paths.manifest", manifest);
        }
        Command::Split { manifest, .. } => path("paths.manifest", manifest),
        Command::Grid { manifest, split, .. } => {
            path("paths.manifest", manifest);
            path("paths.split", split);
        }
        Command::Synth { profiles, .. } => path("paths.profiles", profiles),
        Command::TrainEval { .. } | Command::Report { .. } => {}
    }
    if let Some(seed) = global.seed {
        for key in ["split.seed", "cv.seed", "synth.seed"] {
            sets.push((key.into(), seed.to_string()));
        }
    }
    if global.normalize {
        sets.push(("preprocess.normalize".into(), "true".into()));
    }
    let mut opt = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            sets.push((key.into(), v));
        }
    };
    match command {
        Command::Split { ratio, .. } => opt("split.ratio", ratio.map(|r| r.to_string())),
        Command::Grid { family, class, .. } => {
            opt("model.family", family.clone());
            opt("data.class", class.clone());
        }
        Command::TrainEval { family, class, seeds } => {
            opt("model.family", family.clone());
            opt("data.class", class.clone());
            opt("run.seeds", seeds.clone());
        }
        Command::Synth { n_per_class, .. } => opt("synth.n_per_class", n_per_class.map(|n| n.to_string())),
        _ => {}
    }
    for o in &global.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        sets.push((k.trim().into(), v.trim().into()));
    }
    for (k, v) in sets {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Value> {
    let cfg = build_config(&cli.global, &cli.command)?;
    let out = cfg.out_dir().to_string_lossy().into_owned();
    Ok(match &cli.command {
        Command::Ingest { .. } => {
            let r = cmd_ingest(&cfg)?;
            json!({"command": "ingest", "out": out, "files_read": r.files_read, "accepted": r.sequences_accepted, "rejected": r.rejections.len()})
        }
        Command::Join { .. } => {
            let r = cmd_join(&cfg)?;
            json!({
                "command": "join",
                "manifest": r.manifest,
                "matched": r.report.matched,
                "lexicon_only": r.report.unmatched_lexicon.len(),
                "keypoints_only": r.report.unmatched_sequences.len(),
                "rejected_files": r.ingest.rejections.len(),
            })
        }
        Command::Split { .. } => {
            let p = cmd_split(&cfg)?;
            json!({
                "command": "split",
                "split": cfg.split_path(),
                "train": p.train_indices.len(),
                "test": p.test_indices.len(),
            })
        }
        Command::Grid { .. } => {
            let g = cmd_grid(&cfg)?;
            json!({
                "command": "grid",
                "out": signphono::experiment::run_dir(&cfg),
                "best_cell": g.best_cell,
                "best": g.best,
                "cv_micro_f1": g.table[g.best_cell].mean_micro_f1,
            })
        }
        Command::TrainEval { .. } => {
            let r = cmd_train_eval(&cfg)?;
            let s = &r.summary;
            json!({
                "command": "train-eval",
                "out": r.dir,
                "family": s.spec.family.as_str(),
                "class": s.spec.class_name.as_str(),
                "seeds": s.seeds,
                "micro_f1_mean": s.micro_f1_mean,
                "micro_f1_std": s.micro_f1_std,
                "macro_f1_mean": s.macro_f1_mean,
                "macro_f1_std": s.macro_f1_std,
            })
        }
        Command::Synth { .. } => {
            let n = cmd_synth(&cfg)?;
            json!({"command": "synth", "out": out, "samples": n})
        }
        Command::Report { summaries } => {
            let paths: Vec<PathBuf> = summaries.iter().map(|p| PathBuf::from(absolute(p))).collect();
            let table = cmd_report(&cfg, &paths)?;
            eprint!("{}", table.to_text());
            json!({"command": "report", "out": out, "rows": table.rows.len()})
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::FAILURE
        }
    }
}
