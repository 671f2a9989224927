//! Subcommands. Settings resolve as built-in defaults, then `--config` or
//! `--spec`, then flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use fixthresh_core::dataset;
use fixthresh_core::detector::{self, BranchMode, HybridParams, LabeledInputs};
use fixthresh_core::imaging::{self, save_png};
use fixthresh_core::metrics::ScoreSet;
use fixthresh_core::protocol::report::{robustness_markdown, write_inflation_csv, write_robustness_csv};
use fixthresh_core::protocol::{
    evaluate_fixed, evaluate_retuned, inflation_report, select_operating_points, ConditionScores, RobustnessTable,
};
use fixthresh_core::scores::{self, records_of, write_scores, ScoreStore};
use fixthresh_core::synthgen::{self, CueSpec};
use fixthresh_core::transforms::{apply_condition, Condition, ConditionGrid};

use crate::config::PipelineConfig;
use crate::pipeline::{self, aggregate_csv, aggregate_rows, charts_from_cells, Cell};
use crate::{par_map, thread_budget, write_file, UsageError};

#[derive(Debug, Parser)]
#[command(name = "fixthresh", version, about = "Fixed-threshold robustness evaluation for AI-generated-image detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Retuned,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Hybrid,
    CnnOnly,
    VitOnly,
}

impl From<BranchArg> for BranchMode {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Hybrid => BranchMode::Hybrid,
            BranchArg::CnnOnly => BranchMode::CnnOnly,
            BranchArg::VitOnly => BranchMode::VitOnly,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class dataset.
    Gen {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Write one degraded copy of a dataset per condition.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "default")]
        grid: String,
    },
    /// Train one detector and write its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<BranchArg>,
        #[arg(long)]
        freq: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss and validation AUROC as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a split under every condition of a grid.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        /// Value for the `seed` column.
        #[arg(long)]
        seed: Option<u64>,
        /// Supplies the normalization statistics.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate score files under fixed and/or retuned thresholds.
    Eval {
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        /// Clean validation scores, one per `--scores`, in the same order.
        #[arg(long)]
        val: Vec<PathBuf>,
        /// Model names, one per `--scores`; defaults to the file stem.
        #[arg(long)]
        name: Vec<String>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize per-seed robustness.csv files.
    Aggregate {
        /// robustness.csv files, or run directories holding one
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw accuracy-vs-condition charts for a report directory.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-seed CNN vs ViT vs hybrid run on synthetic data.
    ReproduceSpectrum {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen {
            spec,
            out,
            seed,
            n_per_class,
        } => cmd_gen(spec.as_deref(), &out, seed, n_per_class),
        Command::Degrade { input, out, grid } => cmd_degrade(&input, &out, &parse_grid(&grid)?),
        Command::Train {
            config,
            data,
            out,
            mode,
            freq,
            seed,
            epochs,
            history,
        } => {
            let mut cfg = PipelineConfig::load_or_default(config.as_deref())?;
            if let Some(m) = mode {
                cfg.model.branch_mode = m.into();
            }
            if let Some(f) = freq {
                cfg.model.freq_enabled = f;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                set_epochs(&mut cfg, e);
            }
            cmd_train(&cfg, &data, &out, history.as_deref())
        }
        Command::Score {
            ckpt,
            data,
            split,
            grid,
            out,
            seed,
            config,
        } => {
            let cfg = PipelineConfig::load_or_default(config.as_deref())?;
            cmd_score(&ckpt, &data, &split, &parse_grid(&grid)?, &out, seed, &cfg)
        }
        Command::Eval {
            scores,
            val,
            name,
            mode,
            out,
        } => cmd_eval(&scores, &val, &name, mode, &out),
        Command::Aggregate { runs, out } => cmd_aggregate(&runs, &out),
        Command::Plot { report, out } => cmd_plot(&report, out.as_deref().unwrap_or(&report)).map(|_| ()),
        Command::ReproduceSpectrum {
            config,
            out,
            seeds,
            n_per_class,
            epochs,
        } => {
            let mut cfg = PipelineConfig::load_or_default(config.as_deref())?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(n) = n_per_class {
                cfg.data.n_per_class = n;
            }
            if let Some(e) = epochs {
                set_epochs(&mut cfg, e);
            }
            let outcome = pipeline::reproduce_spectrum(&cfg, &out, thread_budget()?)?;
            println!("report {} (manifest {})", out.display(), outcome.manifest_id);
            Ok(())
        }
    }
}

/// `--epochs` also caps patience so a short run stays valid.
fn set_epochs(cfg: &mut PipelineConfig, epochs: usize) {
    cfg.train.max_epochs = epochs;
    cfg.train.patience = cfg.train.patience.min(epochs).max(1);
}

fn parse_grid(s: &str) -> anyhow::Result<ConditionGrid> {
    s.parse::<ConditionGrid>().map_err(|e| UsageError(format!("--grid: {e}")).into())
}

pub fn cmd_gen(spec: Option<&Path>, out: &Path, seed: Option<u64>, n_per_class: Option<usize>) -> anyhow::Result<()> {
    let mut spec: CueSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid spec {}: {e}", p.display())))?
        }
        None => CueSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = n_per_class {
        spec.n_per_class = n;
    }
    spec.validate()?;
    let images = synthgen::generate(&spec).context("stage generate")?;
    synthgen::write_dataset(&spec, &images, out).context("stage generate")?;
    Ok(())
}

pub fn cmd_degrade(input: &Path, out: &Path, grid: &ConditionGrid) -> anyhow::Result<()> {
    let manifest = dataset::open(input, None)?;
    let images = dataset::load_images(&manifest)?;
    let split_files: Vec<PathBuf> = dataset::SPLIT_NAMES
        .iter()
        .map(|n| input.join(format!("{n}.csv")))
        .filter(|p| input.is_dir() && p.is_file())
        .collect();
    let results = par_map(grid.conditions(), thread_budget()?, |cond| -> anyhow::Result<()> {
        let dir = out.join(cond.to_string());
        for (entry, img) in manifest.entries.iter().zip(&images) {
            let degraded = apply_condition(&img.image, cond).with_context(|| format!("stage degrade ({cond})"))?;
            let path = dir.join(&entry.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            save_png(&imaging::to_u8(&degraded)?, &path)?;
        }
        dataset::write_manifest(&manifest.entries, &dir.join("manifest.csv"))?;
        for f in &split_files {
            std::fs::copy(f, dir.join(f.file_name().expect("split file name")))
                .with_context(|| format!("copying {}", f.display()))?;
        }
        Ok(())
    });
    results.into_iter().collect()
}

fn load_split(data: &Path, split: &str, cfg: &PipelineConfig) -> anyhow::Result<(Vec<detector::LabeledImage>, LabeledInputs)> {
    let m = dataset::open(data, Some(split))?;
    if m.entries.is_empty() {
        return Err(UsageError(format!("split '{split}' under {} is empty", data.display())).into());
    }
    let images = dataset::load_images(&m)?;
    let inputs = images
        .iter()
        .map(|i| detector::prepare_input(&i.image, &cfg.model, &cfg.norm))
        .collect::<fixthresh_core::Result<Vec<_>>>()?;
    let labels = images.iter().map(|i| i.label).collect();
    Ok((images, LabeledInputs { inputs, labels }))
}

pub fn cmd_train(cfg: &PipelineConfig, data: &Path, out: &Path, history: Option<&Path>) -> anyhow::Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let (_, train) = load_split(data, "train", cfg)?;
    let (_, val) = load_split(data, "val", cfg)?;
    let outcome = detector::train(&train, &val, &cfg.model, &cfg.train).context("stage train")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    outcome.params.save(out)?;
    if let Some(h) = history {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "val_auroc", "trunk_frozen", "best"])?;
        for r in &outcome.history {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_auroc.to_string(),
                r.trunk_frozen.to_string(),
                (r.epoch == outcome.best_epoch).to_string(),
            ])?;
        }
        write_file(h, &w.into_inner()?)?;
    }
    Ok(())
}

pub fn cmd_score(
    ckpt: &Path,
    data: &Path,
    split: &str,
    grid: &ConditionGrid,
    out: &Path,
    seed: Option<u64>,
    cfg: &PipelineConfig,
) -> anyhow::Result<()> {
    let params = HybridParams::load(ckpt)?;
    let m = dataset::open(data, Some(split))?;
    let images = dataset::load_images(&m)?;
    let sets = par_map(grid.conditions(), thread_budget()?, |c| {
        detector::score_dataset(&params, &images, std::slice::from_ref(c), &cfg.norm)
    })
    .into_iter()
    .collect::<fixthresh_core::Result<Vec<_>>>()
    .context("stage score")?;
    let mut recs = Vec::new();
    for (cond, set) in sets.into_iter().flatten() {
        recs.extend(records_of(&set, seed, Some(cond)));
    }
    let mut buf = Vec::new();
    write_scores(&recs, &mut buf)?;
    write_file(out, &buf)
}

/// Validated, condition-grouped score sets from a score CSV.
pub fn cmd_ingest_scores(path: &Path) -> anyhow::Result<ScoreStore> {
    scores::read_score_file(path).with_context(|| format!("ingesting {}", path.display()))
}

fn single_group(path: &Path) -> anyhow::Result<Vec<(Condition, ScoreSet)>> {
    let store = cmd_ingest_scores(path)?;
    let mut groups = store.groups.into_values();
    match (groups.next(), groups.next()) {
        (Some(g), None) => Ok(g),
        _ => Err(UsageError(format!(
            "{} must hold scores for exactly one seed; evaluate seeds separately and combine with `aggregate`",
            path.display()
        ))
        .into()),
    }
}

pub fn cmd_eval(score_files: &[PathBuf], val_files: &[PathBuf], names: &[String], mode: ModeArg, out: &Path) -> anyhow::Result<()> {
    let fixed_wanted = mode != ModeArg::Retuned;
    if fixed_wanted && val_files.len() != score_files.len() {
        return Err(UsageError("fixed mode needs one --val file per --scores file".into()).into());
    }
    if !names.is_empty() && names.len() != score_files.len() {
        return Err(UsageError("give one --name per --scores file or none".into()).into());
    }
    let mut fixed: Option<RobustnessTable> = None;
    let mut retuned: Option<RobustnessTable> = None;
    let join = |acc: &mut Option<RobustnessTable>, t: RobustnessTable| -> anyhow::Result<()> {
        match acc {
            Some(a) => a.merge(t)?,
            None => *acc = Some(t),
        }
        Ok(())
    };
    for (i, path) in score_files.iter().enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map_or_else(|| format!("model{i}"), |s| s.to_string_lossy().into_owned())
        });
        let cs = ConditionScores::new(single_group(path)?).with_context(|| format!("scores {}", path.display()))?;
        if let Some(vp) = val_files.get(i) {
            let val = single_group(vp)?;
            let clean = val
                .into_iter()
                .find(|(c, _)| *c == Condition::Clean)
                .map(|(_, s)| s)
                .ok_or_else(|| UsageError(format!("{} has no clean validation scores", vp.display())))?;
            let ops = select_operating_points(&clean, &vp.display().to_string()).context("stage thresholds")?;
            join(&mut fixed, evaluate_fixed(&name, &cs, &ops).context("stage evaluate")?)?;
        }
        join(&mut retuned, evaluate_retuned(&name, &cs).context("stage evaluate")?)?;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut shown: Vec<&RobustnessTable> = Vec::new();
    if fixed_wanted {
        shown.extend(fixed.as_ref());
    }
    if mode != ModeArg::Fixed {
        shown.extend(retuned.as_ref());
    }
    let mut buf = Vec::new();
    write_robustness_csv(&shown, &mut buf)?;
    write_file(&out.join("robustness.csv"), &buf)?;
    let md: String = shown
        .iter()
        .map(|t| robustness_markdown(t, &format!("{} thresholds", t.mode.as_str())))
        .collect::<Vec<_>>()
        .join("\n");
    write_file(&out.join("robustness.md"), md.as_bytes())?;
    if let (Some(f), Some(r)) = (&fixed, &retuned) {
        let mut buf = Vec::new();
        write_inflation_csv(&inflation_report(f, r)?, &mut buf)?;
        write_file(&out.join("inflation.csv"), &buf)?;
    }
    Ok(())
}

/// Each run file counts as one seed, numbered by position.
pub fn cmd_aggregate(runs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let tables = runs
        .iter()
        .map(|p| {
            if p.is_dir() {
                pipeline::read_tables(&p.join("robustness.csv"))
            } else {
                pipeline::read_tables(p)
            }
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let per_seed: Vec<(u64, Vec<&RobustnessTable>)> =
        tables.iter().enumerate().map(|(i, t)| (i as u64, t.iter().collect())).collect();
    let rows = aggregate_rows(&per_seed).context("stage aggregate")?;
    write_file(out, aggregate_csv(&rows)?.as_bytes())
}

fn read_aggregate(path: &Path) -> anyhow::Result<Vec<(String, Cell)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| fixthresh_core::Error::Parse { row, message: e.to_string() })?;
        let num = |k: usize| -> anyhow::Result<Option<f64>> {
            let s = rec.get(k).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|e| {
                fixthresh_core::Error::Parse {
                    row,
                    message: format!("column {k}: {e}"),
                }
                .into()
            })
        };
        let mean = num(1)?.ok_or_else(|| fixthresh_core::Error::Parse { row, message: "missing mean".into() })?;
        let n = num(5)?.map_or(1, |v| v as usize);
        let summary = match (num(2)?, num(3)?, num(4)?) {
            (Some(std), Some(ci_lo), Some(ci_hi)) => Some(fixthresh_core::stats::SummaryRow { mean, std, ci_lo, ci_hi, n }),
            _ => None,
        };
        out.push((rec.get(0).unwrap_or("").to_string(), Cell { mean, summary, n }));
    }
    Ok(out)
}

/// Charts from `aggregate.csv` when present (with CI whiskers), otherwise
/// from `robustness.csv`.
pub fn cmd_plot(report: &Path, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let agg = report.join("aggregate.csv");
    let rob = report.join("robustness.csv");
    let cells = if agg.is_file() {
        read_aggregate(&agg)?
    } else if rob.is_file() {
        let tables = pipeline::read_tables(&rob)?;
        aggregate_rows(&[(0, tables.iter().collect())])?
    } else {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no aggregate.csv or robustness.csv under {}", report.display()),
        ))
        .context("stage plot");
    };
    let mut written = Vec::new();
    for (name, svg) in charts_from_cells(&cells, "")? {
        let p = out.join(name);
        write_file(&p, svg.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}
