//! generate → train → score under the grid → fixed/retuned evaluation →
//! multi-seed aggregation → reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;

use fixthresh_core::dataset::ManifestEntry;
use fixthresh_core::detector::{
    self, prepare_input, EpochRecord, HybridConfig, HybridParams, LabeledImage, LabeledInputs, ModelInput,
    TrainConfig,
};
use fixthresh_core::imaging::{ImageTensor, NormStats};
use fixthresh_core::metrics::ScoreSet;
use fixthresh_core::protocol::report::{robustness_markdown, write_inflation_csv, write_robustness_csv};
use fixthresh_core::protocol::{
    evaluate_fixed, evaluate_retuned, inflation_report, select_operating_points, ConditionScores, EvalMode,
    InflationReport, OperatingPointName, OperatingPoints, RobustnessTable,
};
use fixthresh_core::scores::{records_of, write_scores};
use fixthresh_core::stats::{summarize, SeedSeries, SummaryRow};
use fixthresh_core::synthgen::{self, CueSpec, SynthImage};
use fixthresh_core::transforms::{apply_condition, Condition};

use crate::config::{PipelineConfig, Variant};
use crate::manifest::{sha256_hex, unix_now, RunManifest};
use crate::plot::{line_chart, PlotPoint, Series};
use crate::{par_map, write_file};

/// Everything one seed produced for one architecture.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub name: String,
    pub params: HybridParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val_clean: ScoreSet,
    pub ops: OperatingPoints,
    pub test: ConditionScores,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dataset_hash: String,
    pub variants: Vec<VariantRun>,
    pub fixed: RobustnessTable,
    pub retuned: RobustnessTable,
    pub inflation: InflationReport,
    pub seconds: f64,
}

/// Dataset splits in memory.
pub struct Splits {
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

/// SHA-256 over ids, labels and raw pixels, in dataset order.
pub fn dataset_hash(images: &[SynthImage]) -> String {
    let mut buf = Vec::new();
    for im in images {
        buf.extend_from_slice(im.id.as_bytes());
        buf.push(b'\n');
        buf.push(u8::from(im.label));
        buf.extend_from_slice(&(im.image.height as u64).to_le_bytes());
        buf.extend_from_slice(&(im.image.width as u64).to_le_bytes());
        buf.extend_from_slice(&im.image.data);
    }
    sha256_hex(&buf)
}

/// Generate the seed's dataset and split it the way `gen` does on disk.
pub fn synth_splits(spec: &CueSpec) -> anyhow::Result<(Splits, String)> {
    let images = synthgen::generate(spec)?;
    let hash = dataset_hash(&images);
    let entries: Vec<ManifestEntry> = images
        .iter()
        .map(|im| ManifestEntry {
            path: format!("{}/{}.png", if im.label { "ai" } else { "real" }, im.id).into(),
            label: im.label,
        })
        .collect();
    let parts = synthgen::split(&entries, &spec.split, spec.seed)?;
    let by_id: HashMap<&str, &SynthImage> = images.iter().map(|im| (im.id.as_str(), im)).collect();
    let load = |part: &Vec<ManifestEntry>| -> Vec<LabeledImage> {
        part.iter()
            .map(|e| {
                let im = by_id[e.id().as_str()];
                LabeledImage {
                    id: im.id.clone(),
                    label: im.label,
                    image: synthgen::tensor_of(im),
                }
            })
            .collect()
    };
    Ok((
        Splits {
            train: load(&parts[0]),
            val: load(&parts[1]),
            test: load(&parts[2]),
        },
        hash,
    ))
}

/// Preprocessing depends only on these fields, so variants sharing them
/// share prepared inputs.
fn prep_key(cfg: &HybridConfig) -> (usize, bool, u64) {
    (cfg.input_size, cfg.freq_enabled, cfg.freq_cutoff.to_bits())
}

fn prepare_all(images: &[&ImageTensor], cfg: &HybridConfig, stats: &NormStats) -> anyhow::Result<Vec<ModelInput>> {
    images
        .iter()
        .map(|im| Ok(prepare_input(im, cfg, stats)?))
        .collect()
}

fn labeled_inputs(images: &[LabeledImage], cfg: &HybridConfig, stats: &NormStats) -> anyhow::Result<LabeledInputs> {
    let refs: Vec<&ImageTensor> = images.iter().map(|i| &i.image).collect();
    Ok(LabeledInputs {
        inputs: prepare_all(&refs, cfg, stats)?,
        labels: images.iter().map(|i| i.label).collect(),
    })
}

fn score_set(params: &HybridParams, inputs: &[ModelInput], images: &[LabeledImage]) -> anyhow::Result<ScoreSet> {
    let scores = inputs
        .iter()
        .map(|x| detector::forward(x, params))
        .collect::<fixthresh_core::Result<Vec<_>>>()?;
    Ok(ScoreSet::with_ids(
        scores,
        images.iter().map(|i| i.label).collect(),
        images.iter().map(|i| i.id.clone()).collect(),
    )?)
}

/// Train, threshold and score every variant on one dataset.
pub fn run_variants(
    cfg: &PipelineConfig,
    splits: &Splits,
    train_cfg: &TrainConfig,
    threads: usize,
) -> anyhow::Result<Vec<VariantRun>> {
    let model_cfgs: Vec<HybridConfig> = cfg.variants.iter().map(|v| v.model_config(&cfg.model)).collect();
    let mut keys: Vec<(usize, bool, u64)> = model_cfgs.iter().map(prep_key).collect();
    keys.sort_unstable();
    keys.dedup();
    let first_cfg = |k: &(usize, bool, u64)| model_cfgs.iter().find(|c| prep_key(c) == *k).expect("key from cfgs");

    let mut prepared: HashMap<(usize, bool, u64), (LabeledInputs, LabeledInputs)> = HashMap::new();
    for k in &keys {
        let mc = first_cfg(k);
        let tr = labeled_inputs(&splits.train, mc, &cfg.norm).context("stage preprocess")?;
        let va = labeled_inputs(&splits.val, mc, &cfg.norm).context("stage preprocess")?;
        prepared.insert(*k, (tr, va));
    }

    let jobs: Vec<(&Variant, &HybridConfig)> = cfg.variants.iter().zip(&model_cfgs).collect();
    let trained = par_map(&jobs, threads, |(v, mc)| {
        let (tr, va) = &prepared[&prep_key(mc)];
        detector::train(tr, va, mc, train_cfg).with_context(|| format!("stage train ({})", v.name))
    })
    .into_iter()
    .collect::<anyhow::Result<Vec<_>>>()?;
    drop(prepared);

    // Clean validation scores fix the thresholds before any test image is seen.
    let mut val_sets = Vec::new();
    let mut ops = Vec::new();
    for ((v, mc), out) in jobs.iter().zip(&trained) {
        let va = labeled_inputs(&splits.val, mc, &cfg.norm)?;
        let set = score_set(&out.params, &va.inputs, &splits.val)?;
        ops.push(select_operating_points(&set, "clean_val").with_context(|| format!("stage thresholds ({})", v.name))?);
        val_sets.push(set);
    }

    let per_condition = par_map(cfg.grid.conditions(), threads, |cond| -> anyhow::Result<Vec<ScoreSet>> {
        let degraded: Vec<ImageTensor> = splits
            .test
            .iter()
            .map(|im| apply_condition(&im.image, cond))
            .collect::<fixthresh_core::Result<_>>()
            .with_context(|| format!("stage degrade ({cond})"))?;
        let refs: Vec<&ImageTensor> = degraded.iter().collect();
        let mut inputs: HashMap<(usize, bool, u64), Vec<ModelInput>> = HashMap::new();
        for k in &keys {
            inputs.insert(*k, prepare_all(&refs, first_cfg(k), &cfg.norm)?);
        }
        jobs.iter()
            .zip(&trained)
            .map(|((_, mc), out)| score_set(&out.params, &inputs[&prep_key(mc)], &splits.test))
            .collect()
    })
    .into_iter()
    .collect::<anyhow::Result<Vec<_>>>()
    .context("stage score")?;

    let mut runs = Vec::new();
    for (i, ((v, _), out)) in jobs.iter().zip(trained).enumerate() {
        let entries: Vec<(Condition, ScoreSet)> = cfg
            .grid
            .conditions()
            .iter()
            .zip(&per_condition)
            .map(|(c, sets)| (*c, sets[i].clone()))
            .collect();
        runs.push(VariantRun {
            name: v.name.clone(),
            params: out.params,
            history: out.history,
            best_epoch: out.best_epoch,
            val_clean: val_sets[i].clone(),
            ops: ops[i].clone(),
            test: ConditionScores::new(entries)?,
        });
    }
    Ok(runs)
}

pub fn evaluate_runs(runs: &[VariantRun]) -> anyhow::Result<(RobustnessTable, RobustnessTable, InflationReport)> {
    let mut fixed: Option<RobustnessTable> = None;
    let mut retuned: Option<RobustnessTable> = None;
    for r in runs {
        let f = evaluate_fixed(&r.name, &r.test, &r.ops)?;
        let t = evaluate_retuned(&r.name, &r.test)?;
        match (&mut fixed, &mut retuned) {
            (Some(fa), Some(ta)) => {
                fa.merge(f)?;
                ta.merge(t)?;
            }
            _ => {
                fixed = Some(f);
                retuned = Some(t);
            }
        }
    }
    let (fixed, retuned) = fixed.zip(retuned).context("no variants to evaluate")?;
    let inflation = inflation_report(&fixed, &retuned)?;
    Ok((fixed, retuned, inflation))
}

pub fn run_seed(cfg: &PipelineConfig, seed: u64, threads: usize) -> anyhow::Result<SeedRun> {
    let start = Instant::now();
    let spec = CueSpec { seed, ..cfg.data.clone() };
    let (splits, dataset_hash) = synth_splits(&spec).with_context(|| format!("stage generate (seed {seed})"))?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let variants = run_variants(cfg, &splits, &train_cfg, threads).with_context(|| format!("seed {seed}"))?;
    let (fixed, retuned, inflation) = evaluate_runs(&variants).with_context(|| format!("stage evaluate (seed {seed})"))?;
    Ok(SeedRun {
        seed,
        dataset_hash,
        variants,
        fixed,
        retuned,
        inflation,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean with a t interval when at least two seeds are present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub summary: Option<SummaryRow>,
    pub n: usize,
}

impl Cell {
    pub fn from_values(name: &str, values: &[f64], seeds: &[u64]) -> anyhow::Result<Self> {
        let n = values.len();
        let summary = if n >= 2 {
            Some(summarize(&SeedSeries::new(name, values.to_vec(), seeds.to_vec())?)?)
        } else {
            None
        };
        let mean = summary.map_or_else(|| values.iter().sum::<f64>() / n.max(1) as f64, |s| s.mean);
        Ok(Self { mean, summary, n })
    }

    fn csv_fields(&self) -> [String; 4] {
        let opt = |f: fn(&SummaryRow) -> f64| self.summary.as_ref().map(|s| f(s).to_string()).unwrap_or_default();
        [self.mean.to_string(), opt(|s| s.std), opt(|s| s.ci_lo), opt(|s| s.ci_hi)]
    }

    fn pct(&self) -> String {
        match &self.summary {
            Some(s) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * (s.ci_hi - s.mean)),
            None => format!("{:.2}", 100.0 * self.mean),
        }
    }
}

/// Accuracy drop (percentage points) from clean to one condition at the
/// fixed ROC-optimal threshold, per model.
#[derive(Debug, Clone, PartialEq)]
pub struct DropRow {
    pub model: String,
    pub condition: Condition,
    pub per_seed: Vec<f64>,
    pub cell: Cell,
}

#[derive(Debug, Clone)]
pub struct SpectrumOutcome {
    pub manifest_id: String,
    pub seeds: Vec<u64>,
    pub models: Vec<String>,
    pub conditions: Vec<Condition>,
    pub drops: Vec<DropRow>,
    pub seed_seconds: Vec<f64>,
    pub clean_auroc: Vec<(String, Cell)>,
}

impl SpectrumOutcome {
    pub fn drop(&self, model: &str, cond: &Condition) -> Option<&DropRow> {
        self.drops.iter().find(|d| d.model == model && d.condition == *cond)
    }
}

fn fixed_acc(t: &RobustnessTable, model: &str, cond: &Condition) -> anyhow::Result<f64> {
    Ok(t.row(model, cond, OperatingPointName::RocOptimal)
        .with_context(|| format!("missing roc_optimal row {model}/{cond}"))?
        .metrics
        .accuracy)
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn write_seed_outputs(dir: &Path, run: &SeedRun, outputs: &mut Vec<String>) -> anyhow::Result<()> {
    let sub = format!("seed_{}", run.seed);
    let d = dir.join(&sub);
    std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    let mut put = |name: &str, bytes: Vec<u8>| -> anyhow::Result<()> {
        write_file(&d.join(name), &bytes)?;
        outputs.push(format!("{sub}/{name}"));
        Ok(())
    };

    let mut buf = Vec::new();
    write_robustness_csv(&[&run.fixed, &run.retuned], &mut buf)?;
    put("robustness.csv", buf)?;
    let mut buf = Vec::new();
    write_inflation_csv(&run.inflation, &mut buf)?;
    put("inflation.csv", buf)?;
    put("robustness.md", robustness_markdown(&run.fixed, &format!("Fixed-threshold robustness, seed {}", run.seed)).into_bytes())?;

    let mut hist = Vec::new();
    let mut thr = Vec::new();
    for v in &run.variants {
        for h in &v.history {
            hist.push(vec![
                v.name.clone(),
                h.epoch.to_string(),
                h.train_loss.to_string(),
                h.val_auroc.to_string(),
                h.trunk_frozen.to_string(),
                (h.epoch == v.best_epoch).to_string(),
            ]);
        }
        for op in v.ops.iter() {
            thr.push(vec![v.name.clone(), op.name.to_string(), op.threshold.to_string()]);
        }
        let mut recs = records_of(&v.val_clean, Some(run.seed), Some(Condition::Clean));
        let mut buf = Vec::new();
        write_scores(&recs, &mut buf)?;
        put(&format!("val_scores_{}.csv", v.name), buf)?;
        recs.clear();
        for (c, s) in v.test.iter() {
            recs.extend(records_of(s, Some(run.seed), Some(*c)));
        }
        let mut buf = Vec::new();
        write_scores(&recs, &mut buf)?;
        put(&format!("test_scores_{}.csv", v.name), buf)?;
    }
    put(
        "history.csv",
        csv_text(&["model", "epoch", "train_loss", "val_auroc", "trunk_frozen", "best"], &hist)?.into_bytes(),
    )?;
    put("thresholds.csv", csv_text(&["model", "operating_point", "threshold"], &thr)?.into_bytes())?;
    Ok(())
}

/// Key-wise summary of several robustness tables, keys prefixed by mode.
pub fn aggregate_rows(per_seed: &[(u64, Vec<&RobustnessTable>)]) -> anyhow::Result<Vec<(String, Cell)>> {
    let maps: Vec<(u64, BTreeMap<String, f64>)> = per_seed
        .iter()
        .map(|(seed, tables)| {
            let mut m = BTreeMap::new();
            for t in tables {
                for (k, v) in t.metric_map() {
                    m.insert(format!("{}:{k}", t.mode.as_str()), v);
                }
            }
            (*seed, m)
        })
        .collect();
    let Some((_, first)) = maps.first() else {
        anyhow::bail!("no runs to aggregate");
    };
    for (seed, m) in &maps {
        if m.len() != first.len() || !m.keys().eq(first.keys()) {
            return Err(fixthresh_core::Error::Stats(format!("run for seed {seed} has different cells than the first run")).into());
        }
    }
    let seeds: Vec<u64> = maps.iter().map(|(s, _)| *s).collect();
    first
        .keys()
        .map(|k| {
            let vals: Vec<f64> = maps.iter().map(|(_, m)| m[k]).collect();
            Ok((k.clone(), Cell::from_values(k, &vals, &seeds)?))
        })
        .collect()
}

pub fn aggregate_csv(rows: &[(String, Cell)]) -> anyhow::Result<String> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, c)| {
            let [m, s, lo, hi] = c.csv_fields();
            vec![k.clone(), m, s, lo, hi, c.n.to_string()]
        })
        .collect();
    csv_text(&["metric", "mean", "std", "ci_lo", "ci_hi", "n"], &body)
}

/// Accuracy-vs-condition charts, one per operating point, from aggregated
/// fixed-mode cells.
pub fn charts_from_cells(cells: &[(String, Cell)], note: &str) -> anyhow::Result<Vec<(String, String)>> {
    let lookup: HashMap<&str, &Cell> = cells.iter().map(|(k, c)| (k.as_str(), c)).collect();
    let mut models: Vec<String> = Vec::new();
    let mut conditions: Vec<String> = Vec::new();
    for (k, _) in cells {
        let parts: Vec<&str> = k.split(':').collect();
        if parts.len() == 5 && parts[0] == "fixed" && parts[4] == "accuracy" {
            if !models.iter().any(|m| m == parts[1]) {
                models.push(parts[1].to_string());
            }
            if !conditions.iter().any(|c| c == parts[2]) {
                conditions.push(parts[2].to_string());
            }
        }
    }
    if models.is_empty() {
        anyhow::bail!("no fixed-threshold accuracy cells found");
    }
    // Keys come back sorted; restore grid order when the names parse.
    let mut parsed: Vec<(usize, String)> = conditions
        .iter()
        .map(|c| {
            let rank = c
                .parse::<Condition>()
                .ok()
                .and_then(|p| fixthresh_core::transforms::ConditionGrid::standard().iter().position(|q| *q == p))
                .unwrap_or(usize::MAX);
            (rank, c.clone())
        })
        .collect();
    parsed.sort();
    let conditions: Vec<String> = parsed.into_iter().map(|(_, c)| c).collect();

    let mut out = Vec::new();
    for op in OperatingPointName::ALL {
        let series = models
            .iter()
            .map(|m| {
                let points = conditions
                    .iter()
                    .map(|c| {
                        let cell = lookup
                            .get(format!("fixed:{m}:{c}:{op}:accuracy").as_str())
                            .with_context(|| format!("missing accuracy cell for {m}/{c}/{op}"))?;
                        Ok(PlotPoint {
                            value: cell.mean,
                            ci: cell.summary.map(|s| (s.ci_lo, s.ci_hi)),
                        })
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                Ok(Series { name: m.clone(), points })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let title = format!("Fixed-threshold accuracy at {op}");
        out.push((format!("accuracy_{op}.svg"), line_chart(&title, &conditions, &series, note)));
    }
    Ok(out)
}

/// Run every seed and write the report directory.
pub fn reproduce_spectrum(cfg: &PipelineConfig, out: &Path, threads: usize) -> anyhow::Result<SpectrumOutcome> {
    cfg.validate()?;
    let started = unix_now();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut runs = Vec::new();
    let mut outputs = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, seed, threads)?;
        write_seed_outputs(out, &run, &mut outputs).with_context(|| format!("stage report (seed {seed})"))?;
        runs.push(run);
    }
    let mut hashes = BTreeMap::new();
    for r in &runs {
        hashes.insert(format!("synthgen_seed_{}", r.seed), r.dataset_hash.clone());
    }
    let manifest = RunManifest::new(
        "reproduce-spectrum",
        serde_json::to_value(cfg)?,
        cfg.seeds.clone(),
        hashes,
        started,
    );
    let note = format!("manifest {}", manifest.manifest_id);
    let outcome = write_spectrum_reports(cfg, &runs, out, &note, &mut outputs).context("stage report")?;
    let manifest = manifest.finish(out, &outputs)?;
    Ok(SpectrumOutcome {
        manifest_id: manifest.manifest_id,
        ..outcome
    })
}

fn write_spectrum_reports(
    cfg: &PipelineConfig,
    runs: &[SeedRun],
    out: &Path,
    note: &str,
    outputs: &mut Vec<String>,
) -> anyhow::Result<SpectrumOutcome> {
    let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    let models: Vec<String> = cfg.variants.iter().map(|v| v.name.clone()).collect();
    let conditions: Vec<Condition> = cfg.grid.conditions().to_vec();
    let mut put = |name: &str, text: String| -> anyhow::Result<()> {
        write_file(&out.join(name), text.as_bytes())?;
        outputs.push(name.to_string());
        Ok(())
    };

    let cells = aggregate_rows(&runs.iter().map(|r| (r.seed, vec![&r.fixed, &r.retuned])).collect::<Vec<_>>())?;
    put("aggregate.csv", aggregate_csv(&cells)?)?;

    let mut summary = Vec::new();
    let mut acc_cells: HashMap<(String, String), Cell> = HashMap::new();
    let mut clean_auroc = Vec::new();
    for m in &models {
        for c in &conditions {
            let accs = runs.iter().map(|r| fixed_acc(&r.fixed, m, c)).collect::<anyhow::Result<Vec<_>>>()?;
            let aucs = runs
                .iter()
                .map(|r| Ok(r.fixed.summary(m, c).context("missing summary")?.auroc))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let acc = Cell::from_values("accuracy", &accs, &seeds)?;
            let auc = Cell::from_values("auroc", &aucs, &seeds)?;
            if *c == Condition::Clean {
                clean_auroc.push((m.clone(), auc));
            }
            let mut row = vec![m.clone(), c.to_string(), seeds.len().to_string()];
            row.extend(acc.csv_fields());
            row.extend(auc.csv_fields());
            summary.push(row);
            acc_cells.insert((m.clone(), c.to_string()), acc);
        }
    }
    put(
        "summary.csv",
        csv_text(
            &[
                "model", "condition", "n", "accuracy_mean", "accuracy_std", "accuracy_ci_lo", "accuracy_ci_hi",
                "auroc_mean", "auroc_std", "auroc_ci_lo", "auroc_ci_hi",
            ],
            &summary,
        )?,
    )?;

    let mut drops = Vec::new();
    let mut drop_rows = Vec::new();
    for m in &models {
        for c in conditions.iter().filter(|c| **c != Condition::Clean) {
            let per_seed = runs
                .iter()
                .map(|r| Ok(100.0 * (fixed_acc(&r.fixed, m, &Condition::Clean)? - fixed_acc(&r.fixed, m, c)?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let cell = Cell::from_values("drop_pp", &per_seed, &seeds)?;
            let mut row = vec![m.clone(), c.to_string(), seeds.len().to_string()];
            row.extend(cell.csv_fields());
            drop_rows.push(row);
            drops.push(DropRow {
                model: m.clone(),
                condition: *c,
                per_seed,
                cell,
            });
        }
    }
    put(
        "drops.csv",
        csv_text(&["model", "condition", "n", "drop_pp_mean", "drop_pp_std", "drop_pp_ci_lo", "drop_pp_ci_hi"], &drop_rows)?,
    )?;

    let mut infl = Vec::new();
    for r in runs {
        for row in &r.inflation.rows {
            infl.push(vec![
                r.seed.to_string(),
                row.model.clone(),
                row.condition.to_string(),
                row.fixed_accuracy.to_string(),
                row.retuned_accuracy.to_string(),
                row.delta.to_string(),
            ]);
        }
    }
    put(
        "inflation.csv",
        csv_text(&["seed", "model", "condition", "fixed_accuracy", "retuned_accuracy", "delta"], &infl)?,
    )?;

    put("report.md", spectrum_markdown(&models, &conditions, &seeds, &clean_auroc, &acc_cells, &drops, runs, note))?;
    for (name, svg) in charts_from_cells(&cells, note)? {
        put(&name, svg)?;
    }

    Ok(SpectrumOutcome {
        manifest_id: String::new(),
        seeds,
        models,
        conditions,
        drops,
        seed_seconds: runs.iter().map(|r| r.seconds).collect(),
        clean_auroc,
    })
}

#[allow(clippy::too_many_arguments)]
fn spectrum_markdown(
    models: &[String],
    conditions: &[Condition],
    seeds: &[u64],
    clean_auroc: &[(String, Cell)],
    acc: &HashMap<(String, String), Cell>,
    drops: &[DropRow],
    runs: &[SeedRun],
    note: &str,
) -> String {
    let mut s = String::new();
    let seed_list: Vec<String> = seeds.iter().map(|x| x.to_string()).collect();
    let _ = writeln!(s, "# Forensic-semantic spectrum (synthetic, desk scale)\n");
    let _ = writeln!(s, "<!-- {note} -->\nSeeds: {}.\n", seed_list.join(", "));

    let _ = writeln!(s, "## Clean AUROC (mean±std [95% CI])\n\n| Model | AUROC |\n|---|---|");
    for (m, c) in clean_auroc {
        let shown = c.summary.map_or_else(|| format!("{:.3}", c.mean), |r| r.display());
        let _ = writeln!(s, "| {m} | {shown} |");
    }

    let header = |s: &mut String| {
        s.push_str("| Condition |");
        for m in models {
            let _ = write!(s, " {m} |");
        }
        s.push_str("\n|---|");
        for _ in models {
            s.push_str("---:|");
        }
        s.push('\n');
    };
    let _ = writeln!(s, "\n## Fixed-threshold accuracy (%) at roc_optimal (mean ± CI half-width)\n");
    header(&mut s);
    for c in conditions {
        let _ = write!(s, "| {c} |");
        for m in models {
            let _ = write!(s, " {} |", acc[&(m.clone(), c.to_string())].pct());
        }
        s.push('\n');
    }

    let _ = writeln!(s, "\n## Accuracy drop from clean (percentage points)\n");
    header(&mut s);
    for c in conditions.iter().filter(|c| **c != Condition::Clean) {
        let _ = write!(s, "| {c} |");
        for m in models {
            let d = drops.iter().find(|d| d.model == *m && d.condition == *c).map_or(f64::NAN, |d| d.cell.mean);
            let _ = write!(s, " {d:.2} |");
        }
        s.push('\n');
    }

    let _ = writeln!(s, "\n## Retuning inflation (percentage points, mean over seeds)\n");
    header(&mut s);
    for c in conditions {
        let _ = write!(s, "| {c} |");
        for m in models {
            let deltas: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.inflation.rows.iter().find(|x| x.model == *m && x.condition == *c))
                .map(|x| x.delta)
                .collect();
            let mean = deltas.iter().sum::<f64>() / deltas.len().max(1) as f64;
            let _ = write!(s, " {:.2} |", 100.0 * mean);
        }
        s.push('\n');
    }
    s
}

/// Read every table of one mode back from a `robustness.csv`.
pub fn read_tables(path: &Path) -> anyhow::Result<Vec<RobustnessTable>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for mode in [EvalMode::Fixed, EvalMode::Retuned] {
        match fixthresh_core::protocol::report::read_robustness_csv(bytes.as_slice(), mode) {
            Ok(t) => out.push(t),
            Err(fixthresh_core::Error::Parse { row: 0, .. }) => {}
            Err(e) => return Err(anyhow::Error::new(e).context(format!("parsing {}", path.display()))),
        }
    }
    if out.is_empty() {
        return Err(fixthresh_core::Error::Parse {
            row: 0,
            message: format!("{} has no robustness rows", path.display()),
        }
        .into());
    }
    Ok(out)
}
