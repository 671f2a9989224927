//! CSV and Markdown serialization of robustness tables and inflation reports.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    ConditionSummary, EvalMode, InflationReport, OperatingPointName, RobustnessRow, RobustnessTable,
};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionCounts, MetricBundle};
use crate::transforms::Condition;

#[derive(Debug, Serialize, Deserialize)]
struct RobustnessRecord {
    mode: EvalMode,
    model: String,
    condition: Condition,
    operating_point: OperatingPointName,
    threshold: f64,
    tp: u64,
    fp: u64,
    tn: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    tnr: f64,
    auroc: f64,
    best_accuracy: f64,
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

/// Write one or more tables (e.g. fixed then retuned) as `robustness.csv`.
pub fn write_robustness_csv<W: Write>(tables: &[&RobustnessTable], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in tables {
        for r in &t.rows {
            let s = t.summary(&r.model, &r.condition).ok_or_else(|| {
                Error::Protocol(format!("no summary for {}/{}", r.model, r.condition))
            })?;
            w.serialize(RobustnessRecord {
                mode: t.mode,
                model: r.model.clone(),
                condition: r.condition,
                operating_point: r.operating_point,
                threshold: r.threshold,
                tp: r.counts.tp,
                fp: r.counts.fp,
                tn: r.counts.tn,
                fn_: r.counts.fn_,
                accuracy: r.metrics.accuracy,
                precision: r.metrics.precision,
                recall: r.metrics.recall,
                f1: r.metrics.f1,
                tnr: r.metrics.tnr,
                auroc: s.auroc,
                best_accuracy: s.best_accuracy,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("robustness.csv", e))?;
    Ok(())
}

/// Read `robustness.csv` back, keeping only rows of `mode`.
pub fn read_robustness_csv<R: Read>(input: R, mode: EvalMode) -> Result<RobustnessTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut table = RobustnessTable::empty(mode);
    for rec in rdr.deserialize::<RobustnessRecord>() {
        let rec = rec.map_err(csv_err)?;
        if rec.mode != mode {
            continue;
        }
        if table.summary(&rec.model, &rec.condition).is_none() {
            table.summaries.push(ConditionSummary {
                model: rec.model.clone(),
                condition: rec.condition,
                auroc: rec.auroc,
                best_accuracy: rec.best_accuracy,
            });
        }
        table.rows.push(RobustnessRow {
            model: rec.model,
            condition: rec.condition,
            operating_point: rec.operating_point,
            threshold: rec.threshold,
            counts: ConfusionCounts {
                tp: rec.tp,
                fp: rec.fp,
                tn: rec.tn,
                fn_: rec.fn_,
            },
            metrics: MetricBundle {
                accuracy: rec.accuracy,
                precision: rec.precision,
                recall: rec.recall,
                f1: rec.f1,
                tnr: rec.tnr,
            },
        });
    }
    if table.rows.is_empty() {
        return Err(Error::Parse {
            row: 0,
            message: format!("no {} rows found", mode.as_str()),
        });
    }
    Ok(table)
}

pub fn write_inflation_csv<W: Write>(report: &InflationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("inflation.csv", e))?;
    Ok(())
}

/// Markdown with conditions as rows and models as columns: one accuracy
/// table per operating point, then per-condition AUROC.
pub fn robustness_markdown(table: &RobustnessTable, title: &str) -> String {
    let models = table.models();
    let conditions = models
        .first()
        .map(|m| table.conditions_of(m))
        .unwrap_or_default();
    let header = |out: &mut String| {
        out.push_str("| Condition |");
        for m in &models {
            let _ = write!(out, " {m} |");
        }
        out.push_str("\n|---|");
        for _ in &models {
            out.push_str("---:|");
        }
        out.push('\n');
    };

    let mut out = format!("# {title}\n\n");
    for op in OperatingPointName::ALL {
        let _ = writeln!(
            out,
            "## Accuracy (%) at {op} ({} thresholds)\n",
            table.mode.as_str()
        );
        header(&mut out);
        for c in &conditions {
            let _ = write!(out, "| {c} |");
            for m in &models {
                match table.row(m, c, op) {
                    Some(r) => {
                        let _ = write!(out, " {:.2} |", 100.0 * r.metrics.accuracy);
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("## AUROC\n\n");
    header(&mut out);
    for c in &conditions {
        let _ = write!(out, "| {c} |");
        for m in &models {
            match table.summary(m, c) {
                Some(s) => {
                    let _ = write!(out, " {:.4} |", s.auroc);
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}
