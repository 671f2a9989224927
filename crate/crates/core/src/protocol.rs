//! Fixed-threshold robustness protocol.
//!
//! Operating points are chosen once on clean validation scores and then
//! applied unchanged to every degraded condition. The retuned variant, which
//! re-selects thresholds per condition, is provided only to measure how much
//! it flatters a detector.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionCounts, MetricBundle, ScoreSet};
use crate::transforms::Condition;

pub mod report;

pub const LOW_FPR_TARGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingPointName {
    LowFpr,
    RocOptimal,
    BestF1,
}

impl OperatingPointName {
    pub const ALL: [OperatingPointName; 3] = [
        OperatingPointName::LowFpr,
        OperatingPointName::RocOptimal,
        OperatingPointName::BestF1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OperatingPointName::LowFpr => "low_fpr",
            OperatingPointName::RocOptimal => "roc_optimal",
            OperatingPointName::BestF1 => "best_f1",
        }
    }
}

impl fmt::Display for OperatingPointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatingPointName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown operating point '{s}'")))
    }
}

/// A named decision threshold and the validation run it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub name: OperatingPointName,
    pub threshold: f64,
    pub source: String,
}

/// The three operating points, in [`OperatingPointName::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoints(pub [OperatingPoint; 3]);

impl OperatingPoints {
    pub fn get(&self, name: OperatingPointName) -> &OperatingPoint {
        &self.0[name as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &OperatingPoint> {
        self.0.iter()
    }
}

/// Pick low-FPR (FPR ≤ 1%), ROC-optimal (Youden) and best-F1 thresholds on
/// clean validation scores.
pub fn select_operating_points(clean_val: &ScoreSet, source: &str) -> Result<OperatingPoints> {
    if !clean_val.has_both_classes() {
        return Err(Error::Protocol(format!(
            "validation set '{source}' must contain both real and AI items"
        )));
    }
    let mk = |name, threshold: f64| OperatingPoint {
        name,
        threshold,
        source: source.to_string(),
    };
    Ok(OperatingPoints([
        mk(
            OperatingPointName::LowFpr,
            metrics::threshold_low_fpr(clean_val, LOW_FPR_TARGET)?,
        ),
        mk(
            OperatingPointName::RocOptimal,
            metrics::threshold_youden(clean_val)?,
        ),
        mk(
            OperatingPointName::BestF1,
            metrics::threshold_best_f1(clean_val)?,
        ),
    ]))
}

/// Scores of one model under every condition of a grid, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionScores {
    entries: Vec<(Condition, ScoreSet)>,
}

impl ConditionScores {
    /// Checks that `clean` is present, conditions are unique, and every set
    /// covers the same items with the same labels.
    pub fn new(entries: Vec<(Condition, ScoreSet)>) -> Result<Self> {
        if !entries.iter().any(|(c, _)| *c == Condition::Clean) {
            return Err(Error::Protocol("scores lack the clean condition".into()));
        }
        let mut names: Vec<String> = entries.iter().map(|(c, _)| c.to_string()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Protocol("duplicate condition in score map".into()));
        }
        let key = |s: &ScoreSet| -> Result<Vec<(String, bool)>> {
            let ids = s.ids().ok_or_else(|| {
                Error::Protocol("item ids are required to align conditions".into())
            })?;
            let mut v: Vec<(String, bool)> =
                ids.iter().cloned().zip(s.labels().iter().copied()).collect();
            v.sort();
            Ok(v)
        };
        let reference = key(&entries[0].1)?;
        if reference.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Protocol("duplicate item id within a condition".into()));
        }
        for (cond, s) in &entries[1..] {
            if key(s)? != reference {
                return Err(Error::Protocol(format!(
                    "condition {cond} does not cover the same items (or labels) as {}",
                    entries[0].0
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, cond: &Condition) -> Option<&ScoreSet> {
        self.entries.iter().find(|(c, _)| c == cond).map(|(_, s)| s)
    }

    pub fn clean(&self) -> &ScoreSet {
        self.get(&Condition::Clean).expect("validated in new")
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Condition, ScoreSet)> {
        self.entries.iter()
    }

    pub fn conditions(&self) -> Vec<Condition> {
        self.entries.iter().map(|(c, _)| *c).collect()
    }
}

/// Metrics for one (model, condition, operating point) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub model: String,
    pub condition: Condition,
    pub operating_point: OperatingPointName,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: MetricBundle,
}

/// Threshold-free context for one (model, condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub model: String,
    pub condition: Condition,
    pub auroc: f64,
    /// Highest accuracy any threshold reaches on this condition's scores.
    pub best_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Fixed,
    Retuned,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Fixed => "fixed",
            EvalMode::Retuned => "retuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessTable {
    pub mode: EvalMode,
    pub rows: Vec<RobustnessRow>,
    pub summaries: Vec<ConditionSummary>,
}

impl RobustnessTable {
    fn empty(mode: EvalMode) -> Self {
        Self {
            mode,
            rows: Vec::new(),
            summaries: Vec::new(),
        }
    }

    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.summaries {
            if !out.contains(&r.model) {
                out.push(r.model.clone());
            }
        }
        out
    }

    pub fn conditions_of(&self, model: &str) -> Vec<Condition> {
        self.summaries
            .iter()
            .filter(|s| s.model == model)
            .map(|s| s.condition)
            .collect()
    }

    pub fn row(&self, model: &str, cond: &Condition, op: OperatingPointName) -> Option<&RobustnessRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.condition == *cond && r.operating_point == op)
    }

    pub fn summary(&self, model: &str, cond: &Condition) -> Option<&ConditionSummary> {
        self.summaries
            .iter()
            .find(|s| s.model == model && s.condition == *cond)
    }

    /// Append another model's table. All models must share one condition grid.
    pub fn merge(&mut self, other: RobustnessTable) -> Result<()> {
        if other.mode != self.mode {
            return Err(Error::Protocol("cannot merge fixed and retuned tables".into()));
        }
        if let (Some(a), Some(b)) = (self.models().first(), other.models().first()) {
            if self.conditions_of(a) != other.conditions_of(b) {
                return Err(Error::Protocol(format!(
                    "model '{b}' was evaluated on a different condition grid than '{a}'"
                )));
            }
        }
        for m in other.models() {
            if self.models().contains(&m) {
                return Err(Error::Protocol(format!("model '{m}' already in table")));
            }
        }
        self.rows.extend(other.rows);
        self.summaries.extend(other.summaries);
        Ok(())
    }

    /// Flatten to `model:condition:op:metric` → value (plus `auroc` and
    /// `best_accuracy` per model/condition). Used for multi-seed aggregation.
    pub fn metric_map(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            for (name, v) in MetricBundle::NAMES.iter().zip(r.metrics.values()) {
                out.insert(
                    format!("{}:{}:{}:{}", r.model, r.condition, r.operating_point, name),
                    v,
                );
            }
        }
        for s in &self.summaries {
            out.insert(format!("{}:{}:auroc", s.model, s.condition), s.auroc);
            out.insert(
                format!("{}:{}:best_accuracy", s.model, s.condition),
                s.best_accuracy,
            );
        }
        out
    }
}

fn summarize_condition(model: &str, cond: Condition, s: &ScoreSet) -> Result<ConditionSummary> {
    let auroc = metrics::auroc(s)
        .map_err(|e| Error::Protocol(format!("{model}/{cond}: {e}")))?;
    Ok(ConditionSummary {
        model: model.to_string(),
        condition: cond,
        auroc,
        best_accuracy: metrics::best_accuracy(s).1,
    })
}

fn rows_at(model: &str, cond: Condition, s: &ScoreSet, ops: &OperatingPoints) -> Vec<RobustnessRow> {
    ops.iter()
        .map(|op| {
            let counts = metrics::confusion_at(s, op.threshold);
            RobustnessRow {
                model: model.to_string(),
                condition: cond,
                operating_point: op.name,
                threshold: op.threshold,
                counts,
                metrics: metrics::metric_bundle(&counts),
            }
        })
        .collect()
}

/// Evaluate every condition at the clean-validation thresholds `ops`.
///
/// Only the per-condition scores are read here; thresholds are never
/// re-derived from them.
pub fn evaluate_fixed(model: &str, scores: &ConditionScores, ops: &OperatingPoints) -> Result<RobustnessTable> {
    if ops.iter().any(|op| !op.threshold.is_finite()) {
        return Err(Error::Protocol("operating point thresholds must be finite".into()));
    }
    let mut table = RobustnessTable::empty(EvalMode::Fixed);
    for (cond, s) in scores.iter() {
        table.summaries.push(summarize_condition(model, *cond, s)?);
        table.rows.extend(rows_at(model, *cond, s, ops));
    }
    Ok(table)
}

/// The criticized baseline: re-select all three operating points on each
/// condition's own scores.
pub fn evaluate_retuned(model: &str, scores: &ConditionScores) -> Result<RobustnessTable> {
    let mut table = RobustnessTable::empty(EvalMode::Retuned);
    for (cond, s) in scores.iter() {
        let ops = select_operating_points(s, &format!("retuned:{model}:{cond}"))?;
        table.summaries.push(summarize_condition(model, *cond, s)?);
        table.rows.extend(rows_at(model, *cond, s, &ops));
    }
    Ok(table)
}

/// Fixed vs retuned accuracy for one (model, condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationRow {
    pub model: String,
    pub condition: Condition,
    /// Accuracy at the clean-validation ROC-optimal threshold.
    pub fixed_accuracy: f64,
    /// Accuracy after retuning to the accuracy-optimal threshold on the
    /// condition's own scores.
    pub retuned_accuracy: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationReport {
    pub rows: Vec<InflationRow>,
}

/// How much per-condition retuning inflates accuracy over the fixed protocol.
/// `delta = retuned - fixed` is never negative on identical scores.
pub fn inflation_report(fixed: &RobustnessTable, retuned: &RobustnessTable) -> Result<InflationReport> {
    if fixed.mode != EvalMode::Fixed || retuned.mode != EvalMode::Retuned {
        return Err(Error::Protocol("inflation needs a fixed and a retuned table".into()));
    }
    let key = |t: &RobustnessTable| -> Vec<(String, String)> {
        t.summaries
            .iter()
            .map(|s| (s.model.clone(), s.condition.to_string()))
            .collect()
    };
    if key(fixed) != key(retuned) {
        return Err(Error::Protocol(
            "fixed and retuned tables cover different models or conditions".into(),
        ));
    }
    let mut rows = Vec::with_capacity(fixed.summaries.len());
    for (fs, rs) in fixed.summaries.iter().zip(&retuned.summaries) {
        let fixed_row = fixed
            .row(&fs.model, &fs.condition, OperatingPointName::RocOptimal)
            .ok_or_else(|| {
                Error::Protocol(format!("missing roc_optimal row for {}/{}", fs.model, fs.condition))
            })?;
        let fixed_accuracy = fixed_row.metrics.accuracy;
        let retuned_accuracy = retuned
            .rows
            .iter()
            .filter(|r| r.model == rs.model && r.condition == rs.condition)
            .map(|r| r.metrics.accuracy)
            .fold(rs.best_accuracy, f64::max);
        rows.push(InflationRow {
            model: fs.model.clone(),
            condition: fs.condition,
            fixed_accuracy,
            retuned_accuracy,
            delta: retuned_accuracy - fixed_accuracy,
        });
    }
    Ok(InflationReport { rows })
}

/// Art-minus-photo AUROC in percentage points.
pub fn spectrum_gap(auroc_photo: f64, auroc_art: f64) -> Result<f64> {
    for v in [auroc_photo, auroc_art] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Contract(format!("AUROC {v} outside [0, 1]")));
        }
    }
    Ok((auroc_art - auroc_photo) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("item{i}")).collect()
    }

    fn set(scores: &[f64], labels: &[bool]) -> ScoreSet {
        ScoreSet::with_ids(scores.to_vec(), labels.to_vec(), ids(scores.len())).unwrap()
    }

    const MICRO_S: [f64; 4] = [0.1, 0.4, 0.35, 0.8];
    const MICRO_L: [bool; 4] = [false, false, true, true];

    #[test]
    fn micro_operating_points() {
        let ops = select_operating_points(&set(&MICRO_S, &MICRO_L), "val").unwrap();
        assert_eq!(ops.get(OperatingPointName::LowFpr).threshold, 0.8);
        assert_eq!(ops.get(OperatingPointName::RocOptimal).threshold, 0.35);
        assert_eq!(ops.get(OperatingPointName::BestF1).threshold, 0.35);
        assert!(ops.iter().all(|o| o.source == "val"));
    }

    #[test]
    fn separated_validation_points_agree() {
        let ops = select_operating_points(&set(&[0.1, 0.2, 0.6, 0.9], &MICRO_L), "v").unwrap();
        let t: Vec<f64> = ops.iter().map(|o| o.threshold).collect();
        assert_eq!(t, vec![0.6, 0.6, 0.6]);
    }

    #[test]
    fn monotone_transform_maps_thresholds() {
        let s = set(&MICRO_S, &MICRO_L);
        let f = |x: f64| 3.0 * x.powi(3) + 1.0;
        let a = select_operating_points(&s, "a").unwrap();
        let b = select_operating_points(&s.map_scores(f).unwrap(), "b").unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(f(x.threshold), y.threshold);
        }
    }

    #[test]
    fn single_class_validation_is_protocol_error() {
        let s = set(&[0.1, 0.2], &[true, true]);
        assert!(matches!(select_operating_points(&s, "v"), Err(Error::Protocol(_))));
    }

    #[test]
    fn condition_scores_need_clean_and_alignment() {
        let s = set(&MICRO_S, &MICRO_L);
        assert!(ConditionScores::new(vec![(Condition::Jpeg { quality: 60 }, s.clone())]).is_err());
        let other = ScoreSet::with_ids(MICRO_S.to_vec(), MICRO_L.to_vec(), vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
        assert!(ConditionScores::new(vec![
            (Condition::Clean, s.clone()),
            (Condition::Jpeg { quality: 60 }, other)
        ])
        .is_err());
        let no_ids = ScoreSet::new(MICRO_S.to_vec(), MICRO_L.to_vec()).unwrap();
        assert!(ConditionScores::new(vec![(Condition::Clean, no_ids)]).is_err());
    }

    #[test]
    fn unchanged_scores_give_identical_rows() {
        let s = set(&MICRO_S, &MICRO_L);
        let cs = ConditionScores::new(vec![
            (Condition::Clean, s.clone()),
            (Condition::Blur { sigma: 3.0 }, s.clone()),
        ])
        .unwrap();
        let ops = select_operating_points(&s, "v").unwrap();
        let t = evaluate_fixed("m", &cs, &ops).unwrap();
        for op in OperatingPointName::ALL {
            let a = t.row("m", &Condition::Clean, op).unwrap();
            let b = t.row("m", &Condition::Blur { sigma: 3.0 }, op).unwrap();
            assert_eq!((a.counts, a.metrics), (b.counts, b.metrics));
        }
        let r = evaluate_retuned("m", &cs).unwrap();
        for (a, b) in t.rows.iter().zip(&r.rows) {
            assert_eq!(a.metrics, b.metrics);
        }
    }

    #[test]
    fn zeroed_scores_predict_all_real() {
        let s = set(&MICRO_S, &MICRO_L);
        let zero = s.map_scores(|_| 0.0).unwrap();
        let cs = ConditionScores::new(vec![
            (Condition::Clean, s.clone()),
            (Condition::Jpeg { quality: 60 }, zero),
        ])
        .unwrap();
        let t = evaluate_fixed("m", &cs, &select_operating_points(&s, "v").unwrap()).unwrap();
        for op in OperatingPointName::ALL {
            let r = t.row("m", &Condition::Jpeg { quality: 60 }, op).unwrap();
            assert_eq!(r.counts.tp + r.counts.fp, 0);
            assert_eq!(r.metrics.accuracy, 0.5);
        }
    }

    #[test]
    fn merge_requires_same_grid() {
        let s = set(&MICRO_S, &MICRO_L);
        let ops = select_operating_points(&s, "v").unwrap();
        let a = ConditionScores::new(vec![(Condition::Clean, s.clone())]).unwrap();
        let b = ConditionScores::new(vec![
            (Condition::Clean, s.clone()),
            (Condition::Blur { sigma: 3.0 }, s.clone()),
        ])
        .unwrap();
        let mut t = evaluate_fixed("a", &a, &ops).unwrap();
        assert!(t.merge(evaluate_fixed("b", &b, &ops).unwrap()).is_err());
        assert!(t.merge(evaluate_fixed("a", &a, &ops).unwrap()).is_err());
        t.merge(evaluate_fixed("c", &a, &ops).unwrap()).unwrap();
        assert_eq!(t.models(), vec!["a", "c"]);
    }

    #[test]
    fn identical_tables_have_zero_inflation_when_fixed_is_optimal() {
        let s = set(&[0.1, 0.2, 0.6, 0.9], &MICRO_L);
        let cs = ConditionScores::new(vec![(Condition::Clean, s.clone())]).unwrap();
        let f = evaluate_fixed("m", &cs, &select_operating_points(&s, "v").unwrap()).unwrap();
        let r = evaluate_retuned("m", &cs).unwrap();
        let rep = inflation_report(&f, &r).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].delta, 0.0);
        assert!(inflation_report(&r, &f).is_err());
    }

    #[test]
    fn spectrum_gap_table_values() {
        assert_abs_diff_eq!(spectrum_gap(0.759, 0.907).unwrap(), 14.8, epsilon = 0.05);
        assert_abs_diff_eq!(spectrum_gap(0.750, 0.905).unwrap(), 15.5, epsilon = 0.05);
        assert_abs_diff_eq!(spectrum_gap(0.747, 0.901).unwrap(), 15.4, epsilon = 0.05);
        assert_eq!(spectrum_gap(0.8, 0.8).unwrap(), 0.0);
        assert!(spectrum_gap(1.2, 0.5).is_err());
    }
}
