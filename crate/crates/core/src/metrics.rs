//! Score-level binary classification metrics: confusion counts at a
//! threshold, ROC/AUROC, and the three operating-point selectors.
//!
//! The decision rule everywhere is `score >= threshold` → AI-generated.
//! Candidate thresholds are the distinct observed scores plus one sentinel
//! just above the maximum score (predict nothing as AI); any threshold
//! between two adjacent scores behaves like the larger of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector scores paired with ground truth (`true` = AI-generated).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
    ids: Option<Vec<String>>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        Self::build(scores, labels, None)
    }

    pub fn with_ids(scores: Vec<f64>, labels: Vec<bool>, ids: Vec<String>) -> Result<Self> {
        Self::build(scores, labels, Some(ids))
    }

    fn build(scores: Vec<f64>, labels: Vec<bool>, ids: Option<Vec<String>>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Contract("score set must not be empty".into()));
        }
        if scores.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(ids) = &ids {
            if ids.len() != scores.len() {
                return Err(Error::Contract(format!(
                    "{} scores but {} ids",
                    scores.len(),
                    ids.len()
                )));
            }
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Contract(format!("score {i} is not finite")));
        }
        Ok(Self { scores, labels, ids })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.n_pos();
        p > 0 && p < self.len()
    }

    /// Same labels and ids, scores mapped through `f`.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::build(
            self.scores.iter().map(|&s| f(s)).collect(),
            self.labels.clone(),
            self.ids.clone(),
        )
    }

    fn require_both(&self, what: &str) -> Result<()> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(Error::MetricDomain(format!(
                "{what} needs both classes (got {} positive, {} negative)",
                self.n_pos(),
                self.n_neg()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Rates derived from [`ConfusionCounts`].
///
/// Zero denominators: precision is 1 when nothing was predicted AI and there
/// were no positives to miss, 0 when nothing was predicted AI but positives
/// existed. Recall and TNR are 0 when their class is absent; F1 is 0 when
/// precision + recall = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tnr: f64,
}

impl MetricBundle {
    pub const NAMES: [&'static str; 5] = ["accuracy", "precision", "recall", "f1", "tnr"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.tnr]
    }
}

/// One ROC vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tp: u64,
    pub fp: u64,
}

/// ROC vertices ordered by decreasing threshold, starting with the `+inf`
/// sentinel at (0, 0) and ending at (1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_pos: u64,
    pub n_neg: u64,
}

pub fn confusion_at(s: &ScoreSet, tau: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        match (score >= tau, label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metric_bundle(c: &ConfusionCounts) -> MetricBundle {
    let n = c.n();
    let precision = if c.tp + c.fp == 0 {
        if c.fn_ == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricBundle {
        accuracy: ratio(c.tp + c.tn, n),
        precision,
        recall,
        f1,
        tnr: ratio(c.tn, c.tn + c.fp),
    }
}

/// Cumulative counts at each candidate threshold, in decreasing threshold
/// order. The first entry is the sentinel (`+inf`, nothing predicted AI).
struct Sweep {
    thresholds: Vec<f64>,
    tp: Vec<u64>,
    fp: Vec<u64>,
    n_pos: u64,
    n_neg: u64,
}

impl Sweep {
    fn new(s: &ScoreSet) -> Self {
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
        let n_pos = s.n_pos() as u64;
        let n_neg = s.n_neg() as u64;
        let mut thresholds = vec![f64::INFINITY];
        let mut tp = vec![0];
        let mut fp = vec![0];
        let (mut ctp, mut cfp) = (0, 0);
        let mut i = 0;
        while i < order.len() {
            let value = s.scores[order[i]];
            while i < order.len() && s.scores[order[i]] == value {
                if s.labels[order[i]] {
                    ctp += 1;
                } else {
                    cfp += 1;
                }
                i += 1;
            }
            thresholds.push(value);
            tp.push(ctp);
            fp.push(cfp);
        }
        Self {
            thresholds,
            tp,
            fp,
            n_pos,
            n_neg,
        }
    }

    fn counts(&self, k: usize) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp[k],
            fp: self.fp[k],
            tn: self.n_neg - self.fp[k],
            fn_: self.n_pos - self.tp[k],
        }
    }

    /// Finite threshold for entry `k`; the sentinel maps to the next float
    /// above the maximum score.
    fn threshold(&self, k: usize) -> f64 {
        if k == 0 {
            self.thresholds.get(1).map_or(f64::MAX, |m| m.next_up())
        } else {
            self.thresholds[k]
        }
    }

    fn len(&self) -> usize {
        self.thresholds.len()
    }

    /// Index maximizing `key` lexicographically; later (smaller-threshold)
    /// entries win exact ties.
    fn argmax_by<K: PartialOrd>(&self, mut key: impl FnMut(usize) -> Option<K>) -> Option<usize> {
        let mut best: Option<(usize, K)> = None;
        for k in 0..self.len() {
            let Some(v) = key(k) else { continue };
            match &best {
                Some((_, b)) if v < *b => {}
                _ => best = Some((k, v)),
            }
        }
        best.map(|(k, _)| k)
    }
}

/// Threshold just above the largest score: every item is predicted real.
pub fn sentinel_threshold(s: &ScoreSet) -> f64 {
    s.scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .next_up()
}

pub fn roc_curve(s: &ScoreSet) -> Result<RocCurve> {
    s.require_both("ROC curve")?;
    let sw = Sweep::new(s);
    let points = (0..sw.len())
        .map(|k| RocPoint {
            threshold: sw.thresholds[k],
            tpr: sw.tp[k] as f64 / sw.n_pos as f64,
            fpr: sw.fp[k] as f64 / sw.n_neg as f64,
            tp: sw.tp[k],
            fp: sw.fp[k],
        })
        .collect();
    Ok(RocCurve {
        points,
        n_pos: sw.n_pos,
        n_neg: sw.n_neg,
    })
}

impl RocCurve {
    /// Trapezoidal area, accumulated on integer counts and divided once.
    pub fn area(&self) -> f64 {
        let twice: u128 = self
            .points
            .windows(2)
            .map(|w| u128::from(w[1].fp - w[0].fp) * u128::from(w[0].tp + w[1].tp))
            .sum();
        twice as f64 / (2.0 * self.n_pos as f64 * self.n_neg as f64)
    }
}

/// Area under the ROC curve; ties between a positive and a negative count
/// one half.
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    Ok(roc_curve(s)?.area())
}

/// Largest-TPR threshold whose FPR stays at or below `target_fpr`; among
/// equal TPR the smallest threshold wins.
pub fn threshold_low_fpr(s: &ScoreSet, target_fpr: f64) -> Result<f64> {
    s.require_both("low-FPR threshold")?;
    if !(0.0..1.0).contains(&target_fpr) {
        return Err(Error::Contract(format!(
            "target FPR {target_fpr} outside [0, 1)"
        )));
    }
    let sw = Sweep::new(s);
    let n_neg = sw.n_neg as f64;
    let k = sw
        .argmax_by(|k| (sw.fp[k] as f64 / n_neg <= target_fpr).then_some(sw.tp[k]))
        .expect("sentinel always satisfies the FPR bound");
    Ok(sw.threshold(k))
}

/// Threshold maximizing Youden's J = TPR - FPR; ties go to higher TPR, then
/// the smaller threshold.
pub fn threshold_youden(s: &ScoreSet) -> Result<f64> {
    s.require_both("Youden threshold")?;
    let sw = Sweep::new(s);
    let (p, n) = (sw.n_pos as i128, sw.n_neg as i128);
    // J compared exactly as tp*N - fp*P over the common denominator P*N.
    let k = sw
        .argmax_by(|k| Some((sw.tp[k] as i128 * n - sw.fp[k] as i128 * p, sw.tp[k])))
        .expect("sweep is never empty");
    Ok(sw.threshold(k))
}

/// Threshold maximizing F1; ties go to higher recall, then the smaller
/// threshold. Works with a single class present.
pub fn threshold_best_f1(s: &ScoreSet) -> Result<f64> {
    let sw = Sweep::new(s);
    let k = sw
        .argmax_by(|k| {
            // F1 = 2tp / (2tp + fp + fn), compared exactly.
            let c = sw.counts(k);
            Some((Frac(2 * c.tp, 2 * c.tp + c.fp + c.fn_), c.tp))
        })
        .expect("sweep is never empty");
    Ok(sw.threshold(k))
}

/// Non-negative fraction ordered by value; `0/0` counts as zero.
#[derive(Debug, Clone, Copy)]
struct Frac(u64, u64);

impl PartialEq for Frac {
    fn eq(&self, other: &Self) -> bool {
        self.partial_cmp(other) == Some(std::cmp::Ordering::Equal)
    }
}

impl PartialOrd for Frac {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        let d = |f: &Frac| u128::from(f.1.max(1));
        Some((u128::from(self.0) * d(other)).cmp(&(u128::from(other.0) * d(self))))
    }
}

/// Highest accuracy any single threshold reaches on `s`, with the smallest
/// threshold attaining it.
pub fn best_accuracy(s: &ScoreSet) -> (f64, f64) {
    let sw = Sweep::new(s);
    let k = sw
        .argmax_by(|k| Some(sw.tp[k] + (sw.n_neg - sw.fp[k])))
        .expect("sweep is never empty");
    let acc = (sw.tp[k] + sw.n_neg - sw.fp[k]) as f64 / s.len() as f64;
    (sw.threshold(k), acc)
}
