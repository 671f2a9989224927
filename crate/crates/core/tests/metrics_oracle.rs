//! Metrics against brute-force oracles: pair counting for AUROC and an
//! exhaustive threshold sweep for the three selectors.

use fixthresh_core::metrics::{
    auroc, best_accuracy, confusion_at, threshold_best_f1, threshold_low_fpr, threshold_youden, ScoreSet,
};
use proptest::prelude::*;

fn pair_count_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            n += 1;
            continue;
        }
        p += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * p * n) as f64
}

struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
    n_pos: u64,
    n_neg: u64,
}

fn count(scores: &[f64], labels: &[bool], tau: f64) -> Counts {
    let mut c = Counts { tp: 0, fp: 0, fn_: 0, n_pos: 0, n_neg: 0 };
    for (&s, &l) in scores.iter().zip(labels) {
        let ai = s >= tau;
        match (l, ai) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            _ => {}
        }
        if l {
            c.n_pos += 1;
        } else {
            c.n_neg += 1;
        }
    }
    c
}

/// Every distinct score plus one value above the maximum, largest first.
fn candidates(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    let top = v[0];
    v.insert(0, top.next_up());
    v
}

/// Lexicographic argmax over candidates; a later (smaller) threshold wins ties.
fn sweep_best<K: PartialOrd>(cands: &[f64], key: impl Fn(f64) -> Option<K>) -> f64 {
    let mut best: Option<(f64, K)> = None;
    for &t in cands {
        if let Some(k) = key(t) {
            if best.as_ref().is_none_or(|(_, b)| !(k < *b)) {
                best = Some((t, k));
            }
        }
    }
    best.unwrap().0
}

fn oracle_low_fpr(scores: &[f64], labels: &[bool]) -> f64 {
    sweep_best(&candidates(scores), |t| {
        let c = count(scores, labels, t);
        (c.fp as f64 / c.n_neg as f64 <= 0.01).then_some(c.tp)
    })
}

fn oracle_youden(scores: &[f64], labels: &[bool]) -> f64 {
    sweep_best(&candidates(scores), |t| {
        let c = count(scores, labels, t);
        Some((c.tp as i128 * c.n_neg as i128 - c.fp as i128 * c.n_pos as i128, c.tp))
    })
}

fn oracle_f1(scores: &[f64], labels: &[bool]) -> f64 {
    // Compare 2tp/(2tp+fp+fn) by cross-multiplying with the best so far.
    let cands = candidates(scores);
    let mut best: Option<(f64, u64, u64, u64)> = None;
    for &t in &cands {
        let c = count(scores, labels, t);
        let (num, den) = (2 * c.tp, (2 * c.tp + c.fp + c.fn_).max(1));
        let better = match best {
            None => true,
            Some((_, bn, bd, btp)) => {
                let (l, r) = (num as u128 * bd as u128, bn as u128 * den as u128);
                l > r || (l == r && c.tp >= btp)
            }
        };
        if better {
            best = Some((t, num, den, c.tp));
        }
    }
    best.unwrap().0
}

fn both_classes() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=200)
        .prop_flat_map(|n| {
            (
                // Few levels force plenty of duplicate scores.
                prop::collection::vec(prop_oneof![(0u8..12).prop_map(|k| k as f64 / 11.0), 0.0f64..1.0], n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(s, mut l)| {
            l[0] = true;
            l[1] = false;
            (s, l)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn auroc_matches_pair_counting((s, l) in both_classes()) {
        let set = ScoreSet::new(s.clone(), l.clone()).unwrap();
        prop_assert!((auroc(&set).unwrap() - pair_count_auroc(&s, &l)).abs() <= 1e-12);
    }

    #[test]
    fn selectors_match_exhaustive_sweep((s, l) in both_classes()) {
        let set = ScoreSet::new(s.clone(), l.clone()).unwrap();
        prop_assert_eq!(threshold_low_fpr(&set, 0.01).unwrap(), oracle_low_fpr(&s, &l));
        prop_assert_eq!(threshold_youden(&set).unwrap(), oracle_youden(&s, &l));
        prop_assert_eq!(threshold_best_f1(&set).unwrap(), oracle_f1(&s, &l));
    }

    #[test]
    fn negation_flips_auroc((s, l) in both_classes()) {
        let a = auroc(&ScoreSet::new(s.clone(), l.clone()).unwrap()).unwrap();
        let neg = auroc(&ScoreSet::new(s.iter().map(|x| -x).collect(), l.clone()).unwrap()).unwrap();
        let flip = auroc(&ScoreSet::new(s, l.iter().map(|x| !x).collect()).unwrap()).unwrap();
        prop_assert!((a + neg - 1.0).abs() <= 1e-12);
        prop_assert!((a + flip - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn strictly_monotone_maps_keep_auroc_and_predictions((s, l) in both_classes()) {
        let set = ScoreSet::new(s.clone(), l.clone()).unwrap();
        let f = |x: f64| 3.0 * x * x * x + x + 7.0;
        let mapped = set.map_scores(f).unwrap();
        prop_assert_eq!(auroc(&set).unwrap(), auroc(&mapped).unwrap());
        let t = threshold_youden(&set).unwrap();
        let tm = threshold_youden(&mapped).unwrap();
        prop_assert_eq!(confusion_at(&set, t), confusion_at(&mapped, tm));
    }

    #[test]
    fn best_accuracy_dominates_any_threshold((s, l) in both_classes(), tau in -0.1f64..1.1) {
        let set = ScoreSet::new(s, l).unwrap();
        let (_, best) = best_accuracy(&set);
        let c = confusion_at(&set, tau);
        prop_assert!(best >= (c.tp + c.tn) as f64 / set.len() as f64);
    }
}

#[test]
fn micro_example() {
    let set = ScoreSet::new(vec![0.1, 0.4, 0.35, 0.8], vec![false, false, true, true]).unwrap();
    assert_eq!(auroc(&set).unwrap(), 0.75);
    assert_eq!(threshold_low_fpr(&set, 0.01).unwrap(), 0.8);
    assert_eq!(threshold_youden(&set).unwrap(), 0.35);
    assert_eq!(threshold_best_f1(&set).unwrap(), 0.35);
}
