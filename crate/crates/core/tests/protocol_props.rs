use fixthresh_core::metrics::{best_accuracy, ScoreSet};
use fixthresh_core::protocol::{
    evaluate_fixed, evaluate_retuned, inflation_report, select_operating_points, ConditionScores, OperatingPointName,
};
use fixthresh_core::transforms::{Condition, ConditionGrid};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:03}")).collect()
}

fn set(scores: Vec<f64>, labels: &[bool]) -> ScoreSet {
    ScoreSet::with_ids(scores, labels.to_vec(), ids(labels.len())).unwrap()
}

/// Clean validation cleanly separated at 0.7; the degraded test condition
/// shifts every score down by 0.3.
fn shift_fixture() -> (ScoreSet, ConditionScores) {
    let labels = [false, false, false, true, true, true];
    let val = set(vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9], &labels);
    let test = ConditionScores::new(vec![
        (Condition::Clean, set(vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9], &labels)),
        (Condition::Jpeg { quality: 60 }, set(vec![0.0, 0.05, 0.1, 0.4, 0.5, 0.6], &labels)),
    ])
    .unwrap();
    (val, test)
}

#[test]
fn shift_fixture_inflation_is_hand_computed_gap() {
    let (val, test) = shift_fixture();
    let ops = select_operating_points(&val, "val").unwrap();
    assert_eq!(ops.get(OperatingPointName::RocOptimal).threshold, 0.7);
    let fixed = evaluate_fixed("m", &test, &ops).unwrap();
    let retuned = evaluate_retuned("m", &test).unwrap();
    let report = inflation_report(&fixed, &retuned).unwrap();
    let q60 = report.rows.iter().find(|r| r.condition == Condition::Jpeg { quality: 60 }).unwrap();
    // Fixed: every item falls below 0.7, so 3 of 6 are right. Retuned at 0.4: 6 of 6.
    assert_eq!(q60.fixed_accuracy, 0.5);
    assert_eq!(q60.retuned_accuracy, 1.0);
    assert_eq!(q60.delta, 0.5);
    let clean = report.rows.iter().find(|r| r.condition == Condition::Clean).unwrap();
    assert_eq!(clean.delta, 0.0);
}

fn labels_and_grid() -> impl Strategy<Value = (Vec<bool>, Vec<Vec<f64>>)> {
    (4usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n).prop_map(|mut l| {
                l[0] = true;
                l[1] = false;
                l
            }),
            prop::collection::vec(prop::collection::vec((0u8..20).prop_map(|k| k as f64 / 19.0), n), 3),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn retuned_never_below_fixed((labels, scores) in labels_and_grid()) {
        let conds = [Condition::Clean, Condition::Jpeg { quality: 60 }, Condition::Blur { sigma: 3.0 }];
        let entries = conds.iter().zip(&scores).map(|(c, s)| (*c, set(s.clone(), &labels))).collect();
        let cs = ConditionScores::new(entries).unwrap();
        let ops = select_operating_points(cs.clean(), "val").unwrap();
        let fixed = evaluate_fixed("m", &cs, &ops).unwrap();
        let retuned = evaluate_retuned("m", &cs).unwrap();
        for r in inflation_report(&fixed, &retuned).unwrap().rows {
            prop_assert!(r.delta >= 0.0);
            prop_assert!(r.retuned_accuracy >= r.fixed_accuracy);
        }
        for (c, s) in cs.iter() {
            let row = fixed.row("m", c, OperatingPointName::RocOptimal).unwrap();
            prop_assert!(best_accuracy(s).1 >= row.metrics.accuracy);
        }
    }

    #[test]
    fn poisoned_degraded_scores_leave_thresholds_bit_identical(
        (labels, scores) in labels_and_grid(),
        poison in prop::collection::vec(-1e6f64..1e6, 60),
    ) {
        let val = set(scores[0].clone(), &labels);
        let degraded = set(scores[1].clone(), &labels);
        let poisoned = set(poison[..labels.len()].to_vec(), &labels);
        let grid = [Condition::Clean, Condition::Jpeg { quality: 60 }];
        let a = ConditionScores::new(vec![(grid[0], set(scores[2].clone(), &labels)), (grid[1], degraded)]).unwrap();
        let b = ConditionScores::new(vec![(grid[0], set(scores[2].clone(), &labels)), (grid[1], poisoned)]).unwrap();
        let ops = select_operating_points(&val, "val").unwrap();
        let fa = evaluate_fixed("m", &a, &ops).unwrap();
        let fb = evaluate_fixed("m", &b, &ops).unwrap();
        for op in OperatingPointName::ALL {
            for c in &grid {
                let ta = fa.row("m", c, op).unwrap().threshold;
                let tb = fb.row("m", c, op).unwrap().threshold;
                prop_assert_eq!(ta.to_bits(), tb.to_bits());
                prop_assert_eq!(ta.to_bits(), ops.get(op).threshold.to_bits());
            }
        }
    }
}

#[test]
fn default_grid_has_ten_conditions_in_order() {
    let names: Vec<String> = ConditionGrid::standard().iter().map(|c| c.to_string()).collect();
    assert_eq!(
        names,
        [
            "clean", "jpeg_q95", "jpeg_q85", "jpeg_q75", "jpeg_q60", "blur_s3", "blur_s5", "blur_s7",
            "downscale_0.75", "downscale_0.5"
        ]
    );
}
