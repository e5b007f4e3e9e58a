use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use semidistill::eval::{
    chi_square_sf, compare_models, evaluate, format_p_value, stuart_maxwell,
    stuart_maxwell_dropping, PairedTable, SquareTable,
};
use semidistill::model::softmax;

fn paired(rows: &[Vec<u64>]) -> PairedTable {
    PairedTable(SquareTable::from_rows(rows).unwrap())
}

/// Chi-square upper tails `(x, dof, p)` computed with mpmath at 50 digits.
const ORACLE: [(f64, u32, f64); 28] = [
    (0.5, 1, 0.479_500_122_186_953_5),
    (1.0, 1, 0.317_310_507_862_914_1),
    (3.84, 1, 0.050_043_521_248_705_103),
    (10.0, 1, 0.001_565_402_258_002_549_7),
    (25.0, 1, 5.733_031_437_583_878e-7),
    (0.1, 2, 0.951_229_424_500_714),
    (5.0, 3, 0.171_797_144_296_733_14),
    (7.0, 4, 0.135_888_225_400_433_25),
    (2.0, 5, 0.849_145_036_084_609_6),
    (15.0, 7, 0.035_999_404_763_428_78),
    (16.919, 9, 0.049_999_640_848_349_79),
    (30.0, 9, 0.000_438_721_770_979_479_5),
    (60.0, 9, 1.340_678_048_395_961_3e-9),
    (4.0, 10, 0.947_346_982_656_288_8),
    (9.0, 19, 0.973_479_395_146_533_2),
    (30.14, 19, 0.050_043_527_691_035_98),
    (50.0, 19, 0.000_131_061_164_793_162_95),
    (80.0, 19, 1.859_625_502_985_850_8e-9),
    (100.0, 30, 1.856_802_336_510_238_6e-9),
    (40.0, 50, 0.843_227_378_173_762_3),
    (0.001, 3, 0.999_991_592_080_941_9),
    (70.0, 20, 1.821_370_039_572_106_2e-7),
    (48.0, 1, 4.262_191_597_843_645e-12),
    (60.0, 4, 2.900_863_120_340_454e-12),
    (75.0, 9, 1.580_297_586_787_334e-12),
    (90.0, 19, 3.317_163_764_139_378e-11),
    (130.0, 40, 1.894_985_769_855_435_2e-11),
    (200.0, 100, 1.178_450_072_097_942_2e-8),
];

#[test]
fn chi_square_matches_oracle() {
    for (x, dof, p) in ORACLE {
        let tail = chi_square_sf(x, dof).unwrap();
        assert_relative_eq!(tail.p_value, p, max_relative = 1e-10);
        assert!(!tail.underflow);
        assert_relative_eq!(tail.ln_p_value, p.ln(), max_relative = 1e-10);
    }
}

#[test]
fn huge_statistic_underflows_but_keeps_log() {
    // p(2185.71, 9) = 8.9088e-466 from the same oracle.
    let tail = chi_square_sf(2185.71, 9).unwrap();
    assert!(tail.underflow);
    assert_eq!(tail.p_value, 0.0);
    assert_relative_eq!(
        tail.ln_p_value,
        -1_070.817_610_895_339_5,
        max_relative = 1e-10
    );
    assert_eq!(format_p_value(Some(tail.p_value)), "< 2.2e-16");
}

#[test]
fn softmax_matches_oracle() {
    let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
    let expected = [
        0.090_030_573_170_380_46,
        0.244_728_471_054_797_65,
        0.665_240_955_774_821_9,
    ];
    for (a, b) in p.probs().iter().zip(expected) {
        assert_relative_eq!(*a, b, max_relative = 1e-14);
    }
}

/// Statistic straight from the definition, inverting with nalgebra.
fn reference_statistic(rows: &[Vec<u64>], drop: usize) -> f64 {
    let k = rows.len();
    let keep: Vec<usize> = (0..k).filter(|&i| i != drop).collect();
    let row = |i: usize| rows[i].iter().sum::<u64>() as f64;
    let col = |j: usize| rows.iter().map(|r| r[j]).sum::<u64>() as f64;
    let d = DVector::from_iterator(keep.len(), keep.iter().map(|&i| row(i) - col(i)));
    let s = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
        let (i, j) = (keep[a], keep[b]);
        if i == j {
            row(i) + col(i) - 2.0 * rows[i][i] as f64
        } else {
            -((rows[i][j] + rows[j][i]) as f64)
        }
    });
    let inv = s.try_inverse().expect("invertible");
    (d.transpose() * inv * d)[(0, 0)]
}

fn dense_table(k: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    proptest::collection::vec(proptest::collection::vec(1u64..40, k), k)
}

proptest! {
    #[test]
    fn two_by_two_is_mcnemar(a in 0u64..200, b in 0u64..200, c in 0u64..200, d in 0u64..200) {
        prop_assume!(b + c > 0);
        let r = stuart_maxwell(&paired(&[vec![a, b], vec![c, d]])).unwrap();
        let expected = (b as f64 - c as f64).powi(2) / (b + c) as f64;
        prop_assert!((r.statistic - expected).abs() <= 1e-12 * expected.max(1.0));
        prop_assert_eq!(r.dof, 1);
    }

    #[test]
    fn agrees_with_direct_inverse_for_any_dropped_category(rows in (3usize..=5).prop_flat_map(dense_table)) {
        let t = paired(&rows);
        let base = stuart_maxwell(&t).unwrap();
        prop_assert_eq!(base.dof as usize, rows.len() - 1);
        for drop in 0..rows.len() {
            let ours = stuart_maxwell_dropping(&t, Some(drop)).unwrap().statistic;
            let reference = reference_statistic(&rows, drop);
            prop_assert!((ours - reference).abs() <= 1e-9 * reference.max(1.0), "{} vs {}", ours, reference);
            prop_assert!((ours - base.statistic).abs() <= 1e-9 * base.statistic.max(1.0));
        }
    }

    #[test]
    fn swapping_raters_keeps_the_result(rows in (2usize..=5).prop_flat_map(dense_table)) {
        let t = paired(&rows);
        let swapped = PairedTable(t.0.transpose());
        let a = stuart_maxwell(&t).unwrap();
        let b = stuart_maxwell(&swapped).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() <= 1e-9 * a.statistic.max(1.0));
        prop_assert_eq!(a.dof, b.dof);
    }

    #[test]
    fn symmetric_tables_are_homogeneous(rows in (2usize..=6).prop_flat_map(dense_table)) {
        let k = rows.len();
        let sym: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| rows[i.min(j)][i.max(j)]).collect()).collect();
        let r = stuart_maxwell(&paired(&sym)).unwrap();
        prop_assert_eq!(r.statistic, 0.0);
        prop_assert_eq!(r.p_value, Some(1.0));
    }

    #[test]
    fn tail_decreases_in_x_and_increases_in_dof(x in 0.0f64..300.0, dx in 0.001f64..50.0, dof in 1u32..60) {
        let p = chi_square_sf(x, dof).unwrap().ln_p_value;
        prop_assert!(chi_square_sf(x + dx, dof).unwrap().ln_p_value <= p);
        prop_assert!(chi_square_sf(x, dof + 1).unwrap().ln_p_value >= p);
        prop_assert!(p <= 0.0);
    }

    #[test]
    fn comparing_a_model_with_itself_is_null(preds in proptest::collection::vec(0usize..4, 1..60)) {
        let golds: Vec<usize> = preds.iter().map(|p| (p + 1) % 4).collect();
        let c = compare_models(&preds, &preds, &golds, 4).unwrap();
        prop_assert_eq!(c.test.statistic, 0.0);
        prop_assert_eq!(c.test.p_value, Some(1.0));
        prop_assert_eq!(c.metrics_a, c.metrics_b);
    }

    #[test]
    fn statistic_is_nonnegative(rows in (2usize..=6).prop_flat_map(|k| {
        proptest::collection::vec(proptest::collection::vec(0u64..30, k), k)
    })) {
        let r = stuart_maxwell(&paired(&rows)).unwrap();
        if !r.degenerate {
            prop_assert!(r.statistic >= 0.0);
            prop_assert!(r.p_value.is_some_and(|p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn balanced_supports_make_weighted_equal_macro(
        k in 2usize..6,
        per_class in 1usize..20,
        seed_preds in proptest::collection::vec(0usize..6, 120),
    ) {
        let golds: Vec<usize> = (0..k * per_class).map(|i| i % k).collect();
        let preds: Vec<usize> = golds.iter().zip(&seed_preds).map(|(_, p)| p % k).collect();
        let m = evaluate(&preds, &golds, k).unwrap();
        prop_assert!((m.weighted_f1 - m.macro_f1).abs() <= 1e-12);
    }
}
