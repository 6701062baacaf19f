mod common;

use bdgnet::bdm::BinaryMask;
use bdgnet::metrics::*;
use common::metric_oracles::{oracle_em, oracle_sm, oracle_wfm, random_case};
use proptest::prelude::*;

const TOL: f64 = 1e-6;

#[test]
fn structural_metrics_match_direct_transcriptions() {
    for seed in 0..24 {
        let (pred, gt) = random_case(seed, 16, 16);
        let fbw = f_beta_weighted(&pred, &gt).unwrap().unwrap();
        assert!((fbw - oracle_wfm(&pred, &gt)).abs() < TOL, "fbw seed {seed}: {fbw} vs {}", oracle_wfm(&pred, &gt));
        let sm = s_measure(&pred, &gt).unwrap();
        assert!((sm - oracle_sm(&pred, &gt)).abs() < TOL, "sm seed {seed}: {sm} vs {}", oracle_sm(&pred, &gt));
        let em = e_measure_max(&pred, &gt).unwrap();
        assert!((em - oracle_em(&pred, &gt)).abs() < TOL, "em seed {seed}: {em} vs {}", oracle_em(&pred, &gt));
    }
}

#[test]
fn eight_by_eight_square_cases() {
    let gt = BinaryMask::from_fn(8, 8, |r, c| (2..6).contains(&r) && (2..6).contains(&c));
    let soft = PredictionMap::from_fn(8, 8, |r, c| if (2..6).contains(&r) && (1..5).contains(&c) { 0.8 } else { 0.1 }).unwrap();
    assert!((f_beta_weighted(&soft, &gt).unwrap().unwrap() - oracle_wfm(&soft, &gt)).abs() < TOL);
    let inverse = PredictionMap::from_fn(8, 8, |r, c| if gt.get(r, c) { 0.0 } else { 1.0 }).unwrap();
    assert!((e_measure_max(&inverse, &gt).unwrap() - oracle_em(&inverse, &gt)).abs() < TOL);
}

#[test]
fn degenerate_ground_truths() {
    let empty = BinaryMask::zeros(6, 6);
    let full = BinaryMask::from_fn(6, 6, |_, _| true);
    let zeros = PredictionMap::from_fn(6, 6, |_, _| 0.0).unwrap();
    let quarter = PredictionMap::from_fn(6, 6, |_, _| 0.25).unwrap();
    assert_eq!(s_measure(&zeros, &empty).unwrap(), 1.0);
    assert!((s_measure(&quarter, &empty).unwrap() - 0.75).abs() < 1e-12);
    assert!((s_measure(&quarter, &full).unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(f_beta_weighted(&quarter, &empty).unwrap(), None);
    let row = evaluate_pair("e", &quarter, &empty, DEFAULT_THRESHOLD).unwrap();
    assert!(row.flagged && row.fbw == 0.0);
    for (p, g) in [(&zeros, &empty), (&quarter, &empty), (&quarter, &full)] {
        assert!((e_measure_max(p, g).unwrap() - oracle_em(p, g)).abs() < TOL);
    }
    assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
    assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
}

#[test]
fn perfect_and_inverse_predictions() {
    let (_, gt) = random_case(7, 16, 16);
    let exact = PredictionMap::from_mask(&gt);
    let row = evaluate_pair("x", &exact, &gt, DEFAULT_THRESHOLD).unwrap();
    for v in [row.dice, row.iou, row.fbw, row.emeasure] {
        assert!((v - 1.0).abs() < TOL, "{row:?}");
    }
    assert!((row.smeasure - 1.0).abs() < TOL, "{row:?}");
    assert_eq!(row.mae, 0.0);
    // Away from the image border the smoothed error of an inverted map stays at 1.
    let interior = BinaryMask::from_fn(16, 16, |r, c| (5..11).contains(&r) && (4..12).contains(&c));
    let inverted = PredictionMap::from_fn(16, 16, |r, c| if interior.get(r, c) { 0.0 } else { 1.0 }).unwrap();
    assert!(f_beta_weighted(&inverted, &interior).unwrap().unwrap() < 1e-9);
    let inverse = PredictionMap::from_fn(16, 16, |r, c| if gt.get(r, c) { 0.0 } else { 1.0 }).unwrap();
    assert_eq!(mae(&inverse, &gt).unwrap(), 1.0);
    let half = PredictionMap::from_fn(16, 16, |_, _| 0.5).unwrap();
    assert!((mae(&half, &gt).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn counting_example_and_binarize() {
    let gt = BinaryMask::from_fn(1, 6, |_, c| c < 4);
    let p = BinaryMask::from_fn(1, 6, |_, c| c < 2);
    assert!((dice(&p, &gt).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((iou(&p, &gt).unwrap() - 0.5).abs() < 1e-15);
    let disjoint = BinaryMask::from_fn(1, 6, |_, c| c >= 4);
    assert_eq!((dice(&disjoint, &gt).unwrap(), iou(&disjoint, &gt).unwrap()), (0.0, 0.0));
    let pred = PredictionMap::from_fn(3, 3, |r, c| (r * 3 + c) as f64 / 8.0).unwrap();
    assert_eq!(binarize(&pred, 0.0).count_ones(), 9);
    assert_eq!(binarize(&pred, 1.5).count_ones(), 0);
    assert_eq!(binarize(&PredictionMap::from_mask(&gt), 0.5), gt);
}

#[test]
fn dataset_report_means_and_csv() {
    let gt = BinaryMask::from_fn(4, 4, |r, _| r < 2);
    let good = PredictionMap::from_mask(&gt);
    let bad = PredictionMap::from_fn(4, 4, |r, _| if r < 2 { 0.0 } else { 1.0 }).unwrap();
    let pairs = vec![("a".to_string(), good.clone(), gt.clone()), ("b".to_string(), bad, gt.clone())];
    let report = evaluate_dataset(&pairs, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(report.means[0], 0.5);
    let mut swapped = pairs.clone();
    swapped.reverse();
    assert_eq!(evaluate_dataset(&swapped, DEFAULT_THRESHOLD).unwrap().means, report.means);
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[3].starts_with("mean,0.500000"));
    let single = evaluate_dataset(&pairs[..1], DEFAULT_THRESHOLD).unwrap();
    for (m, want) in single.means.iter().zip([1.0, 1.0, 1.0, 1.0, 1.0, 0.0]) {
        assert!((m - want).abs() < TOL, "{:?}", single.means);
    }
}

#[test]
fn e_measure_max_dominates_midpoint() {
    let (pred, gt) = random_case(3, 16, 16);
    let curve = e_measure_curve(&pred, &gt).unwrap();
    assert!(e_measure_max(&pred, &gt).unwrap() >= curve[128]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identities_and_ranges(seed in 0u64..10_000) {
        let (pred, gt) = random_case(seed, 12, 12);
        let row = evaluate_pair("p", &pred, &gt, DEFAULT_THRESHOLD).unwrap();
        prop_assert!((row.dice - 2.0 * row.iou / (1.0 + row.iou)).abs() < 1e-12);
        for v in row.values() {
            prop_assert!((0.0..=1.0).contains(&v), "{:?}", row);
        }
        let flipped = evaluate_pair("p", &pred.flip_horizontal(), &gt.flip_horizontal(), DEFAULT_THRESHOLD).unwrap();
        prop_assert!((row.dice - flipped.dice).abs() < 1e-12);
        prop_assert!((row.iou - flipped.iou).abs() < 1e-12);
        prop_assert!((row.mae - flipped.mae).abs() < 1e-12);
    }
}
