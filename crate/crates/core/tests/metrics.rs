mod common;

use edgecyclegan::edgeops::{canny_edges, edge_f_measure, CannyParams, EdgeMap};
use edgecyclegan::eval::{confusion, dice_score, median, precision_recall, segmentation_report};
use edgecyclegan::SegMask;
use proptest::prelude::*;

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = SegMask> {
    prop::collection::vec(0u8..2, h * w).prop_map(move |v| SegMask::new(h, w, v).unwrap())
}

fn pair() -> impl Strategy<Value = (SegMask, SegMask)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| (mask_strategy(h, w), mask_strategy(h, w)))
}

/// Dice straight from the set definition, in u64 arithmetic.
fn dice_by_sets(p: &SegMask, g: &SegMask) -> f64 {
    let inter = p.data().iter().zip(g.data()).filter(|(a, b)| **a == 1 && **b == 1).count();
    let (np, ng) = (p.count_ones(), g.count_ones());
    if np + ng == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + ng) as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dice_is_harmonic_mean_of_precision_and_recall((p, g) in pair()) {
        let d = dice_score(&p, &g, None).unwrap();
        let (pr, rc) = precision_recall(&p, &g, None).unwrap();
        prop_assume!(pr + rc > 0.0);
        prop_assert!((d - 2.0 * pr * rc / (pr + rc)).abs() <= 1e-12);
    }

    #[test]
    fn dice_matches_set_definition((p, g) in pair()) {
        prop_assert_eq!(dice_score(&p, &g, None).unwrap(), dice_by_sets(&p, &g));
    }

    #[test]
    fn dice_is_symmetric_and_bounded((p, g) in pair()) {
        let d = dice_score(&p, &g, None).unwrap();
        prop_assert_eq!(d, dice_score(&g, &p, None).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dice_score(&p, &p, None).unwrap(), 1.0);
    }

    #[test]
    fn full_fov_equals_no_fov((p, g) in pair()) {
        let fov = SegMask::from_fn(p.height(), p.width(), |_, _| true).unwrap();
        prop_assert_eq!(confusion(&p, &g, Some(&fov)).unwrap(), confusion(&p, &g, None).unwrap());
    }

    #[test]
    fn pooled_confusion_is_sum((a, b) in pair(), (c, d) in pair()) {
        let pooled = confusion(&a, &b, None).unwrap().add(&confusion(&c, &d, None).unwrap());
        let ids = vec!["x".to_string(), "y".to_string()];
        let r = segmentation_report(&ids, &[a.clone(), c.clone()], &[b.clone(), d.clone()], None).unwrap();
        prop_assert!((r.aggregate.unwrap().dice - pooled.dice()).abs() < 1e-12);
    }

    #[test]
    fn edge_f_of_a_map_with_itself_is_one(bits in prop::collection::vec(0u8..2, 64)) {
        let e = EdgeMap::new(8, 8, bits).unwrap();
        prop_assert_eq!(edge_f_measure(&e, &e, 0).unwrap(), 1.0);
    }

    #[test]
    fn edge_f_is_symmetric_and_monotone_in_tolerance(
        a in prop::collection::vec(0u8..2, 64),
        b in prop::collection::vec(0u8..2, 64),
    ) {
        let (ea, eb) = (EdgeMap::new(8, 8, a).unwrap(), EdgeMap::new(8, 8, b).unwrap());
        let f0 = edge_f_measure(&ea, &eb, 0).unwrap();
        let f1 = edge_f_measure(&ea, &eb, 1).unwrap();
        prop_assert_eq!(f1, edge_f_measure(&eb, &ea, 1).unwrap());
        prop_assert!(f1 >= f0);
    }
}

#[test]
fn half_overlap_fixture() {
    let p = SegMask::new(2, 4, vec![1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
    let g = SegMask::new(2, 4, vec![1, 1, 0, 0, 1, 1, 0, 0]).unwrap();
    assert_eq!(dice_score(&p, &g, None).unwrap(), 0.5);
}

#[test]
fn dimension_mismatch_errors() {
    let a = SegMask::zeros(2, 2).unwrap();
    let b = SegMask::zeros(2, 3).unwrap();
    assert!(dice_score(&a, &b, None).is_err());
    assert!(dice_score(&a, &a, Some(&b)).is_err());
}

#[test]
fn one_pixel_shift_matches_at_tolerance_one() {
    let a = EdgeMap::from_fn(6, 6, |_, x| x == 2);
    let b = EdgeMap::from_fn(6, 6, |_, x| x == 3);
    assert_eq!(edge_f_measure(&a, &b, 0).unwrap(), 0.0);
    assert_eq!(edge_f_measure(&a, &b, 1).unwrap(), 1.0);
}

#[test]
fn edge_f_empty_conventions() {
    let z = EdgeMap::from_fn(4, 4, |_, _| false);
    let one = EdgeMap::from_fn(4, 4, |y, x| y == 0 && x == 0);
    assert_eq!(edge_f_measure(&z, &z, 1).unwrap(), 1.0);
    assert_eq!(edge_f_measure(&z, &one, 1).unwrap(), 0.0);
}

#[test]
fn canny_of_image_and_itself_scores_one() {
    let mut r = common::rng(5);
    let img = common::random_scene(&mut r, 32, 3);
    let p = CannyParams { low: 0.02, high: 0.05, ..Default::default() };
    let e = canny_edges(&img, &p);
    assert!(!e.is_empty());
    assert_eq!(edge_f_measure(&e, &e, 1).unwrap(), 1.0);
}

#[test]
fn median_even_and_odd() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
}
