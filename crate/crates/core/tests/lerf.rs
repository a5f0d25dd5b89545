mod common;

use common::{block_labels, constant_image, planted_object, Counting, Failing};
use nas_core::gateway::{SyntheticOracle, SyntheticSpec};
use nas_core::lerf::{deletion_curve, greedy_auc_max, lerf_curve, lerf_curve_with_axis, XAxis};
use nas_core::{connected_components, Connectivity, Error, LabelMap, SaliencyMap, SuperpixelPartition};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn partition(labels: Vec<u32>, h: usize, w: usize) -> SuperpixelPartition {
    connected_components(&LabelMap::new(h, w, labels).unwrap(), Connectivity::Four)
}

/// Sixteen equal 4x4 blocks scored by the fraction of unmasked signal.
fn fraction_setup() -> (SyntheticOracle, SuperpixelPartition) {
    let labels = block_labels(4, 4, 4, 4);
    let oracle = SyntheticOracle::new(SyntheticSpec::linear_fraction(16, 16, labels.clone())).unwrap();
    (oracle, partition(labels, 16, 16))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn equal_components_give_half_area(seed in any::<u64>()) {
        let (oracle, p) = fraction_setup();
        let mut order: Vec<usize> = (0..16).collect();
        order.shuffle(&mut common::rng(seed));
        let c = deletion_curve(&constant_image(3, 16, 16, 1.0), &p, &order, &oracle, 0, XAxis::Superpixels).unwrap();
        prop_assert!((c.auc - 0.5).abs() <= 1e-9, "auc {}", c.auc);
        prop_assert_eq!(c.scaled[0], 1.0);
        prop_assert_eq!(c.scaled[16], 0.0);
    }

    #[test]
    fn deleting_the_whole_image_reaches_zero(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let labels = common::voronoi(12, 12, rng.random_range(2..7), &mut rng);
        let mut spec = SyntheticSpec::linear_fraction(12, 12, labels.clone());
        let r = spec.num_regions();
        spec.weights[0] = (0..r).map(|_| rng.random_range(0.1..2.0)).collect();
        let oracle = SyntheticOracle::new(spec).unwrap();
        let p = partition(labels, 12, 12);
        let s = SaliencyMap::from_vec(12, 12, (0..144).map(|_| rng.random()).collect()).unwrap();
        let c = lerf_curve(&constant_image(3, 12, 12, 1.0), &p, &s, &oracle, 0).unwrap();
        prop_assert_eq!(c.scores.len(), p.component_count + 1);
        prop_assert_eq!(c.scaled[0], 1.0);
        prop_assert_eq!(*c.scaled.last().unwrap(), 0.0);
        prop_assert!(!c.degenerate);
        prop_assert!(c.auc >= 0.0 && c.auc <= 1.0);
    }
}

#[test]
fn single_component_curve() {
    let labels = vec![0u32; 64];
    let oracle = SyntheticOracle::new(SyntheticSpec::linear_fraction(8, 8, labels.clone())).unwrap();
    let p = partition(labels, 8, 8);
    let s = SaliencyMap::from_vec(8, 8, vec![0.3; 64]).unwrap();
    let c = lerf_curve(&constant_image(3, 8, 8, 1.0), &p, &s, &oracle, 0).unwrap();
    assert_eq!(c.scores, vec![1.0, 0.0]);
    assert_eq!(c.scaled, vec![1.0, 0.0]);
    assert_eq!(c.auc, 0.5);
}

#[test]
fn flat_target_is_degenerate() {
    let (oracle, p) = fraction_setup();
    let s = SaliencyMap::from_vec(16, 16, vec![0.0; 256]).unwrap();
    // Class 1 has zero weight everywhere.
    let c = lerf_curve(&constant_image(3, 16, 16, 1.0), &p, &s, &oracle, 1).unwrap();
    assert!(c.degenerate);
    assert_eq!(c.scaled[0], 1.0);
    assert!(c.scaled[1..].iter().all(|&v| v == 0.0));
    assert_eq!(c.auc, 0.5 / 16.0);
}

#[test]
fn saliency_dims_must_match_partition() {
    let (oracle, p) = fraction_setup();
    let s = SaliencyMap::from_vec(8, 8, vec![0.0; 64]).unwrap();
    let err = lerf_curve(&constant_image(3, 16, 16, 1.0), &p, &s, &oracle, 0).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)));
}

#[test]
fn bad_target_and_bad_order_are_rejected() {
    let (oracle, p) = fraction_setup();
    let img = constant_image(3, 16, 16, 1.0);
    assert!(deletion_curve(&img, &p, &[0, 1, 2], &oracle, 0, XAxis::Superpixels).is_err());
    let mut dup: Vec<usize> = (0..16).collect();
    dup[3] = 2;
    assert!(deletion_curve(&img, &p, &dup, &oracle, 0, XAxis::Superpixels).is_err());
    let order: Vec<usize> = (0..16).collect();
    assert!(deletion_curve(&img, &p, &order, &oracle, 5, XAxis::Superpixels).is_err());
}

#[test]
fn pixel_axis_weights_by_component_size() {
    // Left half one component, right half split in two quarters.
    let labels: Vec<u32> = (0..64)
        .map(|i| match (i % 8 < 4, i / 8 < 4) {
            (true, _) => 0,
            (false, true) => 1,
            (false, false) => 2,
        })
        .collect();
    let oracle = SyntheticOracle::new(SyntheticSpec::linear_fraction(8, 8, labels.clone())).unwrap();
    let p = partition(labels, 8, 8);
    let s = SaliencyMap::from_vec(8, 8, (0..64).map(|i| if i % 8 < 4 { 0.0 } else { 1.0 }).collect()).unwrap();
    let img = constant_image(3, 8, 8, 1.0);
    let c = lerf_curve_with_axis(&img, &p, &s, &oracle, 0, XAxis::Pixels).unwrap();
    assert_eq!(c.fractions, vec![0.0, 0.5, 0.75, 1.0]);
    // A linear fraction oracle traces the diagonal on the pixel axis.
    assert!((c.auc - 0.5).abs() < 1e-9);
    let c = lerf_curve(&img, &p, &s, &oracle, 0).unwrap();
    assert_eq!(c.order, vec![0, 1, 2]);
    assert!((c.auc - (0.75 + 0.375 + 0.125) / 3.0).abs() < 1e-9);
}

#[test]
fn planted_object_is_deleted_last() {
    let (oracle, p, s) = planted_object(3);
    let img = constant_image(3, 16, 16, 1.0);
    let c = lerf_curve(&img, &p, &s, &oracle, 0).unwrap();
    let object = p.component_of(8 * 16 + 8);
    assert_eq!(*c.order.last().unwrap(), object);
    assert!(c.auc > 0.6, "auc {}", c.auc);
}

#[test]
fn greedy_uses_quadratic_evaluations() {
    for seed in 0..4 {
        let (oracle, p, _) = planted_object(seed);
        let counting = Counting::new(oracle);
        let n = p.component_count;
        greedy_auc_max(&constant_image(3, 16, 16, 1.0), &p, &counting, 0).unwrap();
        assert_eq!(counting.images(), n * (n + 1) / 2 + 1);
    }
}

#[test]
fn greedy_steps_keep_the_highest_score() {
    let (oracle, p, _) = planted_object(9);
    let img = constant_image(3, 16, 16, 1.0);
    let g = greedy_auc_max(&img, &p, &oracle, 0).unwrap();
    let n = p.component_count;
    let all: Vec<usize> = (0..n).collect();
    for step in 0..n {
        let prefix = &g.order[..step];
        for &c in all.iter().filter(|c| !prefix.contains(c)) {
            let mut order = prefix.to_vec();
            order.push(c);
            order.extend(all.iter().filter(|x| !order.contains(x)).copied().collect::<Vec<_>>());
            let alt = deletion_curve(&img, &p, &order, &oracle, 0, XAxis::Superpixels).unwrap();
            assert!(alt.scores[step + 1] <= g.scores[step + 1] + 1e-12);
        }
    }
}

#[test]
fn greedy_beats_saliency_order_on_planted_object() {
    for seed in 0..5 {
        let (oracle, p, s) = planted_object(seed);
        let img = constant_image(3, 16, 16, 1.0);
        let lerf = lerf_curve(&img, &p, &s, &oracle, 0).unwrap();
        let g = greedy_auc_max(&img, &p, &oracle, 0).unwrap();
        assert!(g.auc >= lerf.auc - 1e-12, "seed {seed}: {} < {}", g.auc, lerf.auc);
    }
}

#[test]
fn superpixelified_saliency_keeps_the_order() {
    let (oracle, p, s) = planted_object(5);
    let img = constant_image(3, 16, 16, 1.0);
    let a = lerf_curve(&img, &p, &s, &oracle, 0).unwrap();
    let spx = nas_core::superpixelify(&s, &p).unwrap();
    let b = lerf_curve(&img, &p, &spx, &oracle, 0).unwrap();
    assert_eq!(a.order, b.order);
    assert_eq!(a.auc, b.auc);
}

#[test]
fn oracle_failures_report_the_step() {
    let (oracle, p) = fraction_setup();
    let img = constant_image(3, 16, 16, 1.0);
    let s = SaliencyMap::from_vec(16, 16, (0..256).map(|i| i as f32).collect()).unwrap();
    // Batches of four: images 0..4 pass, the batch starting at step 4 fails.
    let failing = Failing::new(oracle, 5, 4);
    match lerf_curve(&img, &p, &s, &failing, 0).unwrap_err() {
        Error::OracleFailure { step, source } => {
            assert_eq!(step, 4);
            assert!(matches!(*source, Error::Unreachable(_)));
        }
        e => panic!("unexpected {e}"),
    }

    let (oracle, p) = fraction_setup();
    // First image plus the 16 candidates of step 1 pass; step 2 fails.
    let failing = Failing::new(oracle, 17, usize::MAX);
    match greedy_auc_max(&img, &p, &failing, 0).unwrap_err() {
        Error::OracleFailure { step, .. } => assert_eq!(step, 2),
        e => panic!("unexpected {e}"),
    }
}
