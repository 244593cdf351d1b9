mod support;

use nfseg_core::cluster;
use nfseg_core::metrics;
use proptest::prelude::*;

#[test]
fn metric_checks() {
    let summary = support::metric_validation().unwrap();
    println!("{summary}");
}

#[test]
fn hand_cases_and_symmetry() {
    for (p, t, v) in support::ari_cases() {
        let a = metrics::ari(&t, &p).unwrap();
        assert!((a - v).abs() < 1e-12, "{a} vs {v}");
    }
}

#[test]
fn psnr_of_uniform_offset() {
    let a = vec![0.5; 300];
    let b = vec![0.6; 300];
    assert!((metrics::psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(metrics::psnr(&a, &a).unwrap(), metrics::PSNR_CAP);
}

#[test]
fn best_mapping_handles_swapped_labels() {
    let truth = [0, 0, 1, 1, 2, 2];
    let pred = [2, 2, 0, 0, 1, 1];
    let (map, ious) = metrics::best_mapping_iou(&pred, &truth, 3, &[0, 1, 2]).unwrap();
    assert_eq!(map, [1, 2, 0]);
    assert_eq!(ious, [1.0, 1.0, 1.0]);
}

proptest! {
    #[test]
    fn ari_is_bounded_and_one_on_self(labels in prop::collection::vec(0u32..5, 2..120), other in prop::collection::vec(0u32..5, 120)) {
        let other = &other[..labels.len()];
        prop_assert_eq!(metrics::ari(&labels, &labels).unwrap(), 1.0);
        let a = metrics::ari(&labels, other).unwrap();
        prop_assert!(a <= 1.0 + 1e-12 && a >= -1.0 - 1e-12);
    }

    #[test]
    fn kmeans_inertia_never_increases(
        pts in prop::collection::vec(-5.0f64..5.0, 60..200),
        k in 2usize..5,
        seed in 0u64..1000,
    ) {
        let n = pts.len() / 2 * 2;
        let model = cluster::fit_kmeans(&pts[..n], 2, k, seed, cluster::DEFAULT_MAX_ITER, cluster::DEFAULT_TOL).unwrap();
        for w in model.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        let again = cluster::fit_kmeans(&pts[..n], 2, k, seed, cluster::DEFAULT_MAX_ITER, cluster::DEFAULT_TOL).unwrap();
        prop_assert_eq!(model, again);
    }

    #[test]
    fn perfect_prediction_scores_one(truth in prop::collection::vec(0u32..3, 10..80)) {
        let (_, ious) = metrics::best_mapping_iou(&truth, &truth, 3, &[0, 1, 2]).unwrap();
        prop_assert!(ious.iter().all(|&v| v == 1.0));
    }
}
