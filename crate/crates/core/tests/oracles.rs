mod support;

use nfseg_core::correspond::{self, VolumeKind, NORM_EPS};
use nfseg_core::render;
use proptest::prelude::*;

#[test]
fn brute_force_oracles_agree() {
    let summary = support::oracle_equivalence(120).unwrap();
    println!("{summary}");
}

proptest! {
    #[test]
    fn weights_match_product_form(
        sd in prop::collection::vec((0.0f64..50.0, 1e-3f64..1.0), 1..40)
    ) {
        let (sigma, delta): (Vec<f64>, Vec<f64>) = sd.into_iter().unzip();
        let (w, _) = render::weights(&sigma, &delta).unwrap();
        let (ow, t_end) = support::oracle_weights(&sigma, &delta);
        for (a, b) in w.iter().zip(&ow) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let acc: f64 = w.iter().sum();
        prop_assert!((acc + t_end - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn cosine_volume_is_symmetric_under_swap(
        a in prop::collection::vec(-1.0f64..1.0, 12),
        b in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let ab = correspond::cosine_volume(&a, &b, 4, NORM_EPS, VolumeKind::Appearance).unwrap();
        let ba = correspond::cosine_volume(&b, &a, 4, NORM_EPS, VolumeKind::Appearance).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                prop_assert!((ab.get(i, j) - ba.get(j, i)).abs() <= 1e-15);
                prop_assert!(ab.get(i, j).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn geometry_volume_peaks_on_coincident_points(
        g in prop::collection::vec(-2.0f64..2.0, 9),
        eps in 1e-3f64..0.5,
    ) {
        let v = correspond::geometry_volume(&g, &g, eps).unwrap();
        for i in 0..3 {
            prop_assert!((v.get(i, i) - 3.0 / eps).abs() <= 1e-9 / eps);
            for j in 0..3 {
                prop_assert!(v.get(i, j) <= v.get(i, i) + 1e-9);
                prop_assert!(v.get(i, j) == v.get(j, i));
            }
        }
    }
}
