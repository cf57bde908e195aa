mod common;

use common::*;
use dpf::field::init_field;
use dpf::losses::{chamfer_distance, chamfer_loss, iso_loss, keypoint_loss, CorrespondenceSet, NeighborLists};
use dpf::{PointSet, Vec3};
use proptest::prelude::*;

fn distinct(pts: &[Vec3]) -> bool {
    pts.iter().enumerate().any(|(i, p)| pts[..i].iter().any(|q| (p - q).norm() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric(x in points(1, 80), y in points(1, 80)) {
        prop_assert_eq!(chamfer_distance(&x, &y).unwrap(), chamfer_distance(&y, &x).unwrap());
    }

    #[test]
    fn chamfer_zero_on_permuted_copy(x in points(1, 80), shift in 0usize..80) {
        let mut y = x.clone();
        let n = y.len();
        y.rotate_left(shift % n);
        prop_assert_eq!(chamfer_distance(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_positive_on_different_sets(x in points(1, 40), d in vec3(1.0)) {
        prop_assume!(d.norm() > 1e-3);
        let y: Vec<Vec3> = x.iter().map(|p| p + d).collect();
        prop_assert!(chamfer_distance(&x, &y).unwrap() > 0.0);
    }

    #[test]
    fn chamfer_rigid_invariance(x in points(1, 80), y in points(1, 80), r in rotation(), t in vec3(3.0)) {
        let m = |v: &[Vec3]| v.iter().map(|p| r * p + t).collect::<Vec<_>>();
        let a = chamfer_distance(&x, &y).unwrap();
        let b = chamfer_distance(&m(&x), &m(&y)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn normal_term_is_orientation_agnostic(x in points(1, 50), ns in prop::collection::vec(unit(), 50)) {
        let n = &ns[..x.len()];
        let a = PointSet::new(x.clone(), n.to_vec()).unwrap();
        let flipped = PointSet::new(x.clone(), n.iter().map(|v| -v).collect()).unwrap();
        let (_, term) = chamfer_loss(&a, &flipped).unwrap();
        prop_assert!(term.abs() < 1e-12);
    }

    #[test]
    fn iso_zero_for_rigid_positive_for_scaling(x in points(2, 60), r in rotation(), t in vec3(3.0), s in 0.2f64..3.0) {
        prop_assume!(distinct(&x));
        prop_assume!((s - 1.0).abs() > 1e-3);
        let k = 5.min(x.len() - 1);
        let nb = NeighborLists::build(&x, k).unwrap();
        let moved: Vec<Vec3> = x.iter().map(|p| r * p + t).collect();
        prop_assert!(iso_loss(&x, &moved, &nb).unwrap() < 1e-10);
        let scaled: Vec<Vec3> = x.iter().map(|p| p * s).collect();
        prop_assert!(iso_loss(&x, &scaled, &nb).unwrap() > 0.0);
    }

    #[test]
    fn keypoint_loss_of_identity_is_mean_l1(pairs in prop::collection::vec((vec3(1.0), vec3(1.0)), 1..40)) {
        let corr = CorrespondenceSet::new(pairs.clone()).unwrap();
        let field = init_field(1, 30.0).unwrap();
        let mut sum = 0.0;
        for (a, b) in &pairs {
            sum += (b.x - a.x).abs() + (b.y - a.y).abs() + (b.z - a.z).abs();
        }
        let expected = sum / pairs.len() as f64;
        prop_assert!((keypoint_loss(&field, &corr).unwrap() - expected).abs() <= 1e-15 * (1.0 + expected));
    }
}
