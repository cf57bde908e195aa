mod common;

use common::*;
use dpf::metrics::{acc_relaxed, acc_strict, chamfer_metric, epe, FlowField};
use dpf::optim::{AdamState, ParamGroup, PlateauSchedule};
use dpf::Vec3;
use proptest::prelude::*;

fn trajectory(init: &[f64], grads: &[Vec<f64>], lr: f64) -> Vec<u64> {
    let mut values = init.to_vec();
    let mut adam = AdamState::new(&[values.len()], lr).unwrap();
    for g in grads {
        adam.step(&mut [ParamGroup {
            name: "p",
            values: &mut values,
            grad: g,
        }])
        .unwrap();
    }
    values.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adam_is_deterministic(
        init in prop::collection::vec(-1.0f64..1.0, 5),
        grads in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 5), 1..30),
        lr in 1e-5f64..1e-1,
    ) {
        prop_assert_eq!(trajectory(&init, &grads, lr), trajectory(&init, &grads, lr));
    }

    #[test]
    fn plateau_lr_never_increases(
        losses in prop::collection::vec(0.0f64..10.0, 1..400),
        patience in 1usize..20,
        factor in 0.01f64..0.99,
    ) {
        let mut s = PlateauSchedule::new(1e-2);
        s.patience = patience;
        s.factor = factor;
        s.min_lr = 1e-6;
        let mut last = s.lr();
        for l in losses {
            let lr = s.update(l).unwrap();
            prop_assert!(lr <= last);
            prop_assert!(lr >= s.min_lr);
            last = lr;
        }
    }

    #[test]
    fn strict_never_exceeds_relaxed(
        gt in prop::collection::vec(vec3(1.0), 1..200),
        noise in prop::collection::vec(vec3(0.1), 200),
    ) {
        let pred: Vec<Vec3> = gt.iter().zip(&noise).map(|(g, e)| g + e).collect();
        let flow = FlowField::new(pred, gt).unwrap();
        prop_assert!(acc_strict(&flow).unwrap() <= acc_relaxed(&flow).unwrap());
    }

    #[test]
    fn epe_invariant_under_common_rotation(
        gt in prop::collection::vec(vec3(1.0), 1..200),
        noise in prop::collection::vec(vec3(0.1), 200),
        r in rotation(),
    ) {
        let pred: Vec<Vec3> = gt.iter().zip(&noise).map(|(g, e)| g + e).collect();
        let a = epe(&FlowField::new(pred.clone(), gt.clone()).unwrap()).unwrap();
        let rot = |v: &[Vec3]| v.iter().map(|p| r * p).collect::<Vec<_>>();
        let b = epe(&FlowField::new(rot(&pred), rot(&gt)).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn chamfer_metric_invariant_under_rigid_motion(x in points(1, 100), y in points(1, 100), r in rotation(), t in vec3(2.0)) {
        let m = |v: &[Vec3]| v.iter().map(|p| r * p + t).collect::<Vec<_>>();
        let a = chamfer_metric(&x, &y).unwrap();
        let b = chamfer_metric(&m(&x), &m(&y)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * 1e4);
    }
}
