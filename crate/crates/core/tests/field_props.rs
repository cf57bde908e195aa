mod common;

use common::*;
use dpf::field::{init_field, DeformationField};
use dpf::Vec3;
use proptest::prelude::*;
use rand::Rng;

fn perturbed(seed: u64, amplitude: f64) -> DeformationField {
    let mut f = DeformationField::init(&[64, 64, 64], seed, 30.0).unwrap();
    let mut r = dpf::rng::rng(seed ^ 0x5eed);
    for t in f.parameters_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += r.random_range(-amplitude..amplitude));
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fresh_field_is_identity(seed in any::<u64>(), pts in points(1, 200)) {
        let f = init_field(seed, 30.0).unwrap();
        prop_assert_eq!(f.deform(&pts).unwrap(), pts);
    }

    #[test]
    fn partial_deformation_is_linear_in_gamma(seed in any::<u64>(), pts in points(1, 100), gamma in -3.0f64..3.0) {
        let f = perturbed(seed, 0.01);
        let g = f.displacement(&pts).unwrap();
        let moved = f.deform_partial(&pts, gamma).unwrap();
        for ((m, x), d) in moved.iter().zip(&pts).zip(&g) {
            prop_assert_eq!(*m, x + d * gamma);
        }
        prop_assert_eq!(f.deform_partial(&pts, 0.0).unwrap(), pts);
    }

    #[test]
    fn finite_and_locally_lipschitz(seed in any::<u64>(), x in vec3(10.0), dir in unit(), delta in 1e-6f64..1e-3) {
        let f = perturbed(seed, 0.01);
        let y = x + dir * delta;
        let g = f.displacement(&[x, y]).unwrap();
        prop_assert!(g.iter().all(|v| v.iter().all(|c| c.is_finite())));
        // generous bound: omega0 * product of layer norms would be far larger
        prop_assert!((g[0] - g[1]).norm() <= 1e4 * delta);
    }
}

#[test]
fn frame_maps_world_coordinates() {
    let f = perturbed(3, 0.01);
    let frame = dpf::field::InputFrame {
        center: Vec3::new(1.0, 2.0, 3.0),
        scale: 4.0,
    };
    let g = f.clone().with_frame(frame);
    let local = [Vec3::new(0.1, -0.2, 0.3)];
    let world = [frame.to_world(&local[0])];
    let d_local = f.displacement(&local).unwrap()[0];
    let d_world = g.displacement(&world).unwrap()[0];
    assert!((d_world - d_local * 4.0).norm() < 1e-12);
}
