#![allow(dead_code)]

use dpf::Vec3;
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

pub fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0)
        .prop_filter("nonzero", |v| v.norm() > 1e-3)
        .prop_map(|v| v.normalize())
}

pub fn points(min: usize, max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(vec3(1.0), min..=max)
}

/// Points on a coarse lattice, so exact distance ties are common.
pub fn lattice_points(min: usize, max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec((-3i32..=3, -3i32..=3, -3i32..=3), min..=max)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x as f64, y as f64, z as f64) * 0.25).collect())
}

pub fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    (unit(), -3.1f64..3.1).prop_map(|(axis, angle)| Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle))
}

pub fn brute_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let e = p - q;
            (e.x * e.x + e.y * e.y + e.z * e.z, j)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.into_iter().take(k).map(|(d, j)| (j, d)).collect()
}
