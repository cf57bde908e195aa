use rand::Rng;

use super::{GeometryError, GeometryResult, PointSet, TriMesh, Vec3};

/// Draws `n` area-uniform surface samples with interpolated normals.
///
/// Triangles are picked with probability proportional to area (zero-area
/// faces never), positions by uniform barycentric coordinates. Normals are the
/// renormalized barycentric blend of vertex normals when the mesh has them,
/// the counter-clockwise face normal otherwise.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> GeometryResult<PointSet> {
    if n == 0 {
        return Err(GeometryError::InvalidParameter(
            "sample count must be at least 1".into(),
        ));
    }
    let faces = mesh.faces();
    let verts = mesh.vertices();
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in 0..faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::EmptyMesh);
    }

    let mut rng = crate::rng::rng(seed);
    let vn = mesh.vertex_normals();
    let mut positions = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        // first face whose cumulative area exceeds u; zero-area faces share the
        // previous cumulative value and can never be the first to exceed it
        let mut fi = cumulative.partition_point(|&c| c <= u);
        if fi >= faces.len() {
            fi = cumulative.partition_point(|&c| c < total);
        }
        let [ia, ib, ic] = faces[fi];
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        let (a, b, c) = (verts[ia], verts[ib], verts[ic]);
        positions.push(a * wa + b * wb + c * wc);

        let face_normal = (b - a).cross(&(c - a)).normalize();
        let normal = match vn {
            Some(vn) => {
                let blend: Vec3 = vn[ia] * wa + vn[ib] * wb + vn[ic] * wc;
                let len = blend.norm();
                if len > 1e-12 {
                    blend / len
                } else {
                    face_normal
                }
            }
            None => face_normal,
        };
        normals.push(normal);
    }
    PointSet::new(positions, normals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn right_triangle() -> TriMesh {
        TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn planar_triangle_samples_lie_in_plane() {
        let s = sample_surface(&right_triangle(), 4, 7).unwrap();
        assert_eq!(s.len(), 4);
        for (p, n) in s.positions().iter().zip(s.normals()) {
            assert_eq!(p.z, 0.0);
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12);
            assert_eq!(*n, Vec3::z());
        }
    }

    #[test]
    fn area_proportional_choice() {
        // area 1 triangle at x<0, area 3 triangle at x>10
        let mesh = TriMesh::new(
            vec![
                Vec3::new(-2.0, 0.0, 0.0),
                Vec3::new(-1.0, 0.0, 0.0),
                Vec3::new(-2.0, 2.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(13.0, 0.0, 0.0),
                Vec3::new(10.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            None,
        )
        .unwrap();
        assert!((mesh.face_area(0) - 1.0).abs() < 1e-12);
        assert!((mesh.face_area(1) - 3.0).abs() < 1e-12);
        let s = sample_surface(&mesh, 10_000, 1).unwrap();
        let large = s.positions().iter().filter(|p| p.x > 5.0).count() as f64 / 10_000.0;
        // p = 0.75, sd = 0.00433; 99.9% two-sided interval is 0.75 ± 0.0142
        assert!((0.72..=0.78).contains(&large), "fraction {large}");
    }

    #[test]
    fn zero_faces_is_empty_mesh() {
        let mesh = TriMesh::new(vec![Vec3::zeros()], vec![], None).unwrap();
        assert_eq!(sample_surface(&mesh, 3, 0), Err(GeometryError::EmptyMesh));
    }

    #[test]
    fn degenerate_faces_are_skipped() {
        let mesh = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0), Vec3::y()],
            vec![[0, 1, 2], [0, 1, 3]],
            None,
        )
        .unwrap();
        let s = sample_surface(&mesh, 500, 3).unwrap();
        assert!(s.normals().iter().all(|n| *n == Vec3::z()));
        let all_degenerate = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        assert_eq!(sample_surface(&all_degenerate, 1, 0), Err(GeometryError::EmptyMesh));
    }

    #[test]
    fn deterministic_per_seed() {
        let m = right_triangle();
        assert_eq!(sample_surface(&m, 50, 9).unwrap(), sample_surface(&m, 50, 9).unwrap());
        assert_ne!(sample_surface(&m, 50, 9).unwrap(), sample_surface(&m, 50, 10).unwrap());
    }
}
