use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen};

use super::{GeometryError, GeometryResult, SpatialIndex, TriMesh, Vec3};

/// Neighbourhood size used when a point set arrives without normals.
pub const DEFAULT_NORMAL_K: usize = 16;

const RANK_TOLERANCE: f64 = 1e-12;

/// PCA normals over k-nearest neighbourhoods with MST sign propagation.
///
/// Each normal is the smallest-eigenvalue eigenvector of its neighbourhood
/// covariance (the point itself included). Signs are made consistent by
/// walking a minimum spanning tree of the symmetric k-NN graph, weighted by
/// `1 - |n_i . n_j|`, flipping each child that disagrees with its parent.
/// Every connected component is rooted at its highest point whose normal is
/// turned toward +z.
pub fn estimate_normals(positions: &[Vec3], k: usize) -> GeometryResult<Vec<Vec3>> {
    let n = positions.len();
    if k < 3 || n < k {
        return Err(GeometryError::InvalidParameter(format!(
            "normal estimation needs N >= k >= 3 (N = {n}, k = {k})"
        )));
    }
    let index = SpatialIndex::build(positions);
    let mut normals = Vec::with_capacity(n);
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in positions.iter().enumerate() {
        let nbrs = index.knn_squared(p, k)?;
        let mean = nbrs.iter().fold(Vec3::zeros(), |acc, &(j, _)| acc + positions[j])
            / nbrs.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(j, _) in &nbrs {
            let d = positions[j] - mean;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let largest = eig.eigenvalues[order[2]];
        let middle = eig.eigenvalues[order[1]];
        if !(largest > 0.0) || middle <= RANK_TOLERANCE * largest {
            return Err(GeometryError::DegenerateNeighborhood { index: i });
        }
        normals.push(eig.eigenvectors.column(order[0]).normalize());
        for &(j, _) in &nbrs {
            if j != i {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    orient_along_mst(positions, &mut normals, &adjacency);
    Ok(normals)
}

fn toward_positive_z(n: &Vec3) -> bool {
    // lexicographic on (z, y, x) settles the zero-z case
    n.z > 0.0 || (n.z == 0.0 && (n.y > 0.0 || (n.y == 0.0 && n.x >= 0.0)))
}

fn orient_along_mst(positions: &[Vec3], normals: &mut [Vec3], adjacency: &[Vec<usize>]) {
    let n = positions.len();
    let mut visited = vec![false; n];
    let mut remaining = n;
    while remaining > 0 {
        let root = (0..n)
            .filter(|&i| !visited[i])
            .max_by(|&a, &b| positions[a].z.total_cmp(&positions[b].z).then(b.cmp(&a)))
            .expect("unvisited point exists");
        if !toward_positive_z(&normals[root]) {
            normals[root] = -normals[root];
        }
        visited[root] = true;
        remaining -= 1;
        let mut heap = BinaryHeap::new();
        let push_edges = |heap: &mut BinaryHeap<_>, from: usize, normals: &[Vec3], visited: &[bool]| {
            for &to in &adjacency[from] {
                if !visited[to] {
                    let w = 1.0 - normals[from].dot(&normals[to]).abs();
                    heap.push(Reverse((OrdF64(w), to, from)));
                }
            }
        };
        push_edges(&mut heap, root, normals, &visited);
        while let Some(Reverse((_, child, parent))) = heap.pop() {
            if visited[child] {
                continue;
            }
            visited[child] = true;
            remaining -= 1;
            if normals[child].dot(&normals[parent]) < 0.0 {
                normals[child] = -normals[child];
            }
            push_edges(&mut heap, child, normals, &visited);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn accumulate_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> GeometryResult<Vec<Vec3>> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    let mut referenced = vec![false; vertices.len()];
    for &[a, b, c] in faces {
        // |cross| is twice the face area: area weighting for free
        let fnrm = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        for v in [a, b, c] {
            acc[v] += fnrm;
            referenced[v] = true;
        }
    }
    if let Some(i) = referenced.iter().position(|r| !r) {
        return Err(GeometryError::IsolatedVertex(i));
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                Ok(n / len)
            } else {
                Err(GeometryError::ZeroNormal(i))
            }
        })
        .collect()
}

/// Area-weighted average of incident face normals, renormalized.
pub fn vertex_normals(mesh: &TriMesh) -> GeometryResult<Vec<Vec3>> {
    accumulate_normals(mesh.vertices(), mesh.faces())
}

/// Normals of the deformed vertices under the canonical connectivity.
pub fn transfer_normals(canonical: &TriMesh, deformed: &[Vec3]) -> GeometryResult<Vec<Vec3>> {
    if deformed.len() != canonical.vertices().len() {
        return Err(GeometryError::LengthMismatch {
            expected: canonical.vertices().len(),
            found: deformed.len(),
        });
    }
    accumulate_normals(deformed, canonical.faces())
}
