//! Core spatial types, surface sampling, nearest-neighbour queries and
//! normal estimation/transfer.

mod kdtree;
mod normals;
mod sampling;

pub use kdtree::{Neighbor, SpatialIndex, DEFAULT_LEAF_SIZE};
pub use normals::{estimate_normals, transfer_normals, vertex_normals, DEFAULT_NORMAL_K};
pub use sampling::sample_surface;

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;

/// Tolerance on `|‖n‖ - 1|` for stored normals.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("mesh has no faces with positive area")]
    EmptyMesh,
    #[error("spatial index is empty")]
    EmptyIndex,
    #[error("neighbourhood of point {index} is degenerate (covariance rank < 2)")]
    DegenerateNeighborhood { index: usize },
    #[error("vertex {0} is not referenced by any face")]
    IsolatedVertex(usize),
    #[error("accumulated normal of vertex {0} has zero length")]
    ZeroNormal(usize),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {0} repeats a vertex index")]
    RepeatedIndex(usize),
    #[error("non-finite coordinate at element {0}")]
    NonFinite(usize),
    #[error("normal {index} has length {length}, expected 1")]
    NotUnit { index: usize, length: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type GeometryResult<T> = std::result::Result<T, GeometryError>;

fn check_finite(points: &[Vec3]) -> GeometryResult<()> {
    match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        Some(i) => Err(GeometryError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Oriented point cloud: positions with matching unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl PointSet {
    /// Validates lengths, finiteness and unit normals.
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>) -> GeometryResult<Self> {
        if positions.len() != normals.len() {
            return Err(GeometryError::LengthMismatch {
                expected: positions.len(),
                found: normals.len(),
            });
        }
        check_finite(&positions)?;
        check_finite(&normals)?;
        for (index, n) in normals.iter().enumerate() {
            let length = n.norm();
            if (length - 1.0).abs() > UNIT_TOLERANCE {
                return Err(GeometryError::NotUnit { index, length });
            }
        }
        Ok(Self { positions, normals })
    }

    /// Like [`PointSet::new`] but rescales every normal to unit length first.
    pub fn with_normalized(positions: Vec<Vec3>, normals: Vec<Vec3>) -> GeometryResult<Self> {
        let mut unit = Vec::with_capacity(normals.len());
        for (i, n) in normals.into_iter().enumerate() {
            let len = n.norm();
            if !(len > 0.0 && len.is_finite()) {
                return Err(GeometryError::NotUnit { index: i, length: len });
            }
            unit.push(n / len);
        }
        Self::new(positions, unit)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Vec<Vec3>) {
        (self.positions, self.normals)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.positions)
    }

    pub fn select(&self, indices: &[usize]) -> PointSet {
        PointSet {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

/// Indexed triangle mesh with optional per-vertex normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    vertex_normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        vertex_normals: Option<Vec<Vec3>>,
    ) -> GeometryResult<Self> {
        check_finite(&vertices)?;
        let vertex_count = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &index in f {
                if index >= vertex_count {
                    return Err(GeometryError::FaceIndexOutOfRange {
                        face: fi,
                        index,
                        vertex_count,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::RepeatedIndex(fi));
            }
        }
        if let Some(normals) = &vertex_normals {
            if normals.len() != vertex_count {
                return Err(GeometryError::LengthMismatch {
                    expected: vertex_count,
                    found: normals.len(),
                });
            }
            check_finite(normals)?;
            for (index, n) in normals.iter().enumerate() {
                let length = n.norm();
                if (length - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(GeometryError::NotUnit { index, length });
                }
            }
        }
        Ok(Self {
            vertices,
            faces,
            vertex_normals,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_normals(&self) -> Option<&[Vec3]> {
        self.vertex_normals.as_deref()
    }

    /// Replaces vertex positions, keeping connectivity; normals are dropped.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> GeometryResult<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::LengthMismatch {
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        TriMesh::new(vertices, self.faces.clone(), None)
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> GeometryResult<TriMesh> {
        self.vertex_normals = Some(normals);
        TriMesh::new(self.vertices, self.faces, self.vertex_normals)
    }

    /// Vertex normals if stored, otherwise computed from the faces.
    pub fn normals_or_computed(&self) -> GeometryResult<Vec<Vec3>> {
        match &self.vertex_normals {
            Some(n) => Ok(n.clone()),
            None => vertex_normals(self),
        }
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// The vertices as a point set carrying the mesh's vertex normals.
    pub fn to_point_set(&self) -> GeometryResult<PointSet> {
        PointSet::new(self.vertices.clone(), self.normals_or_computed()?)
    }
}

/// Ordered frames of a dynamic scene; `canonical` selects the reference frame.
#[derive(Debug, Clone)]
pub struct DynamicScene {
    frames: Vec<PointSet>,
    canonical: usize,
}

impl DynamicScene {
    pub fn new(frames: Vec<PointSet>) -> GeometryResult<Self> {
        Self::with_canonical(frames, 0)
    }

    pub fn with_canonical(frames: Vec<PointSet>, canonical: usize) -> GeometryResult<Self> {
        if frames.is_empty() {
            return Err(GeometryError::InvalidParameter(
                "a dynamic scene needs at least one frame".into(),
            ));
        }
        if canonical >= frames.len() {
            return Err(GeometryError::InvalidParameter(format!(
                "canonical frame {canonical} out of range for {} frames",
                frames.len()
            )));
        }
        Ok(Self { frames, canonical })
    }

    pub fn frames(&self) -> &[PointSet] {
        &self.frames
    }

    pub fn canonical_index(&self) -> usize {
        self.canonical
    }

    pub fn canonical(&self) -> &PointSet {
        &self.frames[self.canonical]
    }

    /// Target frames in order, skipping the canonical one.
    pub fn targets(&self) -> impl Iterator<Item = (usize, &PointSet)> {
        let c = self.canonical;
        self.frames.iter().enumerate().filter(move |(i, _)| *i != c)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points(points: &[Vec3]) -> Option<Aabb> {
        let first = points.first()?;
        let mut min = *first;
        let mut max = *first;
        for p in &points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Aabb { min, max })
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Radius of the sphere through the box corners.
    pub fn radius(&self) -> f64 {
        0.5 * self.diagonal()
    }

    pub fn max_extent(&self) -> f64 {
        self.extent().max()
    }
}
