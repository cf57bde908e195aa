//! File formats: PLY, OBJ, correspondence and flow CSV, flat config files
//! and the binary field checkpoint.

pub mod checkpoint;
pub mod config;
mod csvio;
mod obj;
mod ply;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{estimate_normals, vertex_normals, GeometryError, PointSet, TriMesh, Vec3, DEFAULT_NORMAL_K};

pub use config::{format_config, parse_config, read_config};
pub use csvio::{read_correspondences, read_flow, write_correspondences, write_flow};
pub use obj::{parse_obj, write_obj_string};
pub use ply::{parse_ply, write_ply_bytes, PlyFormat};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unknown file extension for {0}")]
    UnknownExtension(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

pub(crate) fn parse_error(location: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Atomic write with the path in the error.
pub fn write_file(path: &Path, bytes: &[u8]) -> IoResult<()> {
    write_atomic(path, bytes).map_err(|e| io_err(path, e))
}

pub(crate) fn read_file(path: &Path) -> IoResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

/// Vertices, optional per-vertex normals and triangles as stored in a file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshData {
    pub vertices: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<[usize; 3]>,
}

impl MeshData {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        Self {
            vertices: mesh.vertices().to_vec(),
            normals: mesh.vertex_normals().map(|n| n.to_vec()),
            faces: mesh.faces().to_vec(),
        }
    }

    pub fn from_point_set(points: &PointSet) -> Self {
        Self {
            vertices: points.positions().to_vec(),
            normals: Some(points.normals().to_vec()),
            faces: Vec::new(),
        }
    }

    pub fn into_mesh(self) -> IoResult<TriMesh> {
        let normals = self.normals.map(normalize_all);
        Ok(TriMesh::new(self.vertices, self.faces, normals)?)
    }

    /// Oriented points: stored normals, else mesh vertex normals, else
    /// normals estimated from `k` neighbours.
    pub fn into_point_set(self) -> IoResult<PointSet> {
        if let Some(n) = self.normals {
            return Ok(PointSet::with_normalized(self.vertices, n)?);
        }
        if !self.faces.is_empty() {
            let mesh = TriMesh::new(self.vertices, self.faces, None)?;
            let n = vertex_normals(&mesh)?;
            return Ok(PointSet::new(mesh.vertices().to_vec(), n)?);
        }
        let n = estimate_normals(&self.vertices, DEFAULT_NORMAL_K.min(self.vertices.len()))?;
        Ok(PointSet::new(self.vertices, n)?)
    }
}

fn normalize_all(n: Vec<Vec3>) -> Vec<Vec3> {
    n.into_iter()
        .map(|v| {
            let l = v.norm();
            if l > 0.0 {
                v / l
            } else {
                v
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ply,
    Obj,
}

fn kind_of(path: &Path) -> IoResult<Kind> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "ply" => Ok(Kind::Ply),
        Some(e) if e == "obj" => Ok(Kind::Obj),
        _ => Err(IoError::UnknownExtension(path.display().to_string())),
    }
}

/// Reads a `.ply` or `.obj` file.
pub fn read_mesh_data(path: &Path) -> IoResult<MeshData> {
    let kind = kind_of(path)?;
    let bytes = read_file(path)?;
    match kind {
        Kind::Ply => parse_ply(&bytes),
        Kind::Obj => parse_obj(&String::from_utf8_lossy(&bytes)),
    }
}

/// Writes `.ply` (binary little-endian) or `.obj` depending on the extension.
pub fn write_mesh_data(path: &Path, data: &MeshData) -> IoResult<()> {
    let bytes = match kind_of(path)? {
        Kind::Ply => write_ply_bytes(data, PlyFormat::BinaryLittleEndian),
        Kind::Obj => write_obj_string(data).into_bytes(),
    };
    write_file(path, &bytes)
}

pub fn read_mesh(path: &Path) -> IoResult<TriMesh> {
    read_mesh_data(path)?.into_mesh()
}

pub fn write_mesh(path: &Path, mesh: &TriMesh) -> IoResult<()> {
    write_mesh_data(path, &MeshData::from_mesh(mesh))
}

pub fn read_pointset(path: &Path) -> IoResult<PointSet> {
    read_mesh_data(path)?.into_point_set()
}

pub fn write_pointset(path: &Path, points: &PointSet) -> IoResult<()> {
    write_mesh_data(path, &MeshData::from_point_set(points))
}
