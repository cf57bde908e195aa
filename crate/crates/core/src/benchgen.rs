//! Synthetic benchmark cases: analytic primitives deformed by closed-form
//! warps, so the ground-truth flow of every vertex is known exactly.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{transfer_normals, vertex_normals, GeometryError, PointSet, TriMesh, Vec3};
use crate::io::{self, IoError};
use crate::losses::CorrespondenceSet;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bad resolution: {0}")]
    BadResolution(String),
    #[error("invalid warp: {0}")]
    InvalidWarp(String),
    #[error("unknown suite {0:?}")]
    UnknownSuite(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Unit sphere from a subdivided icosahedron.
    Icosphere { subdivisions: u32 },
    /// Capped cylinder of radius 0.5 and height 2 along z, centered at the origin.
    Cylinder { segments: usize, rings: usize },
    /// Torus around z with major radius 1 and minor radius 0.3.
    Torus { segments: usize, sides: usize },
    /// `n x n` square grid over `[-1, 1]^2` at z = 0, facing +z.
    Grid { n: usize },
}

impl Primitive {
    pub fn label(&self) -> String {
        match self {
            Primitive::Icosphere { subdivisions } => format!("icosphere({subdivisions})"),
            Primitive::Cylinder { segments, rings } => format!("cylinder({segments},{rings})"),
            Primitive::Torus { segments, sides } => format!("torus({segments},{sides})"),
            Primitive::Grid { n } => format!("grid({n})"),
        }
    }
}

pub fn make_primitive(p: &Primitive) -> BenchResult<TriMesh> {
    match *p {
        Primitive::Icosphere { subdivisions } => icosphere(subdivisions),
        Primitive::Cylinder { segments, rings } => cylinder(segments, rings),
        Primitive::Torus { segments, sides } => torus(segments, sides),
        Primitive::Grid { n } => grid(n),
    }
}

fn with_normals(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> BenchResult<TriMesh> {
    let mesh = TriMesh::new(vertices, faces, None)?;
    let n = vertex_normals(&mesh)?;
    Ok(mesh.with_normals(n)?)
}

/// Icosahedron with each face split into four `subdivisions` times and all
/// vertices pushed to the unit sphere: `10 * 4^s + 2` vertices.
pub fn icosphere(subdivisions: u32) -> BenchResult<TriMesh> {
    if subdivisions > 7 {
        return Err(BenchError::BadResolution(format!("icosphere subdivisions {subdivisions} > 7")));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for &[a, b, c] in &f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    let normals = v.clone();
    Ok(TriMesh::new(v, f, Some(normals))?)
}

/// Capped cylinder with `segments` around and `rings` bands along z.
pub fn cylinder(segments: usize, rings: usize) -> BenchResult<TriMesh> {
    if segments < 3 || rings < 1 {
        return Err(BenchError::BadResolution(format!(
            "cylinder needs segments >= 3 and rings >= 1, got {segments}, {rings}"
        )));
    }
    let (radius, half) = (0.5, 1.0);
    let mut v = Vec::new();
    for r in 0..=rings {
        let z = -half + 2.0 * half * r as f64 / rings as f64;
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            v.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let idx = |r: usize, s: usize| r * segments + s % segments;
    let mut f = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            let (a, b, c, d) = (idx(r, s), idx(r, s + 1), idx(r + 1, s + 1), idx(r + 1, s));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    let bottom = v.len();
    v.push(Vec3::new(0.0, 0.0, -half));
    let top = v.len();
    v.push(Vec3::new(0.0, 0.0, half));
    for s in 0..segments {
        f.push([bottom, idx(0, s + 1), idx(0, s)]);
        f.push([top, idx(rings, s), idx(rings, s + 1)]);
    }
    with_normals(v, f)
}

pub fn torus(segments: usize, sides: usize) -> BenchResult<TriMesh> {
    if segments < 3 || sides < 3 {
        return Err(BenchError::BadResolution(format!(
            "torus needs segments, sides >= 3, got {segments}, {sides}"
        )));
    }
    let (big, small) = (1.0, 0.3);
    let mut v = Vec::new();
    let mut n = Vec::new();
    for i in 0..segments {
        let u = 2.0 * PI * i as f64 / segments as f64;
        for j in 0..sides {
            let w = 2.0 * PI * j as f64 / sides as f64;
            let dir = Vec3::new(w.cos() * u.cos(), w.cos() * u.sin(), w.sin());
            v.push(Vec3::new(big * u.cos(), big * u.sin(), 0.0) + dir * small);
            n.push(dir);
        }
    }
    let idx = |i: usize, j: usize| (i % segments) * sides + j % sides;
    let mut f = Vec::new();
    for i in 0..segments {
        for j in 0..sides {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    Ok(TriMesh::new(v, f, Some(n))?)
}

/// `(n + 1)^2` vertices and `2 n^2` counter-clockwise triangles.
pub fn grid(n: usize) -> BenchResult<TriMesh> {
    if n < 1 {
        return Err(BenchError::BadResolution("grid needs n >= 1".into()));
    }
    let mut v = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            v.push(Vec3::new(-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64, 0.0));
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut f = Vec::new();
    for j in 0..n {
        for i in 0..n {
            f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let normals = vec![Vec3::z(); v.len()];
    Ok(TriMesh::new(v, f, Some(normals))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticWarp {
    Rigid {
        rotation: Rotation3<f64>,
        translation: Vec3,
    },
    /// Rotation about `axis` (through the origin) by `rate * height` radians.
    Twist { axis: Vec3, rate: f64 },
    /// Bends the line along `axis` into an arc of the given curvature,
    /// curving toward `toward`.
    Bend {
        axis: Vec3,
        toward: Vec3,
        curvature: f64,
    },
    /// Gaussian bump along the direction of `center` from the origin.
    Bump { center: Vec3, amplitude: f64, sigma: f64 },
}

impl AnalyticWarp {
    pub fn rigid_about(axis: Vec3, degrees: f64, translation: Vec3) -> Self {
        AnalyticWarp::Rigid {
            rotation: Rotation3::from_axis_angle(&Unit::new_normalize(axis), degrees.to_radians()),
            translation,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnalyticWarp::Rigid { .. } => "rigid",
            AnalyticWarp::Twist { .. } => "twist",
            AnalyticWarp::Bend { .. } => "bend",
            AnalyticWarp::Bump { .. } => "bump",
        }
    }

    pub fn validate(&self) -> BenchResult<()> {
        let unit = |v: &Vec3, what: &str| {
            if (v.norm() - 1.0).abs() > 1e-9 {
                Err(BenchError::InvalidWarp(format!("{what} must be a unit vector")))
            } else {
                Ok(())
            }
        };
        match self {
            AnalyticWarp::Rigid { rotation, translation } => {
                let m = rotation.matrix();
                if (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max() > 1e-9 {
                    return Err(BenchError::InvalidWarp("rotation is not orthonormal".into()));
                }
                if !translation.iter().all(|v| v.is_finite()) {
                    return Err(BenchError::InvalidWarp("non-finite translation".into()));
                }
            }
            AnalyticWarp::Twist { axis, rate } => {
                unit(axis, "twist axis")?;
                if !rate.is_finite() {
                    return Err(BenchError::InvalidWarp("non-finite twist rate".into()));
                }
            }
            AnalyticWarp::Bend { axis, toward, curvature } => {
                unit(axis, "bend axis")?;
                unit(toward, "bend direction")?;
                if axis.dot(toward).abs() > 1e-9 {
                    return Err(BenchError::InvalidWarp("bend direction must be perpendicular to the axis".into()));
                }
                if !curvature.is_finite() {
                    return Err(BenchError::InvalidWarp("non-finite curvature".into()));
                }
            }
            AnalyticWarp::Bump { center, amplitude, sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(BenchError::InvalidWarp(format!("sigma {sigma} must be positive")));
                }
                if !(center.norm() > 0.0) || !amplitude.is_finite() {
                    return Err(BenchError::InvalidWarp("bump center must be non-zero".into()));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        match *self {
            AnalyticWarp::Rigid { rotation, translation } => rotation * p + translation,
            AnalyticWarp::Twist { axis, rate } => {
                let h = p.dot(&axis);
                Rotation3::from_axis_angle(&Unit::new_unchecked(axis), rate * h) * p
            }
            AnalyticWarp::Bend { axis, toward, curvature } => {
                if curvature == 0.0 {
                    return *p;
                }
                let z = p.dot(&axis);
                let x = p.dot(&toward);
                let rest = p - axis * z - toward * x;
                let r = 1.0 / curvature;
                let theta = curvature * z;
                let x2 = r - (r - x) * theta.cos();
                let z2 = (r - x) * theta.sin();
                rest + toward * x2 + axis * z2
            }
            AnalyticWarp::Bump { center, amplitude, sigma } => {
                let w = (-(p - center).norm_squared() / (2.0 * sigma * sigma)).exp();
                p + center.normalize() * (amplitude * w)
            }
        }
    }

    /// Flat `key=value` description for manifests.
    pub fn describe(&self) -> Vec<(String, String)> {
        let v = |x: &Vec3| format!("{:?},{:?},{:?}", x.x, x.y, x.z);
        let mut out = vec![("warp".to_string(), self.kind().to_string())];
        match self {
            AnalyticWarp::Rigid { rotation, translation } => {
                let (axis, angle) = rotation
                    .axis_angle()
                    .map(|(a, t)| (a.into_inner(), t))
                    .unwrap_or((Vec3::z(), 0.0));
                out.push(("rotation_axis".into(), v(&axis)));
                out.push(("rotation_degrees".into(), format!("{:?}", angle.to_degrees())));
                out.push(("translation".into(), v(translation)));
            }
            AnalyticWarp::Twist { axis, rate } => {
                out.push(("axis".into(), v(axis)));
                out.push(("rate".into(), format!("{rate:?}")));
            }
            AnalyticWarp::Bend { axis, toward, curvature } => {
                out.push(("axis".into(), v(axis)));
                out.push(("toward".into(), v(toward)));
                out.push(("curvature".into(), format!("{curvature:?}")));
            }
            AnalyticWarp::Bump { center, amplitude, sigma } => {
                out.push(("center".into(), v(center)));
                out.push(("amplitude".into(), format!("{amplitude:?}")));
                out.push(("sigma".into(), format!("{sigma:?}")));
            }
        }
        out
    }
}

/// Warped mesh (normals transferred through the original connectivity) and
/// per-vertex ground-truth displacement.
pub fn apply_warp(warp: &AnalyticWarp, mesh: &TriMesh) -> BenchResult<(TriMesh, Vec<Vec3>)> {
    warp.validate()?;
    let moved: Vec<Vec3> = mesh.vertices().iter().map(|p| warp.apply(p)).collect();
    let flow = moved.iter().zip(mesh.vertices()).map(|(a, b)| a - b).collect();
    let normals = transfer_normals(mesh, &moved)?;
    let target = mesh.with_vertices(moved)?.with_normals(normals)?;
    Ok((target, flow))
}

/// Full description of one benchmark case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub name: String,
    pub primitive: Primitive,
    pub warp: AnalyticWarp,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Number of exact correspondence pairs written alongside the case.
    pub correspondences: usize,
}

/// Paths written by [`emit_case`].
#[derive(Debug, Clone, PartialEq)]
pub struct CaseFiles {
    pub dir: PathBuf,
    pub canonical: PathBuf,
    pub target: PathBuf,
    pub flow: PathBuf,
    pub correspondences: PathBuf,
    pub manifest: PathBuf,
}

impl CaseFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            canonical: dir.join("canonical.ply"),
            target: dir.join("target.ply"),
            flow: dir.join("flow.csv"),
            correspondences: dir.join("correspondences.csv"),
            manifest: dir.join("manifest.txt"),
        }
    }
}

/// In-memory case: canonical mesh, (possibly noisy) target mesh, flow from
/// canonical to target vertices and exact correspondence pairs.
#[derive(Debug, Clone)]
pub struct Case {
    pub canonical: TriMesh,
    pub target: TriMesh,
    pub flow: Vec<Vec3>,
    pub correspondences: CorrespondenceSet,
}

pub fn build_case(spec: &CaseSpec) -> BenchResult<Case> {
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(BenchError::InvalidWarp(format!("noise sigma {}", spec.noise_sigma)));
    }
    let canonical = make_primitive(&spec.primitive)?;
    let (clean, _) = apply_warp(&spec.warp, &canonical)?;
    let target = if spec.noise_sigma > 0.0 {
        let mut rng = crate::rng::rng_for(spec.seed, crate::rng::stream::NOISE, 0);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        let noisy: Vec<Vec3> = clean
            .vertices()
            .iter()
            .map(|p| p + Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let n = transfer_normals(&canonical, &noisy)?;
        clean.with_vertices(noisy)?.with_normals(n)?
    } else {
        clean
    };
    let flow: Vec<Vec3> = target
        .vertices()
        .iter()
        .zip(canonical.vertices())
        .map(|(t, c)| t - c)
        .collect();
    let count = spec.correspondences.min(canonical.vertices().len());
    let mut rng = crate::rng::rng_for(spec.seed, crate::rng::stream::SUBSET, 0);
    let mut picked = sample(&mut rng, canonical.vertices().len(), count).into_vec();
    picked.sort_unstable();
    let pairs = picked
        .iter()
        .map(|&i| (canonical.vertices()[i], canonical.vertices()[i] + spec.warp.apply(&canonical.vertices()[i]) - canonical.vertices()[i]))
        .collect();
    let correspondences = CorrespondenceSet::new(pairs).map_err(|e| BenchError::InvalidWarp(e.to_string()))?;
    Ok(Case {
        canonical,
        target,
        flow,
        correspondences,
    })
}

fn manifest(spec: &CaseSpec, case: &Case) -> String {
    let mut lines = vec![
        ("name".to_string(), spec.name.clone()),
        ("primitive".to_string(), spec.primitive.label()),
    ];
    lines.extend(spec.warp.describe());
    lines.push(("noise_sigma".into(), format!("{:?}", spec.noise_sigma)));
    lines.push(("seed".into(), spec.seed.to_string()));
    lines.push(("correspondences".into(), case.correspondences.len().to_string()));
    lines.push(("vertices".into(), case.canonical.vertices().len().to_string()));
    lines.push(("faces".into(), case.canonical.faces().len().to_string()));
    lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Writes `canonical.ply`, `target.ply`, `flow.csv`, `correspondences.csv`
/// and `manifest.txt` into `out_dir/name`.
pub fn emit_case(spec: &CaseSpec, out_dir: &Path) -> BenchResult<CaseFiles> {
    let case = build_case(spec)?;
    let files = CaseFiles::in_dir(&out_dir.join(&spec.name));
    std::fs::create_dir_all(&files.dir).map_err(|e| IoError::Io {
        path: files.dir.display().to_string(),
        source: e,
    })?;
    io::write_mesh(&files.canonical, &case.canonical)?;
    io::write_mesh(&files.target, &case.target)?;
    io::write_flow(&files.flow, case.canonical.vertices(), &case.flow)?;
    io::write_correspondences(&files.correspondences, &case.correspondences)?;
    io::write_file(&files.manifest, manifest(spec, &case).as_bytes())?;
    Ok(files)
}

pub const DEFAULT_SUITE_SEED: u64 = 2024;

/// Sphere and cylinder, each under a 30 degree rotation, a twist, a bend and
/// a bump.
pub fn default_suite() -> Vec<CaseSpec> {
    let shapes = [
        ("sphere", Primitive::Icosphere { subdivisions: 3 }),
        ("cylinder", Primitive::Cylinder { segments: 32, rings: 16 }),
    ];
    let warps = [
        ("rigid", AnalyticWarp::rigid_about(Vec3::x(), 30.0, Vec3::zeros())),
        ("twist", AnalyticWarp::Twist { axis: Vec3::z(), rate: 0.6 }),
        (
            "bend",
            AnalyticWarp::Bend {
                axis: Vec3::z(),
                toward: Vec3::x(),
                curvature: 0.5,
            },
        ),
        (
            "bump",
            AnalyticWarp::Bump {
                center: Vec3::new(0.0, 0.0, 1.0),
                amplitude: 0.2,
                sigma: 0.3,
            },
        ),
    ];
    let mut out = Vec::new();
    for (sname, prim) in shapes {
        for (wname, warp) in warps {
            out.push(CaseSpec {
                name: format!("{sname}_{wname}"),
                primitive: prim,
                warp,
                noise_sigma: 0.0,
                seed: DEFAULT_SUITE_SEED,
                correspondences: 100,
            });
        }
    }
    out
}

pub fn suite(name: &str) -> BenchResult<Vec<CaseSpec>> {
    match name {
        "default" => Ok(default_suite()),
        "twist" => Ok(default_suite()
            .into_iter()
            .filter(|c| matches!(c.warp, AnalyticWarp::Twist { .. } | AnalyticWarp::Bend { .. }))
            .collect()),
        other => Err(BenchError::UnknownSuite(other.to_string())),
    }
}

/// Point set of the canonical vertices with their normals.
pub fn vertex_cloud(mesh: &TriMesh) -> BenchResult<PointSet> {
    Ok(mesh.to_point_set()?)
}
