//! Orthographic normal rendering: camera sampling, z-buffered mesh
//! rasterization for the ground-truth side and soft point splatting for the
//! predicted side.

use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand_distr::UnitSphere;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor, Var};
use crate::geometry::{Aabb, GeometryError, TriMesh, Vec3};

pub const DEFAULT_RESOLUTION: usize = 256;
pub const DEFAULT_RADIUS_PX: f64 = 2.0;
pub const DEFAULT_TAU: f64 = 1e-2;
pub const DEFAULT_SPLAT_K: usize = 8;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("scene bounds are degenerate")]
    DegenerateBounds,
    #[error("resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(usize, usize, usize, usize),
    #[error("invalid render settings: {0}")]
    InvalidSettings(String),
    #[error("png encoding failed: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type RenderResult<T> = std::result::Result<T, RenderError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    pub radius_px: f64,
    pub tau: f64,
    pub k: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
            radius_px: DEFAULT_RADIUS_PX,
            tau: DEFAULT_TAU,
            k: DEFAULT_SPLAT_K,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> RenderResult<()> {
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidSettings("zero resolution".into()));
        }
        if !(self.radius_px >= 0.5 && self.radius_px.is_finite()) {
            return Err(RenderError::InvalidSettings(format!(
                "radius_px {} must be at least 0.5",
                self.radius_px
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(RenderError::InvalidSettings(format!("tau {}", self.tau)));
        }
        if self.k == 0 {
            return Err(RenderError::InvalidSettings("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Orthographic camera looking at the scene center from outside its
/// bounding sphere. The view square has half-width equal to the sphere radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub center: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub radius: f64,
    pub width: usize,
    pub height: usize,
}

/// Projection of one point: continuous pixel coordinates and depth scaled so
/// the bounding sphere spans `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Camera {
    /// Camera at `center + direction * 1.5 * radius` looking at `center`.
    pub fn looking_from(
        direction: Vec3,
        center: Vec3,
        radius: f64,
        width: usize,
        height: usize,
    ) -> RenderResult<Camera> {
        let len = direction.norm();
        if !(radius > 0.0 && radius.is_finite()) || !(len > 0.0 && len.is_finite()) {
            return Err(RenderError::DegenerateBounds);
        }
        let dir = direction / len;
        let forward = -dir;
        let world_up = if forward.z.abs() > 0.99 {
            Vec3::y()
        } else {
            Vec3::z()
        };
        let right = forward.cross(&world_up).normalize();
        let up = right.cross(&forward);
        Ok(Camera {
            position: center + dir * (1.5 * radius),
            center,
            right,
            up,
            forward,
            radius,
            width,
            height,
        })
    }

    pub fn project(&self, p: &Vec3) -> Projected {
        let rel = p - self.center;
        let u = rel.dot(&self.right) / self.radius;
        let v = rel.dot(&self.up) / self.radius;
        let dist = 1.5 * self.radius;
        let depth = ((p - self.position).dot(&self.forward) - (dist - self.radius)) / (2.0 * self.radius);
        Projected {
            x: (u + 1.0) * 0.5 * self.width as f64,
            y: (1.0 - v) * 0.5 * self.height as f64,
            depth,
        }
    }

    /// World normal in camera coordinates; `+z` faces the viewer.
    pub fn to_camera(&self, n: &Vec3) -> Vec3 {
        Vec3::new(n.dot(&self.right), n.dot(&self.up), -n.dot(&self.forward))
    }

    /// Row-major 3x3 matrix `M` with `n_cam = n * M` for row vectors.
    fn row_transform(&self) -> [f64; 9] {
        let r = [self.right, self.up, -self.forward];
        let mut m = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                m[i * 3 + j] = r[j][i];
            }
        }
        m
    }
}

/// Camera on the sphere of radius `1.5 r` around the bounds' center, with the
/// direction uniform on the unit sphere.
pub fn sample_camera(seed: u64, bounds: &Aabb, settings: &RenderSettings) -> RenderResult<Camera> {
    let r = bounds.radius();
    if !(r > 0.0 && r.is_finite()) {
        return Err(RenderError::DegenerateBounds);
    }
    let mut rng = crate::rng::rng(seed);
    let d: [f64; 3] = rng.sample(UnitSphere);
    Camera::looking_from(
        Vec3::new(d[0], d[1], d[2]),
        bounds.center(),
        r,
        settings.width,
        settings.height,
    )
}

/// `W x H` image of camera-space normals with a coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, three values per pixel.
    pub data: Vec<f64>,
    pub mask: Vec<bool>,
}

impl NormalImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
            mask: vec![false; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vec3 {
        let i = 3 * (y * self.width + x);
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn coverage(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// 8-bit RGB PNG with each channel mapped from `[-1, 1]` to `[0, 255]`.
    pub fn encode_png(&self) -> RenderResult<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
            let bytes: Vec<u8> = self
                .data
                .iter()
                .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
                .collect();
            writer
                .write_image_data(&bytes)
                .map_err(|e| RenderError::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> RenderResult<()> {
        let bytes = self.encode_png()?;
        crate::io::write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// Z-buffered orthographic rasterization of interpolated camera-space vertex
/// normals. Vertex normals are computed from the faces when absent.
pub fn rasterize_mesh_normals(mesh: &TriMesh, cam: &Camera) -> RenderResult<NormalImage> {
    if mesh.faces().is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    let normals = mesh.normals_or_computed()?;
    let cam_normals: Vec<Vec3> = normals.iter().map(|n| cam.to_camera(n)).collect();
    let proj: Vec<Projected> = mesh.vertices().iter().map(|p| cam.project(p)).collect();
    let (w, h) = (cam.width, cam.height);
    let mut img = NormalImage::empty(w, h);
    let mut zbuf = vec![f64::INFINITY; w * h];

    for face in mesh.faces() {
        let [a, b, c] = face.map(|i| proj[i]);
        let area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        if area.abs() < 1e-14 {
            continue;
        }
        let x0 = a.x.min(b.x).min(c.x).floor().max(0.0) as usize;
        let x1 = (a.x.max(b.x).max(c.x).ceil() as usize).min(w);
        let y0 = a.y.min(b.y).min(c.y).floor().max(0.0) as usize;
        let y1 = (a.y.max(b.y).max(c.y).ceil() as usize).min(h);
        for py in y0..y1 {
            for px in x0..x1 {
                let (sx, sy) = (px as f64 + 0.5, py as f64 + 0.5);
                let wa = ((b.x - sx) * (c.y - sy) - (b.y - sy) * (c.x - sx)) / area;
                let wb = ((c.x - sx) * (a.y - sy) - (c.y - sy) * (a.x - sx)) / area;
                let wc = 1.0 - wa - wb;
                if wa < 0.0 || wb < 0.0 || wc < 0.0 {
                    continue;
                }
                let depth = wa * a.depth + wb * b.depth + wc * c.depth;
                let pix = py * w + px;
                if depth < zbuf[pix] {
                    zbuf[pix] = depth;
                    let n = cam_normals[face[0]] * wa + cam_normals[face[1]] * wb + cam_normals[face[2]] * wc;
                    img.data[3 * pix..3 * pix + 3].copy_from_slice(n.as_slice());
                    img.mask[pix] = true;
                }
            }
        }
    }
    Ok(img)
}

/// Fixed per-pixel blending weights of a point cloud seen from one camera.
///
/// The weights depend on positions only; the rendered image is linear in the
/// normals, which is what the loss differentiates.
#[derive(Debug, Clone)]
pub struct SplatPlan {
    width: usize,
    height: usize,
    transform: [f64; 9],
    pixels: Rc<[usize]>,
    points: Rc<[usize]>,
    /// Normalized weight of each (pixel, point) entry, repeated per channel.
    weights: Vec<f64>,
}

struct Candidate {
    depth: f64,
    dpx: f64,
    point: usize,
    pos: [f64; 3],
}

impl SplatPlan {
    pub fn build(positions: &[Vec3], cam: &Camera, settings: &RenderSettings) -> RenderResult<Self> {
        settings.validate()?;
        let (w, h) = (cam.width, cam.height);
        let r = settings.radius_px;
        let mut per_pixel: Vec<Vec<Candidate>> = (0..w * h).map(|_| Vec::new()).collect();
        for (i, p) in positions.iter().enumerate() {
            let q = cam.project(p);
            let x0 = (q.x - r).floor().max(0.0) as usize;
            let x1 = ((q.x + r).ceil().max(0.0) as usize).min(w);
            let y0 = (q.y - r).floor().max(0.0) as usize;
            let y1 = ((q.y + r).ceil().max(0.0) as usize).min(h);
            for py in y0..y1 {
                for px in x0..x1 {
                    let dx = px as f64 + 0.5 - q.x;
                    let dy = py as f64 + 0.5 - q.y;
                    let d = (dx * dx + dy * dy).sqrt();
                    if d < r {
                        per_pixel[py * w + px].push(Candidate {
                            depth: q.depth,
                            dpx: d,
                            point: i,
                            pos: [p.x, p.y, p.z],
                        });
                    }
                }
            }
        }

        let mut pixels = Vec::new();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (pix, cands) in per_pixel.iter_mut().enumerate() {
            if cands.is_empty() {
                continue;
            }
            // keyed on geometry only so the result does not depend on input order
            cands.sort_by(|a, b| {
                a.depth
                    .total_cmp(&b.depth)
                    .then(a.dpx.total_cmp(&b.dpx))
                    .then(a.pos[0].total_cmp(&b.pos[0]))
                    .then(a.pos[1].total_cmp(&b.pos[1]))
                    .then(a.pos[2].total_cmp(&b.pos[2]))
            });
            cands.truncate(settings.k);
            let zmin = cands[0].depth;
            let raw: Vec<f64> = cands
                .iter()
                .map(|c| (1.0 - (c.dpx / r).powi(2)) * (-(c.depth - zmin) / settings.tau).exp())
                .collect();
            let total: f64 = raw.iter().sum();
            if !(total > 0.0) {
                continue;
            }
            for (c, wt) in cands.iter().zip(&raw) {
                pixels.push(pix);
                points.push(c.point);
                let v = wt / total;
                weights.extend_from_slice(&[v, v, v]);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            transform: cam.row_transform(),
            pixels: pixels.into(),
            points: points.into(),
            weights,
        })
    }

    pub fn entry_count(&self) -> usize {
        self.pixels.len()
    }

    /// Coverage mask of the plan.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.width * self.height];
        for &p in self.pixels.iter() {
            mask[p] = true;
        }
        mask
    }

    /// Splatted image as a `[W*H, 3]` tape value; differentiable in `normals`.
    pub fn render_var<'t>(&self, normals: &Var<'t>) -> RenderResult<Var<'t>> {
        let tape = normals.tape();
        let m = tape.constant(Tensor::matrix(3, 3, self.transform.to_vec())?);
        let cam_normals = normals.matmul(&m)?;
        let wts = tape.constant(Tensor::matrix(self.pixels.len(), 3, self.weights.clone())?);
        let out = cam_normals
            .gather_rows(self.points.clone())?
            .mul(&wts)?
            .scatter_add_rows(self.pixels.clone(), self.width * self.height)?;
        Ok(out)
    }

    pub fn render(&self, normals: &[Vec3]) -> RenderResult<NormalImage> {
        let tape = crate::autodiff::Tape::new();
        let n = tape.constant(Tensor::from_rows(normals));
        let out = self.render_var(&n)?;
        Ok(NormalImage {
            width: self.width,
            height: self.height,
            data: out.value().into_data(),
            mask: self.mask(),
        })
    }
}

/// Splats oriented points as soft discs of `radius_px` pixels.
pub fn splat_point_normals(
    positions: &[Vec3],
    normals: &[Vec3],
    cam: &Camera,
    settings: &RenderSettings,
) -> RenderResult<NormalImage> {
    if positions.len() != normals.len() {
        return Err(GeometryError::LengthMismatch {
            expected: positions.len(),
            found: normals.len(),
        }
        .into());
    }
    SplatPlan::build(positions, cam, settings)?.render(normals)
}

/// Sum over pixels of the squared normal difference, divided by the pixel count.
pub fn image_normal_loss(gt: &NormalImage, pred: &NormalImage) -> RenderResult<f64> {
    if gt.width != pred.width || gt.height != pred.height {
        return Err(RenderError::ResolutionMismatch(gt.width, gt.height, pred.width, pred.height));
    }
    let sum: f64 = gt.data.iter().zip(&pred.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / (gt.width * gt.height) as f64)
}

/// Taped counterpart of [`image_normal_loss`] for a `[W*H, 3]` prediction.
pub fn image_normal_loss_var<'t>(gt: &NormalImage, pred: &Var<'t>) -> RenderResult<Var<'t>> {
    let (rows, cols) = pred.dims();
    if rows != gt.width * gt.height || cols != 3 {
        return Err(RenderError::ResolutionMismatch(gt.width, gt.height, rows, cols));
    }
    let target = pred.tape().constant(Tensor::matrix(rows, 3, gt.data.clone())?);
    Ok(pred
        .sub(&target)?
        .square()?
        .sum()?
        .scale(1.0 / rows as f64)?)
}
