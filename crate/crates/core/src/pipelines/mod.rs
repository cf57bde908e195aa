//! End-to-end fitting procedures.
//!
//! Every pipeline first maps its inputs into a unit bounding box (unless
//! disabled in [`FitConfig`]), optimizes there, and returns results in the
//! caller's coordinates. Randomness is drawn from streams derived from
//! `FitConfig::seed`, so identical inputs and configs reproduce bitwise.

mod animate;
mod deform;
mod fit_static;

pub use animate::{animate, AnimationFit};
pub use deform::{fit_deformation, fit_sequence, DeformationFit, Target};
pub use fit_static::{fit_static, StaticFit};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::field::{DeformationField, FieldError, InputFrame, DEFAULT_HIDDEN, DEFAULT_OMEGA0};
use crate::geometry::{Aabb, GeometryError, TriMesh, Vec3};
use crate::losses::{LossBreakdown, LossError, LossWeights, NeighborLists, DEFAULT_ISO_K};
use crate::metrics::{AccuracyThresholds, DEFAULT_EVAL_SAMPLES};
use crate::optim::{OptimError, DEFAULT_LR};
use crate::render::{RenderError, RenderSettings};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("canonical point set is empty")]
    EmptyCanonical,
    #[error("correspondences are required when lambda_v > 0")]
    MissingCorrespondences,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("a sequence needs at least 2 frames, got {0}")]
    SceneTooShort(usize),
    #[error("gammas must be finite and sorted ascending")]
    InvalidGammas,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

/// Settings shared by all pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    /// Ground-truth surface samples drawn per step; also caps the number of
    /// canonical anchors evaluated per step.
    pub sample_count: usize,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// `lambda_s`, `lambda_v` and `lambda_iso` during the first phase.
    pub early_weights: LossWeights,
    /// Enables the keypoint-first schedule for supervised deformation fits.
    pub phases: bool,
    pub phase1_fraction: f64,
    pub ramp_fraction: f64,
    pub k: usize,
    pub normalize: bool,
    pub omega0: f64,
    pub hidden: Vec<usize>,
    pub iso_gammas: Vec<f64>,
    pub render: RenderSettings,
    pub patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub eval_samples: usize,
    pub accuracy: AccuracyThresholds,
    pub n_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            sample_count: 10_000,
            lr: DEFAULT_LR,
            seed: 0,
            weights: LossWeights::default(),
            early_weights: LossWeights::early_phase(),
            phases: true,
            phase1_fraction: 0.5,
            ramp_fraction: 0.25,
            k: DEFAULT_ISO_K,
            normalize: true,
            omega0: DEFAULT_OMEGA0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            iso_gammas: vec![1.0],
            render: RenderSettings::default(),
            patience: 200,
            plateau_factor: 0.1,
            min_lr: 1e-8,
            eval_samples: DEFAULT_EVAL_SAMPLES,
            accuracy: AccuracyThresholds::default(),
            n_points: 10_000,
        }
    }
}

impl FitConfig {
    /// Defaults for single-scan animation: keypoint and isometric terms only.
    pub fn animation() -> Self {
        Self {
            weights: LossWeights::animation(),
            phases: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> PipelineResult<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.sample_count == 0 {
            return bad("sample_count must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        for (name, f) in [("phase1_fraction", self.phase1_fraction), ("ramp_fraction", self.ramp_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.phase1_fraction + self.ramp_fraction > 1.0 {
            return bad("phase1_fraction + ramp_fraction exceeds 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1], got {}", self.plateau_factor));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.iso_gammas.is_empty() || self.iso_gammas.iter().any(|g| !g.is_finite()) {
            return bad("iso_gammas must be a non-empty list of finite values".into());
        }
        self.weights.validate()?;
        self.early_weights.validate()?;
        self.render.validate()?;
        Ok(())
    }

    /// Weights in effect at `step` (0-based) of a phased run: early weights,
    /// then `lambda_s` ramping linearly to its configured value, then the
    /// configured weights.
    pub fn weights_at(&self, step: usize) -> LossWeights {
        if !self.phases {
            return self.weights;
        }
        let p1 = (self.phase1_fraction * self.steps as f64).floor() as usize;
        let ramp = (self.ramp_fraction * self.steps as f64).floor() as usize;
        if step < p1 {
            LossWeights {
                lambda_s: self.early_weights.lambda_s,
                lambda_v: self.early_weights.lambda_v,
                lambda_iso: self.early_weights.lambda_iso,
                ..self.weights
            }
        } else if step < p1 + ramp {
            let t = (step - p1 + 1) as f64 / ramp as f64;
            LossWeights {
                lambda_s: self.weights.lambda_s * t,
                ..self.weights
            }
        } else {
            self.weights
        }
    }
}

/// Maps a scene into (and out of) its unit bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }

    /// Centers the box at the origin and divides by its largest side.
    pub fn from_bounds(b: &Aabb) -> Self {
        let e = b.max_extent();
        Self {
            center: b.center(),
            scale: if e > 0.0 && e.is_finite() { e } else { 1.0 },
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.scale
    }

    pub fn revert(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.center
    }

    pub fn apply_all(&self, ps: &[Vec3]) -> Vec<Vec3> {
        ps.iter().map(|p| self.apply(p)).collect()
    }

    pub fn revert_all(&self, ps: &[Vec3]) -> Vec<Vec3> {
        ps.iter().map(|p| self.revert(p)).collect()
    }

    /// Vertex normals are kept: translation and uniform scaling leave them unchanged.
    pub fn apply_mesh(&self, mesh: &TriMesh) -> PipelineResult<TriMesh> {
        let moved = mesh.with_vertices(self.apply_all(mesh.vertices()))?;
        Ok(match mesh.vertex_normals() {
            Some(n) => moved.with_normals(n.to_vec())?,
            None => moved,
        })
    }

    /// Input frame that makes a field trained in normalized coordinates act
    /// on world coordinates.
    pub fn frame(&self) -> InputFrame {
        InputFrame {
            center: self.center,
            scale: self.scale,
        }
    }

    fn for_points(enabled: bool, points: &[Vec3]) -> Self {
        match (enabled, Aabb::from_points(points)) {
            (true, Some(b)) => Self::from_bounds(&b),
            _ => Self::identity(),
        }
    }
}

/// One row of the per-step log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Lowest total loss seen up to and including this step.
    pub best: f64,
}

pub fn log_csv(log: &[StepLog]) -> String {
    let mut s = String::from("step,lr,total,cd,n,nI,iso,V\n");
    for r in log {
        let l = &r.loss;
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.step, r.lr, l.total, l.cd, l.n, l.ni, l.iso, l.v
        ));
    }
    s
}

fn push_log(log: &mut Vec<StepLog>, step: usize, lr: f64, loss: LossBreakdown) {
    let best = log.last().map_or(loss.total, |r| r.best.min(loss.total));
    log.push(StepLog { step, lr, loss, best });
}

/// Index and mean vertex distance of the training frame closest to `target`;
/// ties go to the lowest index.
pub fn nearest_canonical_frame(target: &[Vec3], frames: &[Vec<Vec3>]) -> PipelineResult<(usize, f64)> {
    if frames.is_empty() {
        return Err(PipelineError::Empty("frame list"));
    }
    if target.is_empty() {
        return Err(PipelineError::Empty("target"));
    }
    let mut best = (0, f64::INFINITY);
    for (i, f) in frames.iter().enumerate() {
        if f.len() != target.len() {
            return Err(PipelineError::LengthMismatch {
                expected: target.len(),
                found: f.len(),
            });
        }
        let d = f.iter().zip(target).map(|(a, b)| (a - b).norm()).sum::<f64>() / target.len() as f64;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// Partially deformed positions for one `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedFrame {
    pub gamma: f64,
    pub positions: Vec<Vec3>,
    pub iso: Option<f64>,
}

/// `x + gamma * g(x)` for every gamma, with the isometric loss of each frame
/// when `neighbors` (built on `canonical`) is given.
pub fn interpolate_sequence(
    field: &DeformationField,
    canonical: &[Vec3],
    gammas: &[f64],
    neighbors: Option<&NeighborLists>,
) -> PipelineResult<Vec<InterpolatedFrame>> {
    if gammas.iter().any(|g| !g.is_finite()) || gammas.windows(2).any(|w| w[0] > w[1]) {
        return Err(PipelineError::InvalidGammas);
    }
    if canonical.is_empty() {
        return Err(PipelineError::EmptyCanonical);
    }
    let disp = field.displacement(canonical)?;
    gammas
        .iter()
        .map(|&gamma| {
            let positions: Vec<Vec3> = canonical.iter().zip(&disp).map(|(x, d)| x + d * gamma).collect();
            let iso = neighbors
                .map(|n| crate::losses::iso_loss(canonical, &positions, n))
                .transpose()?;
            Ok(InterpolatedFrame { gamma, positions, iso })
        })
        .collect()
}
