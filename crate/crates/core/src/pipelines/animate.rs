use super::deform::train_field;
use super::{FitConfig, Normalization, PipelineError, PipelineResult, StepLog};
use crate::field::DeformationField;
use crate::geometry::{transfer_normals, TriMesh};
use crate::losses::CorrespondenceSet;

/// The deformed scan, the field that produced it and the training log.
#[derive(Debug, Clone)]
pub struct AnimationFit {
    pub mesh: TriMesh,
    pub field: DeformationField,
    pub log: Vec<StepLog>,
}

/// Moves a single scan so that `body_pairs` (canonical body point, target
/// body point) are matched, keeping the scan locally rigid. Use
/// [`FitConfig::animation`] for the usual weights.
pub fn animate(scan: &TriMesh, body_pairs: &CorrespondenceSet, config: &FitConfig) -> PipelineResult<AnimationFit> {
    if body_pairs.is_empty() {
        return Err(PipelineError::MissingCorrespondences);
    }
    if scan.vertices().is_empty() {
        return Err(PipelineError::EmptyCanonical);
    }
    let norm = Normalization::for_points(config.normalize, scan.vertices());
    let canonical = norm.apply_all(scan.vertices());
    let pairs = body_pairs.map(|p| norm.apply(p));
    let (field, log) = train_field(&canonical, None, Some(&pairs), config, |w| w)?;
    let field = field.with_frame(norm.frame());
    let moved = field.deform(scan.vertices())?;
    let normals = transfer_normals(scan, &moved)?;
    let mesh = scan.with_vertices(moved)?.with_normals(normals)?;
    Ok(AnimationFit { mesh, field, log })
}
