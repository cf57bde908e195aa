use rand::seq::index::sample;
use rayon::prelude::*;

use super::{push_log, FitConfig, Normalization, PipelineError, PipelineResult, StepLog};
use crate::autodiff::Tape;
use crate::field::{DeformationField, DynamicFieldSet, FieldVars};
use crate::geometry::{sample_surface, DynamicScene, PointSet, TriMesh, Vec3};
use crate::losses::{combined_loss_var, CorrespondenceSet, DeformationTerms, LossWeights, NeighborLists};
use crate::optim::{AdamState, ParamGroup, PlateauSchedule};
use crate::rng::{derive_seed, rng_for, stream};

/// Surface the canonical points should move onto.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Points(&'a PointSet),
    /// Resampled every step.
    Mesh(&'a TriMesh),
}

/// A fitted field (acting on world coordinates) and its training log.
#[derive(Debug, Clone)]
pub struct DeformationFit {
    pub field: DeformationField,
    pub log: Vec<StepLog>,
}

pub(super) enum NormTarget {
    Points(Vec<Vec3>),
    Mesh(TriMesh),
}

impl NormTarget {
    fn sample(&self, config: &FitConfig, step: usize) -> PipelineResult<Vec<Vec3>> {
        let seed = derive_seed(config.seed, stream::GT_SAMPLE, step as u64);
        Ok(match self {
            NormTarget::Mesh(m) => sample_surface(m, config.sample_count, seed)?.into_parts().0,
            NormTarget::Points(p) if p.len() <= config.sample_count => p.clone(),
            NormTarget::Points(p) => {
                let mut rng = crate::rng::rng(seed);
                let mut idx = sample(&mut rng, p.len(), config.sample_count).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| p[i]).collect()
            }
        })
    }
}

/// Optimizes a fresh field on already-normalized inputs.
pub(super) fn train_field(
    canonical: &[Vec3],
    target: Option<&NormTarget>,
    corr: Option<&CorrespondenceSet>,
    config: &FitConfig,
    adjust: impl Fn(LossWeights) -> LossWeights,
) -> PipelineResult<(DeformationField, Vec<StepLog>)> {
    config.validate()?;
    if canonical.is_empty() {
        return Err(PipelineError::EmptyCanonical);
    }
    let mut field = DeformationField::init(&config.hidden, derive_seed(config.seed, stream::INIT, 0), config.omega0)?;
    let names = field.parameter_names();
    let sizes: Vec<usize> = field.parameters().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(&sizes, config.lr)?;
    let mut schedule = PlateauSchedule::new(config.lr);
    schedule.patience = config.patience;
    schedule.factor = config.plateau_factor;
    schedule.min_lr = config.min_lr;

    let neighbors = NeighborLists::build(canonical, config.k)?;
    let full = canonical.len() <= config.sample_count;
    let mut log = Vec::with_capacity(config.steps);
    let mut previous: Option<LossWeights> = None;

    for step in 0..config.steps {
        let weights = adjust(config.weights_at(step));
        if weights.lambda_v > 0.0 && corr.is_none_or(|c| c.is_empty()) {
            return Err(PipelineError::MissingCorrespondences);
        }
        if previous != Some(weights) {
            schedule.reset();
            previous = Some(weights);
        }
        let target_sample = match (weights.lambda_s > 0.0, target) {
            (true, Some(t)) => t.sample(config, step)?,
            (true, None) => {
                return Err(PipelineError::InvalidConfig(
                    "lambda_s > 0 needs a target surface".into(),
                ))
            }
            (false, _) => Vec::new(),
        };
        let (subset, local);
        let (points, nb): (&[Vec3], &NeighborLists) = if full {
            (canonical, &neighbors)
        } else {
            let mut rng = rng_for(config.seed, stream::SUBSET, step as u64);
            let anchors = sample(&mut rng, canonical.len(), config.sample_count).into_vec();
            let (union, lists) = neighbors.restrict(&anchors);
            subset = union.iter().map(|&i| canonical[i]).collect::<Vec<_>>();
            local = lists;
            (&subset, &local)
        };
        let terms = DeformationTerms {
            canonical: points,
            neighbors: nb,
            target: &target_sample,
            correspondences: corr,
            gammas: &config.iso_gammas,
        };

        let tape = Tape::new();
        let params: Vec<_> = field.parameters().into_iter().map(|t| tape.parameter(t.clone())).collect();
        let vars = FieldVars::new(&field, params.clone());
        let (loss, breakdown) = combined_loss_var(&vars, &tape, &terms, &weights)?;
        let grads = tape.backward(&loss)?;
        let zero: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let lr = adam.lr;
        {
            let mut tensors = field.parameters_mut();
            let mut groups: Vec<ParamGroup> = tensors
                .iter_mut()
                .zip(&names)
                .zip(params.iter().zip(&zero))
                .map(|((t, name), (p, z))| ParamGroup {
                    name,
                    values: t.data_mut(),
                    grad: grads.get(p).unwrap_or(z),
                })
                .collect();
            adam.step(&mut groups)?;
        }
        push_log(&mut log, step, lr, breakdown);
        adam.lr = schedule.update(breakdown.total)?;
    }
    Ok((field, log))
}

/// Fits one deformation field taking `canonical` onto `target`.
///
/// With correspondences the run starts keypoint-driven (see
/// [`FitConfig::weights_at`]); without them `lambda_v` is forced to zero and
/// the configured weights apply from the first step.
pub fn fit_deformation(
    canonical: &PointSet,
    target: Target<'_>,
    correspondences: Option<&CorrespondenceSet>,
    config: &FitConfig,
) -> PipelineResult<DeformationFit> {
    if canonical.is_empty() {
        return Err(PipelineError::EmptyCanonical);
    }
    let norm = Normalization::for_points(config.normalize, canonical.positions());
    let canonical_n = norm.apply_all(canonical.positions());
    let target_n = match target {
        Target::Points(p) => NormTarget::Points(norm.apply_all(p.positions())),
        Target::Mesh(m) => NormTarget::Mesh(norm.apply_mesh(m)?),
    };
    let corr_n = correspondences.map(|c| c.map(|p| norm.apply(p)));
    let supervised = corr_n.is_some();
    let mut cfg = config.clone();
    if !supervised {
        cfg.phases = false;
    }
    let (field, log) = train_field(&canonical_n, Some(&target_n), corr_n.as_ref(), &cfg, |w| {
        if supervised {
            w
        } else {
            LossWeights { lambda_v: 0.0, ..w }
        }
    })?;
    Ok(DeformationFit {
        field: field.with_frame(norm.frame()),
        log,
    })
}

/// One independent [`fit_deformation`] per target frame, all from the
/// canonical frame. `correspondences` is empty or holds one entry per target
/// frame in scene order.
pub fn fit_sequence(
    scene: &DynamicScene,
    correspondences: &[Option<CorrespondenceSet>],
    config: &FitConfig,
) -> PipelineResult<DynamicFieldSet> {
    if scene.len() < 2 {
        return Err(PipelineError::SceneTooShort(scene.len()));
    }
    let targets: Vec<&PointSet> = scene.targets().map(|(_, p)| p).collect();
    if !correspondences.is_empty() && correspondences.len() != targets.len() {
        return Err(PipelineError::LengthMismatch {
            expected: targets.len(),
            found: correspondences.len(),
        });
    }
    let fields = targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let corr = correspondences.get(i).and_then(Option::as_ref);
            fit_deformation(scene.canonical(), Target::Points(t), corr, config).map(|f| f.field)
        })
        .collect::<PipelineResult<Vec<_>>>()?;
    Ok(DynamicFieldSet::new(fields))
}
