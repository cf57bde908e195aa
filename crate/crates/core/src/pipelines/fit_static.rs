use super::{push_log, FitConfig, Normalization, PipelineError, PipelineResult, StepLog};
use crate::autodiff::{Tape, Tensor};
use crate::geometry::{sample_surface, PointSet, TriMesh, Vec3};
use crate::losses::{surface_loss_var, ImageTerm};
use crate::optim::{AdamState, ParamGroup, PlateauSchedule};
use crate::render::{rasterize_mesh_normals, sample_camera, SplatPlan};
use crate::rng::{derive_seed, stream};

/// Optimized oriented points plus the surface sample they started from.
#[derive(Debug, Clone)]
pub struct StaticFit {
    pub points: PointSet,
    pub initial: PointSet,
    pub log: Vec<StepLog>,
}

fn rows(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Fits `n_points` oriented points to the surface of `gt`.
///
/// Positions and normals start from a surface sample and are optimized
/// jointly against the surface loss, with a fresh ground-truth sample and a
/// fresh camera every step. Normals are renormalized after each update.
pub fn fit_static(gt: &TriMesh, n_points: usize, config: &FitConfig) -> PipelineResult<StaticFit> {
    config.validate()?;
    if n_points == 0 {
        return Err(PipelineError::InvalidConfig("n_points must be at least 1".into()));
    }
    let bounds = gt.bounds().ok_or(PipelineError::Empty("mesh"))?;
    let norm = if config.normalize {
        Normalization::from_bounds(&bounds)
    } else {
        Normalization::identity()
    };
    let mesh = norm.apply_mesh(gt)?;
    let mesh_bounds = mesh.bounds().ok_or(PipelineError::Empty("mesh"))?;
    let init = sample_surface(&mesh, n_points, derive_seed(config.seed, stream::INIT, 0))?;

    let mut pos = flat(init.positions());
    let mut nrm = flat(init.normals());
    let mut adam = AdamState::new(&[pos.len(), nrm.len()], config.lr)?;
    let mut schedule = PlateauSchedule::new(config.lr);
    schedule.patience = config.patience;
    schedule.factor = config.plateau_factor;
    schedule.min_lr = config.min_lr;
    let weights = config.weights;
    let mut log = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let sample = sample_surface(&mesh, config.sample_count, derive_seed(config.seed, stream::GT_SAMPLE, step as u64))?;
        let image = if weights.lambda_ni > 0.0 {
            let cam = sample_camera(derive_seed(config.seed, stream::CAMERA, step as u64), &mesh_bounds, &config.render)?;
            let gt_image = rasterize_mesh_normals(&mesh, &cam)?;
            let plan = SplatPlan::build(&rows(&pos), &cam, &config.render)?;
            Some((gt_image, plan))
        } else {
            None
        };
        let tape = Tape::new();
        let xp = tape.parameter(Tensor::matrix(n_points, 3, pos.clone())?);
        let xn = tape.parameter(Tensor::matrix(n_points, 3, nrm.clone())?);
        let term = image.as_ref().map(|(gt_image, plan)| ImageTerm { gt_image, plan });
        // unit normals inside the graph keep the gradient tangent to the sphere
        let unit = xn.normalize_rows()?;
        let (loss, breakdown) = surface_loss_var(&xp, &unit, &sample, &weights, term)?;
        let grads = tape.backward(&loss)?;
        let zeros = vec![0.0; pos.len()];
        let lr = adam.lr;
        let previous = nrm.clone();
        adam.step(&mut [
            ParamGroup {
                name: "positions",
                values: &mut pos,
                grad: grads.get(&xp).unwrap_or(&zeros),
            },
            ParamGroup {
                name: "normals",
                values: &mut nrm,
                grad: grads.get(&xn).unwrap_or(&zeros),
            },
        ])?;
        for (n, old) in nrm.chunks_exact_mut(3).zip(previous.chunks_exact(3)) {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len > 0.0 && len.is_finite() {
                n.iter_mut().for_each(|v| *v /= len);
            } else {
                n.copy_from_slice(old);
            }
        }
        push_log(&mut log, step, lr, breakdown);
        adam.lr = schedule.update(breakdown.total)?;
    }

    let revert = |ps: &PointSet| -> PipelineResult<PointSet> {
        Ok(PointSet::new(norm.revert_all(ps.positions()), ps.normals().to_vec())?)
    };
    Ok(StaticFit {
        points: PointSet::new(norm.revert_all(&rows(&pos)), rows(&nrm))?,
        initial: revert(&init)?,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::icosphere;
    use crate::metrics::chamfer_metric;
    use crate::render::RenderSettings;

    fn quick(steps: usize) -> FitConfig {
        FitConfig {
            steps,
            sample_count: 2000,
            render: RenderSettings {
                width: 64,
                height: 64,
                ..RenderSettings::default()
            },
            ..FitConfig::default()
        }
    }

    #[test]
    fn improves_chamfer_on_sphere() {
        let mesh = icosphere(3).unwrap();
        let fit = fit_static(&mesh, 500, &quick(150)).unwrap();
        let eval = sample_surface(&mesh, 20_000, 77).unwrap();
        let before = chamfer_metric(fit.initial.positions(), eval.positions()).unwrap();
        let after = chamfer_metric(fit.points.positions(), eval.positions()).unwrap();
        assert!(after < before, "{after} vs {before}");
        assert!(fit.points.normals().iter().all(|n| (n.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn zero_points_and_determinism() {
        let mesh = icosphere(1).unwrap();
        assert!(matches!(fit_static(&mesh, 0, &quick(1)), Err(PipelineError::InvalidConfig(_))));
        let a = fit_static(&mesh, 50, &quick(3)).unwrap();
        let b = fit_static(&mesh, 50, &quick(3)).unwrap();
        assert_eq!(a.points, b.points);
    }
}
