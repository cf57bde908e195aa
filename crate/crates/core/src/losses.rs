//! Differentiable objectives.
//!
//! Every loss comes in two forms: a plain function on values and a `_var`
//! function that records the same computation on a [`Tape`]. Nearest
//! neighbours are looked up on current values and held fixed through the
//! backward pass.

use std::rc::Rc;

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var, EPS};
use crate::field::{DeformationField, FieldError, FieldVars};
use crate::geometry::{GeometryError, PointSet, SpatialIndex, TriMesh, Vec3};
use crate::render::{self, Camera, RenderError, RenderSettings, SplatPlan};

pub const DEFAULT_ISO_K: usize = 5;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("point set is empty")]
    EmptySet,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("neighbourhood is empty")]
    EmptyNeighborhood,
    #[error("correspondence set is empty")]
    EmptyCorrespondences,
    #[error("correspondences are required when lambda_v > 0")]
    MissingCorrespondences,
    #[error("image normal term needs a renderer")]
    MissingRenderer,
    #[error("at least one loss weight must be positive")]
    AtLeastOneTerm,
    #[error("invalid weight {name} = {value}")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("gamma list is empty or contains non-finite values")]
    InvalidGammas,
    #[error("non-finite coordinate in correspondence {0}")]
    NonFiniteCorrespondence(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

pub type LossResult<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cd: f64,
    pub lambda_n: f64,
    pub lambda_ni: f64,
    pub lambda_s: f64,
    pub lambda_iso: f64,
    pub lambda_v: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cd: 1e4,
            lambda_n: 1.0,
            lambda_ni: 10.0,
            // lambda_cd already scales the Chamfer term by 1e4; at lambda_s = 1
            // resampling noise outweighs the keypoint term and points slide
            lambda_s: 1e-3,
            lambda_iso: 0.1,
            lambda_v: 1.0,
        }
    }
}

impl LossWeights {
    /// Weights used while large-scale motion is learned from keypoints.
    pub fn early_phase() -> Self {
        Self {
            lambda_s: 0.0,
            lambda_v: 1.0,
            lambda_iso: 0.1,
            ..Self::default()
        }
    }

    /// Single-scan animation: keypoints and isometry only.
    pub fn animation() -> Self {
        Self {
            lambda_s: 0.0,
            lambda_iso: 1e3,
            lambda_v: 1e4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> LossResult<()> {
        for (name, value) in [
            ("lambda_cd", self.lambda_cd),
            ("lambda_n", self.lambda_n),
            ("lambda_ni", self.lambda_ni),
            ("lambda_s", self.lambda_s),
            ("lambda_iso", self.lambda_iso),
            ("lambda_v", self.lambda_v),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(LossError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Keypoint pairs `(v_c, v_t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    sources: Vec<Vec3>,
    targets: Vec<Vec3>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Vec3, Vec3)>) -> LossResult<Self> {
        for (i, (s, t)) in pairs.iter().enumerate() {
            if !s.iter().chain(t.iter()).all(|c| c.is_finite()) {
                return Err(LossError::NonFiniteCorrespondence(i));
            }
        }
        let (sources, targets) = pairs.into_iter().unzip();
        Ok(Self { sources, targets })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &[Vec3] {
        &self.sources
    }

    pub fn targets(&self) -> &[Vec3] {
        &self.targets
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Vec3, &Vec3)> {
        self.sources.iter().zip(&self.targets)
    }

    /// Same pairs with every coordinate mapped by `f`.
    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            sources: self.sources.iter().map(&f).collect(),
            targets: self.targets.iter().map(&f).collect(),
        }
    }
}

/// Frozen k-nearest-neighbour pairs of a canonical point set together with
/// their canonical distances.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    k: usize,
    points: usize,
    first: Rc<[usize]>,
    second: Rc<[usize]>,
    rest: Vec<f64>,
}

fn floored_distance(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    (d.x * d.x + d.y * d.y + d.z * d.z).max(EPS).sqrt()
}

impl NeighborLists {
    /// `k` nearest other points of every canonical point, nearest first.
    pub fn build(canonical: &[Vec3], k: usize) -> LossResult<Self> {
        if canonical.len() < 2 || k == 0 {
            return Err(LossError::EmptyNeighborhood);
        }
        let k = k.min(canonical.len() - 1);
        let index = SpatialIndex::build(canonical);
        let lists: Vec<Vec<usize>> = canonical
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let found = index.knn_squared(p, k + 1)?;
                let mut list: Vec<usize> = found.iter().map(|&(j, _)| j).filter(|&j| j != i).collect();
                list.truncate(k);
                Ok(list)
            })
            .collect::<LossResult<_>>()?;
        Ok(Self::from_lists(canonical, &lists, k))
    }

    fn from_lists(canonical: &[Vec3], lists: &[Vec<usize>], k: usize) -> Self {
        let mut first = Vec::new();
        let mut second = Vec::new();
        let mut rest = Vec::new();
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                first.push(i);
                second.push(j);
                rest.push(floored_distance(&canonical[i], &canonical[j]));
            }
        }
        Self {
            k,
            points: canonical.len(),
            first: first.into(),
            second: second.into(),
            rest,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn point_count(&self) -> usize {
        self.points
    }

    pub fn pair_count(&self) -> usize {
        self.first.len()
    }

    /// `(i, j)` pairs in evaluation order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.first.iter().copied().zip(self.second.iter().copied())
    }

    pub fn canonical_distances(&self) -> &[f64] {
        &self.rest
    }

    /// Restricts the pairs to those anchored at `anchors`. Returns the sorted
    /// set of canonical indices touched (anchors plus their neighbours) and
    /// neighbour lists re-indexed into that set.
    pub fn restrict(&self, anchors: &[usize]) -> (Vec<usize>, NeighborLists) {
        let mut is_anchor = vec![false; self.points];
        for &a in anchors {
            is_anchor[a] = true;
        }
        let mut used = vec![false; self.points];
        for (i, j) in self.pairs() {
            if is_anchor[i] {
                used[i] = true;
                used[j] = true;
            }
        }
        for &a in anchors {
            used[a] = true;
        }
        let union: Vec<usize> = (0..self.points).filter(|&i| used[i]).collect();
        let mut local = vec![usize::MAX; self.points];
        for (l, &g) in union.iter().enumerate() {
            local[g] = l;
        }
        let mut first = Vec::new();
        let mut second = Vec::new();
        let mut rest = Vec::new();
        for ((i, j), d) in self.pairs().zip(&self.rest) {
            if is_anchor[i] {
                first.push(local[i]);
                second.push(local[j]);
                rest.push(*d);
            }
        }
        (
            union.clone(),
            NeighborLists {
                k: self.k,
                points: union.len(),
                first: first.into(),
                second: second.into(),
                rest,
            },
        )
    }
}

/// Nearest-neighbour assignments in both directions.
pub fn nearest_assignments(x: &[Vec3], y: &[Vec3]) -> LossResult<(Vec<usize>, Vec<usize>)> {
    if x.is_empty() || y.is_empty() {
        return Err(LossError::EmptySet);
    }
    let ty = SpatialIndex::build(y);
    let tx = SpatialIndex::build(x);
    let x_to_y = x
        .par_iter()
        .map(|p| ty.nearest(p).map(|(i, _)| i))
        .collect::<Result<Vec<_>, _>>()?;
    let y_to_x = y
        .par_iter()
        .map(|p| tx.nearest(p).map(|(i, _)| i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((x_to_y, y_to_x))
}

/// Chamfer `cd` and normal term `n` between two oriented sets.
///
/// `cd` sums the per-direction means of squared nearest distances; `n`
/// averages the per-direction means of `1 - |cos|` over the same matches.
pub fn chamfer_loss(x: &PointSet, y: &PointSet) -> LossResult<(f64, f64)> {
    let (xy, yx) = nearest_assignments(x.positions(), y.positions())?;
    let (xp, xn, yp, yn) = (x.positions(), x.normals(), y.positions(), y.normals());
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let cd = mean(xp.iter().zip(&xy).map(|(p, &j)| (p - yp[j]).norm_squared()).collect())
        + mean(yp.iter().zip(&yx).map(|(p, &i)| (p - xp[i]).norm_squared()).collect());
    let n = 0.5
        * (mean(xn.iter().zip(&xy).map(|(a, &j)| 1.0 - a.dot(&yn[j]).abs()).collect())
            + mean(yn.iter().zip(&yx).map(|(a, &i)| 1.0 - a.dot(&xn[i]).abs()).collect()));
    Ok((cd, n))
}

/// Position-only Chamfer `cd`.
pub fn chamfer_distance(x: &[Vec3], y: &[Vec3]) -> LossResult<f64> {
    let (xy, yx) = nearest_assignments(x, y)?;
    let a: f64 = x.iter().zip(&xy).map(|(p, &j)| (p - y[j]).norm_squared()).sum::<f64>() / x.len() as f64;
    let b: f64 = y.iter().zip(&yx).map(|(p, &i)| (p - x[i]).norm_squared()).sum::<f64>() / y.len() as f64;
    Ok(a + b)
}

/// Recorded Chamfer terms.
pub struct ChamferVars<'t> {
    pub cd: Var<'t>,
    pub n: Option<Var<'t>>,
}

/// Chamfer between taped positions (and optional normals) of `X` and a fixed
/// target set `Y`.
pub fn chamfer_var<'t>(
    x_pos: &Var<'t>,
    x_nrm: Option<&Var<'t>>,
    y_pos: &[Vec3],
    y_nrm: Option<&[Vec3]>,
) -> LossResult<ChamferVars<'t>> {
    let tape = x_pos.tape();
    let xv = x_pos.value().to_rows3()?;
    let (xy, yx) = nearest_assignments(&xv, y_pos)?;
    let yp = tape.constant(Tensor::from_rows(y_pos));
    let matched_y = tape.constant(Tensor::from_rows(&xy.iter().map(|&j| y_pos[j]).collect::<Vec<_>>()));
    let yx: Rc<[usize]> = yx.into();
    let forward = x_pos.squared_row_distance(&matched_y)?.mean()?;
    let backward = x_pos.gather_rows(yx.clone())?.squared_row_distance(&yp)?.mean()?;
    let cd = forward.add(&backward)?;
    let n = match (x_nrm, y_nrm) {
        (Some(xn), Some(yn)) => {
            if yn.len() != y_pos.len() {
                return Err(LossError::LengthMismatch {
                    expected: y_pos.len(),
                    found: yn.len(),
                });
            }
            let yn_matched = tape.constant(Tensor::from_rows(&xy.iter().map(|&j| yn[j]).collect::<Vec<_>>()));
            let yn_all = tape.constant(Tensor::from_rows(yn));
            // cosines: only the direction of the taped normals matters
            let xn = xn.normalize_rows()?;
            let a = xn.dot_rows(&yn_matched)?.abs()?.mean()?;
            let b = xn.gather_rows(yx)?.dot_rows(&yn_all)?.abs()?.mean()?;
            Some(a.add(&b)?.scale(-0.5)?.add_scalar(1.0)?)
        }
        _ => None,
    };
    Ok(ChamferVars { cd, n })
}

/// Mean over neighbour pairs of `|d(x_i^c, x_j^c) - d(x_i^t, x_j^t)|`.
pub fn iso_loss(canonical: &[Vec3], deformed: &[Vec3], neighbors: &NeighborLists) -> LossResult<f64> {
    if canonical.len() != deformed.len() || canonical.len() != neighbors.point_count() {
        return Err(LossError::LengthMismatch {
            expected: neighbors.point_count(),
            found: deformed.len(),
        });
    }
    if neighbors.pair_count() == 0 {
        return Err(LossError::EmptyNeighborhood);
    }
    let sum: f64 = neighbors
        .pairs()
        .map(|(i, j)| {
            (floored_distance(&canonical[i], &canonical[j]) - floored_distance(&deformed[i], &deformed[j])).abs()
        })
        .sum();
    Ok(sum / neighbors.pair_count() as f64)
}

/// Taped isometric loss of `deformed` (`[N, 3]`) against the frozen
/// canonical distances of `neighbors`.
pub fn iso_loss_var<'t>(deformed: &Var<'t>, neighbors: &NeighborLists) -> LossResult<Var<'t>> {
    let (rows, _) = deformed.dims();
    if rows != neighbors.point_count() {
        return Err(LossError::LengthMismatch {
            expected: neighbors.point_count(),
            found: rows,
        });
    }
    if neighbors.pair_count() == 0 {
        return Err(LossError::EmptyNeighborhood);
    }
    let rest = deformed.tape().constant(Tensor::column(neighbors.rest.clone()));
    let a = deformed.gather_rows(neighbors.first.clone())?;
    let b = deformed.gather_rows(neighbors.second.clone())?;
    Ok(a.squared_row_distance(&b)?.sqrt()?.sub(&rest)?.abs()?.mean()?)
}

fn check_gammas(gammas: &[f64]) -> LossResult<()> {
    if gammas.is_empty() || gammas.iter().any(|g| !g.is_finite()) {
        return Err(LossError::InvalidGammas);
    }
    Ok(())
}

/// Isometric loss averaged over partial deformations `x + gamma * g(x)`.
pub fn iso_loss_gamma(
    field: &DeformationField,
    canonical: &[Vec3],
    neighbors: &NeighborLists,
    gammas: &[f64],
) -> LossResult<f64> {
    check_gammas(gammas)?;
    let disp = field.displacement(canonical)?;
    let mut total = 0.0;
    for &g in gammas {
        let deformed: Vec<Vec3> = canonical.iter().zip(&disp).map(|(x, d)| x + d * g).collect();
        total += iso_loss(canonical, &deformed, neighbors)?;
    }
    Ok(total / gammas.len() as f64)
}

pub fn iso_loss_gamma_var<'t>(
    field: &FieldVars<'t>,
    canonical: &Var<'t>,
    neighbors: &NeighborLists,
    gammas: &[f64],
) -> LossResult<Var<'t>> {
    check_gammas(gammas)?;
    let g = field.displacement(canonical)?;
    let mut total: Option<Var<'t>> = None;
    for &gamma in gammas {
        let deformed = canonical.add(&g.scale(gamma)?)?;
        let term = iso_loss_var(&deformed, neighbors)?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty").scale(1.0 / gammas.len() as f64)?)
}

/// `(1/N_v) * sum_i |v_t - (v_c + g(v_c))|_1`.
pub fn keypoint_loss(field: &DeformationField, corr: &CorrespondenceSet) -> LossResult<f64> {
    if corr.is_empty() {
        return Err(LossError::EmptyCorrespondences);
    }
    let moved = field.deform(corr.sources())?;
    let sum: f64 = moved.iter().zip(corr.targets()).map(|(m, t)| (t - m).abs().sum()).sum();
    Ok(sum / corr.len() as f64)
}

pub fn keypoint_loss_var<'t>(field: &FieldVars<'t>, tape: &'t Tape, corr: &CorrespondenceSet) -> LossResult<Var<'t>> {
    if corr.is_empty() {
        return Err(LossError::EmptyCorrespondences);
    }
    let src = tape.constant(Tensor::from_rows(corr.sources()));
    let tgt = tape.constant(Tensor::from_rows(corr.targets()));
    let moved = field.deform_partial(&src, 1.0)?;
    Ok(tgt.sub(&moved)?.abs()?.sum()?.scale(1.0 / corr.len() as f64)?)
}

/// Ground-truth normal image and the splat weights of the current points
/// for one camera.
pub struct ImageTerm<'a> {
    pub gt_image: &'a render::NormalImage,
    pub plan: &'a SplatPlan,
}

/// Values of every term for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub cd: f64,
    pub n: f64,
    pub ni: f64,
    pub surface: f64,
    pub iso: f64,
    pub v: f64,
}

/// Taped `lambda_cd * cd + lambda_n * n + lambda_ni * image` against a fixed
/// ground-truth sample. Returns the weighted sum and the raw term values.
pub fn surface_loss_var<'t>(
    x_pos: &Var<'t>,
    x_nrm: &Var<'t>,
    gt: &PointSet,
    weights: &LossWeights,
    image: Option<ImageTerm<'_>>,
) -> LossResult<(Var<'t>, LossBreakdown)> {
    weights.validate()?;
    let ch = chamfer_var(x_pos, Some(x_nrm), gt.positions(), Some(gt.normals()))?;
    let n = ch.n.expect("normals supplied");
    let mut breakdown = LossBreakdown {
        cd: ch.cd.item(),
        n: n.item(),
        ..Default::default()
    };
    let mut total = ch.cd.scale(weights.lambda_cd)?.add(&n.scale(weights.lambda_n)?)?;
    if weights.lambda_ni > 0.0 {
        let term = image.ok_or(LossError::MissingRenderer)?;
        let pred = term.plan.render_var(x_nrm)?;
        let ni = render::image_normal_loss_var(term.gt_image, &pred)?;
        breakdown.ni = ni.item();
        total = total.add(&ni.scale(weights.lambda_ni)?)?;
    }
    breakdown.surface = total.item();
    breakdown.total = breakdown.surface;
    Ok((total, breakdown))
}

/// Options for the self-contained [`surface_loss`].
#[derive(Debug, Clone, Copy)]
pub struct SurfaceOptions {
    pub sample_count: usize,
    pub seed: u64,
    pub render: Option<RenderSettings>,
}

/// Surface loss of `x` against a fresh sample of `gt` drawn with `opts.seed`;
/// the image term uses a camera drawn from the same seed.
pub fn surface_loss(x: &PointSet, gt: &TriMesh, weights: &LossWeights, opts: &SurfaceOptions) -> LossResult<f64> {
    weights.validate()?;
    if x.is_empty() {
        return Err(LossError::EmptySet);
    }
    if weights.lambda_cd == 0.0 && weights.lambda_n == 0.0 && weights.lambda_ni == 0.0 {
        return Ok(0.0);
    }
    if weights.lambda_ni > 0.0 && opts.render.is_none() {
        return Err(LossError::MissingRenderer);
    }
    let sample = crate::geometry::sample_surface(gt, opts.sample_count, opts.seed)?;
    let tape = Tape::new();
    let xp = tape.constant(Tensor::from_rows(x.positions()));
    let xn = tape.constant(Tensor::from_rows(x.normals()));
    let (loss, _) = match opts.render {
        Some(settings) if weights.lambda_ni > 0.0 => {
            let bounds = gt.bounds().ok_or(LossError::EmptySet)?;
            let cam = render::sample_camera(
                crate::rng::derive_seed(opts.seed, crate::rng::stream::CAMERA, 0),
                &bounds,
                &settings,
            )?;
            let (gt_image, plan) = image_inputs(gt, x.positions(), &cam, &settings)?;
            surface_loss_var(&xp, &xn, &sample, weights, Some(ImageTerm { gt_image: &gt_image, plan: &plan }))?
        }
        _ => surface_loss_var(&xp, &xn, &sample, weights, None)?,
    };
    Ok(loss.item())
}

/// Ground-truth raster and splat plan for one camera.
pub fn image_inputs(
    gt: &TriMesh,
    positions: &[Vec3],
    cam: &Camera,
    settings: &RenderSettings,
) -> LossResult<(render::NormalImage, SplatPlan)> {
    let gt_image = render::rasterize_mesh_normals(gt, cam)?;
    let plan = SplatPlan::build(positions, cam, settings)?;
    Ok((gt_image, plan))
}

/// Inputs of the deformation objective that do not change during a step.
pub struct DeformationTerms<'a> {
    /// Canonical positions the field is evaluated on.
    pub canonical: &'a [Vec3],
    /// Frozen neighbourhoods over `canonical`.
    pub neighbors: &'a NeighborLists,
    /// Target surface sample.
    pub target: &'a [Vec3],
    pub correspondences: Option<&'a CorrespondenceSet>,
    /// Partial-deformation factors for the isometric term.
    pub gammas: &'a [f64],
}

/// Taped `lambda_s * lambda_cd * cd + lambda_iso * iso + lambda_v * V` on
/// the deformed canonical points.
pub fn combined_loss_var<'t>(
    field: &FieldVars<'t>,
    tape: &'t Tape,
    terms: &DeformationTerms<'_>,
    weights: &LossWeights,
) -> LossResult<(Var<'t>, LossBreakdown)> {
    weights.validate()?;
    if weights.lambda_s == 0.0 && weights.lambda_iso == 0.0 && weights.lambda_v == 0.0 {
        return Err(LossError::AtLeastOneTerm);
    }
    if terms.canonical.is_empty() {
        return Err(LossError::EmptySet);
    }
    let canonical = tape.constant(Tensor::from_rows(terms.canonical));
    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Var<'t>> = None;
    let mut push = |term: Var<'t>| -> LossResult<()> {
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
        Ok(())
    };

    if weights.lambda_s > 0.0 {
        let deformed = field.deform_partial(&canonical, 1.0)?;
        let ch = chamfer_var(&deformed, None, terms.target, None)?;
        breakdown.cd = ch.cd.item();
        let surface = ch.cd.scale(weights.lambda_cd)?;
        breakdown.surface = surface.item();
        push(surface.scale(weights.lambda_s)?)?;
    }
    if weights.lambda_iso > 0.0 {
        let iso = if terms.gammas == [1.0] {
            iso_loss_var(&field.deform_partial(&canonical, 1.0)?, terms.neighbors)?
        } else {
            iso_loss_gamma_var(field, &canonical, terms.neighbors, terms.gammas)?
        };
        breakdown.iso = iso.item();
        push(iso.scale(weights.lambda_iso)?)?;
    }
    if weights.lambda_v > 0.0 {
        let corr = terms.correspondences.ok_or(LossError::MissingCorrespondences)?;
        let v = keypoint_loss_var(field, tape, corr)?;
        breakdown.v = v.item();
        push(v.scale(weights.lambda_v)?)?;
    }
    let total = total.expect("at least one term");
    breakdown.total = total.item();
    Ok((total, breakdown))
}

/// Value of the deformation objective for `field`.
pub fn combined_loss(
    field: &DeformationField,
    terms: &DeformationTerms<'_>,
    weights: &LossWeights,
) -> LossResult<LossBreakdown> {
    let tape = Tape::new();
    let vars = field.constants_on(&tape);
    Ok(combined_loss_var(&vars, &tape, terms, weights)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::field::Layer;
    use nalgebra::{Rotation3, Unit};
    use rand::Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = crate::rng::rng(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_unit(n: usize, seed: u64) -> Vec<Vec3> {
        random_points(n, seed).into_iter().map(|p| p.normalize()).collect()
    }

    fn cube() -> Vec<Vec3> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push(Vec3::new(x, y, z));
                }
            }
        }
        v
    }

    fn small_field(seed: u64) -> DeformationField {
        let mut f = DeformationField::init(&[6, 5], seed, 3.0).unwrap();
        let mut rng = crate::rng::rng(seed + 100);
        let mut params = f.parameters_mut();
        let last = params.len() - 2;
        for t in params.drain(last..) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
        f
    }

    #[test]
    fn chamfer_examples() {
        let x = PointSet::new(random_points(20, 1), random_unit(20, 2)).unwrap();
        let (cd, n) = chamfer_loss(&x, &x).unwrap();
        assert_eq!(cd, 0.0);
        // |n|^2 of a normalized vector is 1 only up to rounding
        assert!(n.abs() < 1e-15);

        let a = PointSet::new(vec![Vec3::zeros()], vec![Vec3::z()]).unwrap();
        let b = PointSet::new(vec![Vec3::x()], vec![Vec3::z()]).unwrap();
        assert_eq!(chamfer_loss(&a, &b).unwrap(), (2.0, 0.0));

        let c = cube();
        let shifted: Vec<Vec3> = c.iter().map(|p| p + Vec3::new(0.1, 0.0, 0.0)).collect();
        let n = vec![Vec3::z(); 8];
        let (cd, nt) = chamfer_loss(&PointSet::new(c, n.clone()).unwrap(), &PointSet::new(shifted, n).unwrap()).unwrap();
        assert!((cd - 0.02).abs() < 1e-12, "{cd}");
        assert_eq!(nt, 0.0);

        assert!(matches!(chamfer_distance(&[], &[Vec3::zeros()]), Err(LossError::EmptySet)));
    }

    #[test]
    fn chamfer_matches_brute_force_and_is_symmetric() {
        let x = random_points(37, 3);
        let y = random_points(51, 4);
        let brute = |a: &[Vec3], b: &[Vec3]| {
            a.iter()
                .map(|p| b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / a.len() as f64
        };
        let expected = brute(&x, &y) + brute(&y, &x);
        let cd = chamfer_distance(&x, &y).unwrap();
        assert!((cd - expected).abs() < 1e-12);
        assert!((cd - chamfer_distance(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn iso_examples() {
        let c = random_points(30, 5);
        let nb = NeighborLists::build(&c, 5).unwrap();
        assert_eq!(iso_loss(&c, &c, &nb).unwrap(), 0.0);

        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(1.0, 2.0, 3.0)), 0.7);
        let t = Vec3::new(0.3, -1.0, 2.0);
        let moved: Vec<Vec3> = c.iter().map(|p| r * p + t).collect();
        assert!(iso_loss(&c, &moved, &nb).unwrap() < 1e-10);

        let two = vec![Vec3::zeros(), Vec3::x()];
        let nb2 = NeighborLists::build(&two, 1).unwrap();
        assert_eq!(nb2.pair_count(), 2);
        let scaled: Vec<Vec3> = two.iter().map(|p| p * 2.0).collect();
        assert_eq!(iso_loss(&two, &scaled, &nb2).unwrap(), 1.0);

        assert!(matches!(iso_loss(&c, &c[1..], &nb), Err(LossError::LengthMismatch { .. })));
        assert!(matches!(NeighborLists::build(&c[..1], 5), Err(LossError::EmptyNeighborhood)));
    }

    #[test]
    fn iso_gamma_examples() {
        let c = random_points(20, 6);
        let nb = NeighborLists::build(&c, 5).unwrap();
        let f = small_field(1);
        assert_eq!(iso_loss_gamma(&f, &c, &nb, &[0.0]).unwrap(), 0.0);
        let id = crate::field::init_field(2, 30.0).unwrap();
        assert_eq!(iso_loss_gamma(&id, &c, &nb, &[0.3, 1.0, 1.7]).unwrap(), 0.0);

        // constant output: zero weights, non-zero bias in the last layer
        let mut translate = small_field(3);
        let mut params = translate.parameters_mut();
        let n = params.len();
        params[n - 2].data_mut().iter_mut().for_each(|v| *v = 0.0);
        params[n - 1].data_mut().copy_from_slice(&[0.5, -0.25, 1.0]);
        assert!(iso_loss_gamma(&translate, &c, &nb, &[0.5, 1.0, 2.0]).unwrap() < 1e-12);
        assert!(matches!(iso_loss_gamma(&f, &c, &nb, &[]), Err(LossError::InvalidGammas)));
    }

    #[test]
    fn keypoint_examples() {
        let id = crate::field::init_field(0, 30.0).unwrap();
        let one = CorrespondenceSet::new(vec![(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0))]).unwrap();
        assert_eq!(keypoint_loss(&id, &one).unwrap(), 6.0);
        let two = CorrespondenceSet::new(vec![
            (Vec3::zeros(), Vec3::x()),
            (Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 1.0, 3.0)),
        ])
        .unwrap();
        assert_eq!(keypoint_loss(&id, &two).unwrap(), 1.5);

        let f = small_field(4);
        let src = random_points(10, 7);
        let exact = CorrespondenceSet::new(src.iter().cloned().zip(f.deform(&src).unwrap()).collect()).unwrap();
        assert_eq!(keypoint_loss(&f, &exact).unwrap(), 0.0);
        assert!(matches!(
            keypoint_loss(&f, &CorrespondenceSet::default()),
            Err(LossError::EmptyCorrespondences)
        ));
    }

    #[test]
    fn surface_loss_examples() {
        let mesh = crate::benchgen::icosphere(2).unwrap();
        let opts = SurfaceOptions {
            sample_count: 2000,
            seed: 9,
            render: None,
        };
        let x = crate::geometry::sample_surface(&mesh, 2000, 9).unwrap();
        let w = LossWeights {
            lambda_ni: 0.0,
            ..Default::default()
        };
        let bbox2 = mesh.bounds().unwrap().diagonal().powi(2);
        assert!(surface_loss(&x, &mesh, &w, &opts).unwrap() < 1e-6 * w.lambda_cd * bbox2);

        let zero = LossWeights {
            lambda_cd: 0.0,
            lambda_n: 0.0,
            lambda_ni: 0.0,
            ..Default::default()
        };
        assert_eq!(surface_loss(&x, &mesh, &zero, &opts).unwrap(), 0.0);
        assert!(matches!(
            surface_loss(&x, &mesh, &LossWeights::default(), &opts),
            Err(LossError::MissingRenderer)
        ));
        let with_render = SurfaceOptions {
            render: Some(RenderSettings {
                width: 32,
                height: 32,
                ..Default::default()
            }),
            ..opts
        };
        let v = surface_loss(&x, &mesh, &LossWeights::default(), &with_render).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_cd, w.lambda_n, w.lambda_ni), (1e4, 1.0, 10.0));
        let e = LossWeights::early_phase();
        assert_eq!((e.lambda_s, e.lambda_v, e.lambda_iso), (0.0, 1.0, 0.1));
        let a = LossWeights::animation();
        assert_eq!((a.lambda_iso, a.lambda_v), (1e3, 1e4));
        assert!(LossWeights {
            lambda_v: -1.0,
            ..w
        }
        .validate()
        .is_err());
    }

    #[test]
    fn combined_examples() {
        let c = random_points(25, 8);
        let nb = NeighborLists::build(&c, 5).unwrap();
        let corr = CorrespondenceSet::new(c.iter().map(|p| (*p, *p)).collect()).unwrap();
        let id = crate::field::init_field(1, 30.0).unwrap();
        let terms = DeformationTerms {
            canonical: &c,
            neighbors: &nb,
            target: &c,
            correspondences: Some(&corr),
            gammas: &[1.0],
        };
        let b = combined_loss(&id, &terms, &LossWeights::default()).unwrap();
        assert_eq!(b.total, 0.0);
        let none = LossWeights {
            lambda_s: 0.0,
            lambda_iso: 0.0,
            lambda_v: 0.0,
            ..Default::default()
        };
        assert!(matches!(combined_loss(&id, &terms, &none), Err(LossError::AtLeastOneTerm)));
        let missing = DeformationTerms {
            correspondences: None,
            ..terms
        };
        assert!(matches!(
            combined_loss(&id, &missing, &LossWeights::early_phase()),
            Err(LossError::MissingCorrespondences)
        ));
    }

    fn vars_from<'t>(template: &DeformationField, p: &[Var<'t>]) -> FieldVars<'t> {
        FieldVars::new(template, p.to_vec())
    }

    #[test]
    fn gradients_of_every_term() {
        let c = random_points(10, 10);
        let target = random_points(12, 11);
        let nb = NeighborLists::build(&c, 5).unwrap();
        let corr = CorrespondenceSet::new(c.iter().zip(&target).map(|(a, b)| (*a, *b)).collect()).unwrap();
        let f = small_field(5);
        let point: Vec<Tensor> = f.parameters().into_iter().cloned().collect();
        let check = |weights: LossWeights, gammas: &[f64]| {
            grad_check(
                |tape, p| {
                    let vars = vars_from(&f, p);
                    let terms = DeformationTerms {
                        canonical: &c,
                        neighbors: &nb,
                        target: &target,
                        correspondences: Some(&corr),
                        gammas,
                    };
                    Ok(combined_loss_var(&vars, tape, &terms, &weights).unwrap().0)
                },
                &point,
                1e-5,
            )
            .unwrap()
        };
        let only = |s: f64, iso: f64, v: f64| LossWeights {
            lambda_s: s,
            lambda_iso: iso,
            lambda_v: v,
            lambda_cd: 1.0,
            ..Default::default()
        };
        for (name, w, g) in [
            ("chamfer", only(1.0, 0.0, 0.0), vec![1.0]),
            ("iso", only(0.0, 1.0, 0.0), vec![1.0]),
            ("iso_gamma", only(0.0, 1.0, 0.0), vec![0.25, 0.8, 1.5]),
            ("keypoint", only(0.0, 0.0, 1.0), vec![1.0]),
            ("combined", only(0.7, 0.3, 1.3), vec![0.5, 1.0]),
        ] {
            let err = check(w, &g);
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn surface_gradients() {
        let mesh = crate::benchgen::icosphere(1).unwrap();
        let gt = crate::geometry::sample_surface(&mesh, 15, 3).unwrap();
        let x = crate::geometry::sample_surface(&mesh, 10, 4).unwrap();
        let settings = RenderSettings {
            width: 16,
            height: 16,
            ..Default::default()
        };
        let cam = render::sample_camera(2, &mesh.bounds().unwrap(), &settings).unwrap();
        let (gt_image, plan) = image_inputs(&mesh, x.positions(), &cam, &settings).unwrap();
        let w = LossWeights {
            lambda_cd: 3.0,
            ..Default::default()
        };
        let err = grad_check(
            |_, p| {
                let term = ImageTerm {
                    gt_image: &gt_image,
                    plan: &plan,
                };
                Ok(surface_loss_var(&p[0], &p[1], &gt, &w, Some(term)).unwrap().0)
            },
            &[Tensor::from_rows(x.positions()), Tensor::from_rows(x.normals())],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn hand_built_field_layers_round_trip() {
        // FieldVars::new must accept parameters in [w0, b0, w1, b1] order
        let f = DeformationField::from_layers(
            vec![
                Layer {
                    weight: Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
                    bias: Tensor::new(vec![2], vec![0.0, 0.1]).unwrap(),
                },
                Layer {
                    weight: Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
                    bias: Tensor::new(vec![3], vec![0.0; 3]).unwrap(),
                },
            ],
            2.0,
            Default::default(),
        )
        .unwrap();
        let tape = Tape::new();
        let params: Vec<Var> = f.parameters().into_iter().map(|t| tape.parameter(t.clone())).collect();
        let vars = FieldVars::new(&f, params);
        let x = tape.constant(Tensor::from_rows(&[Vec3::new(0.3, -0.2, 0.9)]));
        let a = vars.deform_partial(&x, 1.0).unwrap().value().to_rows3().unwrap()[0];
        let b = f.deform(&[Vec3::new(0.3, -0.2, 0.9)]).unwrap()[0];
        assert_eq!(a, b);
    }

    #[test]
    fn restricted_neighbors_reindex() {
        let c = random_points(40, 12);
        let nb = NeighborLists::build(&c, 5).unwrap();
        let anchors = [3, 17, 25];
        let (union, local) = nb.restrict(&anchors);
        assert_eq!(local.pair_count(), 15);
        let sub: Vec<Vec3> = union.iter().map(|&i| c[i]).collect();
        let moved: Vec<Vec3> = sub.iter().map(|p| p * 1.5).collect();
        let mut expected = 0.0;
        for (i, j) in nb.pairs().filter(|(i, _)| anchors.contains(i)) {
            expected += ((c[i] - c[j]).norm() * 0.5).abs();
        }
        expected /= 15.0;
        assert!((iso_loss(&sub, &moved, &local).unwrap() - expected).abs() < 1e-12);
    }
}
