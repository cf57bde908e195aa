//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured value and the pinned tolerance, then asserts.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{Rotation3, Unit};
use rand::Rng;

use dpf::autodiff::{grad_check, Tensor};
use dpf::benchgen::{self, build_case, default_suite, icosphere};
use dpf::field::{DeformationField, FieldVars, InputFrame, Layer};
use dpf::geometry::{sample_surface, Aabb, PointSet, SpatialIndex, Vec3};
use dpf::losses::{
    chamfer_distance, chamfer_var, combined_loss_var, iso_loss, iso_loss_gamma_var, iso_loss_var, keypoint_loss_var,
    surface_loss_var, CorrespondenceSet, DeformationTerms, ImageTerm, LossWeights, NeighborLists,
};
use dpf::metrics::{acc_relaxed, acc_strict, chamfer_metric, epe, normal_consistency_metric, FlowField};
use dpf::pipelines::{self, FitConfig, Target};
use dpf::render::{
    image_normal_loss, image_normal_loss_var, rasterize_mesh_normals, sample_camera, splat_point_normals, Camera,
    NormalImage, RenderSettings, SplatPlan,
};

const EPS: f64 = 1e-12;

fn report(n: usize, name: &str, pass: bool, detail: String) {
    // straight to the handle so the line shows even when output is captured
    let line = format!("\ncriterion {n}: {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn rng(seed: u64) -> impl Rng {
    dpf::rng::rng(seed)
}

fn random_points(r: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn random_units(r: &mut impl Rng, n: usize) -> Vec<Vec3> {
    random_points(r, n).into_iter().map(|p| p.normalize()).collect()
}

fn random_rotation(r: &mut impl Rng) -> Rotation3<f64> {
    let axis = random_units(r, 1)[0];
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), r.random_range(-3.1..3.1))
}

/// Field whose output layer is random, so the displacement is not zero.
fn active_field(hidden: &[usize], seed: u64) -> DeformationField {
    let f = DeformationField::init(hidden, seed, 30.0).unwrap();
    let mut r = rng(seed + 1);
    let n = f.layers().len();
    let layers: Vec<Layer> = f
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i + 1 < n {
                return l.clone();
            }
            let mut l = l.clone();
            l.weight.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.05..0.05));
            l.bias.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.05..0.05));
            l
        })
        .collect();
    DeformationField::from_layers(layers, 30.0, InputFrame::default()).unwrap()
}

fn field_tensors(f: &DeformationField) -> Vec<Tensor> {
    f.parameters().into_iter().cloned().collect()
}

#[test]
fn criterion_01_gradients() {
    let start = Instant::now();
    let mut r = rng(101);
    let xp = random_points(&mut r, 10);
    let xn = random_units(&mut r, 10);
    let gt = PointSet::new(random_points(&mut r, 10), random_units(&mut r, 10)).unwrap();
    let settings = RenderSettings {
        width: 32,
        height: 32,
        ..RenderSettings::default()
    };
    let bounds = Aabb::from_points(&xp).unwrap();
    let cam = sample_camera(5, &bounds, &settings).unwrap();
    let plan = SplatPlan::build(&xp, &cam, &settings).unwrap();
    let mut gt_image = NormalImage::empty(32, 32);
    gt_image.data.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    let h = 1e-5;
    let pos = Tensor::from_rows(&xp);
    let nrm = Tensor::from_rows(&xn);
    let mut errors: Vec<(&str, f64)> = Vec::new();

    errors.push((
        "chamfer",
        grad_check(|_, p| Ok(chamfer_var(&p[0], None, gt.positions(), None).unwrap().cd), &[pos.clone()], h).unwrap(),
    ));
    errors.push((
        "normal",
        grad_check(
            |_, p| Ok(chamfer_var(&p[0], Some(&p[1]), gt.positions(), Some(gt.normals())).unwrap().n.unwrap()),
            &[pos.clone(), nrm.clone()],
            h,
        )
        .unwrap(),
    ));
    errors.push((
        "image",
        grad_check(
            |_, p| Ok(image_normal_loss_var(&gt_image, &plan.render_var(&p[0]).unwrap()).unwrap()),
            &[nrm.clone()],
            h,
        )
        .unwrap(),
    ));
    let weights = LossWeights::default();
    errors.push((
        "surface",
        grad_check(
            |_, p| {
                let term = ImageTerm {
                    gt_image: &gt_image,
                    plan: &plan,
                };
                Ok(surface_loss_var(&p[0], &p[1], &gt, &weights, Some(term)).unwrap().0)
            },
            &[pos.clone(), nrm.clone()],
            h,
        )
        .unwrap(),
    ));
    let nb = NeighborLists::build(&xp, 5).unwrap();
    let deformed: Vec<Vec3> = xp.iter().map(|p| p * 1.3 + Vec3::new(0.01, 0.0, 0.0)).collect();
    errors.push((
        "iso",
        grad_check(|_, p| Ok(iso_loss_var(&p[0], &nb).unwrap()), &[Tensor::from_rows(&deformed)], h).unwrap(),
    ));

    let field = active_field(&[32, 32], 7);
    let corr = CorrespondenceSet::new(
        random_points(&mut r, 10)
            .into_iter()
            .map(|p| (p, p + Vec3::new(0.2, -0.1, 0.3)))
            .collect(),
    )
    .unwrap();
    let params = field_tensors(&field);
    errors.push((
        "iso_gamma",
        grad_check(
            |tape, p| {
                let vars = FieldVars::new(&field, p.to_vec());
                let c = tape.constant(Tensor::from_rows(&xp));
                Ok(iso_loss_gamma_var(&vars, &c, &nb, &[0.5, 1.0, 1.5]).unwrap())
            },
            &params,
            h,
        )
        .unwrap(),
    ));
    errors.push((
        "keypoint",
        grad_check(
            |tape, p| Ok(keypoint_loss_var(&FieldVars::new(&field, p.to_vec()), tape, &corr).unwrap()),
            &params,
            h,
        )
        .unwrap(),
    ));
    let terms = DeformationTerms {
        canonical: &xp,
        neighbors: &nb,
        target: gt.positions(),
        correspondences: Some(&corr),
        gammas: &[1.0],
    };
    errors.push((
        "combined",
        grad_check(
            |tape, p| Ok(combined_loss_var(&FieldVars::new(&field, p.to_vec()), tape, &terms, &weights).unwrap().0),
            &params,
            h,
        )
        .unwrap(),
    ));

    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "max relative error {worst:.2e} (< 1e-4) in {secs:.1}s (< 30s); {}",
        errors.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect::<Vec<_>>().join(" ")
    );
    report(1, "gradient correctness", worst < 1e-4 && secs < 30.0, detail);
}

fn brute_knn(points: &[Vec3], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, q)| {
            let e = points[i] - q;
            (e.x * e.x + e.y * e.y + e.z * e.z, j)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

fn floored(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    (d.x * d.x + d.y * d.y + d.z * d.z).max(EPS).sqrt()
}

#[test]
fn criterion_02_isometry() {
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    let mut scale_exact = true;
    for _ in 0..100 {
        let pts = random_points(&mut r, 50);
        let nb = NeighborLists::build(&pts, 5).unwrap();
        let rot = random_rotation(&mut r);
        let t = random_points(&mut r, 1)[0] * 3.0;
        let moved: Vec<Vec3> = pts.iter().map(|p| rot * p + t).collect();
        worst = worst.max(iso_loss(&pts, &moved, &nb).unwrap());

        let scaled: Vec<Vec3> = pts.iter().map(|p| p * 2.0).collect();
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..pts.len() {
            for j in brute_knn(&pts, i, 5) {
                sum += (floored(&pts[i], &pts[j]) - floored(&scaled[i], &scaled[j])).abs();
                count += 1;
            }
        }
        scale_exact &= iso_loss(&pts, &scaled, &nb).unwrap() == sum / count as f64;
    }
    report(
        2,
        "isometry invariant",
        worst < 1e-10 && scale_exact,
        format!("max rigid iso {worst:.2e} (< 1e-10); 2x scale equals brute force exactly: {scale_exact}"),
    );
}

#[test]
fn criterion_03_rigid_registration() {
    let spec = default_suite().into_iter().find(|c| c.name == "sphere_rigid").unwrap();
    let case = build_case(&spec).unwrap();
    let canonical = case.canonical.to_point_set().unwrap();
    let config = FitConfig::default();
    let start = Instant::now();
    let fit = pipelines::fit_deformation(&canonical, Target::Mesh(&case.target), Some(&case.correspondences), &config)
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let moved = fit.field.deform(canonical.positions()).unwrap();
    let predicted: Vec<Vec3> = moved.iter().zip(canonical.positions()).map(|(a, b)| a - b).collect();
    let flow = FlowField::new(predicted, case.flow.clone()).unwrap();
    let diag = case.canonical.bounds().unwrap().diagonal();
    let e = epe(&flow).unwrap();
    let acc = acc_relaxed(&flow).unwrap();
    report(
        3,
        "rigid registration recovery",
        e < 0.01 * diag && acc > 95.0 && secs < 600.0,
        format!(
            "EPE {e:.4} (< {:.4} = 1% of diagonal), acc_relaxed {acc:.2}% (> 95%), {secs:.0}s (< 600s)",
            0.01 * diag
        ),
    );
}

#[test]
fn criterion_04_iso_ablation() {
    let cases = benchgen::suite("twist").unwrap();
    let mut wins = 0;
    let mut rows = Vec::new();
    for spec in &cases {
        let case = build_case(spec).unwrap();
        let canonical = case.canonical.to_point_set().unwrap();
        let run = |lambda_iso: f64| {
            let mut config = FitConfig::default();
            config.weights.lambda_iso = lambda_iso;
            let fit = pipelines::fit_deformation(&canonical, Target::Mesh(&case.target), None, &config).unwrap();
            let moved = fit.field.deform(canonical.positions()).unwrap();
            let predicted = moved.iter().zip(canonical.positions()).map(|(a, b)| a - b).collect();
            epe(&FlowField::new(predicted, case.flow.clone()).unwrap()).unwrap()
        };
        let with = run(0.1);
        let without = run(0.0);
        if with <= without {
            wins += 1;
        }
        rows.push(format!("{} {with:.4} vs {without:.4}", spec.name));
    }
    report(
        4,
        "iso-loss ablation trend",
        wins >= 3,
        format!("EPE with iso <= without on {wins}/4 cases (>= 3): {}", rows.join("; ")),
    );
}

#[test]
fn criterion_05_static_fitting() {
    let mesh = icosphere(4).unwrap();
    assert_eq!(mesh.vertices().len(), 2562);
    let config = FitConfig::default();
    let fit = pipelines::fit_static(&mesh, 10_000, &config).unwrap();
    let eval = sample_surface(&mesh, 100_000, 9_999).unwrap();
    let cd0 = chamfer_metric(fit.initial.positions(), eval.positions()).unwrap();
    let cd1 = chamfer_metric(fit.points.positions(), eval.positions()).unwrap();
    let n0 = normal_consistency_metric(&fit.initial, &eval).unwrap();
    let n1 = normal_consistency_metric(&fit.points, &eval).unwrap();
    report(
        5,
        "static fitting improvement",
        cd1 <= 0.8 * cd0 && n1 < n0,
        format!("chamfer {cd1:.4} vs sample {cd0:.4} (ratio {:.3} <= 0.8), normal consistency {n1:.6} < {n0:.6}", cd1 / cd0),
    );
}

#[test]
fn criterion_06_interpolation() {
    let field = active_field(&[128, 128, 128], 66);
    let mut r = rng(606);
    let pts = random_points(&mut r, 10_000);
    let g = field.displacement(&pts).unwrap();
    let zero = field.deform_partial(&pts, 0.0).unwrap();
    let one = field.deform_partial(&pts, 1.0).unwrap();
    let two = field.deform_partial(&pts, 2.0).unwrap();
    let bits = |a: &Vec3, b: &Vec3| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    let identity = zero.iter().zip(&pts).all(|(a, b)| bits(a, b));
    let linear = pts.iter().zip(&g).zip(one.iter().zip(&two)).all(|((x, d), (p1, p2))| {
        let d1 = *d;
        let d2 = d * 2.0;
        bits(p1, &(x + d1)) && bits(p2, &(x + d2)) && bits(&d2, &(d1 + d1))
    });
    let nonzero = g.iter().any(|d| d.norm() > 1e-3);
    report(
        6,
        "interpolation exactness",
        identity && linear && nonzero,
        format!("gamma=0 bitwise identity: {identity}; gamma=2 displacement exactly twice gamma=1: {linear}"),
    );
}

#[test]
fn criterion_07_animation() {
    let scan = icosphere(3).unwrap();
    let t = Vec3::new(0.1, -0.05, 0.08);
    // one pair per scan vertex; sparser pairs leave unconstrained vertices
    // off by a few 1e-3 with these optimizer settings
    let pairs = CorrespondenceSet::new(scan.vertices().iter().map(|p| (*p, p + t)).collect()).unwrap();
    let config = FitConfig::animation();
    let fit = pipelines::animate(&scan, &pairs, &config).unwrap();
    let worst = fit
        .mesh
        .vertices()
        .iter()
        .zip(scan.vertices())
        .map(|(a, b)| (a - b - t).norm())
        .fold(0.0, f64::max);
    let nb = NeighborLists::build(scan.vertices(), config.k).unwrap();
    let iso = iso_loss(scan.vertices(), fit.mesh.vertices(), &nb).unwrap();
    let tol = 1e-3 * t.norm();
    report(
        7,
        "animation consistency",
        worst <= tol && iso < 1e-6,
        format!("max |displacement - t| {worst:.2e} (<= {tol:.2e}), iso {iso:.2e} (< 1e-6)"),
    );
}

#[test]
fn criterion_08_oracles() {
    let mut r = rng(808);
    let mut ok = [true; 5];
    for _ in 0..50 {
        let n = r.random_range(1..=500);
        let m = r.random_range(1..=500);
        let x = random_points(&mut r, n);
        let y = random_points(&mut r, m);
        let dir = |a: &[Vec3], b: &[Vec3]| {
            let mut s = 0.0;
            for p in a {
                let mut best = f64::INFINITY;
                for q in b {
                    best = best.min((p - q).norm_squared());
                }
                s += best;
            }
            s / a.len() as f64
        };
        ok[0] &= chamfer_distance(&x, &y).unwrap() == dir(&x, &y) + dir(&y, &x);

        let index = SpatialIndex::build(&y);
        let k = r.random_range(1..=8);
        for q in x.iter().take(20) {
            let mut d: Vec<(f64, usize)> = y
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let e = p - q;
                    (e.x * e.x + e.y * e.y + e.z * e.z, j)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let brute: Vec<(usize, f64)> = d.into_iter().take(k).map(|(d, j)| (j, d)).collect();
            ok[1] &= index.knn_squared(q, k).unwrap() == brute;
        }

        let gt = random_points(&mut r, n);
        let pred: Vec<Vec3> = gt.iter().map(|g| g + random_points(&mut r, 1)[0] * 0.06).collect();
        let flow = FlowField::new(pred.clone(), gt.clone()).unwrap();
        let mut s = 0.0;
        let (mut strict, mut relaxed) = (0usize, 0usize);
        for (p, g) in pred.iter().zip(&gt) {
            let e = (p - g).norm();
            s += e;
            let rel = e / g.norm().max(1e-12);
            strict += (e < 0.025 || rel < 0.025) as usize;
            relaxed += (e < 0.05 || rel < 0.05) as usize;
        }
        ok[2] &= epe(&flow).unwrap() == s / n as f64;
        ok[3] &= acc_strict(&flow).unwrap() == 100.0 * strict as f64 / n as f64;
        ok[4] &= acc_relaxed(&flow).unwrap() == 100.0 * relaxed as f64 / n as f64;
    }
    report(
        8,
        "oracle equivalence",
        ok.iter().all(|&b| b),
        format!(
            "chamfer {} knn {} epe {} acc_strict {} acc_relaxed {}",
            ok[0], ok[1], ok[2], ok[3], ok[4]
        ),
    );
}

fn dpf(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dpf"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn files_equal(a: &Path, b: &Path) -> bool {
    let read = |p: &Path| std::fs::read(p).ok();
    let x = read(a);
    x.is_some() && x == read(b)
}

#[test]
fn criterion_09_determinism() {
    let root = tempfile::tempdir().unwrap();
    let mut all = true;
    let mut compared = 0;
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        std::fs::create_dir_all(&dir).unwrap();
        let small = ["--set", "steps=40", "--set", "hidden=32,32", "--set", "sample_count=2000"];
        let mut steps: Vec<Vec<&str>> = vec![
            vec!["benchgen", "--out", "cases"],
            vec![
                "fit-deform",
                "--canonical",
                "cases/sphere_bend/canonical.ply",
                "--target",
                "cases/sphere_bend/target.ply",
                "--corr",
                "cases/sphere_bend/correspondences.csv",
                "--out",
                "f.dpf",
                "--deformed",
                "d.ply",
                "--log",
                "log.csv",
                "--seed",
                "1",
            ],
            vec![
                "eval", "--pred", "d.ply", "--gt", "cases/sphere_bend/target.ply", "--flow", "cases/sphere_bend/flow.csv",
                "--out", "m.csv", "--set", "eval_samples=5000",
            ],
            vec![
                "fit-static", "--input", "cases/sphere_bend/canonical.ply", "--out", "s.ply", "--n-points", "300",
                "--seed", "3", "--set", "steps=10", "--set", "resolution=64", "--set", "sample_count=1000",
            ],
            vec![
                "animate", "--scan", "cases/sphere_bend/canonical.ply", "--pairs", "cases/sphere_bend/correspondences.csv",
                "--out", "anim.ply", "--set", "steps=20", "--set", "hidden=16,16",
            ],
            vec!["interpolate", "--field", "f.dpf", "--canonical", "cases/sphere_bend/canonical.ply", "--gamma-list", "0,0.5,1.5", "--out-dir", "interp"],
            vec!["render", "--input", "d.ply", "--out", "d.png", "--set", "resolution=64"],
        ];
        steps[1].extend_from_slice(&small);
        for s in &steps {
            all &= dpf(s, &dir);
        }
    }
    let a = root.path().join("a");
    let b = root.path().join("b");
    let mut outputs: Vec<String> = [
        "f.dpf",
        "d.ply",
        "log.csv",
        "m.csv",
        "s.ply",
        "anim.ply",
        "interp/gamma_000.ply",
        "interp/gamma_002.ply",
        "interp/iso.csv",
        "d.png",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for case in default_suite() {
        for f in ["canonical.ply", "target.ply", "flow.csv", "correspondences.csv", "manifest.txt"] {
            outputs.push(format!("cases/{}/{f}", case.name));
        }
    }
    for o in &outputs {
        all &= files_equal(&a.join(o), &b.join(o));
        compared += 1;
    }
    report(
        9,
        "determinism",
        all,
        format!("{compared} output files from two identical CLI runs compared byte for byte"),
    );
}

#[test]
fn criterion_10_renderer() {
    let settings = RenderSettings {
        width: 128,
        height: 128,
        ..RenderSettings::default()
    };
    let dir = Vec3::new(0.3, -0.5, 0.8).normalize();
    let cam = Camera::looking_from(dir, Vec3::zeros(), 1.0, settings.width, settings.height).unwrap();
    let mut r = rng(1010);
    let mut disk = Vec::new();
    while disk.len() < 40_000 {
        let (a, b): (f64, f64) = (r.random_range(-0.8..0.8), r.random_range(-0.8..0.8));
        if a * a + b * b <= 0.64 {
            disk.push(cam.right * a + cam.up * b);
        }
    }
    let normals = vec![dir; disk.len()];
    let image = splat_point_normals(&disk, &normals, &cam, &settings).unwrap();
    let truth = cam.to_camera(&dir);
    let mut sum = Vec3::zeros();
    for y in 0..image.height {
        for x in 0..image.width {
            if image.covered(x, y) {
                sum += image.pixel(x, y);
            }
        }
    }
    let angle = sum.normalize().dot(&truth).clamp(-1.0, 1.0).acos().to_degrees();
    let same = image_normal_loss(&image, &image.clone()).unwrap();

    let small = RenderSettings {
        width: 24,
        height: 24,
        ..RenderSettings::default()
    };
    let pts = random_points(&mut r, 60);
    let nrm = random_units(&mut r, 60);
    let cam2 = sample_camera(3, &Aabb::from_points(&pts).unwrap(), &small).unwrap();
    let plan = SplatPlan::build(&pts, &cam2, &small).unwrap();
    let mut gt = NormalImage::empty(24, 24);
    gt.data.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    let grad_err = grad_check(
        |_, p| Ok(image_normal_loss_var(&gt, &plan.render_var(&p[0]).unwrap()).unwrap()),
        &[Tensor::from_rows(&nrm)],
        1e-5,
    )
    .unwrap();
    let mesh = icosphere(2).unwrap();
    let raster = rasterize_mesh_normals(&mesh, &sample_camera(1, &mesh.bounds().unwrap(), &small).unwrap()).unwrap();
    report(
        10,
        "renderer sanity",
        angle < 5.0 && same == 0.0 && grad_err < 1e-6 && raster.coverage() > 0,
        format!(
            "disk mean normal off by {angle:.3} deg (< 5), identical-render loss {same} (== 0), splat gradient error {grad_err:.1e} (< 1e-6)"
        ),
    );
}
