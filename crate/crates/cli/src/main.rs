use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpf::benchgen;
use dpf::field::load_field_any;
use dpf::field::save_field;
use dpf::geometry::{sample_surface, DynamicScene, PointSet, TriMesh, Vec3};
use dpf::io::{self, format_config, parse_config, MeshData};
use dpf::losses::{CorrespondenceSet, NeighborLists};
use dpf::metrics::{self, FlowField, MetricsRow};
use dpf::pipelines::{self, log_csv, FitConfig, Target};
use dpf::render::{self, RenderSettings};
use dpf::rng::{derive_seed, stream};

#[derive(Parser)]
#[command(name = "dpf", version, about = "Fit, animate and evaluate dynamic point fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key=value config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value assignments applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize an oriented point set against a mesh.
    FitStatic {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit one deformation field from a canonical set to a target.
    FitDeform {
        #[arg(long)]
        canonical: PathBuf,
        /// Mesh (resampled every step) or point set.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        corr: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Optional deformed canonical set.
        #[arg(long)]
        deformed: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit one field per frame; frame 0 is the canonical frame.
    FitSequence {
        #[arg(long)]
        canonical: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
        /// One correspondence file per frame, in frame order.
        #[arg(long, num_args = 1..)]
        corr: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Deform a scan so that body correspondences are matched.
    Animate {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Export partial deformations `x + gamma * g(x)`.
    Interpolate {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        canonical: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        gamma_list: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Chamfer, normal consistency and flow metrics as CSV.
    Eval {
        /// Predicted (deformed) point set, in the row order of --flow.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth surface (mesh or point set).
        #[arg(long)]
        gt: PathBuf,
        /// Ground-truth flow: canonical position and displacement per row.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write synthetic benchmark cases.
    Benchgen {
        #[arg(long, default_value = "default")]
        suite: String,
        /// Only emit the named case.
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a camera-space normal image of a mesh or point set.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn resolve(common: &Common, base: FitConfig) -> CliResult<FitConfig> {
    let mut config = match &common.config {
        Some(p) => io::read_config(p, base)?,
        None => base,
    };
    if !common.set.is_empty() {
        config = parse_config(&common.set.join("\n"), config)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    println!("# resolved config (seed {})", config.seed);
    print!("{}", format_config(&config));
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    io::write_file(path, text.as_bytes())?;
    Ok(())
}

fn read_points(path: &Path) -> CliResult<PointSet> {
    Ok(io::read_pointset(path)?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::FitStatic {
            input,
            out,
            n_points,
            log,
            common,
        } => {
            let config = resolve(&common, FitConfig::default())?;
            let mesh = io::read_mesh(&input)?;
            let fit = pipelines::fit_static(&mesh, n_points.unwrap_or(config.n_points), &config)?;
            io::write_pointset(&out, &fit.points)?;
            if let Some(l) = log {
                write_text(&l, &log_csv(&fit.log))?;
            }
            println!("wrote {}", out.display());
        }
        Command::FitDeform {
            canonical,
            target,
            corr,
            out,
            deformed,
            log,
            common,
        } => {
            let config = resolve(&common, FitConfig::default())?;
            let canonical = read_points(&canonical)?;
            let data = io::read_mesh_data(&target)?;
            let corr = corr.map(|p| io::read_correspondences(&p)).transpose()?;
            let fit = if data.faces.is_empty() {
                let points = data.into_point_set()?;
                pipelines::fit_deformation(&canonical, Target::Points(&points), corr.as_ref(), &config)?
            } else {
                let mesh = data.into_mesh()?;
                pipelines::fit_deformation(&canonical, Target::Mesh(&mesh), corr.as_ref(), &config)?
            };
            save_field(&out, &fit.field)?;
            if let Some(d) = deformed {
                let moved = fit.field.deform(canonical.positions())?;
                io::write_mesh_data(
                    &d,
                    &MeshData {
                        vertices: moved,
                        normals: None,
                        faces: Vec::new(),
                    },
                )?;
            }
            if let Some(l) = log {
                write_text(&l, &log_csv(&fit.log))?;
            }
            println!("wrote {}", out.display());
        }
        Command::FitSequence {
            canonical,
            frames,
            corr,
            out_dir,
            common,
        } => {
            let config = resolve(&common, FitConfig::default())?;
            if !corr.is_empty() && corr.len() != frames.len() {
                return Err(format!("{} correspondence files for {} frames", corr.len(), frames.len()).into());
            }
            let mut sets = vec![read_points(&canonical)?];
            for f in &frames {
                sets.push(read_points(f)?);
            }
            let corr: Vec<Option<CorrespondenceSet>> = corr
                .iter()
                .map(|p| io::read_correspondences(p).map(Some))
                .collect::<Result<_, _>>()?;
            let scene = DynamicScene::new(sets)?;
            let fields = pipelines::fit_sequence(&scene, &corr, &config)?;
            std::fs::create_dir_all(&out_dir)?;
            for (t, f) in fields.fields().iter().enumerate() {
                let p = out_dir.join(format!("frame_{:03}.dpf", t + 1));
                save_field(&p, f)?;
                println!("wrote {}", p.display());
            }
        }
        Command::Animate {
            scan,
            pairs,
            out,
            field,
            log,
            common,
        } => {
            let config = resolve(&common, FitConfig::animation())?;
            let scan = io::read_mesh(&scan)?;
            let pairs = io::read_correspondences(&pairs)?;
            let fit = pipelines::animate(&scan, &pairs, &config)?;
            io::write_mesh(&out, &fit.mesh)?;
            if let Some(f) = field {
                save_field(&f, &fit.field)?;
            }
            if let Some(l) = log {
                write_text(&l, &log_csv(&fit.log))?;
            }
            println!("wrote {}", out.display());
        }
        Command::Interpolate {
            field,
            canonical,
            gamma_list,
            out_dir,
            common,
        } => {
            let config = resolve(&common, FitConfig::default())?;
            let field = load_field_any(&field)?;
            let canonical = read_points(&canonical)?;
            let neighbors = NeighborLists::build(canonical.positions(), config.k)?;
            let frames = pipelines::interpolate_sequence(&field, canonical.positions(), &gamma_list, Some(&neighbors))?;
            std::fs::create_dir_all(&out_dir)?;
            let mut report = String::from("index,gamma,iso\n");
            for (i, f) in frames.iter().enumerate() {
                let p = out_dir.join(format!("gamma_{i:03}.ply"));
                io::write_mesh_data(
                    &p,
                    &MeshData {
                        vertices: f.positions.clone(),
                        normals: None,
                        faces: Vec::new(),
                    },
                )?;
                report.push_str(&format!("{i},{:?},{:e}\n", f.gamma, f.iso.unwrap_or(f64::NAN)));
            }
            write_text(&out_dir.join("iso.csv"), &report)?;
            print!("{report}");
        }
        Command::Eval {
            pred,
            gt,
            flow,
            out,
            name,
            common,
        } => {
            let config = resolve(&common, FitConfig::default())?;
            let pred = read_points(&pred)?;
            let gt_data = io::read_mesh_data(&gt)?;
            let gt_points = if gt_data.faces.is_empty() {
                gt_data.into_point_set()?
            } else {
                let mesh = gt_data.into_mesh()?;
                sample_surface(&mesh, config.eval_samples, derive_seed(config.seed, stream::EVAL, 0))?
            };
            let mut row = MetricsRow {
                name,
                cd: Some(metrics::chamfer_metric(pred.positions(), gt_points.positions())?),
                n: Some(metrics::normal_consistency_metric(&pred, &gt_points)?),
                ..Default::default()
            };
            if let Some(f) = flow {
                let rows = io::read_flow(&f)?;
                if rows.len() != pred.len() {
                    return Err(format!("{} flow rows for {} predicted points", rows.len(), pred.len()).into());
                }
                let predicted: Vec<Vec3> = pred.positions().iter().zip(&rows).map(|(p, (x, _))| p - x).collect();
                let field = FlowField::new(predicted, rows.iter().map(|(_, f)| *f).collect())?;
                let t = config.accuracy;
                row.epe = Some(metrics::epe(&field)?);
                row.acc_s = Some(metrics::accuracy(&field, t.strict_abs, t.strict_rel)?);
                row.acc_r = Some(metrics::accuracy(&field, t.relaxed_abs, t.relaxed_rel)?);
            }
            let csv = metrics::metrics_csv(std::slice::from_ref(&row));
            print!("{}", metrics::metrics_table(std::slice::from_ref(&row)));
            if let Some(o) = out {
                write_text(&o, &csv)?;
            }
        }
        Command::Benchgen { suite, case, out } => {
            let mut cases = benchgen::suite(&suite)?;
            if let Some(name) = case {
                cases.retain(|c| c.name == name);
                if cases.is_empty() {
                    return Err(format!("no case {name:?} in suite {suite:?}").into());
                }
            }
            for c in &cases {
                let files = benchgen::emit_case(c, &out)?;
                println!("wrote {}", files.dir.display());
            }
        }
        Command::Render { input, out, common } => {
            let config = resolve(&common, FitConfig::default())?;
            let data = io::read_mesh_data(&input)?;
            let settings: RenderSettings = config.render;
            let image = if data.faces.is_empty() {
                let points = data.into_point_set()?;
                let bounds = points.bounds().ok_or("empty point set")?;
                let cam = render::sample_camera(derive_seed(config.seed, stream::CAMERA, 0), &bounds, &settings)?;
                render::splat_point_normals(points.positions(), points.normals(), &cam, &settings)?
            } else {
                let mesh: TriMesh = data.into_mesh()?;
                let bounds = mesh.bounds().ok_or("empty mesh")?;
                let cam = render::sample_camera(derive_seed(config.seed, stream::CAMERA, 0), &bounds, &settings)?;
                render::rasterize_mesh_normals(&mesh, &cam)?
            };
            image.write_png(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
