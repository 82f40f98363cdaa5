use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector, Matrix3, Vector4};

use slue::conformal::{calibrate_all, NormType};
use slue::geometry::{quat_to_rotation, Pose, Rotation, UnitQuaternion};
use slue::harness::{toy2d, CoverageJob, NoiseModel, SceneConfig};
use slue::io::{
    read_records_jsonl, write_json, ObservationJson, PoseJson, ResultJson, Toy2dJson,
};
use slue::pnp::{pnp_estimate, PnpProblem};
use slue::projection::{
    project_axis_angle_quat, project_axis_angle_rotmat, project_translation,
    write_ellipse_slice_csv, BoundReport,
};
use slue::slue::{
    default_form, lift_center, slue_joint, slue_split, Form, SlueResult, SolveStatus, SplitTarget,
};
use slue::{Result, SlueError};

#[derive(Parser)]
#[command(name = "slue", about = "Ellipsoidal pose uncertainty bounds from keypoint noise sets")]
struct Cli {
    /// Overrides any seed carried by config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    Linf,
}

impl From<NormArg> for NormType {
    fn from(n: NormArg) -> NormType {
        match n {
            NormArg::L2 => NormType::Two,
            NormArg::Linf => NormType::Infinity,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Auto,
    Rotmat,
    Quat,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Rotation,
    Translation,
}

#[derive(Subcommand)]
enum Command {
    /// Split-conformal calibration of per-keypoint pixel radii.
    Calibrate {
        /// JSONL records {keypoint_id, detected, confidence, ground_truth}.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "linf")]
        norm: NormArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a pose-uncertainty ellipsoid for one observation set.
    Bound {
        /// Observation JSON {intrinsics, keypoints_3d, detections, confidences, norm, alpha}.
        #[arg(long)]
        observations: PathBuf,
        /// Calibrated bounds JSON (from `calibrate`); unneeded when the
        /// observations carry explicit radii.
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// Pose estimate JSON {rotation, translation}.
        #[arg(long, conflicts_with = "pnp")]
        pose: Option<PathBuf>,
        /// Estimate the center pose from the detections instead.
        #[arg(long)]
        pnp: bool,
        #[arg(long, value_enum, default_value = "auto")]
        form: FormArg,
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Bound only one block instead of the joint pose.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project a joint result to translation and axis-angle bounds.
    Project {
        /// Result JSON produced by `bound`.
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// When set, writes 2D ellipse slices as `<prefix>_<block>_<ij>.csv`.
        #[arg(long)]
        csv_prefix: Option<PathBuf>,
    },
    /// Empirical keypoint / set / ellipsoid coverage on synthetic scenes.
    Coverage {
        /// CoverageJob JSON {scene, n_calib_frames, n_eval_frames, alpha, order, form}.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relaxation hierarchy on a 2D constraint set with a grid soundness check.
    Toy2d {
        /// Toy JSON {inequalities, center, max_order, grid_range, grid_n}.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean solve times per form and order on synthetic scenes.
    Bench {
        #[arg(long, default_value_t = 8)]
        n_keypoints: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| SlueError::input(format!("{}: {e}", path.display())))
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| SlueError::input(format!("{}: {e}", path.display())))
}

fn output(path: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = File::create(p)
                .map_err(|e| SlueError::input(format!("{}: {e}", p.display())))?;
            write_json(&mut f, value)
        }
        None => write_json(&mut std::io::stdout().lock(), value),
    }
}

/// A failed solve still produces a result object so batch callers can
/// report per-frame status without a nonzero exit.
fn failed_result(form: Form, order: usize, center_pose: &Pose, e: &SlueError) -> SlueResult {
    let center = lift_center(center_pose, form);
    let d = center.len();
    SlueResult {
        form,
        order,
        status: SolveStatus::from_error(e),
        solve_time_s: 0.0,
        center,
        h: DMatrix::zeros(d, d),
        logdet: f64::NEG_INFINITY,
        certificate_residual: f64::INFINITY,
        target: (0..d).collect(),
    }
}

fn center_rotation(result: &SlueResult) -> Result<Rotation> {
    match result.form {
        Form::Rotmat => {
            let m = Matrix3::from_fn(|i, j| result.center[3 * j + i]);
            Ok(Rotation::project(&m))
        }
        Form::Quat => {
            let q = Vector4::from_fn(|i, _| result.center[i]);
            UnitQuaternion::new(q.normalize()).map(|q| quat_to_rotation(&q))
        }
    }
}

fn write_slices(
    prefix: &PathBuf,
    block: &str,
    h: &Matrix3<f64>,
    center: &nalgebra::Vector3<f64>,
) -> Result<()> {
    let hd = DMatrix::from_fn(3, 3, |i, j| h[(i, j)]);
    let cd = DVector::from_fn(3, |i, _| center[i]);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let path = format!("{}_{block}_{i}{j}.csv", prefix.display());
        let mut f = File::create(&path)
            .map_err(|e| SlueError::input(format!("{path}: {e}")))?;
        write_ellipse_slice_csv(&mut f, &hd, &cd, i, j, 256)?;
        f.flush()
            .map_err(|e| SlueError::input(format!("{path}: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate {
            records,
            alpha,
            norm,
            out,
        } => {
            let recs = read_records_jsonl(open(&records)?)?;
            let bounds = calibrate_all(&recs, alpha, norm.into())?;
            output(&out, &bounds)
        }
        Command::Bound {
            observations,
            bounds,
            pose,
            pnp,
            form,
            order,
            split,
            out,
        } => {
            let obs_json: ObservationJson = read_json_file(&observations)?;
            let kp_bounds = bounds
                .as_ref()
                .map(read_json_file::<Vec<slue::conformal::KeypointBound>>)
                .transpose()?;
            let obs = obs_json.to_observation_set(kp_bounds.as_deref())?;
            let center_pose = match (&pose, pnp) {
                (Some(p), false) => read_json_file::<PoseJson>(p)?.to_pose()?,
                (None, true) => pnp_estimate(&PnpProblem::new(obs.clone())?)?.pose,
                _ => {
                    return Err(SlueError::input(
                        "provide exactly one of --pose FILE or --pnp",
                    ))
                }
            };
            let form = match form {
                FormArg::Auto => default_form(order),
                FormArg::Rotmat => Form::Rotmat,
                FormArg::Quat => Form::Quat,
            };
            let solved = match split {
                None => slue_joint(&obs, &center_pose, form, order),
                Some(SplitArg::Rotation) => {
                    slue_split(&obs, &center_pose, form, order, SplitTarget::RotationOnly)
                }
                Some(SplitArg::Translation) => {
                    slue_split(&obs, &center_pose, form, order, SplitTarget::TranslationOnly)
                }
            };
            let result = match solved {
                Ok(r) => r,
                Err(e @ (SlueError::NotCertified(_) | SlueError::UnboundedSet(_))) => {
                    eprintln!("solve failed: {e}");
                    failed_result(form, order, &center_pose, &e)
                }
                Err(e) => return Err(e),
            };
            output(&out, &ResultJson::from_result(&result, Some(&center_pose)))
        }
        Command::Project {
            result,
            out,
            csv_prefix,
        } => {
            let json: ResultJson = read_json_file(&result)?;
            let joint = json.to_result()?;
            if joint.status != SolveStatus::Ok {
                return Err(SlueError::input("cannot project an uncertified result"));
            }
            let t = project_translation(&joint)?;
            let rbar = center_rotation(&joint)?;
            let a = match joint.form {
                Form::Rotmat => project_axis_angle_rotmat(&joint, &rbar)?,
                Form::Quat => {
                    let q = Vector4::from_fn(|i, _| joint.center[i]);
                    project_axis_angle_quat(&joint, &UnitQuaternion::new(q.normalize())?)?
                }
            };
            if let Some(prefix) = &csv_prefix {
                write_slices(prefix, "t", &t.h_t, &t.center)?;
                write_slices(prefix, "ang", &a.h_theta, &nalgebra::Vector3::zeros())?;
            }
            output(&out, &BoundReport::new(&t, &a)?)
        }
        Command::Coverage { config, out } => {
            let mut job: CoverageJob = read_json_file(&config)?;
            if let Some(seed) = cli.seed {
                job.scene.seed = seed;
            }
            let report = job.run()?;
            output(&out, &report)
        }
        Command::Toy2d { config, out } => {
            let toy: Toy2dJson = read_json_file(&config)?;
            let ineqs = toy
                .inequalities
                .iter()
                .map(|a| DMatrix::from_fn(3, 3, |i, j| a[i][j]))
                .collect();
            let report = toy2d(
                ineqs,
                nalgebra::Vector2::new(toy.center[0], toy.center[1]),
                toy.max_order,
                toy.grid_range,
                toy.grid_n,
            )?;
            output(&out, &report)
        }
        Command::Bench { n_keypoints, frames } => {
            let seed = cli.seed.unwrap_or(0);
            println!("{:<8} {:<6} {:>12} {:>12}", "form", "order", "mean_s", "median_s");
            for (form, order) in [(Form::Rotmat, 1), (Form::Quat, 2)] {
                let mut times = Vec::new();
                for i in 0..frames {
                    let mut cfg = SceneConfig::default_with_seed(seed.wrapping_add(i as u64));
                    cfg.n_keypoints = n_keypoints;
                    cfg.noise = NoiseModel::UniformInBox { scale: 2.0 };
                    let (obs, gt) = slue::harness::generate_scene(&cfg)?;
                    let start = Instant::now();
                    match slue_joint(&obs, &gt, form, order) {
                        Ok(_) => times.push(start.elapsed().as_secs_f64()),
                        Err(e) => eprintln!("frame {i} failed: {e}"),
                    }
                }
                if times.is_empty() {
                    println!("{:<8} {order:<6} {:>12} {:>12}", format!("{form:?}"), "-", "-");
                    continue;
                }
                times.sort_by(f64::total_cmp);
                let mean: f64 = times.iter().sum::<f64>() / times.len() as f64;
                let median = times[times.len() / 2];
                println!(
                    "{:<8} {order:<6} {mean:>12.4} {median:>12.4}",
                    format!("{form:?}").to_lowercase()
                );
            }
            Ok(())
        }
    }
}
