//! Synthetic scenes, feasible-pose sampling, coverage evaluation, and the
//! 2D toy hierarchy.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate_all, bound_for_detection, CalibrationRecord, NormType};
use crate::constraints::{
    pose_to_x_quat, pose_to_x_rotmat, ConstraintLabel, ObservationSet, QuadraticConstraintSet,
};
use crate::error::{Result, SlueError};
use crate::geometry::{
    project_keypoint, quat_to_rotation, rotation_to_quat, CameraIntrinsics, Pose, Rotation,
    UnitQuaternion,
};
use crate::pnp::{pnp_estimate, PnpProblem};
use crate::slue::{slue_joint, Form};
use crate::sos::solve_min_volume_ellipsoid;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseModel {
    UniformInBox { scale: f64 },
    TruncatedGaussian { scale: f64 },
}

impl NoiseModel {
    pub fn scale(&self) -> f64 {
        match *self {
            NoiseModel::UniformInBox { scale } | NoiseModel::TruncatedGaussian { scale } => scale,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_keypoints: usize,
    /// Keypoints are sampled in a centered cube with this side length.
    pub object_scale: f64,
    pub t_min: [f64; 3],
    pub t_max: [f64; 3],
    pub noise: NoiseModel,
    /// One noise draw shared by every keypoint (the perfectly correlated
    /// case of the conformal coverage analysis).
    pub correlated: bool,
    pub radius: f64,
    pub norm: NormType,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl SceneConfig {
    pub fn default_with_seed(seed: u64) -> SceneConfig {
        SceneConfig {
            n_keypoints: 8,
            object_scale: 0.3,
            t_min: [-0.2, -0.2, 2.0],
            t_max: [0.2, 0.2, 3.0],
            noise: NoiseModel::UniformInBox { scale: 2.0 },
            correlated: false,
            radius: 2.0,
            norm: NormType::Infinity,
            intrinsics: CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0).unwrap(),
            seed,
        }
    }
}

/// Uniform rotation via normalized uniform sample of the 4-ball.
pub fn random_rotation_uniform(rng: &mut impl Rng) -> Rotation {
    loop {
        let q = nalgebra::Vector4::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
        let n = q.norm();
        if n > 1e-3 && n <= 1.0 {
            return quat_to_rotation(&UnitQuaternion::new(q / n).unwrap());
        }
    }
}

fn sample_noise(rng: &mut impl Rng, model: NoiseModel) -> Vector2<f64> {
    match model {
        NoiseModel::UniformInBox { scale } => Vector2::new(
            rng.random_range(-scale..=scale),
            rng.random_range(-scale..=scale),
        ),
        NoiseModel::TruncatedGaussian { scale } => {
            let mut draw = || loop {
                // Box-Muller, rejected beyond 3 sigma
                let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                if g.abs() <= 3.0 {
                    return g * scale;
                }
            };
            Vector2::new(draw(), draw())
        }
    }
}

/// Deterministic synthetic scene: keypoints in an object-scale box, pose
/// from the prior, detections = exact projection + pixel noise.
pub fn generate_scene(config: &SceneConfig) -> Result<(ObservationSet, Pose)> {
    if config.n_keypoints == 0 {
        return Err(SlueError::input("scene needs at least one keypoint"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..1000 {
        let rotation = random_rotation_uniform(&mut rng);
        let t = Vector3::from_fn(|i, _| rng.random_range(config.t_min[i]..=config.t_max[i]));
        let pose = Pose::new(rotation, t);
        let half = config.object_scale / 2.0;
        let pts: Vec<Vector3<f64>> = (0..config.n_keypoints)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-half..=half)))
            .collect();
        let projections: Vec<_> = pts
            .iter()
            .map(|b| project_keypoint(&pose, &config.intrinsics, b))
            .collect();
        if projections.iter().any(|p| p.is_err()) {
            continue;
        }
        let shared = sample_noise(&mut rng, config.noise);
        let dets = projections
            .into_iter()
            .map(|p| {
                let eps = if config.correlated {
                    shared
                } else {
                    sample_noise(&mut rng, config.noise)
                };
                p.unwrap() + eps
            })
            .collect();
        let obs = ObservationSet::new(
            pts,
            dets,
            vec![config.radius; config.n_keypoints],
            config.intrinsics,
            config.norm,
        )?;
        return Ok((obs, pose));
    }
    Err(SlueError::input(
        "pose prior produced no all-positive-depth scene in 1000 tries",
    ))
}

fn pose_to_z(set: &QuadraticConstraintSet, pose: &Pose, qbar: &UnitQuaternion) -> DVector<f64> {
    if set.dim == 13 {
        pose_to_x_rotmat(pose)
    } else {
        pose_to_x_quat(pose, qbar)
    }
}

/// Rejection-samples members of the constraint set around a seed pose with
/// a growing proposal radius. Returns the members and the acceptance rate.
pub fn sample_feasible_poses(
    set: &QuadraticConstraintSet,
    seed_pose: &Pose,
    n: usize,
    seed: u64,
) -> Result<(Vec<Pose>, f64)> {
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qbar = rotation_to_quat(&seed_pose.rotation);
    let budget = 400 * n;
    let mut members = Vec::with_capacity(n);
    let mut proposals = 0usize;
    let depth = seed_pose.translation.z.abs().max(1e-6);
    while proposals < budget && members.len() < n {
        proposals += 1;
        // scales span tiny to coarse so both tight and loose sets get hits
        let frac: f64 = rng.random_range(0.0..1.0_f64).powi(2);
        let rot_scale = 1e-3 + 0.3 * frac;
        let trans_scale = 1e-4 + 0.05 * frac;
        let mut axis = Vector3::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
        if axis.norm() < 1e-9 {
            continue;
        }
        axis /= axis.norm();
        let angle = rng.random_range(0.0..rot_scale);
        let Ok(dr) = crate::geometry::rotation_from_axis_angle(&axis, angle) else {
            continue;
        };
        let Ok(rot) = Rotation::from_matrix(dr.matrix() * seed_pose.rotation.matrix()) else {
            continue;
        };
        // most pose uncertainty sits along the optical axis, so propose
        // depth-scaled steps there on top of an isotropic move
        let mut dt = Vector3::from_fn(|_, _| rng.random_range(-trans_scale..=trans_scale));
        dt.z += rng.random_range(-1.0..1.0) * trans_scale * depth;
        let pose = Pose::new(rot, seed_pose.translation + dt);
        let x = pose_to_z(set, &pose, &qbar);
        if set.check_membership(&x)?.0 {
            members.push(pose);
        }
    }
    let rate = members.len() as f64 / proposals.max(1) as f64;
    if members.is_empty() {
        eprintln!("warning: no feasible poses accepted in {proposals} proposals");
    }
    Ok((members, rate))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub keypoint_coverage: f64,
    pub set_coverage: f64,
    pub ellipsoid_coverage: f64,
    pub n_frames: usize,
    /// Frames that failed to calibrate, solve, or certify.
    pub n_failures: usize,
    /// Frames where the truth was in the constraint set but outside the
    /// ellipsoid; containment says this must stay zero.
    pub n_set_not_ellipsoid: usize,
}

/// Calibrates on one split, then evaluates keypoint, constraint-set, and
/// ellipsoid coverage of the ground truth on the other. Per-frame errors
/// are counted as failures and never abort the batch.
pub fn evaluate_coverage(
    calib_configs: &[SceneConfig],
    eval_configs: &[SceneConfig],
    alpha: f64,
    order: usize,
    form: Form,
) -> Result<CoverageReport> {
    let mut records = Vec::new();
    for cfg in calib_configs {
        let (obs, gt) = generate_scene(cfg)?;
        for i in 0..obs.len() {
            let exact = project_keypoint(&gt, &obs.intrinsics, &obs.keypoints_3d[i])?;
            records.push(CalibrationRecord {
                keypoint_id: i,
                detected: obs.detections[i],
                confidence: 1.0,
                ground_truth: exact,
            });
        }
    }
    let norm = calib_configs
        .first()
        .map(|c| c.norm)
        .ok_or_else(|| SlueError::input("empty calibration split"))?;
    let bounds = calibrate_all(&records, alpha, norm)?;

    let mut kp_hits = 0usize;
    let mut kp_total = 0usize;
    let mut set_hits = 0usize;
    let mut ell_hits = 0usize;
    let mut failures = 0usize;
    let mut set_not_ell = 0usize;
    for cfg in eval_configs {
        let frame = (|| -> Result<(bool, usize, usize, bool)> {
            let (mut obs, gt) = generate_scene(cfg)?;
            let mut hits = 0;
            for i in 0..obs.len() {
                let r = bound_for_detection(&bounds[i.min(bounds.len() - 1)], 1.0)?;
                obs.radii[i] = r;
                let exact = project_keypoint(&gt, &obs.intrinsics, &obs.keypoints_3d[i])?;
                let e = obs.detections[i] - exact;
                let dist = match norm {
                    NormType::Two => e.norm(),
                    NormType::Infinity => e.x.abs().max(e.y.abs()),
                };
                if dist <= r + 1e-12 {
                    hits += 1;
                }
            }
            let est = pnp_estimate(&PnpProblem::new(obs.clone())?)?;
            let set = crate::slue::build_set(&obs, form, &est.pose)?;
            let qbar = rotation_to_quat(&est.pose.rotation);
            let x = pose_to_z(&set, &gt, &qbar);
            let in_set = set.check_membership(&x)?.0;
            let bound = slue_joint(&obs, &est.pose, form, order)?;
            let z = x.rows(1, set.dim - 1).into_owned();
            let in_ell = bound.mahalanobis(&z) <= 1.0 + 1e-6;
            Ok((in_set, hits, obs.len(), in_ell))
        })();
        match frame {
            Ok((in_set, hits, n_kp, in_ell)) => {
                kp_hits += hits;
                kp_total += n_kp;
                if in_set {
                    set_hits += 1;
                }
                if in_ell {
                    ell_hits += 1;
                }
                if in_set && !in_ell {
                    set_not_ell += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let n_frames = eval_configs.len();
    Ok(CoverageReport {
        alpha,
        keypoint_coverage: kp_hits as f64 / kp_total.max(1) as f64,
        set_coverage: set_hits as f64 / n_frames.max(1) as f64,
        ellipsoid_coverage: ell_hits as f64 / n_frames.max(1) as f64,
        n_frames,
        n_failures: failures,
        n_set_not_ellipsoid: set_not_ell,
    })
}

/// Coverage experiment description as ingested by the CLI: one scene
/// template replicated with shifted seeds for the calibration and
/// evaluation splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageJob {
    pub scene: SceneConfig,
    pub n_calib_frames: usize,
    pub n_eval_frames: usize,
    pub alpha: f64,
    pub order: usize,
    pub form: Form,
}

impl CoverageJob {
    pub fn run(&self) -> Result<CoverageReport> {
        let replicate = |offset: u64, i: usize| {
            let mut c = self.scene.clone();
            c.seed = self.scene.seed.wrapping_add(offset).wrapping_add(i as u64);
            c
        };
        let calib: Vec<SceneConfig> = (0..self.n_calib_frames).map(|i| replicate(0, i)).collect();
        let evals: Vec<SceneConfig> = (0..self.n_eval_frames)
            .map(|i| replicate(1 << 32, i))
            .collect();
        evaluate_coverage(&calib, &evals, self.alpha, self.order, self.form)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ToyOrderResult {
    pub order: usize,
    pub h: Matrix2<f64>,
    pub logdet: f64,
    /// Grid-feasible points outside this order's ellipse.
    pub violations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Toy2dReport {
    pub orders: Vec<ToyOrderResult>,
    pub grid_feasible: usize,
}

/// Runs the relaxation hierarchy on a 2D set given as 3×3 quadratic
/// matrices over x = [1, z₁, z₂], and checks every order's ellipse
/// against a dense feasibility grid.
pub fn toy2d(
    inequalities: Vec<DMatrix<f64>>,
    center: Vector2<f64>,
    max_order: usize,
    grid_range: f64,
    grid_n: usize,
) -> Result<Toy2dReport> {
    if inequalities.is_empty() || max_order == 0 {
        return Err(SlueError::input("need at least one constraint and order"));
    }
    for a in &inequalities {
        if a.nrows() != 3 || a.ncols() != 3 {
            return Err(SlueError::input("toy constraints are 3x3 over [1, z1, z2]"));
        }
    }
    let n_ineq = inequalities.len();
    let set = QuadraticConstraintSet {
        dim: 3,
        inequalities,
        equalities: Vec::new(),
        ineq_labels: vec![ConstraintLabel::Toy; n_ineq],
        eq_labels: Vec::new(),
        homogenization: 0,
        likely_unbounded: false,
    };
    let mut feasible = Vec::new();
    for i in 0..grid_n {
        for j in 0..grid_n {
            let z1 = -grid_range + 2.0 * grid_range * i as f64 / (grid_n - 1) as f64;
            let z2 = -grid_range + 2.0 * grid_range * j as f64 / (grid_n - 1) as f64;
            let x = DVector::from_vec(vec![1.0, z1, z2]);
            if set.check_membership(&x)?.0 {
                feasible.push(Vector2::new(z1, z2));
            }
        }
    }
    let c = DVector::from_vec(vec![center.x, center.y]);
    let mut orders = Vec::new();
    for order in 1..=max_order {
        let bound = solve_min_volume_ellipsoid(&set, &c, order - 1, None)?;
        let h = Matrix2::from_fn(|i, j| bound.h[(i, j)]);
        let violations = feasible
            .iter()
            .filter(|p| {
                let d = *p - &center;
                d.dot(&(h * d)) > 1.0 + 1e-6
            })
            .count();
        orders.push(ToyOrderResult {
            order,
            h,
            logdet: bound.logdet,
            violations,
        });
    }
    Ok(Toy2dReport {
        orders,
        grid_feasible: feasible.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_constraint(cx: f64, cy: f64, r: f64, inside: bool) -> DMatrix<f64> {
        // inside: |z-c|^2 - r^2 <= 0; outside: r^2 - |z-c|^2 <= 0
        let s = if inside { 1.0 } else { -1.0 };
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 0)] = s * (cx * cx + cy * cy - r * r);
        a[(0, 1)] = -s * cx;
        a[(1, 0)] = -s * cx;
        a[(0, 2)] = -s * cy;
        a[(2, 0)] = -s * cy;
        a[(1, 1)] = s;
        a[(2, 2)] = s;
        a
    }

    #[test]
    fn scenes_are_deterministic_under_seed() {
        let cfg = SceneConfig::default_with_seed(80);
        let (a, pa) = generate_scene(&cfg).unwrap();
        let (b, pb) = generate_scene(&cfg).unwrap();
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.keypoints_3d, b.keypoints_3d);
        assert_eq!(pa.rotation.matrix(), pb.rotation.matrix());
        assert_eq!(pa.translation, pb.translation);
    }

    #[test]
    fn zero_noise_detections_are_exact_projections() {
        let mut cfg = SceneConfig::default_with_seed(81);
        cfg.noise = NoiseModel::UniformInBox { scale: 0.0 };
        let (obs, gt) = generate_scene(&cfg).unwrap();
        for i in 0..obs.len() {
            let exact = project_keypoint(&gt, &obs.intrinsics, &obs.keypoints_3d[i]).unwrap();
            assert!((obs.detections[i] - exact).norm() < 1e-9);
        }
    }

    #[test]
    fn box_noise_with_matching_radii_keeps_ground_truth_in_the_set() {
        for seed in 0..50 {
            let mut cfg = SceneConfig::default_with_seed(820 + seed);
            cfg.noise = NoiseModel::UniformInBox { scale: 2.0 };
            cfg.radius = 2.0;
            cfg.norm = NormType::Infinity;
            let (obs, gt) = generate_scene(&cfg).unwrap();
            let set = crate::constraints::build_rotmat_set(&obs).unwrap();
            let x = pose_to_x_rotmat(&gt);
            assert!(set.check_membership(&x).unwrap().0, "seed {seed}");
        }
    }

    #[test]
    fn feasible_pose_sampler_returns_members() {
        let mut cfg = SceneConfig::default_with_seed(83);
        cfg.noise = NoiseModel::UniformInBox { scale: 0.0 };
        cfg.radius = 3.0;
        let (obs, gt) = generate_scene(&cfg).unwrap();
        let set = crate::constraints::build_rotmat_set(&obs).unwrap();
        let (poses, rate) = sample_feasible_poses(&set, &gt, 50, 7).unwrap();
        assert!(rate > 0.0);
        assert!(!poses.is_empty());
        for p in &poses {
            let x = pose_to_x_rotmat(p);
            assert!(set.check_membership(&x).unwrap().0);
        }
        let (none, _) = sample_feasible_poses(&set, &gt, 0, 7).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn sampler_diameter_shrinks_with_radii() {
        let mut diameters = Vec::new();
        for radius in [4.0, 2.0, 1.0] {
            let mut cfg = SceneConfig::default_with_seed(84);
            cfg.noise = NoiseModel::UniformInBox { scale: 0.0 };
            cfg.radius = radius;
            let (obs, gt) = generate_scene(&cfg).unwrap();
            let set = crate::constraints::build_rotmat_set(&obs).unwrap();
            let (poses, _) = sample_feasible_poses(&set, &gt, 100, 9).unwrap();
            assert!(poses.len() > 10);
            let mut diam = 0.0_f64;
            for a in &poses {
                for b in &poses {
                    let d = (pose_to_x_rotmat(a) - pose_to_x_rotmat(b)).norm();
                    diam = diam.max(d);
                }
            }
            diameters.push(diam);
        }
        assert!(diameters[0] > diameters[1] && diameters[1] > diameters[2]);
    }

    #[test]
    fn toy_disk_order_one_is_the_disk() {
        let report = toy2d(
            vec![disk_constraint(0.0, 0.0, 1.0, true)],
            Vector2::zeros(),
            1,
            1.5,
            41,
        )
        .unwrap();
        assert_eq!(report.orders.len(), 1);
        let h = report.orders[0].h;
        assert!((h - Matrix2::identity()).norm() < 1e-6);
        assert_eq!(report.orders[0].violations, 0);
    }

    #[test]
    fn toy_crescent_hierarchy_is_sound_and_monotone() {
        let ineqs = vec![
            disk_constraint(0.0, 0.0, 1.0, true),
            disk_constraint(-0.8, 0.0, 0.7, false),
        ];
        let report = toy2d(ineqs, Vector2::new(0.2, 0.0), 3, 1.5, 41).unwrap();
        assert!(report.grid_feasible > 100);
        for o in &report.orders {
            assert_eq!(o.violations, 0, "order {} violates", o.order);
        }
        for w in report.orders.windows(2) {
            assert!(w[1].logdet >= w[0].logdet - 1e-5);
        }
    }

    #[test]
    fn toy_halfspace_is_rejected_as_unbounded() {
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 1)] = 0.5;
        a[(1, 0)] = 0.5;
        let err = toy2d(vec![a], Vector2::zeros(), 1, 1.0, 11).unwrap_err();
        assert!(matches!(err, SlueError::UnboundedSet(_)), "{err}");
    }

    #[test]
    fn coverage_report_orders_set_and_ellipsoid() {
        let calib: Vec<SceneConfig> = (0..60)
            .map(|i| {
                let mut c = SceneConfig::default_with_seed(8600 + i);
                c.norm = NormType::Two;
                c
            })
            .collect();
        let evals: Vec<SceneConfig> = (0..15)
            .map(|i| {
                let mut c = SceneConfig::default_with_seed(8900 + i);
                c.norm = NormType::Two;
                c
            })
            .collect();
        let report = evaluate_coverage(&calib, &evals, 0.1, 1, Form::Rotmat).unwrap();
        assert_eq!(report.n_frames, 15);
        assert_eq!(report.n_failures, 0);
        assert!(report.ellipsoid_coverage >= report.set_coverage);
        assert!(report.keypoint_coverage > 0.7);
        assert!((0.0..=1.0).contains(&report.set_coverage));
    }
}
