//! Weighted backprojection PnP: the default pose-estimate provider.
//!
//! Minimizes Σᵢ (1/σᵢ)‖(yᵢê₃ᵀ − K)(R bᵢ + t)‖² over R ∈ SO(3), t ∈ ℝ³.
//! The translation enters quadratically and is eliminated in closed form;
//! the rotation subproblem is solved by a second-order moment relaxation
//! over the 15 SO(3) equalities, then polished by Gauss-Newton steps.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::constraints::{reprojection_row, ObservationSet};
use crate::error::{Result, SlueError};
use crate::geometry::{
    mat3_from_vec, quat_to_rotation, rotation_from_axis_angle, skew, Pose, Rotation,
    UnitQuaternion,
};
use crate::sos::basis::{mono_product, MonomialBasis};
use crate::sos::lift::Poly;
use crate::sos::sdp::{status_is_solved, ConeBlock, ConicProblem, SQRT2};

const TIGHT_GAP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct PnpProblem {
    pub obs: ObservationSet,
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnpMethod {
    Sdp,
    Dlt,
}

#[derive(Clone, Debug)]
pub struct PnpEstimate {
    pub pose: Pose,
    /// Relative gap between the relaxation value and the recovered pose's
    /// objective; meaningful only for the SDP path.
    pub tightness: f64,
    pub objective: f64,
    pub method: PnpMethod,
}

impl PnpProblem {
    /// Weights default to the keypoint radii (σᵢ = rᵢ).
    pub fn new(obs: ObservationSet) -> Result<PnpProblem> {
        let sigmas = obs.radii.clone();
        PnpProblem::with_sigmas(obs, sigmas)
    }

    pub fn with_sigmas(obs: ObservationSet, sigmas: Vec<f64>) -> Result<PnpProblem> {
        if sigmas.len() != obs.len() {
            return Err(SlueError::input("one sigma per keypoint required"));
        }
        if sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(SlueError::input("sigmas must be positive and finite"));
        }
        Ok(PnpProblem { obs, sigmas })
    }
}

/// Residual rows for keypoint `i`: yᵢê₃ᵀ − K, whose last row is zero.
fn residual_matrix(obs: &ObservationSet, i: usize) -> Matrix3<f64> {
    let y = Vector3::new(obs.detections[i].x, obs.detections[i].y, 1.0);
    y * Vector3::z().transpose() - obs.intrinsics.matrix()
}

/// Full 12×12 cost matrix over z = [vec(R); t].
fn cost_matrix(p: &PnpProblem) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(12, 12);
    for i in 0..p.obs.len() {
        let m = residual_matrix(&p.obs, i);
        let w = 1.0 / p.sigmas[i];
        for l in 0..3 {
            let row: Vector3<f64> = m.row(l).transpose();
            let g = reprojection_row(&row, &p.obs.keypoints_3d[i]);
            for a in 0..12 {
                for b in 0..12 {
                    s[(a, b)] += w * g[a] * g[b];
                }
            }
        }
    }
    s
}

struct ReducedCost {
    /// 9×9 cost over vec(R) after eliminating t.
    s_red: DMatrix<f64>,
    /// t⋆ = -D⁻¹Bᵀ vec(R).
    neg_d_inv_bt: DMatrix<f64>,
    s_full: DMatrix<f64>,
}

fn reduce_cost(p: &PnpProblem) -> Result<ReducedCost> {
    let s_full = cost_matrix(p);
    let a = s_full.view((0, 0), (9, 9)).into_owned();
    let b = s_full.view((0, 9), (9, 3)).into_owned();
    let d = s_full.view((9, 9), (3, 3)).into_owned();
    let d_inv = d
        .try_inverse()
        .ok_or_else(|| SlueError::Numerical("degenerate translation normal matrix".into()))?;
    let mut s_red = &a - &b * &d_inv * b.transpose();
    for i in 0..9 {
        for j in 0..i {
            let avg = 0.5 * (s_red[(i, j)] + s_red[(j, i)]);
            s_red[(i, j)] = avg;
            s_red[(j, i)] = avg;
        }
    }
    Ok(ReducedCost {
        s_red,
        neg_d_inv_bt: -(d_inv * b.transpose()),
        s_full,
    })
}

fn objective_at(s_full: &DMatrix<f64>, pose: &Pose) -> f64 {
    let mut z = DVector::zeros(12);
    for i in 0..9 {
        z[i] = pose.rotation.vec()[i];
    }
    for i in 0..3 {
        z[9 + i] = pose.translation[i];
    }
    z.dot(&(s_full * &z))
}

/// Nearest rotation in Frobenius norm (polar factor with det correction).
fn polar_rotation(m: &Matrix3<f64>) -> Result<Rotation> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| SlueError::Numerical("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| SlueError::Numerical("svd failed".into()))?;
    let d = (u * vt).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    Rotation::from_matrix(u * fix * vt)
}

/// Gauss-Newton descent on c(R) = vec(R)ᵀ S vec(R) over left perturbations
/// R ← exp(ω̂)R.
fn polish_rotation(s_red: &DMatrix<f64>, mut rot: Rotation) -> Rotation {
    for _ in 0..50 {
        let r = DVector::from_fn(9, |i, _| rot.vec()[i]);
        let mut jac = DMatrix::zeros(9, 3);
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = 1.0;
            let gen = skew(&e) * rot.matrix();
            for c in 0..3 {
                for l in 0..3 {
                    jac[(3 * c + l, k)] = gen[(l, c)];
                }
            }
        }
        let grad = jac.transpose() * s_red * &r;
        let hess = jac.transpose() * s_red * &jac;
        let Some(hinv) = hess.try_inverse() else { break };
        let step = -(hinv * grad);
        let w = Vector3::new(step[0], step[1], step[2]);
        let angle = w.norm();
        if angle < 1e-14 {
            break;
        }
        let Ok(dr) = rotation_from_axis_angle(&(w / angle), angle) else {
            break;
        };
        match Rotation::from_matrix(dr.matrix() * rot.matrix()) {
            Ok(next) => rot = next,
            Err(_) => break,
        }
    }
    rot
}

/// Homogeneous quadratics r_k(q) with vec(R(q)) = r(q) for unit q,
/// scalar-first, as coefficient maps over 4-variable monomials.
fn rotation_entry_polys() -> [Poly; 9] {
    let squares = |sign: [f64; 4]| -> Poly {
        (0..4)
            .map(|k| {
                let mut e = vec![0u8; 4];
                e[k] = 2;
                (e, sign[k])
            })
            .collect()
    };
    let cross = |(a, b): (usize, usize), (c, d): (usize, usize), s: f64| -> Poly {
        let mut e1 = vec![0u8; 4];
        e1[a] = 1;
        e1[b] = 1;
        let mut e2 = vec![0u8; 4];
        e2[c] = 1;
        e2[d] = 1;
        [(e1, 2.0), (e2, 2.0 * s)].into_iter().collect()
    };
    // column-major vec of the homogeneous rotation matrix, q scalar-first
    [
        squares([1.0, 1.0, -1.0, -1.0]),           // R00
        cross((1, 2), (0, 3), 1.0),                // R10 = 2(q1q2 + q0q3)
        cross((1, 3), (0, 2), -1.0),               // R20 = 2(q1q3 - q0q2)
        cross((1, 2), (0, 3), -1.0),               // R01 = 2(q1q2 - q0q3)
        squares([1.0, -1.0, 1.0, -1.0]),           // R11
        cross((2, 3), (0, 1), 1.0),                // R21 = 2(q2q3 + q0q1)
        cross((1, 3), (0, 2), 1.0),                // R02 = 2(q1q3 + q0q2)
        cross((2, 3), (0, 1), -1.0),               // R12 = 2(q2q3 - q0q1)
        squares([1.0, -1.0, -1.0, 1.0]),           // R22
    ]
}

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            *out.entry(mono_product(ea, eb)).or_insert(0.0) += ca * cb;
        }
    }
    out
}

/// Second-order moment relaxation of min vec(R)ᵀ S vec(R) over SO(3),
/// in the quaternion parametrization: the cost is a homogeneous quartic
/// on the unit sphere in ℝ⁴, relaxed over a 15×15 moment matrix.
fn rotation_moment_sdp(s_red: &DMatrix<f64>) -> Result<(Rotation, f64, f64)> {
    let basis2 = MonomialBasis::new(4, 2);
    let basis4 = MonomialBasis::new(4, 4);
    let n = basis2.len();
    let entry_polys = rotation_entry_polys();
    let mut problem = ConicProblem::new(basis4.len());
    // positive rescaling keeps the argmin and conditions the solve
    let obj_scale = s_red.norm().max(f64::MIN_POSITIVE);
    for k in 0..9 {
        for l in 0..9 {
            if s_red[(k, l)] == 0.0 {
                continue;
            }
            for (e, c) in poly_mul(&entry_polys[k], &entry_polys[l]) {
                problem.q[basis4.index_of(&e).unwrap()] += s_red[(k, l)] / obj_scale * c;
            }
        }
    }
    let const_idx = basis4.index_of(&vec![0u8; 4]).unwrap();
    problem.push_row(&[(const_idx, 1.0)], 1.0);
    // localizers of qᵀq - 1 = 0 against all monomials of degree ≤ 2
    for m in 0..n {
        let mut entries = Vec::with_capacity(5);
        for k in 0..4 {
            let mut e = vec![0u8; 4];
            e[k] = 2;
            let prod = mono_product(&e, &basis2.exponents[m]);
            entries.push((basis4.index_of(&prod).unwrap(), 1.0));
        }
        entries.push((basis4.index_of(&basis2.exponents[m]).unwrap(), -1.0));
        problem.push_row(&entries, 0.0);
    }
    for j in 0..n {
        for i in 0..=j {
            let scale = if i == j { 1.0 } else { SQRT2 };
            let prod = mono_product(&basis2.exponents[i], &basis2.exponents[j]);
            let idx = basis4.index_of(&prod).unwrap();
            problem.push_row(&[(idx, -scale)], 0.0);
        }
    }
    problem.push_cone(ConeBlock::Zero(1 + n));
    problem.push_cone(ConeBlock::PsdTriangle(n));
    let sol = problem.solve(200)?;
    if !status_is_solved(sol.status) {
        return Err(SlueError::Numerical(format!(
            "moment relaxation did not solve: {:?}",
            sol.status
        )));
    }
    // q and -q give the same rotation, so first moments can cancel; the
    // second-moment block stays rank one and its top eigenvector is ±q
    let mut m2 = nalgebra::Matrix4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let mut e = vec![0u8; 4];
            e[i] += 1;
            e[j] += 1;
            m2[(i, j)] = sol.v[basis4.index_of(&e).unwrap()];
        }
    }
    let sym = nalgebra::SymmetricEigen::new(m2);
    let top = sym
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let qv: nalgebra::Vector4<f64> = sym.eigenvectors.column(top).into_owned();
    let q = UnitQuaternion::new(qv.normalize())?;
    Ok((quat_to_rotation(&q), sol.objective * obj_scale, obj_scale))
}

fn dlt_rotation(p: &PnpProblem) -> Result<Rotation> {
    let n = p.obs.len();
    let mut g = DMatrix::zeros(3 * n, 12);
    for i in 0..n {
        let m = residual_matrix(&p.obs, i);
        for l in 0..3 {
            let row: Vector3<f64> = m.row(l).transpose();
            let gr = reprojection_row(&row, &p.obs.keypoints_3d[i]);
            for c in 0..12 {
                g[(3 * i + l, c)] = gr[c];
            }
        }
    }
    let svd = g.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| SlueError::Numerical("svd failed".into()))?;
    let mut z = vt.row(vt.nrows() - 1).transpose().into_owned();
    // fix the projective sign by mean keypoint depth
    let mhat = mat3_from_vec(&nalgebra::SVector::<f64, 9>::from_fn(|i, _| z[i]));
    let that = Vector3::new(z[9], z[10], z[11]);
    let mean_depth: f64 = (0..n)
        .map(|i| (mhat * p.obs.keypoints_3d[i] + that).z)
        .sum();
    if mean_depth < 0.0 {
        z = -z;
    }
    polar_rotation(&mat3_from_vec(&nalgebra::SVector::<f64, 9>::from_fn(
        |i, _| z[i],
    )))
}

fn finish(
    red: &ReducedCost,
    rot: Rotation,
    obj_sdp: Option<(f64, f64)>,
    method: PnpMethod,
) -> PnpEstimate {
    let rot = polish_rotation(&red.s_red, rot);
    let r = DVector::from_fn(9, |i, _| rot.vec()[i]);
    let t = &red.neg_d_inv_bt * &r;
    let pose = Pose::new(rot, Vector3::new(t[0], t[1], t[2]));
    let objective = objective_at(&red.s_full, &pose);
    let tightness = match obj_sdp {
        // gap relative to the cost scale, so solver tolerance is the floor
        Some((o, scale)) => (objective - o).abs() / o.abs().max(scale).max(1e-300),
        None => f64::INFINITY,
    };
    PnpEstimate {
        pose,
        tightness,
        objective,
        method,
    }
}

/// Estimates the pose; falls back to a DLT initializer with local
/// refinement when the relaxation fails, reporting the method used.
pub fn pnp_estimate(problem: &PnpProblem) -> Result<PnpEstimate> {
    let n = problem.obs.len();
    if n < 3 {
        return Err(SlueError::input(
            "PnP needs at least 3 keypoints (4+ non-coplanar recommended)",
        ));
    }
    if n == 3 {
        eprintln!("warning: PnP with 3 keypoints is ambiguous; prefer 4 or more");
    }
    let red = reduce_cost(problem)?;
    match rotation_moment_sdp(&red.s_red) {
        Ok((rot, obj_sdp, scale)) => {
            let mut est = finish(&red, rot, Some((obj_sdp, scale)), PnpMethod::Sdp);
            if est.tightness > TIGHT_GAP {
                // one more polish pass from the polar point can only help
                est = finish(&red, est.pose.rotation, Some((obj_sdp, scale)), PnpMethod::Sdp);
            }
            Ok(est)
        }
        Err(_) => {
            let rot = dlt_rotation(problem)?;
            Ok(finish(&red, rot, None, PnpMethod::Dlt))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::NormType;
    use crate::geometry::{project_keypoint, CameraIntrinsics};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let mut axis = Vector3::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
        axis /= axis.norm();
        rotation_from_axis_angle(&axis, rng.random_range(-3.0..3.0)).unwrap()
    }

    fn noiseless_scene(rng: &mut impl Rng, n: usize) -> (ObservationSet, Pose) {
        let k = CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0).unwrap();
        let pose = Pose::new(
            random_rotation(rng),
            Vector3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(2.0..3.0),
            ),
        );
        let mut pts = Vec::new();
        let mut dets = Vec::new();
        while pts.len() < n {
            let b = Vector3::from_fn(|_, _| rng.random_range(-0.15..0.15));
            if let Ok(uv) = project_keypoint(&pose, &k, &b) {
                pts.push(b);
                dets.push(uv);
            }
        }
        let obs = ObservationSet::new(pts, dets, vec![2.0; n], k, NormType::Infinity).unwrap();
        (obs, pose)
    }

    #[test]
    fn rotation_entry_polys_match_quat_to_rotation() {
        use crate::sos::lift::poly_eval;
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let polys = rotation_entry_polys();
        for _ in 0..20 {
            let mut qv = nalgebra::Vector4::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
            qv /= qv.norm();
            let q = crate::geometry::UnitQuaternion::new(qv).unwrap();
            let r = quat_to_rotation(&q).vec();
            let z = nalgebra::DVector::from_fn(4, |i, _| qv[i]);
            for k in 0..9 {
                assert!((poly_eval(&polys[k], &z) - r[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_scene_is_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..5 {
            let (obs, pose) = noiseless_scene(&mut rng, 8);
            let problem = PnpProblem::new(obs).unwrap();
            let est = pnp_estimate(&problem).unwrap();
            assert_eq!(est.method, PnpMethod::Sdp);
            assert!(est.tightness < 1e-6, "gap {}", est.tightness);
            let dr = (est.pose.rotation.matrix() - pose.rotation.matrix()).norm();
            let dt = (est.pose.translation - pose.translation).norm();
            assert!(dr < 1e-4, "rotation error {dr}");
            assert!(dt < 1e-4, "translation error {dt}");
            // estimator optimality on the tight case
            let red = reduce_cost(&problem).unwrap();
            assert!(est.objective <= objective_at(&red.s_full, &pose) + 1e-9);
            for b in &problem.obs.keypoints_3d {
                assert!((est.pose.rotation.matrix() * b + est.pose.translation).z > 0.0);
            }
        }
    }

    #[test]
    fn common_sigma_scaling_leaves_the_pose_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (obs, _) = noiseless_scene(&mut rng, 8);
        let base = PnpProblem::new(obs.clone()).unwrap();
        let scaled =
            PnpProblem::with_sigmas(obs, base.sigmas.iter().map(|s| s * 7.0).collect()).unwrap();
        let a = pnp_estimate(&base).unwrap();
        let b = pnp_estimate(&scaled).unwrap();
        assert!((a.pose.rotation.matrix() - b.pose.rotation.matrix()).norm() < 1e-6);
        assert!((a.pose.translation - b.pose.translation).norm() < 1e-6);
    }

    #[test]
    fn two_keypoints_are_rejected_three_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let (obs, _) = noiseless_scene(&mut rng, 2);
        let err = pnp_estimate(&PnpProblem::new(obs).unwrap()).unwrap_err();
        assert!(matches!(err, SlueError::Input(_)));
        let (obs3, _) = noiseless_scene(&mut rng, 3);
        assert!(pnp_estimate(&PnpProblem::new(obs3).unwrap()).is_ok());
    }

    #[test]
    fn nonpositive_sigmas_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let (obs, _) = noiseless_scene(&mut rng, 4);
        assert!(PnpProblem::with_sigmas(obs.clone(), vec![1.0; 3]).is_err());
        assert!(PnpProblem::with_sigmas(obs, vec![1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn dlt_initializer_recovers_noiseless_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for _ in 0..5 {
            let (obs, pose) = noiseless_scene(&mut rng, 8);
            let problem = PnpProblem::new(obs).unwrap();
            let rot = dlt_rotation(&problem).unwrap();
            let red = reduce_cost(&problem).unwrap();
            let est = finish(&red, rot, None, PnpMethod::Dlt);
            assert_eq!(est.method, PnpMethod::Dlt);
            assert!(est.tightness.is_infinite());
            let dr = (est.pose.rotation.matrix() - pose.rotation.matrix()).norm();
            assert!(dr < 1e-6, "rotation error {dr}");
        }
    }
}
