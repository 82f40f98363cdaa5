//! Marginalize a joint pose ellipsoid into translation-only and axis-angle
//! bounds, and compute the volume metrics used for reporting.
//!
//! The angular bound lives in ω·sinθ coordinates for the rotation-matrix
//! form (valid for θ ≤ 90°) and ω·sin(θ/2) for the quaternion form.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlueError};
use crate::geometry::{quat_product_matrices, Rotation, UnitQuaternion};
use crate::slue::{rotation_block, translation_block, Form, SlueResult};

const EIG_FLOOR: f64 = 1e-12;
const DEGENERATE_TOL: f64 = 1e-10;

/// Ellipsoidal bound on translation, `(t - c)ᵀ h_t (t - c) ≤ 1` in meters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TranslationBound {
    pub h_t: Matrix3<f64>,
    pub center: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularRepresentation {
    SinTheta,
    SinHalfTheta,
}

/// Ellipsoidal bound on orientation deviation from the center rotation:
/// `vᵀ h_theta v ≤ 1` with `v = ω sinθ` or `ω sin(θ/2)`.
#[derive(Clone, Debug)]
pub struct AngularBound {
    pub h_theta: Matrix3<f64>,
    pub representation: AngularRepresentation,
    pub center_rotation: Rotation,
}

/// Inverse through an eigendecomposition with a small floor, so that
/// near-singular matrices invert to large but finite results.
fn psd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    if sym.eigenvalues.iter().any(|&e| e < -1e-8) {
        return Err(SlueError::Numerical(format!(
            "matrix is not PSD (min eigenvalue {:.3e})",
            sym.eigenvalues.min()
        )));
    }
    let inv_diag = DMatrix::from_diagonal(&sym.eigenvalues.map(|e| 1.0 / e.max(EIG_FLOOR)));
    Ok(&sym.eigenvectors * inv_diag * sym.eigenvectors.transpose())
}

/// Axes on which a marginal matrix has collapsed to (numerical) zero.
fn degenerate_axes(h: &DMatrix<f64>) -> Vec<usize> {
    let sym = nalgebra::SymmetricEigen::new(h.clone());
    let mut idx: Vec<usize> = (0..h.nrows())
        .filter(|&i| sym.eigenvalues[i] < DEGENERATE_TOL)
        .collect();
    idx.sort_unstable();
    idx
}

/// Marginal of `{v : vᵀ h v ≤ 1}` onto the coordinates in `keep`:
/// `(P h⁻¹ Pᵀ)⁻¹`.
fn marginal(h: &DMatrix<f64>, keep: &[usize]) -> Result<DMatrix<f64>> {
    let inv = psd_inverse(h)?;
    let sub = DMatrix::from_fn(keep.len(), keep.len(), |i, j| inv[(keep[i], keep[j])]);
    let out = psd_inverse(&sub)?;
    let bad = degenerate_axes(&out);
    if !bad.is_empty() {
        return Err(SlueError::DegenerateBound { axes: bad });
    }
    Ok(out)
}

fn coords_within_target(joint: &SlueResult, wanted: &[usize]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            joint
                .target
                .iter()
                .position(|t| t == w)
                .ok_or_else(|| SlueError::input("joint bound does not cover the requested block"))
        })
        .collect()
}

fn mat3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

/// Translation marginal `h_t = (P_t H⁻¹ P_tᵀ)⁻¹` of a joint or
/// translation-split bound.
pub fn project_translation(joint: &SlueResult) -> Result<TranslationBound> {
    let t_coords = translation_block(joint.form);
    let keep = coords_within_target(joint, &t_coords)?;
    let h_t = marginal(&joint.h_block(), &keep)?;
    let center = Vector3::from_fn(|i, _| joint.center[t_coords[i]]);
    Ok(TranslationBound {
        h_t: mat3(&h_t),
        center,
    })
}

/// Rows of P_θ pick the skew part of a column-major vec(R): for
/// R = I + ŵ sinθ + ŵ²(1-cosθ), P_θ (vec R - vec I) = 2 ω sinθ.
fn p_theta_rotmat() -> DMatrix<f64> {
    let mut p = DMatrix::zeros(3, 9);
    p[(0, 5)] = 1.0;
    p[(0, 7)] = -1.0;
    p[(1, 6)] = 1.0;
    p[(1, 2)] = -1.0;
    p[(2, 1)] = 1.0;
    p[(2, 3)] = -1.0;
    p
}

/// Angular marginal of a rotation-matrix-form bound, in ω·sinθ
/// coordinates: `h_theta = 4 (P_θ [Mᵀ H_r M]⁻¹ P_θᵀ)⁻¹`, M = R̄ᵀ ⊗ I₃.
pub fn project_axis_angle_rotmat(
    joint: &SlueResult,
    center_rotation: &Rotation,
) -> Result<AngularBound> {
    if joint.form != Form::Rotmat {
        return Err(SlueError::input("expected a rotation-matrix-form bound"));
    }
    let r_coords = rotation_block(joint.form);
    let keep = coords_within_target(joint, &r_coords)?;
    let h_r = marginal(&joint.h_block(), &keep)?;
    let rbar_t = center_rotation.matrix().transpose();
    let m = rbar_t.kronecker(&Matrix3::identity());
    let conj = DMatrix::from_fn(9, 9, |i, j| m[(i, j)]);
    let inner = conj.transpose() * &h_r * &conj;
    let p = p_theta_rotmat();
    let projected = &p * psd_inverse(&inner)? * p.transpose();
    let h_theta = psd_inverse(&projected)? * 4.0;
    let bad = degenerate_axes(&h_theta);
    if !bad.is_empty() {
        return Err(SlueError::DegenerateBound { axes: bad });
    }
    Ok(AngularBound {
        h_theta: mat3(&h_theta),
        representation: AngularRepresentation::SinTheta,
        center_rotation: *center_rotation,
    })
}

/// Angular marginal of a quaternion-form bound, in ω·sin(θ/2)
/// coordinates: `h_theta = (P_θ [Ω₂(q̄)ᵀ H_q Ω₂(q̄)]⁻¹ P_θᵀ)⁻¹`.
pub fn project_axis_angle_quat(
    joint: &SlueResult,
    center_quat: &UnitQuaternion,
) -> Result<AngularBound> {
    if joint.form != Form::Quat {
        return Err(SlueError::input("expected a quaternion-form bound"));
    }
    let q_coords = rotation_block(joint.form);
    let keep = coords_within_target(joint, &q_coords)?;
    let h_q = marginal(&joint.h_block(), &keep)?;
    let (_, omega2) = quat_product_matrices(center_quat.coords());
    let conj = DMatrix::from_fn(4, 4, |i, j| omega2[(i, j)]);
    let inner = conj.transpose() * &h_q * &conj;
    let inv = psd_inverse(&inner)?;
    let sub = DMatrix::from_fn(3, 3, |i, j| inv[(i + 1, j + 1)]);
    let h_theta = psd_inverse(&sub)?;
    let bad = degenerate_axes(&h_theta);
    if !bad.is_empty() {
        return Err(SlueError::DegenerateBound { axes: bad });
    }
    Ok(AngularBound {
        h_theta: mat3(&h_theta),
        representation: AngularRepresentation::SinHalfTheta,
        center_rotation: crate::geometry::quat_to_rotation(center_quat),
    })
}

/// Principal angular half-axes in degrees, clipped at 90°.
pub fn angular_axes_degrees(a: &AngularBound) -> Result<Vector3<f64>> {
    let sym = nalgebra::SymmetricEigen::new(a.h_theta);
    if sym.eigenvalues.min() < -1e-8 {
        return Err(SlueError::Numerical("angular bound is not PSD".into()));
    }
    let mut out = Vector3::zeros();
    for i in 0..3 {
        let len = 1.0 / sym.eigenvalues[i].max(EIG_FLOOR).sqrt();
        let theta = match a.representation {
            AngularRepresentation::SinTheta => len.min(1.0).asin().to_degrees(),
            AngularRepresentation::SinHalfTheta => 2.0 * len.min(1.0).asin().to_degrees(),
        };
        out[i] = theta.min(90.0);
    }
    Ok(out)
}

/// Translation volume in m³ and angular volume in deg³:
/// `(4π/3) det(h_t)^{-1/2}` and `(4π/3) θ₁θ₂θ₃` with clipped axes.
pub fn bound_volumes(t: &TranslationBound, a: &AngularBound) -> Result<(f64, f64)> {
    let sym = nalgebra::SymmetricEigen::new(t.h_t);
    if sym.eigenvalues.min() < -1e-8 {
        return Err(SlueError::Numerical("translation bound is not PSD".into()));
    }
    let det: f64 = sym.eigenvalues.iter().map(|e| e.max(EIG_FLOOR)).product();
    let v_t = 4.0 * std::f64::consts::PI / 3.0 / det.sqrt();
    let axes = angular_axes_degrees(a)?;
    let v_ang = 4.0 * std::f64::consts::PI / 3.0 * axes.iter().product::<f64>();
    Ok((v_t, v_ang))
}

/// JSON report of both marginals and their volumes.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub h_t: Vec<Vec<f64>>,
    pub center_t: [f64; 3],
    pub h_theta: Vec<Vec<f64>>,
    pub representation: AngularRepresentation,
    pub angular_axes_deg: [f64; 3],
    pub volume_translation_m3: f64,
    pub volume_angular_deg3: f64,
}

impl BoundReport {
    pub fn new(t: &TranslationBound, a: &AngularBound) -> Result<BoundReport> {
        let (v_t, v_ang) = bound_volumes(t, a)?;
        let axes = angular_axes_degrees(a)?;
        let rows = |m: &Matrix3<f64>| (0..3).map(|i| (0..3).map(|j| m[(i, j)]).collect()).collect();
        Ok(BoundReport {
            h_t: rows(&t.h_t),
            center_t: [t.center.x, t.center.y, t.center.z],
            h_theta: rows(&a.h_theta),
            representation: a.representation,
            angular_axes_deg: [axes[0], axes[1], axes[2]],
            volume_translation_m3: v_t,
            volume_angular_deg3: v_ang,
        })
    }
}

/// Writes the boundary of the 2D marginal of `{z : (z-c)ᵀ h (z-c) ≤ 1}` on
/// coordinates `(i, j)` as CSV `x,y` lines for external plotting.
pub fn write_ellipse_slice_csv(
    w: &mut impl Write,
    h: &DMatrix<f64>,
    center: &DVector<f64>,
    i: usize,
    j: usize,
    n_points: usize,
) -> Result<()> {
    if i == j || i >= h.nrows() || j >= h.nrows() {
        return Err(SlueError::input("slice coordinates must be distinct and in range"));
    }
    let slice = marginal(h, &[i, j])?;
    let sym = nalgebra::SymmetricEigen::new(slice);
    let axes = sym.eigenvalues.map(|e| 1.0 / e.max(EIG_FLOOR).sqrt());
    writeln!(w, "x,y")?;
    for k in 0..n_points {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / n_points as f64;
        let local = nalgebra::Vector2::new(axes[0] * phi.cos(), axes[1] * phi.sin());
        let p = &sym.eigenvectors * local;
        writeln!(w, "{},{}", center[i] + p[0], center[j] + p[1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{quat_mul, rotation_from_axis_angle};
    use crate::slue::{form_dim, SolveStatus};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn result_from(form: Form, h: DMatrix<f64>, center: DVector<f64>) -> SlueResult {
        let d = form_dim(form);
        assert_eq!(h.nrows(), d);
        SlueResult {
            form,
            order: 1,
            status: SolveStatus::Ok,
            solve_time_s: 0.0,
            center,
            h,
            logdet: 0.0,
            certificate_residual: 0.0,
            target: (0..d).collect(),
        }
    }

    fn random_psd(rng: &mut impl Rng, n: usize, shift: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * shift
    }

    fn boundary_sample(rng: &mut impl Rng, h: &DMatrix<f64>, center: &DVector<f64>) -> DVector<f64> {
        let n = h.nrows();
        let mut u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        u /= u.norm();
        let sym = nalgebra::SymmetricEigen::new(h.clone());
        let half_inv =
            &sym.eigenvectors
                * DMatrix::from_diagonal(&sym.eigenvalues.map(|e: f64| 1.0 / e.sqrt()))
                * sym.eigenvectors.transpose();
        center + half_inv * u
    }

    #[test]
    fn identity_joint_projects_to_identity_translation() {
        let r = result_from(Form::Rotmat, DMatrix::identity(12, 12), DVector::zeros(12));
        let t = project_translation(&r).unwrap();
        assert_relative_eq!(t.h_t, Matrix3::identity(), epsilon = 1e-9);
    }

    #[test]
    fn block_diagonal_joint_projects_to_its_translation_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let b = random_psd(&mut rng, 9, 0.5);
        let c = random_psd(&mut rng, 3, 0.5);
        let mut h = DMatrix::zeros(12, 12);
        h.view_mut((0, 0), (9, 9)).copy_from(&b);
        h.view_mut((9, 9), (3, 3)).copy_from(&c);
        let r = result_from(Form::Rotmat, h, DVector::zeros(12));
        let t = project_translation(&r).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(t.h_t[(i, j)], c[(i, j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn translation_projection_is_sound_and_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let h = random_psd(&mut rng, 12, 0.3);
        let h_inv = psd_inverse(&h).unwrap();
        let center = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let r = result_from(Form::Rotmat, h.clone(), center.clone());
        let t = project_translation(&r).unwrap();
        let h_t_inv = psd_inverse(&DMatrix::from_fn(3, 3, |i, j| t.h_t[(i, j)])).unwrap();
        for _ in 0..10_000 {
            let z = boundary_sample(&mut rng, &h, &center);
            let dt = Vector3::new(z[9], z[10], z[11]) - t.center;
            assert!(dt.dot(&(t.h_t * dt)) <= 1.0 + 1e-8);
        }
        for _ in 0..100 {
            let mut d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            d /= d.norm();
            // support function of {v : vᵀ A v ≤ 1} in direction d is √(dᵀA⁻¹d)
            let s_marg = (0..3)
                .map(|i| (0..3).map(|j| d[i] * h_t_inv[(i, j)] * d[j]).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            let mut lifted = DVector::zeros(12);
            for i in 0..3 {
                lifted[9 + i] = d[i];
            }
            let s_joint = lifted.dot(&(&h_inv * &lifted)).sqrt();
            assert!((s_marg - s_joint).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_rotmat_angular_bound_is_explicit() {
        let r = result_from(Form::Rotmat, DMatrix::identity(12, 12), {
            let mut c = DVector::zeros(12);
            c[0] = 1.0;
            c[4] = 1.0;
            c[8] = 1.0;
            c
        });
        let a = project_axis_angle_rotmat(&r, &Rotation::identity()).unwrap();
        // P_θ P_θᵀ = 2I, so h_theta = 4 (P_θ P_θᵀ)⁻¹ = 2I
        assert_relative_eq!(a.h_theta, Matrix3::identity() * 2.0, epsilon = 1e-9);
        assert_eq!(a.representation, AngularRepresentation::SinTheta);
    }

    #[test]
    fn rotmat_angular_bound_holds_on_sampled_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for _ in 0..5 {
            let mut axis = Vector3::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
            axis /= axis.norm();
            let rbar = rotation_from_axis_angle(&axis, rng.random_range(-3.0..3.0)).unwrap();
            let mut h = DMatrix::zeros(12, 12);
            h.view_mut((0, 0), (9, 9))
                .copy_from(&(random_psd(&mut rng, 9, 1.0) * 30.0));
            h.view_mut((9, 9), (3, 3)).copy_from(&DMatrix::identity(3, 3));
            let mut center = DVector::zeros(12);
            for i in 0..9 {
                center[i] = rbar.vec()[i];
            }
            let res = result_from(Form::Rotmat, h, center);
            let a = project_axis_angle_rotmat(&res, &rbar).unwrap();
            let h_r = DMatrix::from_fn(9, 9, |i, j| res.h[(i, j)]);
            let mut tested = 0;
            for _ in 0..2000 {
                let mut w = Vector3::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
                w /= w.norm();
                let theta: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
                let rot = rotation_from_axis_angle(&w, theta).unwrap();
                let sample = Rotation::from_matrix(rot.matrix() * rbar.matrix()).unwrap();
                let dv = sample.vec() - rbar.vec();
                let dvd = DVector::from_fn(9, |i, _| dv[i]);
                if dvd.dot(&(&h_r * &dvd)) <= 1.0 {
                    tested += 1;
                    let v = w * theta.sin();
                    assert!(v.dot(&(a.h_theta * v)) <= 1.0 + 1e-7);
                }
            }
            assert!(tested > 50, "only {tested} rotations inside the marginal");
        }
    }

    #[test]
    fn identity_quat_angular_bound_is_explicit() {
        let mut center = DVector::zeros(7);
        center[0] = 1.0;
        let r = result_from(Form::Quat, DMatrix::identity(7, 7), center);
        let a = project_axis_angle_quat(&r, &UnitQuaternion::identity()).unwrap();
        assert_relative_eq!(a.h_theta, Matrix3::identity(), epsilon = 1e-9);
        assert_eq!(a.representation, AngularRepresentation::SinHalfTheta);
    }

    #[test]
    fn quat_angular_bound_holds_on_sampled_quaternions() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..5 {
            let mut axis = Vector3::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
            axis /= axis.norm();
            let qbar = UnitQuaternion::from_axis_angle(&axis, rng.random_range(-3.0..3.0)).unwrap();
            let mut h = DMatrix::zeros(7, 7);
            h.view_mut((0, 0), (4, 4))
                .copy_from(&(random_psd(&mut rng, 4, 1.0) * 30.0));
            h.view_mut((4, 4), (3, 3)).copy_from(&DMatrix::identity(3, 3));
            let mut center = DVector::zeros(7);
            for i in 0..4 {
                center[i] = qbar.coords()[i];
            }
            let res = result_from(Form::Quat, h, center);
            let a = project_axis_angle_quat(&res, &qbar).unwrap();
            let h_q = DMatrix::from_fn(4, 4, |i, j| res.h[(i, j)]);
            let mut tested = 0;
            for _ in 0..2000 {
                let mut w = Vector3::from_fn(|_, _| rng.random_range(-1.0_f64..1.0));
                w /= w.norm();
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let dq = UnitQuaternion::from_axis_angle(&w, theta).unwrap();
                // Ω₂(q̄) dq = dq ⊗ q̄, so perturbations compose on the left
                let q = quat_mul(dq.coords(), qbar.coords());
                let dqv = DVector::from_fn(4, |i, _| q[i] - qbar.coords()[i]);
                if dqv.dot(&(&h_q * &dqv)) <= 1.0 {
                    tested += 1;
                    let v = w * (theta / 2.0).sin();
                    assert!(v.dot(&(a.h_theta * v)) <= 1.0 + 1e-7);
                }
            }
            assert!(tested > 50, "only {tested} quaternions inside the marginal");
        }
    }

    #[test]
    fn zero_rotation_perturbation_is_inside() {
        let mut center = DVector::zeros(7);
        center[0] = 1.0;
        let r = result_from(Form::Quat, DMatrix::identity(7, 7), center);
        let a = project_axis_angle_quat(&r, &UnitQuaternion::identity()).unwrap();
        let v = Vector3::zeros();
        assert!(v.dot(&(a.h_theta * v)) <= 1.0);
    }

    #[test]
    fn volumes_match_closed_forms() {
        let t = TranslationBound {
            h_t: Matrix3::identity(),
            center: Vector3::zeros(),
        };
        let a = AngularBound {
            h_theta: Matrix3::identity() * 1e-6,
            representation: AngularRepresentation::SinTheta,
            center_rotation: Rotation::identity(),
        };
        let (v_t, v_ang) = bound_volumes(&t, &a).unwrap();
        let c = 4.0 * std::f64::consts::PI / 3.0;
        assert_relative_eq!(v_t, c, epsilon = 1e-12);
        // all half-axes ≥ 1 clip at 90°
        assert_relative_eq!(v_ang, c * 90.0_f64.powi(3), epsilon = 1e-9);

        let t2 = TranslationBound {
            h_t: Matrix3::identity() * 4.0,
            center: Vector3::zeros(),
        };
        let (v_t2, _) = bound_volumes(&t2, &a).unwrap();
        assert_relative_eq!(v_t2, c / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn half_angle_axes_double_the_arcsin() {
        let a = AngularBound {
            h_theta: Matrix3::identity() * 4.0,
            representation: AngularRepresentation::SinHalfTheta,
            center_rotation: Rotation::identity(),
        };
        let axes = angular_axes_degrees(&a).unwrap();
        // half-axis 1/2 in sin(θ/2): θ = 2 asin(1/2) = 60°
        for i in 0..3 {
            assert_relative_eq!(axes[i], 60.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_translation_block_is_reported() {
        let mut h = DMatrix::identity(12, 12);
        for i in 9..12 {
            h[(i, i)] = 0.0;
        }
        let r = result_from(Form::Rotmat, h, DVector::zeros(12));
        let err = project_translation(&r).unwrap_err();
        assert!(matches!(err, SlueError::DegenerateBound { .. }), "{err}");
    }

    #[test]
    fn non_psd_inputs_are_rejected() {
        let t = TranslationBound {
            h_t: Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0)),
            center: Vector3::zeros(),
        };
        let a = AngularBound {
            h_theta: Matrix3::identity(),
            representation: AngularRepresentation::SinTheta,
            center_rotation: Rotation::identity(),
        };
        assert!(bound_volumes(&t, &a).is_err());
    }

    #[test]
    fn marginal_blockdiag_never_beats_joint_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        for _ in 0..20 {
            let h = random_psd(&mut rng, 12, 0.2);
            let h_t = marginal(&h, &(9..12).collect::<Vec<_>>()).unwrap();
            let h_r = marginal(&h, &(0..9).collect::<Vec<_>>()).unwrap();
            let ld = |m: &DMatrix<f64>| {
                nalgebra::SymmetricEigen::new(m.clone())
                    .eigenvalues
                    .iter()
                    .map(|e| e.ln())
                    .sum::<f64>()
            };
            let joint_ld = ld(&h);
            let block_ld = ld(&h_t) + ld(&h_r);
            assert!(block_ld <= joint_ld + 1e-8);
        }
    }

    #[test]
    fn ellipse_slice_csv_traces_the_unit_circle() {
        let h = DMatrix::identity(2, 2);
        let c = DVector::zeros(2);
        let mut buf = Vec::new();
        write_ellipse_slice_csv(&mut buf, &h, &c, 0, 1, 16).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y"));
        let mut count = 0;
        for line in lines {
            let parts: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            assert!((parts[0].hypot(parts[1]) - 1.0).abs() < 1e-9);
            count += 1;
        }
        assert_eq!(count, 16);
        assert!(write_ellipse_slice_csv(&mut Vec::new(), &h, &c, 0, 0, 4).is_err());
    }
}
