//! Homogeneous quadratic constraint sets encoding pose uncertainty.
//!
//! Rotation-matrix form lifts `x = [1, vec(R), t]` (dim 13); quaternion form
//! lifts `x = [1, q, t]` (dim 8). Inequalities `xᵀA x ≤ 0` carry chirality
//! and backprojection constraints, equalities `xᵀQ x = 0` carry SO(3) or the
//! unit-quaternion constraint.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::conformal::NormType;
use crate::error::{Result, SlueError};
use crate::geometry::{
    homogenize3, quat_product_matrices, rotation_to_quat, CameraIntrinsics, Pose, UnitQuaternion,
};

/// Membership tolerance for [`QuadraticConstraintSet::check_membership`].
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Provenance of a constraint matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintLabel {
    Chirality,
    Backprojection,
    So3,
    UnitQuat,
    Hemisphere,
    Bp2,
    Toy,
}

/// Keypoint observations feeding the constraint builders.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationSet {
    pub keypoints_3d: Vec<Vector3<f64>>,
    pub detections: Vec<Vector2<f64>>,
    pub radii: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    pub norm: NormType,
}

impl ObservationSet {
    pub fn new(
        keypoints_3d: Vec<Vector3<f64>>,
        detections: Vec<Vector2<f64>>,
        radii: Vec<f64>,
        intrinsics: CameraIntrinsics,
        norm: NormType,
    ) -> Result<Self> {
        let n = keypoints_3d.len();
        if n == 0 {
            return Err(SlueError::input("need at least one keypoint"));
        }
        if detections.len() != n || radii.len() != n {
            return Err(SlueError::input(format!(
                "length mismatch: {} keypoints, {} detections, {} radii",
                n,
                detections.len(),
                radii.len()
            )));
        }
        for (i, &r) in radii.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(SlueError::input(format!(
                    "radius for keypoint {i} is {r}; must be finite and nonnegative"
                )));
            }
        }
        Ok(ObservationSet {
            keypoints_3d,
            detections,
            radii,
            intrinsics,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.keypoints_3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints_3d.is_empty()
    }

    fn check_finite_radii(&self) -> Result<()> {
        for (i, &r) in self.radii.iter().enumerate() {
            if !r.is_finite() {
                return Err(SlueError::input(format!(
                    "keypoint {i} has non-finite radius {r}"
                )));
            }
        }
        Ok(())
    }
}

/// The lifted quadratic constraint set.
#[derive(Clone, Debug)]
pub struct QuadraticConstraintSet {
    pub dim: usize,
    pub inequalities: Vec<DMatrix<f64>>,
    pub equalities: Vec<DMatrix<f64>>,
    pub ineq_labels: Vec<ConstraintLabel>,
    pub eq_labels: Vec<ConstraintLabel>,
    /// Index of the coordinate pinned to 1.
    pub homogenization: usize,
    /// Fewer than 3 keypoints cannot bound the pose; the solver reports
    /// unboundedness downstream.
    pub likely_unbounded: bool,
}

impl QuadraticConstraintSet {
    /// Membership with raw constraint values as margins.
    pub fn check_membership(&self, x: &DVector<f64>) -> Result<(bool, Vec<f64>)> {
        if x.len() != self.dim {
            return Err(SlueError::input(format!(
                "x has dimension {}, set has {}",
                x.len(),
                self.dim
            )));
        }
        if (x[self.homogenization] - 1.0).abs() > 1e-12 {
            return Err(SlueError::input(
                "homogenizing coordinate of x must equal 1",
            ));
        }
        let mut margins = Vec::with_capacity(self.inequalities.len() + self.equalities.len());
        let mut member = true;
        for a in &self.inequalities {
            let v = quad_form(a, x);
            if v > MEMBERSHIP_TOL {
                member = false;
            }
            margins.push(v);
        }
        for q in &self.equalities {
            let v = quad_form(q, x);
            if v.abs() > MEMBERSHIP_TOL {
                member = false;
            }
            margins.push(v);
        }
        Ok((member, margins))
    }
}

fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * a * x)[0]
}

/// Symmetrize as (M + Mᵀ)/2; all constraint matrices go through this.
fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Homogeneous quadratic for a linear functional `cᵀz ≤ 0` over `x = [1, z]`.
fn linear_as_quadratic(dim: usize, c: &DVector<f64>) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    for j in 0..c.len() {
        a[(0, 1 + j)] = 0.5 * c[j];
        a[(1 + j, 0)] = 0.5 * c[j];
    }
    a
}

/// Coefficients of `mᵀ(Rb + t)` over `z = [vec(R), t]`.
pub(crate) fn reprojection_row(m: &Vector3<f64>, b: &Vector3<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(12);
    for k in 0..3 {
        for l in 0..3 {
            g[3 * k + l] = m[l] * b[k]; // coefficient of R[l,k]
        }
    }
    for l in 0..3 {
        g[9 + l] = m[l];
    }
    g
}

/// The 15 SO(3) equality matrices over `x = [1, vec(R), t]` (dim 13):
/// unit columns, pairwise orthogonality, and the right-hand-rule cross
/// products, in sparse triple form.
pub fn build_so3_equalities() -> Vec<DMatrix<f64>> {
    // (i, j, value), 1-based as commonly tabulated; diagonal triples set a
    // single entry, off-diagonal triples set the symmetric pair.
    let triples: [&[(usize, usize, f64)]; 15] = [
        &[(2, 2, 1.0), (3, 3, 1.0), (4, 4, 1.0), (1, 1, -1.0)],
        &[(5, 5, 1.0), (6, 6, 1.0), (7, 7, 1.0), (1, 1, -1.0)],
        &[(8, 8, 1.0), (9, 9, 1.0), (10, 10, 1.0), (1, 1, -1.0)],
        &[(2, 5, 1.0), (3, 6, 1.0), (4, 7, 1.0)],
        &[(2, 8, 1.0), (3, 9, 1.0), (4, 10, 1.0)],
        &[(5, 8, 1.0), (6, 9, 1.0), (7, 10, 1.0)],
        // r1 x r2 = r3
        &[(3, 7, 1.0), (4, 6, -1.0), (1, 8, -1.0)],
        &[(4, 5, 1.0), (2, 7, -1.0), (1, 9, -1.0)],
        &[(2, 6, 1.0), (3, 5, -1.0), (1, 10, -1.0)],
        // r2 x r3 = r1
        &[(6, 10, 1.0), (7, 9, -1.0), (1, 2, -1.0)],
        &[(7, 8, 1.0), (5, 10, -1.0), (1, 3, -1.0)],
        &[(5, 9, 1.0), (6, 8, -1.0), (1, 4, -1.0)],
        // r3 x r1 = r2
        &[(9, 4, 1.0), (10, 3, -1.0), (1, 5, -1.0)],
        &[(10, 2, 1.0), (8, 4, -1.0), (1, 6, -1.0)],
        &[(8, 3, 1.0), (9, 2, -1.0), (1, 7, -1.0)],
    ];
    triples
        .iter()
        .map(|list| {
            let mut q = DMatrix::zeros(13, 13);
            for &(i, j, v) in *list {
                let (i, j) = (i - 1, j - 1);
                if i == j {
                    q[(i, i)] = v;
                } else {
                    q[(i, j)] = v;
                    q[(j, i)] = v;
                }
            }
            q
        })
        .collect()
}

/// Chirality matrices: `xᵀA x = -depth(keypoint i)`.
pub fn build_chirality(obs: &ObservationSet) -> Vec<DMatrix<f64>> {
    obs.keypoints_3d
        .iter()
        .map(|b| {
            let c = -reprojection_row(&Vector3::z(), b);
            linear_as_quadratic(13, &c)
        })
        .collect()
}

/// The four direction vectors of the ∞-norm backprojection constraints for
/// keypoint `i`: `u = r ê₃ ± (K - y ê₃ᵀ)ᵀ ê_j`, j = 1, 2.
fn bp_inf_directions(obs: &ObservationSet, i: usize) -> [Vector3<f64>; 4] {
    let k = obs.intrinsics.matrix();
    let y = Vector3::new(obs.detections[i].x, obs.detections[i].y, 1.0);
    let r = obs.radii[i];
    let m = k - y * Vector3::z().transpose(); // K - y e3'
    let mut out = [Vector3::zeros(); 4];
    let mut idx = 0;
    for j in 0..2 {
        for sign in [1.0, -1.0] {
            out[idx] = r * Vector3::z() + sign * m.transpose().column(j).into_owned();
            idx += 1;
        }
    }
    out
}

/// ∞-norm backprojection: 4 linear-in-pose inequalities per keypoint,
/// `xᵀA x = depth·(±ε_j - r_i)` at the true pose.
pub fn build_backprojection_inf(obs: &ObservationSet) -> Result<Vec<DMatrix<f64>>> {
    if obs.norm != NormType::Infinity {
        return Err(SlueError::input("observation set is not ∞-norm"));
    }
    let mut mats = Vec::with_capacity(4 * obs.len());
    for i in 0..obs.len() {
        for u in bp_inf_directions(obs, i) {
            let c = -reprojection_row(&u, &obs.keypoints_3d[i]);
            mats.push(linear_as_quadratic(13, &c));
        }
    }
    Ok(mats)
}

/// 2-norm backprojection: one quadratic inequality per keypoint,
/// `‖(y ê₃ᵀ - K)(Rb+t)‖² - (r·depth)² ≤ 0`.
pub fn build_backprojection_2norm(obs: &ObservationSet) -> Result<Vec<DMatrix<f64>>> {
    if obs.norm != NormType::Two {
        return Err(SlueError::input("observation set is not 2-norm"));
    }
    let k = obs.intrinsics.matrix();
    let mut mats = Vec::with_capacity(obs.len());
    for i in 0..obs.len() {
        let y = Vector3::new(obs.detections[i].x, obs.detections[i].y, 1.0);
        let m = y * Vector3::z().transpose() - k; // y e3' - K; last row is zero
        let b = &obs.keypoints_3d[i];
        let mut block = DMatrix::zeros(12, 12);
        for j in 0..2 {
            let g = reprojection_row(&m.row(j).transpose(), b);
            block += &g * g.transpose();
        }
        let gd = reprojection_row(&Vector3::z(), b);
        block -= obs.radii[i] * obs.radii[i] * &gd * gd.transpose();
        let mut a = DMatrix::zeros(13, 13);
        a.view_mut((1, 1), (12, 12)).copy_from(&block);
        mats.push(a);
    }
    Ok(mats)
}

fn finish_set(
    dim: usize,
    ineqs: Vec<(DMatrix<f64>, ConstraintLabel)>,
    eqs: Vec<(DMatrix<f64>, ConstraintLabel)>,
    likely_unbounded: bool,
) -> QuadraticConstraintSet {
    // Symmetrize and scale to unit Frobenius norm; raw pixel magnitudes
    // otherwise wreck SDP conditioning.
    let normalize = |mut m: DMatrix<f64>| {
        symmetrize(&mut m);
        let n = m.norm();
        if n > 0.0 {
            m /= n;
        }
        m
    };
    let (inequalities, ineq_labels): (Vec<_>, Vec<_>) = ineqs
        .into_iter()
        .map(|(m, l)| (normalize(m), l))
        .unzip();
    let (equalities, eq_labels): (Vec<_>, Vec<_>) =
        eqs.into_iter().map(|(m, l)| (normalize(m), l)).unzip();
    QuadraticConstraintSet {
        dim,
        inequalities,
        equalities,
        ineq_labels,
        eq_labels,
        homogenization: 0,
        likely_unbounded,
    }
}

/// Rotation-matrix form of the pose uncertainty set (dim 13).
pub fn build_rotmat_set(obs: &ObservationSet) -> Result<QuadraticConstraintSet> {
    obs.check_finite_radii()?;
    let mut ineqs: Vec<(DMatrix<f64>, ConstraintLabel)> = build_chirality(obs)
        .into_iter()
        .map(|m| (m, ConstraintLabel::Chirality))
        .collect();
    match obs.norm {
        NormType::Infinity => {
            for m in build_backprojection_inf(obs)? {
                ineqs.push((m, ConstraintLabel::Backprojection));
            }
        }
        NormType::Two => {
            for m in build_backprojection_2norm(obs)? {
                ineqs.push((m, ConstraintLabel::Bp2));
            }
        }
    }
    let eqs = build_so3_equalities()
        .into_iter()
        .map(|m| (m, ConstraintLabel::So3))
        .collect();
    Ok(finish_set(13, ineqs, eqs, obs.len() < 3))
}

/// Quaternion form of the pose uncertainty set (dim 8). The pose estimate
/// fixes the hemisphere constraint `qᵀq̄ ≥ 0`.
pub fn build_quaternion_set(
    obs: &ObservationSet,
    pose_estimate: &Pose,
) -> Result<QuadraticConstraintSet> {
    obs.check_finite_radii()?;
    if obs.norm != NormType::Infinity {
        return Err(SlueError::input(
            "quaternion form requires ∞-norm keypoint radii",
        ));
    }
    let qbar = rotation_to_quat(&pose_estimate.rotation);
    let mut ineqs: Vec<(DMatrix<f64>, ConstraintLabel)> = Vec::with_capacity(5 * obs.len() + 1);

    // value = qᵀΩ₁(u)Ω₂(b)q - uᵀt, equal to -uᵀ(Rb + t).
    let quad_for_direction = |u: &Vector3<f64>, b: &Vector3<f64>| -> DMatrix<f64> {
        let (o1, _) = quat_product_matrices(&homogenize3(u));
        let (_, o2) = quat_product_matrices(&homogenize3(b));
        let m = o1 * o2;
        let mut a = DMatrix::zeros(8, 8);
        for p in 0..4 {
            for q in 0..4 {
                a[(1 + p, 1 + q)] = m[(p, q)];
            }
        }
        for k in 0..3 {
            a[(0, 5 + k)] = -0.5 * u[k];
            a[(5 + k, 0)] = -0.5 * u[k];
        }
        a
    };

    for (i, b) in obs.keypoints_3d.iter().enumerate() {
        ineqs.push((quad_for_direction(&Vector3::z(), b), ConstraintLabel::Chirality));
        let _ = i;
    }
    for i in 0..obs.len() {
        for u in bp_inf_directions(obs, i) {
            ineqs.push((
                quad_for_direction(&u, &obs.keypoints_3d[i]),
                ConstraintLabel::Backprojection,
            ));
        }
    }
    // Hemisphere: -qᵀq̄ ≤ 0 (the boundary has measure zero, so the closed
    // form is safe for SDP feasibility).
    let mut hemi = DMatrix::zeros(8, 8);
    for k in 0..4 {
        hemi[(0, 1 + k)] = -0.5 * qbar.coords()[k];
        hemi[(1 + k, 0)] = -0.5 * qbar.coords()[k];
    }
    ineqs.push((hemi, ConstraintLabel::Hemisphere));

    // qᵀq = 1
    let mut unit = DMatrix::zeros(8, 8);
    unit[(0, 0)] = -1.0;
    for k in 0..4 {
        unit[(1 + k, 1 + k)] = 1.0;
    }
    let eqs = vec![(unit, ConstraintLabel::UnitQuat)];

    Ok(finish_set(8, ineqs, eqs, obs.len() < 3))
}

/// Lift a pose to the rotation-matrix form variable `x = [1, vec(R), t]`.
pub fn pose_to_x_rotmat(pose: &Pose) -> DVector<f64> {
    let mut x = DVector::zeros(13);
    x[0] = 1.0;
    let r = pose.rotation.vec();
    for i in 0..9 {
        x[1 + i] = r[i];
    }
    for i in 0..3 {
        x[10 + i] = pose.translation[i];
    }
    x
}

/// Lift a pose to the quaternion form variable `x = [1, q, t]`, choosing
/// the sign of `q` to lie in the hemisphere of `qbar`.
pub fn pose_to_x_quat(pose: &Pose, qbar: &UnitQuaternion) -> DVector<f64> {
    let mut q = rotation_to_quat(&pose.rotation);
    if q.coords().dot(qbar.coords()) < 0.0 {
        q = q.negated();
    }
    let mut x = DVector::zeros(8);
    x[0] = 1.0;
    for i in 0..4 {
        x[1 + i] = q.coords()[i];
    }
    for i in 0..3 {
        x[5 + i] = pose.translation[i];
    }
    x
}
