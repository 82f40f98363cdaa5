//! Front door: assemble the pose uncertainty set around a pose estimate
//! and certify joint or split minimum-volume ellipsoids.
//!
//! `order` follows the reporting convention: order = κ + 1 where 2κ is the
//! multiplier degree. Order 1 is the scalar-multiplier LMI.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{
    build_quaternion_set, build_rotmat_set, ObservationSet, QuadraticConstraintSet,
};
use crate::error::{Result, SlueError};
use crate::geometry::{rotation_to_quat, Pose};
use crate::sos::{solve_min_volume_ellipsoid, EllipsoidBound};

/// Pose parametrization of the lifted variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Rotmat,
    Quat,
}

/// Outcome class for per-frame reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Ok,
    Infeasible,
    Unbounded,
    Numerical,
}

impl SolveStatus {
    /// Classifies a solve error for batch reporting.
    pub fn from_error(e: &SlueError) -> SolveStatus {
        match e {
            SlueError::NotCertified(_) => SolveStatus::Infeasible,
            SlueError::UnboundedSet(_) => SolveStatus::Unbounded,
            _ => SolveStatus::Numerical,
        }
    }
}

/// Which block the split objective optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTarget {
    RotationOnly,
    TranslationOnly,
}

/// A certified pose-uncertainty ellipsoid. `h` is full-size (12×12 rotmat,
/// 7×7 quaternion); for split solves the off-target block is exactly zero
/// and `logdet` refers to the target block.
#[derive(Clone, Debug)]
pub struct SlueResult {
    pub form: Form,
    pub order: usize,
    pub status: SolveStatus,
    pub solve_time_s: f64,
    pub center: DVector<f64>,
    pub h: DMatrix<f64>,
    pub logdet: f64,
    pub certificate_residual: f64,
    pub target: Vec<usize>,
}

/// Order 1 is only exact in rotation-matrix form; the quaternion
/// relaxation needs order ≥ 2.
pub fn default_form(order: usize) -> Form {
    if order <= 1 {
        Form::Rotmat
    } else {
        Form::Quat
    }
}

/// Genuine-variable dimension of a form (12 or 7).
pub fn form_dim(form: Form) -> usize {
    match form {
        Form::Rotmat => 12,
        Form::Quat => 7,
    }
}

/// Index range of the translation block.
pub fn translation_block(form: Form) -> Vec<usize> {
    match form {
        Form::Rotmat => (9..12).collect(),
        Form::Quat => (4..7).collect(),
    }
}

/// Index range of the rotation block.
pub fn rotation_block(form: Form) -> Vec<usize> {
    match form {
        Form::Rotmat => (0..9).collect(),
        Form::Quat => (0..4).collect(),
    }
}

/// Lifts a pose estimate to the ellipsoid center `[vec(R̄); t̄]` or `[q̄; t̄]`.
pub fn lift_center(pose: &Pose, form: Form) -> DVector<f64> {
    match form {
        Form::Rotmat => {
            let mut z = DVector::zeros(12);
            let r = pose.rotation.vec();
            for i in 0..9 {
                z[i] = r[i];
            }
            for i in 0..3 {
                z[9 + i] = pose.translation[i];
            }
            z
        }
        Form::Quat => {
            let q = rotation_to_quat(&pose.rotation);
            let mut z = DVector::zeros(7);
            for i in 0..4 {
                z[i] = q.coords()[i];
            }
            for i in 0..3 {
                z[4 + i] = pose.translation[i];
            }
            z
        }
    }
}

/// Builds the constraint set in the requested form. The quaternion form
/// uses the pose estimate to fix the hemisphere.
pub fn build_set(
    obs: &ObservationSet,
    form: Form,
    pose_estimate: &Pose,
) -> Result<QuadraticConstraintSet> {
    match form {
        Form::Rotmat => build_rotmat_set(obs),
        Form::Quat => build_quaternion_set(obs, pose_estimate),
    }
}

fn validate_order(form: Form, order: usize) -> Result<usize> {
    if order == 0 {
        return Err(SlueError::input("relaxation order must be at least 1"));
    }
    if form == Form::Quat && order == 1 {
        return Err(SlueError::input(
            "the order-1 quaternion relaxation fails to certify; use the \
             rotation-matrix form or order >= 2",
        ));
    }
    Ok(order - 1)
}

fn embed_result(
    form: Form,
    order: usize,
    bound: EllipsoidBound,
) -> SlueResult {
    let d = form_dim(form);
    let mut h = DMatrix::zeros(d, d);
    for (bi, &gi) in bound.target.iter().enumerate() {
        for (bj, &gj) in bound.target.iter().enumerate() {
            h[(gi, gj)] = bound.h[(bi, bj)];
        }
    }
    SlueResult {
        form,
        order,
        status: SolveStatus::Ok,
        solve_time_s: bound.solve_time_s,
        center: bound.center,
        h,
        logdet: bound.logdet,
        certificate_residual: bound.certificate_residual,
        target: bound.target,
    }
}

/// Certifies the joint ellipsoid over all pose coordinates.
pub fn slue_joint(
    obs: &ObservationSet,
    pose_estimate: &Pose,
    form: Form,
    order: usize,
) -> Result<SlueResult> {
    let kappa = validate_order(form, order)?;
    let set = build_set(obs, form, pose_estimate)?;
    let center = lift_center(pose_estimate, form);
    let bound = solve_min_volume_ellipsoid(&set, &center, kappa, None)?;
    Ok(embed_result(form, order, bound))
}

/// Certifies an ellipsoid over the rotation or translation block only,
/// with the complementary block of H fixed to zero.
pub fn slue_split(
    obs: &ObservationSet,
    pose_estimate: &Pose,
    form: Form,
    order: usize,
    target: SplitTarget,
) -> Result<SlueResult> {
    let kappa = validate_order(form, order)?;
    let set = build_set(obs, form, pose_estimate)?;
    let center = lift_center(pose_estimate, form);
    let block = match target {
        SplitTarget::RotationOnly => rotation_block(form),
        SplitTarget::TranslationOnly => translation_block(form),
    };
    let bound = solve_min_volume_ellipsoid(&set, &center, kappa, Some(&block))?;
    Ok(embed_result(form, order, bound))
}

impl SlueResult {
    /// Value of `(z − c)ᵀ H (z − c)` restricted to the target block; the
    /// pose is inside the bound when this is ≤ 1.
    pub fn mahalanobis(&self, z: &DVector<f64>) -> f64 {
        let dz = DVector::from_fn(self.target.len(), |k, _| {
            z[self.target[k]] - self.center[self.target[k]]
        });
        let mut acc = 0.0;
        for (bi, &gi) in self.target.iter().enumerate() {
            for (bj, &gj) in self.target.iter().enumerate() {
                acc += dz[bi] * self.h[(gi, gj)] * dz[bj];
            }
        }
        acc
    }

    /// H restricted to the target block.
    pub fn h_block(&self) -> DMatrix<f64> {
        let m = self.target.len();
        DMatrix::from_fn(m, m, |i, j| self.h[(self.target[i], self.target[j])])
    }
}
