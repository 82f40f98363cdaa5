//! Rotation representations, quaternion algebra, and camera projection.
//!
//! Quaternions are scalar-first: `q = [cos(θ/2), ω sin(θ/2)]`. Vectorization
//! `vec(·)` stacks matrix columns. Both conventions are relied on throughout
//! the constraint builders and projections, so do not change them.

use nalgebra::{Matrix3, Matrix4, SVector, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlueError};

/// Orthonormality tolerance when validating a raw matrix as a rotation.
/// SDP solver outputs carry roughly 1e-9 of noise, so 1e-8 leaves headroom.
pub const ROTATION_TOL: f64 = 1e-8;

/// A validated element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and positive determinant within [`ROTATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).norm();
        if err > ROTATION_TOL * 10.0 {
            return Err(SlueError::input(format!(
                "matrix is not orthonormal (residual {err:.2e})"
            )));
        }
        if m.determinant() < 0.0 {
            return Err(SlueError::input("matrix has negative determinant"));
        }
        Ok(Rotation(m))
    }

    /// Nearest rotation in Frobenius norm (polar factor via SVD).
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Rotation(r)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Column-major vectorization of the rotation matrix.
    pub fn vec(&self) -> SVector<f64, 9> {
        vec_mat3(&self.0)
    }
}

/// Unit quaternion, scalar part first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion(Vector4<f64>);

impl UnitQuaternion {
    pub fn identity() -> Self {
        UnitQuaternion(Vector4::new(1.0, 0.0, 0.0, 0.0))
    }

    pub fn new(q: Vector4<f64>) -> Result<Self> {
        if (q.norm() - 1.0).abs() > 1e-8 {
            return Err(SlueError::input(format!(
                "quaternion norm {} is not 1",
                q.norm()
            )));
        }
        Ok(UnitQuaternion(q.normalize()))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        check_unit_axis(axis)?;
        let half = 0.5 * angle;
        let v = axis * half.sin();
        Ok(UnitQuaternion(Vector4::new(half.cos(), v.x, v.y, v.z)))
    }

    pub fn coords(&self) -> &Vector4<f64> {
        &self.0
    }

    pub fn negated(&self) -> Self {
        UnitQuaternion(-self.0)
    }

    pub fn scalar(&self) -> f64 {
        self.0[0]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.0[1], self.0[2], self.0[3])
    }
}

/// Object pose: rotation plus translation in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }
}

/// Upper-triangular pinhole intrinsics with unit last row. Serialized as
/// three row arrays.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics(Matrix3<f64>);

impl Serialize for CameraIntrinsics {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] =
            std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)]));
        rows.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for CameraIntrinsics {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        CameraIntrinsics::new(Matrix3::from_fn(|i, j| rows[i][j]))
            .map_err(serde::de::Error::custom)
    }
}

impl CameraIntrinsics {
    pub fn identity() -> Self {
        CameraIntrinsics(Matrix3::identity())
    }

    pub fn new(k: Matrix3<f64>) -> Result<Self> {
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(SlueError::input("focal lengths must be positive"));
        }
        if k[(1, 0)].abs() > 0.0
            || (k[(2, 0)].abs(), k[(2, 1)].abs(), k[(2, 2)]) != (0.0, 0.0, 1.0)
        {
            return Err(SlueError::input(
                "intrinsics must be upper triangular with last row (0,0,1)",
            ));
        }
        Ok(CameraIntrinsics(k))
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

fn check_unit_axis(axis: &Vector3<f64>) -> Result<()> {
    if (axis.norm() - 1.0).abs() > 1e-8 {
        return Err(SlueError::input(format!(
            "axis norm {} is not 1",
            axis.norm()
        )));
    }
    Ok(())
}

/// Skew-symmetric cross-product matrix.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Column-major vectorization of a 3x3 matrix.
pub fn vec_mat3(m: &Matrix3<f64>) -> SVector<f64, 9> {
    let mut v = SVector::<f64, 9>::zeros();
    for j in 0..3 {
        for i in 0..3 {
            v[j * 3 + i] = m[(i, j)];
        }
    }
    v
}

/// Inverse of [`vec_mat3`].
pub fn mat3_from_vec(v: &SVector<f64, 9>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        for i in 0..3 {
            m[(i, j)] = v[j * 3 + i];
        }
    }
    m
}

/// Left and right Hamilton product matrices: `omega1(a)·b = a∘b = omega2(b)·a`.
///
/// Applied to a 3-vector the argument is homogenized with a leading zero,
/// which makes both returned matrices skew-symmetric.
pub fn quat_product_matrices(a: &Vector4<f64>) -> (Matrix4<f64>, Matrix4<f64>) {
    let (a1, a2, a3, a4) = (a[0], a[1], a[2], a[3]);
    let omega1 = Matrix4::new(
        a1, -a2, -a3, -a4, //
        a2, a1, -a4, a3, //
        a3, a4, a1, -a2, //
        a4, -a3, a2, a1,
    );
    let omega2 = Matrix4::new(
        a1, -a2, -a3, -a4, //
        a2, a1, a4, -a3, //
        a3, -a4, a1, a2, //
        a4, a3, -a2, a1,
    );
    (omega1, omega2)
}

/// Hamilton product `a∘b`.
pub fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    quat_product_matrices(a).0 * b
}

/// Homogenize a 3-vector with a leading zero.
pub fn homogenize3(v: &Vector3<f64>) -> Vector4<f64> {
    Vector4::new(0.0, v.x, v.y, v.z)
}

/// Rodrigues' rotation formula: `I + ŵ sinθ + ŵ²(1-cosθ)`.
pub fn rotation_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Rotation> {
    check_unit_axis(axis)?;
    let w = skew(axis);
    let m = Matrix3::identity() + w * angle.sin() + w * w * (1.0 - angle.cos());
    Ok(Rotation(m))
}

/// Rotation matrix of a unit quaternion. Invariant under `q → -q`.
pub fn quat_to_rotation(q: &UnitQuaternion) -> Rotation {
    let s = q.scalar();
    let v = q.vector();
    let m = Matrix3::identity() + 2.0 * s * skew(&v) + 2.0 * skew(&v) * skew(&v);
    Rotation(m)
}

/// Quaternion of a rotation matrix (Shepperd's method). The hemisphere is
/// fixed by a nonnegative scalar part.
pub fn rotation_to_quat(r: &Rotation) -> UnitQuaternion {
    let m = r.matrix();
    let trace = m.trace();
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Vector4::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Vector4::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let q = if q[0] < 0.0 { -q } else { q };
    UnitQuaternion(q.normalize())
}

/// Pinhole projection of a model-frame point into pixels.
pub fn project_keypoint(
    pose: &Pose,
    k: &CameraIntrinsics,
    b: &Vector3<f64>,
) -> Result<Vector2<f64>> {
    let p = pose.rotation.matrix() * b + pose.translation;
    let depth = p.z;
    if depth <= 0.0 {
        return Err(SlueError::Chirality(depth));
    }
    let h = k.matrix() * p / depth;
    Ok(Vector2::new(h.x, h.y))
}

/// Axis-angle deviation taking `from` to `to`: returns `(axis, angle)` with
/// `to = R_axis(angle) * from`.
pub fn axis_angle_between(from: &Rotation, to: &Rotation) -> (Vector3<f64>, f64) {
    let rel = Rotation(to.matrix() * from.matrix().transpose());
    let q = rotation_to_quat(&rel);
    let v = q.vector();
    let n = v.norm();
    if n < 1e-12 {
        (Vector3::z(), 0.0)
    } else {
        (v / n, 2.0 * n.atan2(q.scalar()))
    }
}
