//! Rigid motions in 2-D and 3-D with a left-multiplicative retraction.

use nalgebra::{Isometry2, Isometry3, SVector, Translation2, Translation3, UnitComplex, UnitQuaternion, Vector2, Vector3};

use crate::math;

/// A rigid motion acting on `D`-dimensional points.
///
/// Tangent updates are `delta = (rotation, translation)` applied on the left:
/// `T' = Exp(delta) * T`, so a transformed point `q = T p` moves as
/// `q' = R(omega) q + v`.
pub trait RigidMotion<const D: usize>: Clone + core::fmt::Debug {
    /// Tangent dimension (3 in 2-D, 6 in 3-D).
    const DOF: usize;

    fn identity() -> Self;

    fn map_point(&self, p: &SVector<f64, D>) -> SVector<f64, D>;

    /// Applies the rotation only (for normals).
    fn map_vector(&self, v: &SVector<f64, D>) -> SVector<f64, D>;

    fn retract(&self, delta: &[f64]) -> Self;

    /// `d q' / d delta` at `delta = 0` for a transformed point `q`, written
    /// row-major as `D x DOF` into `out`.
    fn point_jacobian(q: &SVector<f64, D>, out: &mut [f64]);

    fn compose(&self, other: &Self) -> Self;

    fn inverse(&self) -> Self;

    /// Geodesic rotation angle in radians.
    fn rotation_angle(&self) -> f64;

    fn translation(&self) -> SVector<f64, D>;
}

impl RigidMotion<3> for Isometry3<f64> {
    const DOF: usize = 6;

    fn identity() -> Self {
        Isometry3::identity()
    }

    fn map_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation.vector
    }

    fn map_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    fn retract(&self, delta: &[f64]) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let step = Isometry3::from_parts(
            Translation3::new(delta[3], delta[4], delta[5]),
            UnitQuaternion::from_scaled_axis(omega),
        );
        let mut out = step * self;
        // keep the quaternion on the unit sphere over long update chains
        out.rotation = UnitQuaternion::new_normalize(out.rotation.into_inner());
        out
    }

    fn point_jacobian(q: &Vector3<f64>, out: &mut [f64]) {
        // [-[q]x | I]
        out[..18].copy_from_slice(&[
            0.0, q.z, -q.y, 1.0, 0.0, 0.0, //
            -q.z, 0.0, q.x, 0.0, 1.0, 0.0, //
            q.y, -q.x, 0.0, 0.0, 0.0, 1.0,
        ]);
    }

    fn compose(&self, other: &Self) -> Self {
        self * other
    }

    fn inverse(&self) -> Self {
        Isometry3::inverse(self)
    }

    fn rotation_angle(&self) -> f64 {
        // atan2 form stays accurate near 0 and pi
        let q = self.rotation.quaternion();
        let s = math::sqrt(q.i * q.i + q.j * q.j + q.k * q.k);
        2.0 * math::atan2(s, q.w.abs())
    }

    fn translation(&self) -> Vector3<f64> {
        self.translation.vector
    }
}

impl RigidMotion<2> for Isometry2<f64> {
    const DOF: usize = 3;

    fn identity() -> Self {
        Isometry2::identity()
    }

    fn map_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation * p + self.translation.vector
    }

    fn map_vector(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.rotation * v
    }

    fn retract(&self, delta: &[f64]) -> Self {
        let step = Isometry2::from_parts(
            Translation2::new(delta[1], delta[2]),
            UnitComplex::new(delta[0]),
        );
        let mut out = step * self;
        out.rotation = UnitComplex::new_normalize(out.rotation.into_inner());
        out
    }

    fn point_jacobian(q: &Vector2<f64>, out: &mut [f64]) {
        out[..6].copy_from_slice(&[-q.y, 1.0, 0.0, q.x, 0.0, 1.0]);
    }

    fn compose(&self, other: &Self) -> Self {
        self * other
    }

    fn inverse(&self) -> Self {
        Isometry2::inverse(self)
    }

    fn rotation_angle(&self) -> f64 {
        self.rotation.angle().abs()
    }

    fn translation(&self) -> Vector2<f64> {
        self.translation.vector
    }
}

/// `(rotation error in degrees, translation error in the input units)`.
///
/// Rotation error is the geodesic angle of `R_est R_truth^T`; translation
/// error is `|t_est - t_truth|`.
pub fn pose_error<const D: usize, T: RigidMotion<D>>(estimate: &T, truth: &T) -> (f64, f64) {
    let relative = estimate.compose(&truth.inverse());
    let angle = relative.rotation_angle();
    let dt = (estimate.translation() - truth.translation()).norm();
    (angle.to_degrees(), dt)
}
