//! Rigid world-from-camera transforms.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

/// World-from-camera rigid transform: `x_world = rotation * x_camera + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose { rotation: inv_rot, translation: -(inv_rot * self.translation) }
    }

    /// Camera point to world point.
    #[inline]
    pub fn transform_point(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    /// World point to camera point.
    #[inline]
    pub fn inverse_transform_point(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p_world - self.translation)
    }

    /// Linear translation + spherical-linear rotation blend, `s` in `[0,1]`.
    /// Takes the shorter great-circle arc between the two orientations.
    pub fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
        Pose {
            rotation: slerp(&a.rotation, &b.rotation, s),
            translation: a.translation * (1.0 - s) + b.translation * s,
        }
    }
}

/// Shortest-arc spherical linear interpolation, falling back to normalized
/// linear blending when the endpoints are (anti)parallel within roundoff.
pub(crate) fn slerp(q0: &UnitQuaternion<f64>, q1: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let a = q0.coords;
    let mut b = q1.coords;
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let coords = if dot >= 1.0 - 1e-12 {
        a + (b - a) * s
    } else {
        let omega = dot.min(1.0).acos();
        let sin_omega = omega.sin();
        a * (((1.0 - s) * omega).sin() / sin_omega) + b * ((s * omega).sin() / sin_omega)
    };
    UnitQuaternion::from_quaternion(Quaternion::from(coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(0.3, -0.2, 0.9),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let id = p.compose(&p.inverse());
        assert!(id.rotation.angle_to(&UnitQuaternion::identity()) < 1e-9);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn transform_round_trip() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(-0.1, 0.4, 0.2),
            Vector3::new(0.3, 0.1, -0.7),
        );
        let x = Vector3::new(0.2, -0.9, 1.4);
        let back = p.inverse_transform_point(&p.transform_point(&x));
        assert_relative_eq!(back, x, epsilon = 1e-12);
    }

    #[test]
    fn slerp_midpoint_of_quarter_turn_matches_closed_form() {
        // Independent oracle: the slerp formula evaluated directly for a 90°
        // rotation about z at s = 0.5 is the 45° rotation about z.
        let q0 = UnitQuaternion::identity();
        let q1 = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let mid = slerp(&q0, &q1, 0.5);
        let oracle = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2 / 2.0);
        assert!(mid.angle_to(&oracle) < 1e-12);
    }

    #[test]
    fn slerp_takes_shorter_arc_under_sign_flip() {
        let q0 = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.2);
        let q1_flipped = UnitQuaternion::new_unchecked(
            -UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.4).into_inner(),
        );
        let mid = slerp(&q0, &q1_flipped, 0.5);
        let oracle = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.3);
        assert!(mid.angle_to(&oracle) < 1e-12);
    }
}
