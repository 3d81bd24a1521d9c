use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{KeypointFrame, Point3};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rotation followed by translation: `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = RigidTransform {
            rotation,
            translation,
        };
        if !t.is_valid() {
            return Err(Error::InvalidInput(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (any non-zero vector), then translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        RigidTransform {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn yaw(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), angle, Vector3::zeros())
    }

    /// Parses a row-major 3x4 `[R | t]` matrix.
    pub fn from_row_major_3x4(values: &[f64]) -> Result<Self> {
        if values.len() != 12 {
            return Err(Error::InvalidInput(format!(
                "expected 12 values for a 3x4 transform, got {}",
                values.len()
            )));
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8],
            values[9], values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max() <= ORTHONORMAL_TOL;
        ortho
            && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
            && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle of `R` in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Maps every valid keypoint through `t`; validity is untouched.
pub fn transform_frame(frame: &KeypointFrame, t: &RigidTransform) -> KeypointFrame {
    let mut out = frame.clone();
    for kp in out.keypoints.iter_mut().filter(|k| k.valid) {
        kp.position = t.apply(&kp.position);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Joint;
    use std::f64::consts::FRAC_PI_2;

    fn frame_with(p: Point3) -> KeypointFrame {
        let mut f = KeypointFrame::empty("c0", 0, 0.0);
        f.set(Joint::Nose, Some(p));
        f
    }

    #[test]
    fn identity_leaves_frame_unchanged() {
        let f = frame_with(Point3::new(0.3, -0.2, 1.1));
        assert_eq!(transform_frame(&f, &RigidTransform::identity()), f);
    }

    #[test]
    fn pure_translation() {
        let f = frame_with(Point3::new(0.0, 0.0, 1.0));
        let t = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let out = transform_frame(&f, &t);
        assert_eq!(out.position(Joint::Nose), Some(Point3::new(1.0, 0.0, 1.0)));
        assert!(!out.joint(Joint::Neck).valid);
    }

    #[test]
    fn quarter_turn_about_z() {
        let f = frame_with(Point3::new(1.0, 0.0, 0.0));
        let out = transform_frame(&f, &RigidTransform::yaw(FRAC_PI_2));
        let p = out.position(Joint::Nose).unwrap();
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn row_major_round_trip() {
        let t = RigidTransform::from_axis_angle(
            Vector3::new(1.0, 2.0, 3.0),
            0.7,
            Vector3::new(0.1, -0.4, 2.0),
        );
        let back = RigidTransform::from_row_major_3x4(&t.to_row_major_3x4()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform::from_axis_angle(Vector3::y(), 0.3, Vector3::new(1.0, 2.0, 3.0));
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }
}
