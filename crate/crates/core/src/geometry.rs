//! Minimal SE(3) machinery: rigid transforms stored as rotation matrix plus
//! translation, with the exponential and logarithm maps used for
//! extrapolation and perturbation sampling.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Drift in `RᵀR - I` above which a composed rotation is re-orthonormalized.
const ORTHONORMAL_DRIFT: f64 = 1e-9;
/// `log` refuses rotations whose angle is within this distance of π.
const NEAR_PI_MARGIN: f64 = 1e-6;
/// Below this angle the series expansions replace the closed forms.
const SMALL_ANGLE: f64 = 1e-5;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {0} rad is too close to pi for a unique logarithm")]
    AngleNearPi(f64),
}

/// Skew-symmetric matrix with `hat(w) * v == w.cross(v)`.
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, one_minus_cos(theta) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Rotation angle in `[0, π]`, computed with `atan2` so that it stays
/// accurate near zero.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

pub fn so3_log(r: &Mat3) -> Result<Vec3, GeometryError> {
    let theta = rotation_angle(r);
    if theta > std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(GeometryError::AngleNearPi(theta));
    }
    let axis_sin = 0.5 * vee(&(r - r.transpose()));
    let scale = if theta < SMALL_ANGLE {
        1.0 + theta * theta / 6.0
    } else {
        theta / theta.sin()
    };
    Ok(axis_sin * scale)
}

/// `1 - cos θ` without the cancellation near zero.
fn one_minus_cos(theta: f64) -> f64 {
    let s = (0.5 * theta).sin();
    2.0 * s * s
}

/// Left Jacobian of SO(3); maps twist translation to transform translation.
fn left_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            one_minus_cos(theta) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() + k * a + k * k * b
}

fn left_jacobian_inv(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let b = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        (1.0 - 0.5 * theta / (0.5 * theta).tan()) / theta2
    };
    Mat3::identity() - k * 0.5 + k * k * b
}

/// Logarithmic coordinates of a rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    /// Axis-angle rotation, radians.
    pub rotation: Vec3,
    /// Translational part in the tangent space, meters.
    pub translation: Vec3,
}

impl Twist {
    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.rotation * factor, self.translation * factor)
    }
}

/// Element of SE(3). `apply(p) = rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    /// Pure rotation about `axis_angle / |axis_angle|` by `|axis_angle|`.
    pub fn from_axis_angle(axis_angle: Vec3) -> Self {
        Self::new(so3_exp(&axis_angle), Vec3::zeros())
    }

    pub fn from_rotation_z(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::z() * angle)
    }

    /// `self ∘ other`: the result applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let out = RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        );
        if out.orthonormality_error() > ORTHONORMAL_DRIFT {
            out.orthonormalized()
        } else {
            out
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// `‖RᵀR − I‖∞`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).amax()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.orthonormality_error() < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn orthonormalized(&self) -> RigidTransform {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            // flip the axis of the smallest singular value
            let smallest = svd.singular_values.imin();
            u.column_mut(smallest).neg_mut();
            r = u * v_t;
        }
        RigidTransform::new(r, self.translation)
    }

    pub fn exp(twist: &Twist) -> RigidTransform {
        RigidTransform::new(
            so3_exp(&twist.rotation),
            left_jacobian(&twist.rotation) * twist.translation,
        )
    }

    pub fn log(&self) -> Result<Twist, GeometryError> {
        let w = so3_log(&self.rotation)?;
        Ok(Twist::new(w, left_jacobian_inv(&w) * self.translation))
    }

    /// Row-major `[R | t]`, the twelve numbers of a KITTI pose line.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> RigidTransform {
        RigidTransform::new(
            Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            Vec3::new(v[3], v[7], v[11]),
        )
    }

    /// Largest elementwise difference of the 3×4 matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}
