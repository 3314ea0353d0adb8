//! Shared geometric primitives: quaternion rotation, rigid transforms and rectangles.

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Quat = Quaternion<f64>;

/// Maximum deviation of a quaternion norm from 1 accepted as "unit".
pub const UNIT_QUAT_TOL: f64 = 1e-6;

pub fn check_unit(q: &Quat) -> Result<()> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::Validation(format!(
            "quaternion is not unit-norm (|q| = {n})"
        )));
    }
    Ok(())
}

/// Rotates `v` by the unit quaternion `q` through the Hamilton product `q v q⁻¹`.
pub fn quat_rotate(q: &Quat, v: &Vec3) -> Result<Vec3> {
    check_unit(q)?;
    Ok(rotate_unchecked(q, v))
}

pub(crate) fn rotate_unchecked(q: &Quat, v: &Vec3) -> Vec3 {
    let pure = Quaternion::from_imag(*v);
    let inv = q.conjugate() / q.norm_squared();
    (q * pure * inv).imag()
}

/// Rotation by `angle` radians about `axis` (need not be normalized).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    Quaternion::new(c, a.x * s, a.y * s, a.z * s)
}

/// Rotation about the world vertical (+z).
pub fn yaw_quat(yaw: f64) -> Quat {
    axis_angle(&Vec3::z(), yaw)
}

/// Rotation followed by translation: `x ↦ q x q⁻¹ + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Quaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Quat, translation: Vec3) -> Result<Self> {
        check_unit(&rotation)?;
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        rotate_unchecked(&self.rotation, p) + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        rotate_unchecked(&self.rotation, v)
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: rotate_unchecked(&self.rotation, &first.translation) + self.translation,
        }
    }
}

/// Axis-aligned pixel rectangle with inclusive-exclusive semantics left to callers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Smallest box containing all points; `None` for an empty set.
    pub fn hull<I: IntoIterator<Item = (f64, f64)>>(points: I) -> Option<BBox> {
        let mut it = points.into_iter();
        let (x0, y0) = it.next()?;
        let mut b = BBox::new(x0, y0, x0, y0);
        for (x, y) in it {
            b.x_min = b.x_min.min(x);
            b.y_min = b.y_min.min(y);
            b.x_max = b.x_max.max(x);
            b.y_max = b.y_max.max(y);
        }
        Some(b)
    }

    pub fn clamp_to(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(
            self.x_min.clamp(x0, x1),
            self.y_min.clamp(y0, y1),
            self.x_max.clamp(x0, x1),
            self.y_max.clamp(y0, y1),
        )
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Axis-aligned box in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Requires `min <= max` on every axis and a positive horizontal (x, y) extent.
    /// The vertical extent may be zero for floor-standing gates.
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !self.min[k].is_finite() || !self.max[k].is_finite() || self.min[k] > self.max[k] {
                return Err(Error::Validation(format!(
                    "bounds axis {k} is invalid: [{}, {}]",
                    self.min[k], self.max[k]
                )));
            }
        }
        if self.max[0] <= self.min[0] || self.max[1] <= self.min[1] {
            return Err(Error::Validation(
                "bounds must have a positive horizontal extent".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}
