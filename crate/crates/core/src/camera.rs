//! Virtual camera matched to the physical one: pose-derived look-at view transform,
//! intrinsics-derived perspective projection and the NDC-to-window mapping.
//!
//! Frames:
//! - body frame: `x` is the viewing direction, `z` is up;
//! - eye space: right-handed, `x` right, `y` up, looking down `-z`;
//! - window: pixels, origin at the top-left corner, rows growing downward.

use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geometry::quat_rotate;
use crate::geometry::{check_unit, rotate_unchecked, Quat, RigidTransform, Vec3};

pub const DEFAULT_NEAR: f64 = 0.05;
pub const DEFAULT_FAR: f64 = 50.0;

/// Viewing direction in the body frame.
pub fn body_forward() -> Vec3 {
    Vec3::x()
}

/// Up direction in the body frame.
pub fn body_up() -> Vec3 {
    Vec3::z()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Position in the world frame (meters).
    pub position: Vec3,
    /// Body-to-world rotation.
    pub orientation: Quat,
}

impl CameraPose {
    pub fn new(position: Vec3, orientation: Quat) -> Result<Self> {
        check_unit(&orientation)?;
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation("camera position is not finite".into()));
        }
        Ok(Self {
            position,
            orientation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn default_near() -> f64 {
    DEFAULT_NEAR
}

fn default_far() -> f64 {
    DEFAULT_FAR
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Validation("principal point is not finite".into()));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::Validation(format!(
                "clip planes must satisfy 0 < near < far (near = {}, far = {})",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub x: u32,
    #[serde(default)]
    pub y: u32,
}

impl Viewport {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "viewport must be non-empty ({width}x{height})"
            )));
        }
        Ok(Self {
            width,
            height,
            x: 0,
            y: 0,
        })
    }

    /// Whether a window coordinate falls inside the viewport rectangle (edges included).
    pub fn contains(&self, xw: f64, yw: f64) -> bool {
        let (x0, y0) = (self.x as f64, self.y as f64);
        xw >= x0 && xw <= x0 + self.width as f64 && yw >= y0 && yw <= y0 + self.height as f64
    }

    /// Window-space rectangle `(x0, y0, x1, y1)` covered by the viewport.
    pub fn rect(&self) -> (f64, f64, f64, f64) {
        let (x0, y0) = (self.x as f64, self.y as f64);
        (x0, y0, x0 + self.width as f64, y0 + self.height as f64)
    }
}

/// Calibration document: intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

impl Calibration {
    pub fn split(&self) -> Result<(Intrinsics, Viewport)> {
        let intr = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            near: self.near,
            far: self.far,
        };
        intr.validate()?;
        Ok((intr, Viewport::new(self.width, self.height)?))
    }
}

/// Target point: the camera position plus the rotated body viewing axis.
pub fn target_vector(pose: &CameraPose) -> Vec3 {
    pose.position + rotate_unchecked(&pose.orientation, &body_forward())
}

/// Up point: the camera position plus the rotated body up axis.
pub fn up_vector(pose: &CameraPose) -> Vec3 {
    pose.position + rotate_unchecked(&pose.orientation, &body_up())
}

/// Right-handed look-at transform. `up_point` is a point; the up direction is
/// `up_point - eye`.
pub fn view_matrix(eye: &Vec3, target: &Vec3, up_point: &Vec3) -> Result<Matrix4<f64>> {
    let forward = target - eye;
    let fnorm = forward.norm();
    if !(fnorm > 0.0 && fnorm.is_finite()) {
        return Err(Error::Geometry("look-at target coincides with the eye".into()));
    }
    let f = forward / fnorm;
    let up = up_point - eye;
    let side = f.cross(&up);
    let snorm = side.norm();
    if !(snorm > 1e-12 * up.norm().max(1e-300)) || !snorm.is_finite() {
        return Err(Error::Geometry(
            "up direction is parallel to the viewing direction".into(),
        ));
    }
    let s = side / snorm;
    let u = s.cross(&f);
    let r = Matrix3::from_rows(&[s.transpose(), u.transpose(), (-f).transpose()]);
    let t = -(r * eye);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    Ok(m)
}

/// Perspective projection built from pinhole intrinsics.
///
/// After the perspective divide and [`ndc_to_window`] an eye-space point maps to
/// `x_w = fx * X / Z + cx + vp.x` and `y_w = fy * Y / Z + cy + vp.y`, where `X` is
/// rightward, `Y` downward and `Z = -z_eye` the depth. Depth `near..far` maps to
/// NDC `-1..1`.
#[rustfmt::skip]
pub fn projection_matrix(intr: &Intrinsics, vp: &Viewport) -> Matrix4<f64> {
    let (w, h) = (vp.width as f64, vp.height as f64);
    let (n, f) = (intr.near, intr.far);
    Matrix4::new(
        2.0 * intr.fx / w, 0.0, (w - 2.0 * intr.cx) / w, 0.0,
        0.0, -2.0 * intr.fy / h, (h - 2.0 * intr.cy) / h, 0.0,
        0.0, 0.0, -(f + n) / (f - n), -2.0 * f * n / (f - n),
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Viewport transform from normalized device coordinates to window pixels.
pub fn ndc_to_window(x_n: f64, y_n: f64, vp: &Viewport) -> (f64, f64) {
    let (w, h) = (vp.width as f64, vp.height as f64);
    (
        0.5 * w * x_n + vp.x as f64 + 0.5 * w,
        0.5 * h * y_n + vp.y as f64 + 0.5 * h,
    )
}

/// Converts a point from the pinhole frame (X right, Y down, Z forward) to eye space.
pub fn pinhole_to_eye(p: &Vec3) -> Vec3 {
    Vec3::new(p.x, -p.y, -p.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    /// Window coordinates in pixels; reported even when off-screen.
    pub pixel: (f64, f64),
    /// Depth along the viewing axis (meters); negative behind the camera.
    pub depth: f64,
    pub in_front: bool,
}

/// Calibrated virtual camera with cached view and projection matrices.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
    pub viewport: Viewport,
    /// Optical frame relative to the body frame.
    pub mount: RigidTransform,
    eye: Vec3,
    view: Matrix4<f64>,
    projection: Matrix4<f64>,
}

impl CameraModel {
    pub fn new(pose: CameraPose, intrinsics: Intrinsics, viewport: Viewport) -> Result<Self> {
        Self::with_mount(pose, intrinsics, viewport, RigidTransform::identity())
    }

    pub fn with_mount(
        pose: CameraPose,
        intrinsics: Intrinsics,
        viewport: Viewport,
        mount: RigidTransform,
    ) -> Result<Self> {
        intrinsics.validate()?;
        Viewport::new(viewport.width, viewport.height)?;
        check_unit(&mount.rotation)?;
        let optical = Self::optical_pose_of(&pose, &mount);
        let eye = optical.position;
        let view = view_matrix(&eye, &target_vector(&optical), &up_vector(&optical))?;
        let projection = projection_matrix(&intrinsics, &viewport);
        Ok(Self {
            pose,
            intrinsics,
            viewport,
            mount,
            eye,
            view,
            projection,
        })
    }

    fn optical_pose_of(pose: &CameraPose, mount: &RigidTransform) -> CameraPose {
        CameraPose {
            position: pose.position + rotate_unchecked(&pose.orientation, &mount.translation),
            orientation: pose.orientation * mount.rotation,
        }
    }

    /// Pose of the optical frame in the world (body pose composed with the mount).
    pub fn optical_pose(&self) -> CameraPose {
        Self::optical_pose_of(&self.pose, &self.mount)
    }

    pub fn eye(&self) -> Vec3 {
        self.eye
    }

    pub fn view(&self) -> &Matrix4<f64> {
        &self.view
    }

    pub fn projection(&self) -> &Matrix4<f64> {
        &self.projection
    }

    pub fn world_to_eye(&self, p: &Vec3) -> Vec3 {
        (self.view * p.push(1.0)).xyz()
    }

    /// Projects an eye-space point to window coordinates. Points with zero depth
    /// yield non-finite coordinates.
    pub fn eye_to_window(&self, pe: &Vec3) -> (f64, f64) {
        let clip: Vector4<f64> = self.projection * pe.push(1.0);
        ndc_to_window(clip.x / clip.w, clip.y / clip.w, &self.viewport)
    }

    pub fn project_point(&self, p: &Vec3) -> Result<ProjectedPoint> {
        if *p == self.eye {
            return Err(Error::Geometry("cannot project the camera center".into()));
        }
        let pe = self.world_to_eye(p);
        let depth = -pe.z;
        Ok(ProjectedPoint {
            pixel: self.eye_to_window(&pe),
            depth,
            in_front: depth > 0.0,
        })
    }
}
