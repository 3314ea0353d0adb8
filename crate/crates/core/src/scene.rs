//! Random gate placement inside the recorded arena and ground-truth annotation.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::{yaw_quat, Aabb, BBox, RigidTransform, Vec3};
use crate::mesh::GateSpec;

/// Rejection-sampling attempts per gate before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Corners that must be on screen for a gate to be eligible as target.
pub const TARGET_MIN_CORNERS: usize = 3;

/// Scene randomization parameters as they appear in a config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSettings {
    pub max_gates: usize,
    pub min_distance: f64,
    pub bounds: Aabb,
    #[serde(default = "default_yaw_range")]
    pub yaw_range: [f64; 2],
}

fn default_yaw_range() -> [f64; 2] {
    [0.0, TAU]
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub max_gates: usize,
    pub min_distance: f64,
    pub bounds: Aabb,
    /// Half-open yaw interval in radians.
    pub yaw_range: [f64; 2],
    pub specs: Vec<Arc<GateSpec>>,
}

impl SceneConfig {
    pub fn new(settings: &SceneSettings, specs: Vec<Arc<GateSpec>>) -> Result<Self> {
        let cfg = Self {
            max_gates: settings.max_gates,
            min_distance: settings.min_distance,
            bounds: settings.bounds,
            yaw_range: settings.yaw_range,
            specs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_gates == 0 {
            return Err(Error::Validation("max_gates must be at least 1".into()));
        }
        if !(self.min_distance > 0.0 && self.min_distance.is_finite()) {
            return Err(Error::Validation(format!(
                "min_distance must be positive, got {}",
                self.min_distance
            )));
        }
        self.bounds.validate()?;
        let [lo, hi] = self.yaw_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Validation(format!("invalid yaw range [{lo}, {hi}]")));
        }
        if self.specs.is_empty() {
            return Err(Error::Validation("scene needs at least one gate spec".into()));
        }
        Ok(())
    }
}

/// A gate placed in the world: upright, rotated about the world vertical.
#[derive(Debug, Clone)]
pub struct GateInstance {
    pub spec: Arc<GateSpec>,
    pub spec_index: usize,
    /// World position of the mesh origin (meters).
    pub position: Vec3,
    pub yaw: f64,
}

impl GateInstance {
    pub fn new(spec: Arc<GateSpec>, spec_index: usize, position: Vec3, yaw: f64) -> Self {
        Self {
            spec,
            spec_index,
            position,
            yaw,
        }
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform {
            rotation: yaw_quat(self.yaw),
            translation: self.position,
        }
    }

    pub fn world_center(&self) -> Vec3 {
        self.pose().apply_point(&self.spec.center_offset)
    }

    pub fn world_normal(&self) -> Vec3 {
        self.pose().apply_vector(&self.spec.normal_local)
    }

    pub fn world_corners(&self) -> [Vec3; 4] {
        let pose = self.pose();
        self.spec.corners_local().map(|c| pose.apply_point(&c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Target,
    Front,
    Back,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Target, Category::Front, Category::Back];

    /// Dataset category id (1-based).
    pub fn id(self) -> u32 {
        match self {
            Category::Target => 1,
            Category::Front => 2,
            Category::Back => 3,
        }
    }

    pub fn from_id(id: u32) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Target => "target",
            Category::Front => "front",
            Category::Back => "back",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateAnnotation {
    /// Index of the gate in the scene's instance list.
    pub gate_index: usize,
    pub spec_index: usize,
    pub bbox: BBox,
    pub category: Category,
    /// Distance from the camera position to the gate center (meters).
    pub distance: f64,
    pub visible_corners: usize,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a gate count in `1..=max_gates`, then places each gate uniformly in the
/// bounds with a uniform yaw, rejecting placements whose center lies closer than
/// `min_distance` to an already placed gate.
pub fn sample_gate_poses(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<Vec<GateInstance>> {
    cfg.validate()?;
    let count = rng.random_range(1..=cfg.max_gates);
    let mut gates: Vec<GateInstance> = Vec::with_capacity(count);
    for gate in 0..count {
        let spec_index = rng.random_range(0..cfg.specs.len());
        let spec = &cfg.specs[spec_index];
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let b = &cfg.bounds;
            let position = Vec3::new(
                uniform(rng, b.min[0], b.max[0]),
                uniform(rng, b.min[1], b.max[1]),
                uniform(rng, b.min[2], b.max[2]),
            );
            let yaw = uniform(rng, cfg.yaw_range[0], cfg.yaw_range[1]);
            let candidate = GateInstance::new(spec.clone(), spec_index, position, yaw);
            let center = candidate.world_center();
            if gates
                .iter()
                .all(|g| (g.world_center() - center).norm() >= cfg.min_distance)
            {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(g) => gates.push(g),
            None => {
                return Err(Error::Placement {
                    gate,
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                })
            }
        }
    }
    Ok(gates)
}

/// Number of frame corners that are in front of the camera and inside the viewport.
pub fn visible_corner_count(cam: &CameraModel, gate: &GateInstance) -> usize {
    gate.world_corners()
        .iter()
        .filter(|c| match cam.project_point(c) {
            Ok(p) => p.in_front && cam.viewport.contains(p.pixel.0, p.pixel.1),
            Err(_) => false,
        })
        .count()
}

fn center_in_front(cam: &CameraModel, gate: &GateInstance) -> bool {
    cam.project_point(&gate.world_center())
        .map(|p| p.in_front)
        .unwrap_or(false)
}

fn camera_distance(cam: &CameraModel, gate: &GateInstance) -> f64 {
    (gate.world_center() - cam.pose.position).norm()
}

/// Closest gate whose center is in front of the camera and which shows at least
/// three corners on screen. Ties keep the lower index.
pub fn select_target(cam: &CameraModel, gates: &[GateInstance]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gates.iter().enumerate() {
        if !center_in_front(cam, g) || visible_corner_count(cam, g) < TARGET_MIN_CORNERS {
            continue;
        }
        let d = camera_distance(cam, g);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Clips a planar polygon (eye space) against the near plane `z <= -near`.
fn clip_near(poly: &[Vec3], near: f64) -> Vec<Vec3> {
    let inside = |p: &Vec3| -p.z >= near;
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ia, ib) = (inside(&a), inside(&b));
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (-near - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Screen-space hull of the gate frame after near-plane clipping, clamped to the viewport.
pub fn frame_bbox(cam: &CameraModel, gate: &GateInstance) -> Option<BBox> {
    let eye: Vec<Vec3> = gate.world_corners().iter().map(|c| cam.world_to_eye(c)).collect();
    let clipped = clip_near(&eye, cam.intrinsics.near);
    let hull = BBox::hull(clipped.iter().map(|p| cam.eye_to_window(p)))?;
    let (x0, y0, x1, y1) = cam.viewport.rect();
    Some(hull.clamp_to(x0, y0, x1, y1))
}

/// Front when the camera is on the side the gate normal points to; a
/// perpendicular view counts as front.
pub fn facing_category(cam: &CameraModel, gate: &GateInstance) -> Category {
    let to_camera = cam.pose.position - gate.world_center();
    if gate.world_normal().dot(&to_camera) >= 0.0 {
        Category::Front
    } else {
        Category::Back
    }
}

/// Annotates every gate whose center is in front of the camera and that has at
/// least one corner on screen.
pub fn annotate_scene(cam: &CameraModel, gates: &[GateInstance]) -> Vec<GateAnnotation> {
    let target = select_target(cam, gates);
    let mut out = Vec::new();
    for (i, g) in gates.iter().enumerate() {
        if !center_in_front(cam, g) {
            continue;
        }
        let visible = visible_corner_count(cam, g);
        if visible == 0 {
            continue;
        }
        let Some(bbox) = frame_bbox(cam, g) else {
            continue;
        };
        let category = if Some(i) == target {
            Category::Target
        } else {
            facing_category(cam, g)
        };
        out.push(GateAnnotation {
            gate_index: i,
            spec_index: g.spec_index,
            bbox,
            category,
            distance: camera_distance(cam, g),
            visible_corners: visible,
        });
    }
    out
}

/// Keeps annotations with at least `min_corners` visible corners. The target
/// annotation always survives since it needs three corners.
pub fn filter_min_visible(annotations: &[GateAnnotation], min_corners: usize) -> Vec<GateAnnotation> {
    annotations
        .iter()
        .filter(|a| a.visible_corners >= min_corners || a.category == Category::Target)
        .cloned()
        .collect()
}
