//! Top-level generation config document (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{BlurSettings, DEFAULT_NOISE_SIGMA};
use crate::camera::Calibration;
use crate::error::{Error, Result};
use crate::geometry::{Quat, RigidTransform, Vec3};
use crate::mesh::GateSpecConfig;
use crate::render::Shading;
use crate::scene::SceneSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub camera: Calibration,
    /// Optical frame relative to the tracked body frame; identity when absent.
    #[serde(default)]
    pub mount: Option<MountSettings>,
    pub scene: SceneSettings,
    pub gates: Vec<GateSpecConfig>,
    #[serde(default)]
    pub blur: BlurSettings,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub annotations: AnnotationSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountSettings {
    /// Quaternion as `[w, x, y, z]`.
    pub rotation: [f64; 4],
    #[serde(default)]
    pub translation: [f64; 3],
}

impl MountSettings {
    pub fn transform(&self) -> Result<RigidTransform> {
        let [w, x, y, z] = self.rotation;
        RigidTransform::new(Quat::new(w, x, y, z), Vec3::from(self.translation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    pub sigma: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    pub light_dir: [f64; 3],
    pub ambient: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        let s = Shading::default();
        Self {
            light_dir: [s.light_dir.x, s.light_dir.y, s.light_dir.z],
            ambient: s.ambient,
        }
    }
}

impl RenderSettings {
    pub fn shading(&self) -> Result<Shading> {
        let dir = Vec3::from(self.light_dir);
        if !(dir.norm() > 0.0) || !(0.0..=1.0).contains(&self.ambient) {
            return Err(Error::Validation(
                "render.light_dir must be non-zero and render.ambient in [0, 1]".into(),
            ));
        }
        Ok(Shading {
            light_dir: dir.normalize(),
            ambient: self.ambient,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSettings {
    /// Non-target gates need at least this many corners on screen to be annotated.
    pub min_visible_corners: usize,
}

impl Default for AnnotationSettings {
    fn default() -> Self {
        Self {
            min_visible_corners: 1,
        }
    }
}

impl GenerationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GenerationConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if cfg.gates.is_empty() {
            return Err(Error::Config("at least one [[gates]] entry is required".into()));
        }
        if !(cfg.noise.sigma >= 0.0 && cfg.noise.sigma.is_finite()) {
            return Err(Error::Config(format!("noise.sigma must be >= 0, got {}", cfg.noise.sigma)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn mount(&self) -> Result<RigidTransform> {
        self.mount
            .map(|m| m.transform())
            .unwrap_or(Ok(RigidTransform::identity()))
    }
}
