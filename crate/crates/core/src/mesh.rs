//! Triangle meshes, Wavefront OBJ ingestion and per-gate metadata.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_unit, RigidTransform, Vec3};

pub type Rgb = [u8; 3];

pub const DEFAULT_FACE_COLOR: Rgb = [200, 200, 200];

/// Name of the implicit material used by faces before any `usemtl`.
pub const DEFAULT_MATERIAL: &str = "default";

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Material index per face into `materials`.
    pub face_materials: Vec<usize>,
    /// Material names; index 0 is always [`DEFAULT_MATERIAL`].
    pub materials: Vec<String>,
    pub face_colors: Vec<Rgb>,
}

impl Mesh {
    /// Builds a single-material mesh and checks its invariants.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = faces.len();
        let mesh = Mesh {
            vertices,
            faces,
            face_materials: vec![0; n],
            materials: vec![DEFAULT_MATERIAL.to_string()],
            face_colors: vec![DEFAULT_FACE_COLOR; n],
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::Validation("mesh has no faces".into()));
        }
        if self.face_colors.len() != self.faces.len()
            || self.face_materials.len() != self.faces.len()
        {
            return Err(Error::Validation(
                "per-face attribute count does not match face count".into(),
            ));
        }
        if let Some(v) = self.vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation(format!("non-finite vertex {v:?}")));
        }
        let nv = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if let Some(bad) = f.iter().find(|&&k| k >= nv) {
                return Err(Error::Validation(format!(
                    "face {i} references vertex {bad} but the mesh has {nv} vertices"
                )));
            }
        }
        if let Some(&m) = self.face_materials.iter().find(|&&m| m >= self.materials.len()) {
            return Err(Error::Validation(format!("unknown material index {m}")));
        }
        Ok(())
    }

    /// Colors every face from its material name; unknown materials get `fallback`.
    pub fn apply_palette(&mut self, palette: &BTreeMap<String, Rgb>, fallback: Rgb) {
        for (color, &m) in self.face_colors.iter_mut().zip(&self.face_materials) {
            *color = palette.get(&self.materials[m]).copied().unwrap_or(fallback);
        }
    }

    pub fn set_uniform_color(&mut self, color: Rgb) {
        self.face_colors.iter_mut().for_each(|c| *c = color);
    }

    /// Serializes the mesh back to the supported OBJ subset.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        let mut current = 0;
        for (f, &m) in self.faces.iter().zip(&self.face_materials) {
            if m != current {
                let _ = writeln!(out, "usemtl {}", self.materials[m]);
                current = m;
            }
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }
}

/// Parses `v`, `f` and `usemtl` records. Normals, texture coordinates, groups and
/// other statements are skipped. Polygons are fan-triangulated around their first vertex.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_lines: Vec<usize> = Vec::new();
    let mut face_materials = Vec::new();
    let mut materials = vec![DEFAULT_MATERIAL.to_string()];
    let mut current = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        match keyword {
            "v" => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("vertex needs 3 coordinates, found {}", coords.len()),
                    });
                }
                let mut p = [0.0; 3];
                for (k, tok) in coords.iter().take(3).enumerate() {
                    p[k] = tok
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            message: format!("invalid vertex coordinate `{tok}`"),
                        })?;
                }
                vertices.push(Vec3::new(p[0], p[1], p[2]));
            }
            "f" => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("invalid face index `{tok}`"),
                    })?;
                    let resolved = match raw {
                        0 => {
                            return Err(Error::Parse {
                                line: line_no,
                                message: "face index 0 is not valid in OBJ".into(),
                            })
                        }
                        r if r > 0 => (r - 1) as usize,
                        r => {
                            let back = vertices.len() as i64 + r;
                            if back < 0 {
                                return Err(Error::Validation(format!(
                                    "line {line_no}: relative face index {r} is out of range"
                                )));
                            }
                            back as usize
                        }
                    };
                    poly.push(resolved);
                }
                if poly.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("face needs at least 3 vertices, found {}", poly.len()),
                    });
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                    face_lines.push(line_no);
                    face_materials.push(current);
                }
            }
            "usemtl" => {
                let name = tokens.next().unwrap_or(DEFAULT_MATERIAL).to_string();
                current = match materials.iter().position(|m| *m == name) {
                    Some(i) => i,
                    None => {
                        materials.push(name);
                        materials.len() - 1
                    }
                };
            }
            _ => {}
        }
    }

    let nv = vertices.len();
    for (f, line) in faces.iter().zip(&face_lines) {
        if let Some(bad) = f.iter().find(|&&k| k >= nv) {
            return Err(Error::Validation(format!(
                "line {line}: face index {} out of range ({nv} vertices)",
                bad + 1
            )));
        }
    }
    let n = faces.len();
    let mesh = Mesh {
        vertices,
        faces,
        face_materials,
        materials,
        face_colors: vec![DEFAULT_FACE_COLOR; n],
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Applies a rigid transform to every vertex; topology and colors are kept.
pub fn transform_mesh(mesh: &Mesh, pose: &RigidTransform) -> Result<Mesh> {
    check_unit(&pose.rotation)?;
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        *v = pose.apply_point(v);
    }
    Ok(out)
}

/// A gate model: mesh plus the semantic frame used for annotation.
///
/// The panel lies in the plane through `center_offset` orthogonal to `normal_local`,
/// with mesh-local +z as its vertical axis. `width` x `height` is the frame without legs.
#[derive(Debug, Clone)]
pub struct GateSpec {
    pub name: String,
    pub mesh: Arc<Mesh>,
    pub center_offset: Vec3,
    pub width: f64,
    pub height: f64,
    pub normal_local: Vec3,
}

impl GateSpec {
    pub fn new(
        name: impl Into<String>,
        mesh: Arc<Mesh>,
        center_offset: Vec3,
        width: f64,
        height: f64,
        normal_local: Vec3,
    ) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Validation(format!("gate width must be > 0, got {width}")));
        }
        if !(height > 0.0 && height.is_finite()) {
            return Err(Error::Validation(format!("gate height must be > 0, got {height}")));
        }
        if !center_offset.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation("gate center is not finite".into()));
        }
        let n = normal_local.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Validation("gate normal must be a non-zero vector".into()));
        }
        let normal_local = normal_local / n;
        if Vec3::z().cross(&normal_local).norm() < 1e-9 {
            return Err(Error::Validation(
                "gate normal must not be vertical (panels stand upright)".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            mesh,
            center_offset,
            width,
            height,
            normal_local,
        })
    }

    /// Horizontal in-plane axis of the panel, mesh-local frame.
    pub fn horizontal_axis(&self) -> Vec3 {
        Vec3::z().cross(&self.normal_local).normalize()
    }

    /// Vertical in-plane axis of the panel, mesh-local frame.
    pub fn vertical_axis(&self) -> Vec3 {
        self.normal_local.cross(&self.horizontal_axis())
    }

    /// Frame corners in mesh-local coordinates: top-left, top-right, bottom-right,
    /// bottom-left as seen from the front.
    pub fn corners_local(&self) -> [Vec3; 4] {
        let h = self.horizontal_axis() * (0.5 * self.width);
        let v = self.vertical_axis() * (0.5 * self.height);
        let c = self.center_offset;
        [c - h + v, c + h + v, c + h - v, c - h - v]
    }
}

/// Mesh of the bundled 1.5 m square gate (front panel facing +x).
pub const STANDARD_GATE_OBJ: &str = include_str!("../assets/gate.obj");

/// The bundled gate with its default palette: orange front, blue back.
pub fn standard_gate() -> GateSpec {
    let mut mesh = parse_obj(STANDARD_GATE_OBJ).expect("bundled gate mesh parses");
    let palette = BTreeMap::from([
        ("front".to_string(), [230, 110, 20]),
        ("back".to_string(), [40, 90, 200]),
        ("legs".to_string(), [60, 60, 60]),
    ]);
    mesh.apply_palette(&palette, DEFAULT_FACE_COLOR);
    GateSpec::new(
        "standard",
        Arc::new(mesh),
        Vec3::new(0.0, 0.0, 1.5),
        1.5,
        1.5,
        Vec3::x(),
    )
    .expect("bundled gate spec is valid")
}

/// Gate description as it appears in a config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpecConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub mesh: String,
    pub center: [f64; 3],
    pub width: f64,
    pub height: f64,
    pub normal: [f64; 3],
    #[serde(default)]
    pub colors: BTreeMap<String, Rgb>,
    #[serde(default)]
    pub default_color: Option<Rgb>,
}

/// Resolves the mesh path against `mesh_dir` and validates the result.
pub fn load_gate_spec(config: &GateSpecConfig, mesh_dir: &Path) -> Result<GateSpec> {
    let path = mesh_dir.join(&config.mesh);
    let mut mesh = load_obj(&path)?;
    mesh.apply_palette(&config.colors, config.default_color.unwrap_or(DEFAULT_FACE_COLOR));
    let name = config.name.clone().unwrap_or_else(|| {
        Path::new(&config.mesh)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| config.mesh.clone())
    });
    GateSpec::new(
        name,
        Arc::new(mesh),
        Vec3::from(config.center),
        config.width,
        config.height,
        Vec3::from(config.normal),
    )
}

/// Reads a standalone TOML gate description.
pub fn load_gate_spec_file(path: &Path, mesh_dir: &Path) -> Result<GateSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: GateSpecConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    load_gate_spec(&cfg, mesh_dir)
}
