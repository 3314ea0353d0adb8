#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use gatesynth::augment::BlurSettings;
use gatesynth::camera::Calibration;
use gatesynth::config::{AnnotationSettings, GenerationConfig, NoiseSettings, RenderSettings};
use gatesynth::dataset::{load_backgrounds, Generator};
use gatesynth::geometry::{axis_angle, Aabb, Quat, Vec3};
use gatesynth::mesh::{standard_gate, GateSpec, Mesh};
use gatesynth::scene::SceneSettings;
use image::{Rgb, RgbImage};
use rand::Rng;

/// Rotation matrix of a unit quaternion, written out element by element.
pub fn quat_matrix(q: &Quat) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Textbook pinhole: camera looks along the body x axis with body z up; image
/// x grows to the right and image y grows downwards.
pub fn pinhole_oracle(
    position: &Vec3,
    q: &Quat,
    (fx, fy, cx, cy): (f64, f64, f64, f64),
    (ox, oy): (f64, f64),
    p: &Vec3,
) -> Option<(f64, f64)> {
    let r = quat_matrix(q);
    let forward = [r[0][0], r[1][0], r[2][0]];
    let up = [r[0][2], r[1][2], r[2][2]];
    let right = [
        forward[1] * up[2] - forward[2] * up[1],
        forward[2] * up[0] - forward[0] * up[2],
        forward[0] * up[1] - forward[1] * up[0],
    ];
    let d = [p.x - position.x, p.y - position.y, p.z - position.z];
    let dot = |a: [f64; 3]| a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
    let (xc, yc, zc) = (dot(right), -dot(up), dot(forward));
    if zc <= 0.0 {
        return None;
    }
    Some((fx * xc / zc + cx + ox, fy * yc / zc + cy + oy))
}

pub fn random_orientation(rng: &mut impl Rng, max_tilt: f64) -> Quat {
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let pitch = rng.random_range(-max_tilt..=max_tilt);
    let roll = rng.random_range(-max_tilt..=max_tilt);
    axis_angle(&Vec3::z(), yaw) * axis_angle(&Vec3::y(), pitch) * axis_angle(&Vec3::x(), roll)
}

/// Smooth random "natural" image: a few random sinusoids plus mild noise.
pub fn textured_image(w: u32, h: u32, rng: &mut impl Rng) -> RgbImage {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.01..0.4),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(10.0..40.0),
            )
        })
        .collect();
    let noise: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(-12.0..12.0)).collect();
    RgbImage::from_fn(w, h, |x, y| {
        let mut base = 128.0;
        for &(f, dir, phase, amp) in &waves {
            let t = (x as f64 * dir.cos() + y as f64 * dir.sin()) * f + phase;
            base += amp * t.sin();
        }
        let i = ((y * w + x) * 3) as usize;
        Rgb([0, 1, 2].map(|c| (base + noise[i + c] + c as f64 * 10.0).round().clamp(0.0, 255.0) as u8))
    })
}

pub fn calibration(width: u32, height: u32) -> Calibration {
    let f = width as f64 / 2.0;
    Calibration {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        near: 0.05,
        far: 50.0,
    }
}

pub fn arena_settings() -> SceneSettings {
    SceneSettings {
        max_gates: 4,
        min_distance: 2.0,
        bounds: Aabb {
            min: [-4.0, -4.0, 0.0],
            max: [4.0, 4.0, 0.0],
        },
        yaw_range: [0.0, std::f64::consts::TAU],
    }
}

pub fn generation_config(width: u32, height: u32) -> GenerationConfig {
    GenerationConfig {
        camera: calibration(width, height),
        mount: None,
        scene: arena_settings(),
        gates: Vec::new(),
        blur: BlurSettings::default(),
        noise: NoiseSettings::default(),
        render: RenderSettings::default(),
        annotations: AnnotationSettings::default(),
    }
}

/// Two specs sharing the bundled mesh, recolored.
pub fn two_specs() -> Vec<Arc<GateSpec>> {
    let a = standard_gate();
    let mut b = standard_gate();
    let mut mesh: Mesh = (*b.mesh).clone();
    mesh.set_uniform_color([235, 235, 235]);
    b.mesh = Arc::new(mesh);
    b.name = "white".into();
    vec![Arc::new(a), Arc::new(b)]
}

/// Writes `n` textured backgrounds plus a pose log whose cameras stand outside
/// the arena looking in. Returns `(pose_log, image_dir)`.
pub fn write_backgrounds(dir: &Path, width: u32, height: u32, n: usize, rng: &mut impl Rng) -> (PathBuf, PathBuf) {
    let bg = dir.join("backgrounds");
    std::fs::create_dir_all(&bg).unwrap();
    let mut log = String::from("image,x,y,z,qw,qx,qy,qz\n");
    for i in 0..n {
        let name = format!("bg{i:03}.png");
        textured_image(width, height, rng).save(bg.join(&name)).unwrap();
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let pos = Vec3::new(-7.0 * heading.cos(), -7.0 * heading.sin(), rng.random_range(1.0..2.0));
        let q = axis_angle(&Vec3::z(), heading + rng.random_range(-0.3..0.3))
            * axis_angle(&Vec3::y(), rng.random_range(-0.1..0.1));
        log.push_str(&format!(
            "{name},{},{},{},{},{},{},{}\n",
            pos.x, pos.y, pos.z, q.w, q.i, q.j, q.k
        ));
    }
    let log_path = dir.join("poses.csv");
    std::fs::write(&log_path, log).unwrap();
    (log_path, bg)
}

pub fn fixture_generator(dir: &Path, width: u32, height: u32, n: usize, rng: &mut impl Rng) -> Generator {
    let (log, bg) = write_backgrounds(dir, width, height, n, rng);
    let backgrounds = load_backgrounds(&log, &bg).unwrap();
    Generator::new(&generation_config(width, height), backgrounds, two_specs()).unwrap()
}
