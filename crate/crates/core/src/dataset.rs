//! Background ingestion, per-sample generation and dataset writing.
//!
//! Per-sample seeds follow the SplitMix64 sequence: the seed of sample `i` is the
//! `(i + 1)`-th output of a SplitMix64 generator started at the master seed, so
//! any sample can be replayed from `(master_seed, i)` alone.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::ImageEncoder;
pub use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{blend_synthetic, blur_score_rgb, dominant_gradient_orientation, select_kernel, BlurPolicy};
use crate::camera::{CameraModel, CameraPose, Intrinsics, Viewport};
use crate::config::GenerationConfig;
use crate::error::{Error, Result};
use crate::geometry::{BBox, Quat, RigidTransform, Vec3};
use crate::mesh::{load_gate_spec, GateSpec};
use crate::metrics::{Detection, GroundTruth};
use crate::render::{render_scene_with, Shading};
use crate::scene::{annotate_scene, filter_min_visible, sample_gate_poses, Category, GateAnnotation, SceneConfig};

/// Quaternions whose norm is within this of 1 are renormalized on ingestion.
pub const QUAT_RENORM_TOL: f64 = 1e-3;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` under master seed `master`.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    splitmix64_mix(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

#[derive(Debug, Clone)]
pub struct BackgroundRecord {
    /// Image filename as written in the pose log; doubles as the background id.
    pub id: String,
    pub path: PathBuf,
    pub pose: CameraPose,
    pub image: Arc<RgbImage>,
    pub blur_score: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct PoseRow {
    image: String,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

/// Renormalizes a quaternion that is within [`QUAT_RENORM_TOL`] of unit length.
pub fn normalize_quaternion(q: Quat) -> Result<Quat> {
    let n = q.norm();
    if !(n.is_finite() && (n - 1.0).abs() <= QUAT_RENORM_TOL) {
        return Err(Error::Validation(format!(
            "quaternion norm {n} is not within {QUAT_RENORM_TOL} of 1"
        )));
    }
    Ok(q / n)
}

/// Reads a CSV pose log (`image,x,y,z,qw,qx,qy,qz`) and loads every referenced image.
pub fn load_backgrounds(pose_log: &Path, image_dir: &Path) -> Result<Vec<BackgroundRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(pose_log)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", pose_log.display())))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<PoseRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push((line, row));
    }
    rows.into_par_iter()
        .map(|(line, row)| {
            let q = normalize_quaternion(Quat::new(row.qw, row.qx, row.qy, row.qz)).map_err(|e| {
                Error::Validation(format!("pose log row {line} ({}): {e}", row.image))
            })?;
            let pose = CameraPose::new(Vec3::new(row.x, row.y, row.z), q)?;
            let path = image_dir.join(&row.image);
            if !path.is_file() {
                return Err(Error::Ingestion(format!(
                    "pose log row {line}: image {} not found",
                    path.display()
                )));
            }
            let image = load_rgb(&path)?;
            Ok(BackgroundRecord {
                id: row.image,
                path,
                pose,
                image: Arc::new(image),
                blur_score: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSummary {
    pub position: [f64; 3],
    /// Body orientation as `[w, x, y, z]`.
    pub orientation: [f64; 4],
}

impl From<&CameraPose> for CameraSummary {
    fn from(p: &CameraPose) -> Self {
        let q = p.orientation;
        Self {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotatedSample {
    pub index: u64,
    pub seed: u64,
    pub background: String,
    pub camera: CameraSummary,
    pub image: RgbImage,
    pub gates: Vec<GateAnnotation>,
}

/// Everything needed to turn a seed into a sample. Backgrounds are scored and
/// assigned a blur policy once, at construction.
#[derive(Debug, Clone)]
pub struct Generator {
    backgrounds: Vec<BackgroundRecord>,
    policies: Vec<BlurPolicy>,
    scene: SceneConfig,
    intrinsics: Intrinsics,
    viewport: Viewport,
    mount: RigidTransform,
    shading: Shading,
    noise_sigma: f64,
    min_visible_corners: usize,
}

impl Generator {
    pub fn new(
        config: &GenerationConfig,
        mut backgrounds: Vec<BackgroundRecord>,
        specs: Vec<Arc<GateSpec>>,
    ) -> Result<Self> {
        if backgrounds.is_empty() {
            return Err(Error::Validation("no background images".into()));
        }
        let (intrinsics, viewport) = config.camera.split()?;
        for bg in &backgrounds {
            if bg.image.dimensions() != (viewport.width, viewport.height) {
                return Err(Error::Validation(format!(
                    "background {} is {}x{}, expected {}x{}",
                    bg.id,
                    bg.image.width(),
                    bg.image.height(),
                    viewport.width,
                    viewport.height
                )));
            }
        }
        let analyzed: Vec<(f64, BlurPolicy)> = backgrounds
            .par_iter()
            .map(|bg| {
                let score = match bg.blur_score {
                    Some(s) => s,
                    None => blur_score_rgb(&bg.image)?,
                };
                let policy = config.blur.policy_for(dominant_gradient_orientation(&bg.image))?;
                Ok((score, policy))
            })
            .collect::<Result<_>>()?;
        let mut policies = Vec::with_capacity(analyzed.len());
        for (bg, (score, policy)) in backgrounds.iter_mut().zip(analyzed) {
            bg.blur_score = Some(score);
            policies.push(policy);
        }
        if !(config.noise.sigma >= 0.0) {
            return Err(Error::Validation("noise sigma must be >= 0".into()));
        }
        Ok(Self {
            backgrounds,
            policies,
            scene: SceneConfig::new(&config.scene, specs)?,
            intrinsics,
            viewport,
            mount: config.mount()?,
            shading: config.render.shading()?,
            noise_sigma: config.noise.sigma,
            min_visible_corners: config.annotations.min_visible_corners,
        })
    }

    /// Loads the gate specs named in the config (meshes resolved against `mesh_dir`).
    pub fn from_config(
        config: &GenerationConfig,
        backgrounds: Vec<BackgroundRecord>,
        mesh_dir: &Path,
    ) -> Result<Self> {
        let specs = config
            .gates
            .iter()
            .map(|g| load_gate_spec(g, mesh_dir).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Self::new(config, backgrounds, specs)
    }

    pub fn backgrounds(&self) -> &[BackgroundRecord] {
        &self.backgrounds
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn viewport(&self) -> Viewport {
        self.viewport
    }

    pub fn camera_for(&self, pose: CameraPose) -> Result<CameraModel> {
        CameraModel::with_mount(pose, self.intrinsics, self.viewport, self.mount)
    }

    /// Produces one sample; the seed drives every random choice.
    pub fn generate_sample(&self, index: u64, seed: u64) -> Result<AnnotatedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg_idx = rng.random_range(0..self.backgrounds.len());
        let bg = &self.backgrounds[bg_idx];
        let cam = self.camera_for(bg.pose)?;
        let gates = sample_gate_poses(&self.scene, &mut rng)?;
        let fb = render_scene_with(&cam, &gates, &self.shading)?;
        let score = bg.blur_score.expect("scored at construction");
        let kernel = select_kernel(score, &self.policies[bg_idx]);
        let image = blend_synthetic(&bg.image, &fb, &kernel, self.noise_sigma, &mut rng)?;
        let annotations = filter_min_visible(&annotate_scene(&cam, &gates), self.min_visible_corners);
        Ok(AnnotatedSample {
            index,
            seed,
            background: bg.id.clone(),
            camera: CameraSummary::from(&bg.pose),
            image,
            gates: annotations,
        })
    }

    /// Generates samples `first_index..first_index + count` in parallel and
    /// returns them in index order. Placement failures are logged and skipped.
    pub fn generate_batch(&self, count: u64, master_seed: u64, first_index: u64) -> Result<Vec<AnnotatedSample>> {
        let results: Vec<Option<AnnotatedSample>> = (first_index..first_index + count)
            .into_par_iter()
            .map(|i| self.try_sample(i, master_seed))
            .collect::<Result<_>>()?;
        Ok(results.into_iter().flatten().collect())
    }

    fn try_sample(&self, index: u64, master_seed: u64) -> Result<Option<AnnotatedSample>> {
        match self.generate_sample(index, sample_seed(master_seed, index)) {
            Ok(s) => Ok(Some(s)),
            Err(e @ Error::Placement { .. }) => {
                log::warn!("sample {index} skipped: {e}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Streams samples to `out_dir` without holding the images in memory.
    /// The manifest is assembled in index order and written last.
    pub fn generate_to_dir(
        &self,
        out_dir: &Path,
        count: u64,
        master_seed: u64,
        first_index: u64,
        config_snapshot: serde_json::Value,
    ) -> Result<DatasetManifest> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let records: Vec<Option<(ImageRecord, Vec<AnnotationRecord>)>> = (first_index
            ..first_index + count)
            .into_par_iter()
            .map(|i| {
                let Some(sample) = self.try_sample(i, master_seed)? else {
                    return Ok(None);
                };
                write_png(&out_dir.join(image_file_name(i)), &sample.image)?;
                Ok(Some(sample_records(&sample)))
            })
            .collect::<Result<_>>()?;
        let mut manifest = DatasetManifest::empty(config_snapshot);
        manifest.info.master_seed = Some(master_seed);
        for (img, anns) in records.into_iter().flatten() {
            manifest.push(img, anns);
        }
        manifest.write(&out_dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }
}

pub const MANIFEST_FILE: &str = "annotations.json";

pub fn image_file_name(index: u64) -> String {
    format!("{index:06}.png")
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    PngEncoder::new_with_quality(&mut w, CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub seed_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub background: String,
    pub camera: CameraSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// `[x_min, y_min, width, height]` in pixels.
    pub bbox: [f64; 4],
    pub area: f64,
    /// Camera-to-gate-center distance in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_corners: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_spec: Option<usize>,
    /// Present only in prediction files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl AnnotationRecord {
    pub fn bbox(&self) -> BBox {
        let [x, y, w, h] = self.bbox;
        BBox::from_xywh(x, y, w, h)
    }

    pub fn category(&self) -> Result<Category> {
        Category::from_id(self.category_id)
            .ok_or_else(|| Error::Validation(format!("unknown category id {}", self.category_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub info: ManifestInfo,
    pub categories: Vec<CategoryRecord>,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default)]
    pub config: serde_json::Value,
}

fn sample_records(sample: &AnnotatedSample) -> (ImageRecord, Vec<AnnotationRecord>) {
    let img = ImageRecord {
        id: sample.index,
        file_name: image_file_name(sample.index),
        width: sample.image.width(),
        height: sample.image.height(),
        seed: sample.seed,
        background: sample.background.clone(),
        camera: sample.camera,
    };
    let anns = sample
        .gates
        .iter()
        .map(|g| AnnotationRecord {
            id: 0,
            image_id: sample.index,
            category_id: g.category.id(),
            bbox: [g.bbox.x_min, g.bbox.y_min, g.bbox.width(), g.bbox.height()],
            area: g.bbox.area(),
            distance: Some(g.distance),
            visible_corners: Some(g.visible_corners),
            gate_spec: Some(g.spec_index),
            score: None,
        })
        .collect();
    (img, anns)
}

impl DatasetManifest {
    pub fn empty(config: serde_json::Value) -> Self {
        Self {
            info: ManifestInfo {
                sample_count: 0,
                master_seed: None,
                seed_rule: "splitmix64(master_seed, index)".into(),
            },
            categories: Category::ALL
                .iter()
                .map(|c| CategoryRecord {
                    id: c.id(),
                    name: c.name().into(),
                })
                .collect(),
            images: Vec::new(),
            annotations: Vec::new(),
            config,
        }
    }

    fn push(&mut self, img: ImageRecord, anns: Vec<AnnotationRecord>) {
        for mut a in anns {
            a.id = self.annotations.len() as u64 + 1;
            self.annotations.push(a);
        }
        self.images.push(img);
        self.info.sample_count = self.images.len();
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruth>> {
        self.annotations
            .iter()
            .map(|a| {
                Ok(GroundTruth {
                    image_id: a.image_id,
                    category: a.category()?,
                    bbox: a.bbox(),
                    distance: a.distance,
                })
            })
            .collect()
    }

    /// Reads the annotations as detections; a missing score counts as 1.
    pub fn detections(&self) -> Result<Vec<Detection>> {
        self.annotations
            .iter()
            .map(|a| {
                Ok(Detection {
                    image_id: a.image_id,
                    category: a.category()?,
                    bbox: a.bbox(),
                    score: a.score.unwrap_or(1.0),
                    distance: a.distance,
                })
            })
            .collect()
    }
}

/// Writes the images as zero-padded PNGs plus the manifest document.
pub fn write_dataset(samples: &[AnnotatedSample], out_dir: &Path) -> Result<DatasetManifest> {
    write_dataset_with_config(samples, out_dir, serde_json::Value::Null)
}

pub fn write_dataset_with_config(
    samples: &[AnnotatedSample],
    out_dir: &Path,
    config: serde_json::Value,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    samples
        .par_iter()
        .try_for_each(|s| write_png(&out_dir.join(image_file_name(s.index)), &s.image))?;
    let mut sorted: Vec<&AnnotatedSample> = samples.iter().collect();
    sorted.sort_by_key(|s| s.index);
    let mut manifest = DatasetManifest::empty(config);
    for s in sorted {
        let (img, anns) = sample_records(s);
        manifest.push(img, anns);
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Integer pixel rectangle; may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn new(x: i64, y: i64, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    /// Smallest pixel rectangle covering a continuous box.
    pub fn covering(b: &BBox) -> Self {
        let (x0, y0) = (b.x_min.floor() as i64, b.y_min.floor() as i64);
        let (x1, y1) = (b.x_max.ceil() as i64, b.y_max.ceil() as i64);
        Self::new(x0, y0, (x1 - x0).max(0) as u32, (y1 - y0).max(0) as u32)
    }
}

/// Keeps the pixels inside `rect` and blacks out the rest; dimensions unchanged.
pub fn crop_to_bbox(img: &RgbImage, rect: PixelRect) -> Result<RgbImage> {
    let x0 = rect.x.max(0);
    let y0 = rect.y.max(0);
    let x1 = (rect.x + rect.width as i64).min(img.width() as i64);
    let y1 = (rect.y + rect.height as i64).min(img.height() as i64);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::Validation(format!(
            "crop rectangle {rect:?} does not intersect the {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let mut out = RgbImage::new(img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            out.put_pixel(x as u32, y as u32, *img.get_pixel(x as u32, y as u32));
        }
    }
    Ok(out)
}
