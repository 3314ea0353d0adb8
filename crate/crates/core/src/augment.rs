//! Matching the synthetic layer to the background: blur estimation from the
//! variance of the Laplacian, motion-blur kernels, additive Gaussian noise and
//! alpha compositing.

use image::{GrayImage, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::FrameBuffers;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [100.0, 300.0, 1000.0];
pub const DEFAULT_KERNEL_LENGTHS: [usize; 3] = [5, 9, 13];
pub const DEFAULT_NOISE_SIGMA: f64 = 5.0;

/// Convolution kernel with odd dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    coeffs: Vec<f32>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, coeffs: Vec<f32>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::Validation(format!(
                "kernel dimensions must be odd, got {width}x{height}"
            )));
        }
        if coeffs.len() != width * height {
            return Err(Error::Validation(format!(
                "kernel has {} coefficients, expected {}",
                coeffs.len(),
                width * height
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("kernel coefficient is not finite".into()));
        }
        Ok(Self {
            width,
            height,
            coeffs,
        })
    }

    pub fn identity() -> Self {
        Self {
            width: 1,
            height: 1,
            coeffs: vec![1.0],
        }
    }

    /// Normalized horizontal box of `len` taps (`len` odd).
    pub fn horizontal_box(len: usize) -> Result<Self> {
        Self::new(len, 1, vec![1.0 / len as f32; len])
    }

    /// Normalized `n` x `n` box.
    pub fn square_box(n: usize) -> Result<Self> {
        Self::new(n, n, vec![1.0 / (n * n) as f32; n * n])
    }

    /// Normalized linear motion-blur kernel of `len` samples along `angle`
    /// (radians, x right and y down). `angle = 0` is exactly the horizontal box.
    pub fn motion_line(len: usize, angle: f64) -> Result<Self> {
        if len == 0 || len % 2 == 0 {
            return Err(Error::Validation(format!(
                "motion kernel length must be odd, got {len}"
            )));
        }
        let r = (len / 2) as i64;
        let (s, c) = angle.sin_cos();
        let taps: Vec<(i64, i64)> = (-r..=r)
            .map(|t| ((t as f64 * c).round() as i64, (t as f64 * s).round() as i64))
            .collect();
        let rx = taps.iter().map(|t| t.0.abs()).max().unwrap_or(0);
        let ry = taps.iter().map(|t| t.1.abs()).max().unwrap_or(0);
        let (w, h) = ((2 * rx + 1) as usize, (2 * ry + 1) as usize);
        let mut coeffs = vec![0.0f32; w * h];
        for (dx, dy) in taps {
            coeffs[((dy + ry) as usize) * w + (dx + rx) as usize] += 1.0;
        }
        let total: f32 = coeffs.iter().sum();
        coeffs.iter_mut().for_each(|v| *v /= total);
        Self::new(w, h, coeffs)
    }

    /// Normalized Gaussian truncated at three standard deviations.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Validation(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        let r = (3.0 * sigma).ceil() as i64;
        let n = (2 * r + 1) as usize;
        let mut coeffs = Vec::with_capacity(n * n);
        for y in -r..=r {
            for x in -r..=r {
                coeffs.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = coeffs.iter().sum();
        Self::new(n, n, coeffs.into_iter().map(|v| (v / total) as f32).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coeffs(&self) -> &[f32] {
        &self.coeffs
    }

    pub fn sum(&self) -> f64 {
        self.coeffs.iter().map(|&c| c as f64).sum()
    }

    pub fn is_identity(&self) -> bool {
        self.width == 1 && self.height == 1 && self.coeffs[0] == 1.0
    }

    /// Half extents `(rx, ry)`.
    pub fn radius(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    /// Non-zero taps as `(dx, dy, weight)` offsets from the center.
    fn taps(&self) -> Vec<(isize, isize, f32)> {
        let (rx, ry) = self.radius();
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let w = self.coeffs[y * self.width + x];
                if w != 0.0 {
                    out.push((x as isize - rx as isize, y as isize - ry as isize, w));
                }
            }
        }
        out
    }
}

/// Luminance (Rec. 601 weights) as floating point intensities.
pub fn luminance(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Variance of the 4-neighbour discrete Laplacian over interior pixels.
pub fn laplacian_variance(values: &[f64], width: usize, height: usize) -> Result<f64> {
    if width < 3 || height < 3 {
        return Err(Error::Validation(format!(
            "blur score needs at least a 3x3 image, got {width}x{height}"
        )));
    }
    let n = ((width - 2) * (height - 2)) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..height - 1 {
        let row = y * width;
        for x in 1..width - 1 {
            let i = row + x;
            let lap = values[i - 1] + values[i + 1] + values[i - width] + values[i + width]
                - 4.0 * values[i];
            sum += lap;
            sum_sq += lap * lap;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

pub fn blur_score(img: &GrayImage) -> Result<f64> {
    let values: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    laplacian_variance(&values, img.width() as usize, img.height() as usize)
}

/// Blur score of an RGB image via its luminance.
pub fn blur_score_rgb(img: &RgbImage) -> Result<f64> {
    laplacian_variance(&luminance(img), img.width() as usize, img.height() as usize)
}

/// Dominant gradient orientation (radians in `(-pi/2, pi/2]`) from the image
/// structure tensor. Motion blur smears along this direction.
pub fn dominant_gradient_orientation(img: &RgbImage) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let lum = luminance(img);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let gx = 0.5 * (lum[i + 1] - lum[i - 1]);
            let gy = 0.5 * (lum[i + w] - lum[i - w]);
            sxx += gx * gx;
            syy += gy * gy;
            sxy += gx * gy;
        }
    }
    0.5 * (2.0 * sxy).atan2(sxx - syy)
}

/// Three ascending blur-score thresholds and the kernels, weakest first, that
/// apply in the bands below them.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurPolicy {
    thresholds: [f64; 3],
    kernels: [Kernel; 3],
}

impl BlurPolicy {
    pub fn new(thresholds: [f64; 3], kernels: [Kernel; 3]) -> Result<Self> {
        if !thresholds.iter().all(|t| t.is_finite())
            || !(thresholds[0] < thresholds[1] && thresholds[1] < thresholds[2])
        {
            return Err(Error::Validation(format!(
                "blur thresholds must be strictly ascending, got {thresholds:?}"
            )));
        }
        for (i, k) in kernels.iter().enumerate() {
            if (k.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "blur kernel {i} sums to {} instead of 1",
                    k.sum()
                )));
            }
        }
        Ok(Self {
            thresholds,
            kernels,
        })
    }

    /// Motion-line kernels of the given lengths, all along `angle`.
    pub fn motion(thresholds: [f64; 3], lengths: [usize; 3], angle: f64) -> Result<Self> {
        let [a, b, c] = lengths;
        Self::new(
            thresholds,
            [
                Kernel::motion_line(a, angle)?,
                Kernel::motion_line(b, angle)?,
                Kernel::motion_line(c, angle)?,
            ],
        )
    }

    pub fn thresholds(&self) -> &[f64; 3] {
        &self.thresholds
    }

    pub fn kernels(&self) -> &[Kernel; 3] {
        &self.kernels
    }
}

impl Default for BlurPolicy {
    fn default() -> Self {
        Self::motion(DEFAULT_THRESHOLDS, DEFAULT_KERNEL_LENGTHS, 0.0)
            .expect("default blur policy is valid")
    }
}

/// Blur section of a config document. `orientation_deg` fixes the motion
/// direction; when absent the background's dominant gradient orientation is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurSettings {
    #[serde(default = "default_thresholds")]
    pub thresholds: [f64; 3],
    #[serde(default = "default_lengths")]
    pub lengths: [usize; 3],
    #[serde(default)]
    pub orientation_deg: Option<f64>,
}

fn default_thresholds() -> [f64; 3] {
    DEFAULT_THRESHOLDS
}

fn default_lengths() -> [usize; 3] {
    DEFAULT_KERNEL_LENGTHS
}

impl Default for BlurSettings {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS,
            lengths: DEFAULT_KERNEL_LENGTHS,
            orientation_deg: None,
        }
    }
}

impl BlurSettings {
    /// Policy for a background with the given dominant gradient orientation.
    pub fn policy_for(&self, background_orientation: f64) -> Result<BlurPolicy> {
        let angle = self
            .orientation_deg
            .map(f64::to_radians)
            .unwrap_or(background_orientation);
        BlurPolicy::motion(self.thresholds, self.lengths, angle)
    }
}

/// Lower scores (blurrier backgrounds) select stronger kernels; at or above the
/// top threshold no blur is applied. A score equal to a threshold belongs to the
/// band above it.
pub fn select_kernel(score: f64, policy: &BlurPolicy) -> Kernel {
    let [t0, t1, t2] = policy.thresholds;
    if score >= t2 {
        Kernel::identity()
    } else if score >= t1 {
        policy.kernels[0].clone()
    } else if score >= t0 {
        policy.kernels[1].clone()
    } else {
        policy.kernels[2].clone()
    }
}

/// Convolves interleaved `channels`-plane data for the pixels inside `region`
/// (`x0, y0, x1, y1`, exclusive ends) with replicate-edge padding.
fn convolve_region(
    src: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    kernel: &Kernel,
    region: (usize, usize, usize, usize),
    out: &mut [f32],
) {
    let taps = kernel.taps();
    let (x0, y0, x1, y1) = region;
    let mut acc = vec![0.0f32; channels];
    for y in y0..y1 {
        for x in x0..x1 {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(dx, dy, w) in &taps {
                let sx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                let sy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                let base = (sy * width + sx) * channels;
                for c in 0..channels {
                    acc[c] += w * src[base + c];
                }
            }
            let base = (y * width + x) * channels;
            out[base..base + channels].copy_from_slice(&acc);
        }
    }
}

/// Per-channel 2D convolution with replicate-edge padding; output clamped to 0..255.
pub fn convolve(img: &RgbImage, kernel: &Kernel) -> Result<RgbImage> {
    if kernel.width % 2 == 0 || kernel.height % 2 == 0 {
        return Err(Error::Validation("kernel dimensions must be odd".into()));
    }
    if kernel.is_identity() {
        return Ok(img.clone());
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src: Vec<f32> = img.as_raw().iter().map(|&v| v as f32).collect();
    let mut out = vec![0.0f32; src.len()];
    convolve_region(&src, w, h, 3, kernel, (0, 0, w, h), &mut out);
    let data = out.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, data).expect("buffer size matches"))
}

pub fn convolve_gray(img: &GrayImage, kernel: &Kernel) -> Result<GrayImage> {
    if kernel.width % 2 == 0 || kernel.height % 2 == 0 {
        return Err(Error::Validation("kernel dimensions must be odd".into()));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src: Vec<f32> = img.as_raw().iter().map(|&v| v as f32).collect();
    let mut out = vec![0.0f32; src.len()];
    convolve_region(&src, w, h, 1, kernel, (0, 0, w, h), &mut out);
    let data = out.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, data).expect("buffer size matches"))
}

fn noise_distribution(sigma: f64) -> Result<Normal<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("noise sigma must be >= 0, got {sigma}")));
    }
    Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))
}

/// Adds i.i.d. zero-mean Gaussian noise to every channel of every pixel.
pub fn add_gaussian_noise(img: &RgbImage, sigma: f64, rng: &mut impl Rng) -> Result<RgbImage> {
    let normal = noise_distribution(sigma)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut out = img.clone();
    for v in out.iter_mut() {
        *v = (*v as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// Blurs the synthetic color and coverage layers, adds noise where the blurred
/// coverage is positive and blends `out = a * synthetic + (1 - a) * background`.
///
/// Color is blurred premultiplied by coverage and divided back, so uncovered
/// (black) pixels do not darken the gate silhouettes.
pub fn blend_synthetic(
    background: &RgbImage,
    fb: &FrameBuffers,
    kernel: &Kernel,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<RgbImage> {
    let (w, h) = (background.width() as usize, background.height() as usize);
    if w != fb.width || h != fb.height {
        return Err(Error::Validation(format!(
            "background is {w}x{h} but the render is {}x{}",
            fb.width, fb.height
        )));
    }
    let normal = noise_distribution(sigma)?;
    let Some((bx0, by0, bx1, by1)) = fb.coverage_bounds() else {
        return Ok(background.clone());
    };
    let (rx, ry) = kernel.radius();
    let region = (
        bx0.saturating_sub(rx),
        by0.saturating_sub(ry),
        (bx1 + rx).min(w),
        (by1 + ry).min(h),
    );
    // premultiplied RGB + coverage, read window wide enough for the region's taps
    let (sx0, sy0) = (region.0.saturating_sub(rx), region.1.saturating_sub(ry));
    let (sx1, sy1) = ((region.2 + rx).min(w), (region.3 + ry).min(h));
    let mut layer = vec![0.0f32; w * h * 4];
    for y in sy0..sy1 {
        for x in sx0..sx1 {
            let i = y * w + x;
            let a = fb.coverage[i];
            if a > 0.0 {
                let c = fb.color[i];
                layer[i * 4..i * 4 + 4].copy_from_slice(&[
                    a * c[0] as f32,
                    a * c[1] as f32,
                    a * c[2] as f32,
                    a,
                ]);
            }
        }
    }
    let mut blurred = vec![0.0f32; w * h * 4];
    convolve_region(&layer, w, h, 4, kernel, region, &mut blurred);

    let mut out = background.clone();
    let buf: &mut [u8] = &mut out;
    for y in region.1..region.3 {
        for x in region.0..region.2 {
            let i = y * w + x;
            let a = blurred[i * 4 + 3];
            if a <= 1e-6 {
                continue;
            }
            let alpha = a.min(1.0) as f64;
            for c in 0..3 {
                let mut synth = (blurred[i * 4 + c] / a) as f64;
                if sigma > 0.0 {
                    synth += normal.sample(rng);
                }
                let synth = synth.clamp(0.0, 255.0);
                let bg = buf[i * 3 + c] as f64;
                buf[i * 3 + c] = (alpha * synth + (1.0 - alpha) * bg).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

/// Full compositing pipeline: score the background, pick a kernel, blur the
/// synthetic layer, add noise and blend.
pub fn composite(
    background: &RgbImage,
    fb: &FrameBuffers,
    policy: &BlurPolicy,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<RgbImage> {
    let score = blur_score_rgb(background)?;
    blend_synthetic(background, fb, &select_kernel(score, policy), sigma, rng)
}
