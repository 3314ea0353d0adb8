//! CPU rasterizer for the virtual gate scene.
//!
//! Pixel centers sit at `(i + 0.5, j + 0.5)` in buffer coordinates (window
//! coordinates minus the viewport offset). Shared edges follow the top-left fill
//! rule, depth is interpolated perspective-correctly and tested with a strict
//! less-than, so the first triangle drawn wins exact ties.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh::Rgb as Color;
use crate::scene::GateInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffers {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Color>,
    /// 1 where synthetic geometry was drawn, 0 elsewhere.
    pub coverage: Vec<f32>,
    /// Camera depth in meters, `f64::INFINITY` where empty.
    pub depth: Vec<f64>,
}

impl FrameBuffers {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![[0, 0, 0]; n],
            coverage: vec![0.0; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn covered_pixels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c > 0.0).count()
    }

    /// Tight pixel rectangle `(x_min, y_min, x_max_exclusive, y_max_exclusive)` of
    /// covered pixels.
    pub fn coverage_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            let row = &self.coverage[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&c| c > 0.0) else {
                continue;
            };
            let last = row.iter().rposition(|&c| c > 0.0).unwrap_or(first);
            b = Some(match b {
                None => (first, y, last + 1, y + 1),
                Some((x0, y0, x1, _)) => (x0.min(first), y0, x1.max(last + 1), y + 1),
            });
        }
        b
    }

    /// Writes `color.png`, `coverage.png` and `depth.png` (depth scaled to 0..255
    /// over `max_depth` meters) into `dir`.
    pub fn save_debug(&self, dir: &Path, max_depth: f64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (w, h) = (self.width as u32, self.height as u32);
        let color = RgbImage::from_fn(w, h, |x, y| Rgb(self.color[self.index(x as usize, y as usize)]));
        let coverage = GrayImage::from_fn(w, h, |x, y| {
            let c = self.coverage[self.index(x as usize, y as usize)];
            Luma([(c.clamp(0.0, 1.0) * 255.0).round() as u8])
        });
        let depth = GrayImage::from_fn(w, h, |x, y| {
            let d = self.depth[self.index(x as usize, y as usize)];
            let v = if d.is_finite() { 255.0 * (1.0 - (d / max_depth).clamp(0.0, 1.0)) } else { 0.0 };
            Luma([v.round() as u8])
        });
        for (name, res) in [
            ("color.png", color.save(dir.join("color.png"))),
            ("coverage.png", coverage.save(dir.join("coverage.png"))),
            ("depth.png", depth.save(dir.join("depth.png"))),
        ] {
            res.map_err(|source| Error::Image {
                path: dir.join(name),
                source,
            })?;
        }
        Ok(())
    }
}

/// A projected vertex: buffer coordinates plus positive camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl ScreenVertex {
    pub fn new(x: f64, y: f64, depth: f64) -> Self {
        Self { x, y, depth }
    }
}

#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

/// Top or left edge for the positive orientation used below (clockwise on a
/// y-down screen).
#[inline]
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Calls `f(x, y, depth)` for every pixel whose center the triangle covers.
pub(crate) fn for_each_covered(
    width: usize,
    height: usize,
    v0: ScreenVertex,
    v1: ScreenVertex,
    v2: ScreenVertex,
    mut f: impl FnMut(usize, usize, f64),
) {
    let (a, mut b, mut c) = (v0, v1, v2);
    let mut area = edge(&a, &b, c.x, c.y);
    if !area.is_finite() || area == 0.0 {
        return;
    }
    if area < 0.0 {
        std::mem::swap(&mut b, &mut c);
        area = -area;
    }
    let min_x = a.x.min(b.x).min(c.x);
    let max_x = a.x.max(b.x).max(c.x);
    let min_y = a.y.min(b.y).min(c.y);
    let max_y = a.y.max(b.y).max(c.y);
    if max_x < 0.5 || max_y < 0.5 || min_x > width as f64 - 0.5 || min_y > height as f64 - 0.5 {
        return;
    }
    let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
    let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
    let x1 = ((max_x - 0.5).floor() as i64).min(width as i64 - 1);
    let y1 = ((max_y - 0.5).floor() as i64).min(height as i64 - 1);
    if x1 < x0 as i64 || y1 < y0 as i64 {
        return;
    }
    let (x1, y1) = (x1 as usize, y1 as usize);

    // edge k is opposite vertex k
    let edges = [(b, c), (c, a), (a, b)];
    let bias = edges.map(|(p, q)| is_top_left(&p, &q));
    let inv_depth = [1.0 / a.depth, 1.0 / b.depth, 1.0 / c.depth];

    for y in y0..=y1 {
        let py = y as f64 + 0.5;
        for x in x0..=x1 {
            let px = x as f64 + 0.5;
            let mut w = [0.0; 3];
            let mut inside = true;
            for k in 0..3 {
                let (p, q) = edges[k];
                let e = edge(&p, &q, px, py);
                if e < 0.0 || (e == 0.0 && !bias[k]) {
                    inside = false;
                    break;
                }
                w[k] = e;
            }
            if !inside {
                continue;
            }
            let inv = (w[0] * inv_depth[0] + w[1] * inv_depth[1] + w[2] * inv_depth[2]) / area;
            f(x, y, 1.0 / inv);
        }
    }
}

/// Rasterizes one triangle with depth test; degenerate triangles are no-ops.
pub fn rasterize_triangle(
    buffers: &mut FrameBuffers,
    v0: ScreenVertex,
    v1: ScreenVertex,
    v2: ScreenVertex,
    color: Color,
) {
    let (w, h) = (buffers.width, buffers.height);
    for_each_covered(w, h, v0, v1, v2, |x, y, d| {
        let i = y * w + x;
        if d < buffers.depth[i] {
            buffers.depth[i] = d;
            buffers.color[i] = color;
            buffers.coverage[i] = 1.0;
        }
    });
}

/// Flat two-sided Lambert shading from one directional light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shading {
    /// Direction towards the light, world frame.
    pub light_dir: Vec3,
    pub ambient: f64,
}

impl Default for Shading {
    fn default() -> Self {
        Self {
            light_dir: Vec3::new(0.3, 0.4, 0.87).normalize(),
            ambient: 0.6,
        }
    }
}

impl Shading {
    pub fn factor(&self, normal: &Vec3) -> f64 {
        let n = normal.norm();
        let lambert = if n > 0.0 {
            (normal.dot(&self.light_dir) / n).abs()
        } else {
            0.0
        };
        self.ambient + (1.0 - self.ambient) * lambert
    }

    pub fn shade(&self, color: Color, normal: &Vec3) -> Color {
        let f = self.factor(normal).clamp(0.0, 1.0);
        color.map(|c| (c as f64 * f).round().clamp(0.0, 255.0) as u8)
    }
}

/// Clips an eye-space polygon to `z <= -near`.
fn clip_polygon_near(poly: &[Vec3], near: f64, out: &mut Vec<Vec3>) {
    out.clear();
    let inside = |p: &Vec3| -p.z >= near;
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
}

pub fn render_scene(cam: &CameraModel, gates: &[GateInstance]) -> Result<FrameBuffers> {
    render_scene_with(cam, gates, &Shading::default())
}

/// Transforms every gate mesh to the world, clips against the near plane and
/// rasterizes into fresh buffers sized to the viewport.
pub fn render_scene_with(
    cam: &CameraModel,
    gates: &[GateInstance],
    shading: &Shading,
) -> Result<FrameBuffers> {
    let vp = cam.viewport;
    let mut fb = FrameBuffers::new(vp.width as usize, vp.height as usize);
    let near = cam.intrinsics.near;
    let (ox, oy) = (vp.x as f64, vp.y as f64);
    let mut eye_verts = Vec::new();
    let mut world_verts = Vec::new();
    let mut clipped = Vec::with_capacity(4);

    for gate in gates {
        let pose = gate.pose();
        let mesh = &gate.spec.mesh;
        world_verts.clear();
        world_verts.extend(mesh.vertices.iter().map(|v| pose.apply_point(v)));
        eye_verts.clear();
        eye_verts.extend(world_verts.iter().map(|p| cam.world_to_eye(p)));

        for (face, &color) in mesh.faces.iter().zip(&mesh.face_colors) {
            let tri = face.map(|k| eye_verts[k]);
            if tri.iter().all(|p| -p.z < near) {
                continue;
            }
            let [a, b, c] = face.map(|k| world_verts[k]);
            let shaded = shading.shade(color, &(b - a).cross(&(c - a)));
            clip_polygon_near(&tri, near, &mut clipped);
            if clipped.len() < 3 {
                continue;
            }
            let screen: Vec<ScreenVertex> = clipped
                .iter()
                .map(|p| {
                    let (x, y) = cam.eye_to_window(p);
                    ScreenVertex::new(x - ox, y - oy, -p.z)
                })
                .collect();
            for k in 1..screen.len() - 1 {
                rasterize_triangle(&mut fb, screen[0], screen[k], screen[k + 1], shaded);
            }
        }
    }
    Ok(fb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RED: Color = [255, 0, 0];
    const BLUE: Color = [0, 0, 255];

    /// Independent point-in-triangle test via same-side half-planes.
    fn inside_oracle(p: (f64, f64), t: [(f64, f64); 3]) -> bool {
        let s = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let d = [s(t[0], t[1]), s(t[1], t[2]), s(t[2], t[0])];
        d.iter().all(|&x| x > 0.0) || d.iter().all(|&x| x < 0.0)
    }

    #[test]
    fn small_triangle_covers_expected_pixels() {
        let mut fb = FrameBuffers::new(32, 32);
        let t = [(9.6, 9.6), (11.4, 10.0), (10.0, 12.4)];
        rasterize_triangle(
            &mut fb,
            ScreenVertex::new(t[0].0, t[0].1, 2.0),
            ScreenVertex::new(t[1].0, t[1].1, 2.0),
            ScreenVertex::new(t[2].0, t[2].1, 2.0),
            RED,
        );
        let mut expected = Vec::new();
        for y in 0..32 {
            for x in 0..32 {
                if inside_oracle((x as f64 + 0.5, y as f64 + 0.5), t) {
                    expected.push((x, y));
                }
            }
        }
        assert_eq!(expected, vec![(10, 10), (10, 11)]);
        for y in 0..32 {
            for x in 0..32 {
                let i = fb.index(x, y);
                let on = expected.contains(&(x, y));
                assert_eq!(fb.coverage[i] == 1.0, on, "pixel {x},{y}");
                if on {
                    assert_eq!(fb.color[i], RED);
                }
            }
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        let mut fb = FrameBuffers::new(16, 16);
        let tri = |d| {
            [
                ScreenVertex::new(0.0, 0.0, d),
                ScreenVertex::new(16.0, 0.0, d),
                ScreenVertex::new(0.0, 16.0, d),
            ]
        };
        let [a, b, c] = tri(2.0);
        rasterize_triangle(&mut fb, a, b, c, RED);
        let [a, b, c] = tri(1.0);
        rasterize_triangle(&mut fb, a, b, c, BLUE);
        assert_eq!(fb.color[fb.index(2, 2)], BLUE);
        assert_eq!(fb.depth[fb.index(2, 2)], 1.0);
        // and in the other order
        let mut fb2 = FrameBuffers::new(16, 16);
        rasterize_triangle(&mut fb2, a, b, c, BLUE);
        let [a, b, c] = tri(2.0);
        rasterize_triangle(&mut fb2, a, b, c, RED);
        assert_eq!(fb2.color[fb2.index(2, 2)], BLUE);
    }

    #[test]
    fn degenerate_triangle_is_noop() {
        let mut fb = FrameBuffers::new(8, 8);
        let v = ScreenVertex::new(1.0, 1.0, 1.0);
        rasterize_triangle(&mut fb, v, ScreenVertex::new(5.0, 5.0, 1.0), ScreenVertex::new(3.0, 3.0, 1.0), RED);
        rasterize_triangle(&mut fb, v, v, v, RED);
        assert_eq!(fb, FrameBuffers::new(8, 8));
    }

    #[test]
    fn depth_is_perspective_correct() {
        // a plane tilted in depth: 1/depth must be affine in screen space
        let mut fb = FrameBuffers::new(10, 10);
        rasterize_triangle(
            &mut fb,
            ScreenVertex::new(0.0, 0.0, 1.0),
            ScreenVertex::new(10.0, 0.0, 4.0),
            ScreenVertex::new(0.0, 10.0, 1.0),
            RED,
        );
        let d = fb.depth[fb.index(4, 2)];
        let t: f64 = 4.5 / 10.0;
        let expected = 1.0 / ((1.0 - t) * 1.0 + t / 4.0);
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn coverage_bounds_of_block() {
        let mut fb = FrameBuffers::new(20, 20);
        rasterize_triangle(&mut fb, ScreenVertex::new(3.0, 4.0, 1.0), ScreenVertex::new(9.0, 4.0, 1.0), ScreenVertex::new(3.0, 10.0, 1.0), RED);
        // hypotenuse x + y = 13 is a bottom-right edge, so centers on it are excluded
        assert_eq!(fb.coverage_bounds(), Some((3, 4, 8, 9)));
        assert_eq!(FrameBuffers::new(4, 4).coverage_bounds(), None);
    }

    proptest! {
        /// A convex quad split along either diagonal covers every pixel center
        /// exactly once (top-left rule on the shared edge).
        #[test]
        fn shared_edges_are_drawn_once(
            pts in prop::collection::vec((0.0f64..24.0, 0.0f64..24.0), 4),
            snap in any::<bool>(),
        ) {
            let mut p: Vec<(f64, f64)> = pts;
            if snap {
                for q in &mut p { q.0 = q.0.round(); q.1 = q.1.round(); }
            }
            // build a convex quad from the hull order around the centroid
            let cx = p.iter().map(|q| q.0).sum::<f64>() / 4.0;
            let cy = p.iter().map(|q| q.1).sum::<f64>() / 4.0;
            p.sort_by(|a, b| (a.1 - cy).atan2(a.0 - cx).partial_cmp(&(b.1 - cy).atan2(b.0 - cx)).unwrap());
            let v: Vec<ScreenVertex> = p.iter().map(|q| ScreenVertex::new(q.0, q.1, 1.0)).collect();
            let mut counts = vec![0u32; 24 * 24];
            for_each_covered(24, 24, v[0], v[1], v[2], |x, y, _| counts[y * 24 + x] += 1);
            for_each_covered(24, 24, v[0], v[2], v[3], |x, y, _| counts[y * 24 + x] += 1);
            let convex = {
                let cross = |a: &ScreenVertex, b: &ScreenVertex, c: &ScreenVertex| (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                let s: Vec<f64> = (0..4).map(|i| cross(&v[i], &v[(i + 1) % 4], &v[(i + 2) % 4])).collect();
                s.iter().all(|&x| x > 0.0) || s.iter().all(|&x| x < 0.0)
            };
            if convex {
                prop_assert!(counts.iter().all(|&c| c <= 1));
                for y in 0..24 {
                    for x in 0..24 {
                        let c = (x as f64 + 0.5, y as f64 + 0.5);
                        let in1 = inside_oracle(c, [p[0], p[1], p[2]]);
                        let in2 = inside_oracle(c, [p[0], p[2], p[3]]);
                        if in1 || in2 {
                            prop_assert_eq!(counts[y * 24 + x], 1);
                        }
                    }
                }
            }
        }
    }
}
