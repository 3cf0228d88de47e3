//! Seeded ground-truth generators: a skull-like labelled surface, its stereo
//! pair and disparity, posed registration frames, step-height logs and a
//! bowl-distorted calibration plane.
//!
//! The surface is analytic in the model frame. Depth grows away from the
//! camera, so the dome's apex has the smallest `z`. Scene poses are limited to
//! rotations about the viewing axis plus translations, which keeps every
//! pixel's model-frame footprint independent of depth.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{average_readings, StepReading, StepSample};
use crate::imaging::{DisparityMap, RgbImage};
use crate::labeling::{LabelMask, ModelAnnotation};
use crate::projection::{CalibrationParams, CloudPoint, LabeledCloud, OpticalConfig};
use crate::transform::RigidTransform;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("disparity {disparity:.2} px does not fit an image {width} px wide")]
    DisparityExceedsWidth { disparity: f64, width: usize },
    #[error("scene poses must rotate about the viewing axis only")]
    UnsupportedPose,
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
}

/// Number of classes in generated masks: undefined plus six features.
pub const SCENE_CLASSES: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkullParams {
    pub width: usize,
    pub height: usize,
    /// Object-space pixel size, mm/px.
    pub pixel_mm: f64,
    pub h_rho: f64,
    pub d_e: f64,
    /// Depth of the dome's base beyond `d_e`, mm.
    pub standoff: f64,
    pub dome_amplitude: f64,
    pub dome_sigma: f64,
    pub bump_count: usize,
    pub bump_amplitude: f64,
    pub suture_width: f64,
    pub ridge_height: f64,
    /// Minimum luminance range inside every 8x8 texture block.
    pub contrast_floor: u8,
}

impl Default for SkullParams {
    fn default() -> Self {
        Self {
            width: 960,
            height: 540,
            pixel_mm: 0.0433,
            h_rho: 6.0,
            d_e: 500.0,
            standoff: 7.5,
            dome_amplitude: 6.0,
            dome_sigma: 12.0,
            bump_count: 5,
            bump_amplitude: 0.5,
            suture_width: 1.2,
            ridge_height: 0.15,
            contrast_floor: 30,
        }
    }
}

impl SkullParams {
    /// Same field of view at half resolution; used for registration frames.
    pub fn registration() -> Self {
        Self {
            width: 480,
            height: 270,
            pixel_mm: 0.0866,
            ..Self::default()
        }
    }

    /// The dome alone: no bumps and sutures without relief, so the features
    /// exist only as labels.
    pub fn smooth(self) -> Self {
        Self {
            bump_amplitude: 0.0,
            ridge_height: 0.0,
            ..self
        }
    }

    pub fn calib(&self) -> CalibrationParams {
        CalibrationParams {
            h_rho: self.h_rho,
            p_rho_x: self.pixel_mm,
            p_rho_y: self.pixel_mm,
            c_x: self.width as f64 / 2.0,
            c_y: self.height as f64 / 2.0,
            d_e: self.d_e,
            optical: OpticalConfig::default(),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.width < 16 || self.height < 16 {
            return Err(SynthError::InvalidParams("image smaller than 16x16".into()));
        }
        if !(self.pixel_mm > 0.0 && self.h_rho > 0.0 && self.dome_sigma > 0.0 && self.suture_width > 0.0) {
            return Err(SynthError::InvalidParams("scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub angle: f64,
}

impl Patch {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        (u / self.radii[0]).powi(2) + (v / self.radii[1]).powi(2) <= 1.0
    }
}

/// Analytic skull-like surface in the model frame (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkullGeometry {
    pub dome_amplitude: f64,
    pub dome_sigma: f64,
    pub bumps: Vec<Bump>,
    /// Four polylines meeting at a common junction; classes 1 to 4.
    pub sutures: Vec<Vec<[f64; 2]>>,
    pub suture_halfwidth: f64,
    pub ridge_height: f64,
    /// Two elliptical areas; classes 5 and 6.
    pub patches: Vec<Patch>,
}

impl SkullGeometry {
    pub fn random(rng: &mut ChaCha8Rng, p: &SkullParams) -> Self {
        let bumps = (0..p.bump_count)
            .map(|_| Bump {
                center: [rng.random_range(-15.0..15.0), rng.random_range(-10.0..10.0)],
                sigma: rng.random_range(3.0..6.0),
                amplitude: rng.random_range(-1.0..1.0) * p.bump_amplitude,
            })
            .collect();
        let junction = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        // left, right, down and up arms (image y grows downward)
        let arms = [(180.0f64, 13.0), (0.0, 13.0), (90.0, 6.5), (270.0, 6.0)];
        let sutures = arms
            .iter()
            .map(|&(deg, len)| {
                let th = (deg + rng.random_range(-8.0..8.0)).to_radians();
                let bend = rng.random_range(-0.15..0.15);
                let (u, n) = ([th.cos(), th.sin()], [-th.sin(), th.cos()]);
                (0..=24)
                    .map(|k| {
                        let s = k as f64 / 24.0;
                        let off = bend * s * (1.0 - s) * len;
                        [
                            junction[0] + s * len * u[0] + off * n[0],
                            junction[1] + s * len * u[1] + off * n[1],
                        ]
                    })
                    .collect()
            })
            .collect();
        let patches = [225.0f64, 315.0]
            .iter()
            .map(|&deg| {
                let th = (deg + rng.random_range(-10.0..10.0)).to_radians();
                let r = rng.random_range(5.0..6.0);
                Patch {
                    center: [junction[0] + r * th.cos(), junction[1] + r * th.sin()],
                    radii: [rng.random_range(3.0..4.0), rng.random_range(2.0..2.8)],
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                }
            })
            .collect();
        Self {
            dome_amplitude: p.dome_amplitude,
            dome_sigma: p.dome_sigma,
            bumps,
            sutures,
            suture_halfwidth: p.suture_width / 2.0,
            ridge_height: p.ridge_height,
            patches,
        }
    }

    /// Nearest suture and the distance to it.
    pub fn suture_distance(&self, x: f64, y: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, line) in self.sutures.iter().enumerate() {
            for seg in line.windows(2) {
                let d = segment_distance([x, y], seg[0], seg[1]);
                if d < best.1 {
                    best = (i, d);
                }
            }
        }
        best
    }

    /// Model-frame depth of the surface; smaller is closer to the camera.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        let mut z = -self.dome_amplitude * (-r2 / (2.0 * self.dome_sigma.powi(2))).exp();
        for b in &self.bumps {
            let d2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
            z -= b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        let (_, d) = self.suture_distance(x, y);
        z - self.ridge_height * (-d * d / (2.0 * self.suture_halfwidth.powi(2))).exp()
    }

    /// Feature class at a model-frame location; sutures take precedence.
    pub fn label(&self, x: f64, y: f64) -> u8 {
        let (i, d) = self.suture_distance(x, y);
        if d <= self.suture_halfwidth {
            return 1 + i as u8;
        }
        self.patches
            .iter()
            .position(|p| p.contains(x, y))
            .map_or(0, |j| 5 + j as u8)
    }

    /// Unit surface normal facing the camera, by central differences.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let e = 1e-4;
        let gx = (self.height(x + e, y) - self.height(x - e, y)) / (2.0 * e);
        let gy = (self.height(x, y + e) - self.height(x, y - e)) / (2.0 * e);
        Vector3::new(gx, gy, -1.0).normalize()
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * abx).powi(2) + (p[1] - a[1] - t * aby).powi(2)).sqrt()
}

/// Per-pixel rasters of the surface seen through the linear camera model.
struct Raster {
    depth: Vec<f64>,
    disparity: Vec<f64>,
    labels: Vec<u8>,
}

fn check_pose(pose: &RigidTransform) -> Result<(), SynthError> {
    let r = &pose.rotation;
    if r[(2, 0)].abs() > 1e-12 || r[(2, 1)].abs() > 1e-12 || (r[(2, 2)] - 1.0).abs() > 1e-12 {
        return Err(SynthError::UnsupportedPose);
    }
    Ok(())
}

/// Rasterizes columns `x0 .. x0 + width` (may extend past the image).
fn rasterize(
    geom: &SkullGeometry,
    calib: &CalibrationParams,
    pose: &RigidTransform,
    x0: isize,
    width: usize,
    height: usize,
) -> Raster {
    let inv = pose.inverse();
    let n = width * height;
    let mut r = Raster {
        depth: vec![0.0; n],
        disparity: vec![0.0; n],
        labels: vec![0; n],
    };
    for y in 0..height {
        for x in 0..width {
            let px = (x as isize + x0) as f64;
            let cam = Point3::new(
                (px - calib.c_x) * calib.p_rho_x,
                (y as f64 - calib.c_y) * calib.p_rho_y,
                0.0,
            );
            let m = inv.apply(&cam);
            let z = geom.height(m.x, m.y) + pose.translation.z;
            let i = y * width + x;
            r.depth[i] = z;
            r.disparity[i] = calib.h_rho * (z - calib.d_e);
            r.labels[i] = geom.label(m.x, m.y);
        }
    }
    r
}

/// Seeded value noise with three octaves and a per-block contrast floor.
pub fn value_noise_texture(width: usize, height: usize, floor: u8, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves = [(4usize, 0.5f64), (8, 0.3), (16, 0.2)];
    let lattices: Vec<(usize, usize, Vec<f64>)> = octaves
        .iter()
        .map(|&(cell, _)| {
            let (gw, gh) = (width / cell + 2, height / cell + 2);
            let v = (0..gw * gh * 3).map(|_| rng.random::<f64>()).collect();
            (gw, gh, v)
        })
        .collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut data = vec![0u8; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            for ch in 0..3 {
                let mut v = 0.0;
                for (&(cell, w), (gw, _, lat)) in octaves.iter().zip(&lattices) {
                    let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
                    let (ix, iy) = (fx as usize, fy as usize);
                    let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
                    let at = |gx: usize, gy: usize| lat[(gy * gw + gx) * 3 + ch];
                    let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                    let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                    v += w * (top * (1.0 - ty) + bot * ty);
                }
                let stretched = 128.0 + (v - 0.5) * 2.5 * 255.0;
                data[(y * width + x) * 3 + ch] = stretched.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    enforce_contrast_floor(&mut data, width, height, floor);
    RgbImage::new(width, height, data).expect("buffer sized above")
}

fn luma(p: &[u8]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

fn enforce_contrast_floor(data: &mut [u8], width: usize, height: usize, floor: u8) {
    for by in (0..height).step_by(8) {
        for bx in (0..width).step_by(8) {
            let pix: Vec<usize> = (by..(by + 8).min(height))
                .flat_map(|y| (bx..(bx + 8).min(width)).map(move |x| y * width + x))
                .collect();
            let lum: Vec<f64> = pix.iter().map(|&i| luma(&data[i * 3..i * 3 + 3])).collect();
            let (lo, hi) = lum
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if hi - lo >= floor as f64 + 1.0 {
                continue;
            }
            if hi - lo < 1.0 {
                // flat block: impose a checker of the floor amplitude
                for (k, &i) in pix.iter().enumerate() {
                    let sign = if (k + k / 8) % 2 == 0 { 1.0 } else { -1.0 };
                    for ch in 0..3 {
                        let v = data[i * 3 + ch] as f64 + sign * (floor as f64 / 2.0 + 1.0);
                        data[i * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
                continue;
            }
            let mean = lum.iter().sum::<f64>() / lum.len() as f64;
            let gain = (floor as f64 + 2.0) / (hi - lo);
            let base = mean.clamp(floor as f64, 255.0 - floor as f64);
            for &i in &pix {
                for ch in 0..3 {
                    let v = base + (data[i * 3 + ch] as f64 - mean) * gain;
                    data[i * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

/// Luminance range of the 8x8 block containing each block origin.
pub fn block_contrast(img: &RgbImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::new();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in by..(by + 8).min(h) {
                for x in bx..(bx + 8).min(w) {
                    let l = luma(&img.pixel(x, y));
                    lo = lo.min(l);
                    hi = hi.max(l);
                }
            }
            out.push(hi - lo);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub params: SkullParams,
    pub geometry: SkullGeometry,
    pub calib: CalibrationParams,
    /// Model-to-camera.
    pub pose: RigidTransform,
    /// Camera-frame depth per pixel, mm.
    pub depth: Vec<f64>,
    pub texture: RgbImage,
    pub labels: LabelMask,
    pub disparity: DisparityMap,
    /// Columns rendered left of the image for the right view.
    margin_left: usize,
    ext_texture: RgbImage,
    ext_disparity: Vec<f64>,
}

fn base_pose(p: &SkullParams) -> RigidTransform {
    RigidTransform::from_inplane(0.0, Vector3::new(0.0, 0.0, p.d_e + p.standoff))
}

/// Generates the labelled surface at its base pose, textured and with its
/// exact disparity.
pub fn make_skull_surface(seed: u64, params: &SkullParams) -> Result<SyntheticScene, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = SkullGeometry::random(&mut rng, params);
    render_scene(seed, params, geometry, base_pose(params))
}

fn render_scene(
    seed: u64,
    params: &SkullParams,
    geometry: SkullGeometry,
    pose: RigidTransform,
) -> Result<SyntheticScene, SynthError> {
    check_pose(&pose)?;
    let calib = params.calib();
    let (w, h) = (params.width, params.height);
    let inner = rasterize(&geometry, &calib, &pose, 0, w, h);
    let (dmin, dmax) = inner
        .disparity
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for d in [dmin, dmax] {
        if d.abs() + 2.0 >= w as f64 {
            return Err(SynthError::DisparityExceedsWidth { disparity: d, width: w });
        }
    }
    let margin_left = (-dmin).max(0.0).ceil() as usize + 4;
    let margin_right = dmax.max(0.0).ceil() as usize + 4;
    let ext_w = w + margin_left + margin_right;
    let ext = rasterize(&geometry, &calib, &pose, -(margin_left as isize), ext_w, h);
    let ext_texture = value_noise_texture(ext_w, h, params.contrast_floor, seed ^ 0x7e57_u64);
    let mut tex = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &ext_texture.data()[(y * ext_w + margin_left) * 3..(y * ext_w + margin_left + w) * 3];
        tex.extend_from_slice(row);
    }
    Ok(SyntheticScene {
        seed,
        params: *params,
        geometry,
        calib,
        pose,
        depth: inner.depth,
        texture: RgbImage::new(w, h, tex).expect("sized"),
        labels: LabelMask::new(w, h, SCENE_CLASSES, inner.labels).expect("classes < 7"),
        disparity: DisparityMap::new(w, h, inner.disparity).expect("sized"),
        margin_left,
        ext_texture,
        ext_disparity: ext.disparity,
    })
}

#[derive(Debug, Clone)]
pub struct StereoPair {
    pub left: RgbImage,
    pub right: RgbImage,
    /// Left pixels whose scene point is visible in the right view.
    pub visible: Vec<bool>,
}

/// Left view is the texture. The right view takes, at each column `x_r`,
/// the left row linearly interpolated at the `x_l` solving
/// `x_l - d(x_l) = x_r`, nearest surface first.
pub fn render_stereo(scene: &SyntheticScene) -> Result<StereoPair, SynthError> {
    let (w, h) = (scene.params.width, scene.params.height);
    let ext_w = scene.ext_texture.width();
    let ml = scene.margin_left as f64;
    let mut right = vec![0u8; w * h * 3];
    let mut visible = vec![false; w * h];
    for y in 0..h {
        let d = &scene.ext_disparity[y * ext_w..(y + 1) * ext_w];
        // right-image column of each extended left column
        let xr: Vec<f64> = (0..ext_w).map(|x| x as f64 - ml - d[x]).collect();
        let mut filled = vec![false; w];
        for x in 0..ext_w - 1 {
            let (a, b) = (xr[x], xr[x + 1]);
            if b <= a {
                continue;
            }
            let lo = a.ceil().max(0.0) as usize;
            let hi = b.floor().min(w as f64 - 1.0);
            if hi < 0.0 {
                continue;
            }
            for c in lo..=hi as usize {
                if filled[c] {
                    continue;
                }
                filled[c] = true;
                let t = (c as f64 - a) / (b - a);
                for ch in 0..3 {
                    let p0 = scene.ext_texture.data()[(y * ext_w + x) * 3 + ch] as f64;
                    let p1 = scene.ext_texture.data()[(y * ext_w + x + 1) * 3 + ch] as f64;
                    right[(y * w + c) * 3 + ch] = (p0 + (p1 - p0) * t).round() as u8;
                }
            }
        }
        // occluded: an earlier column maps at or beyond this one
        let mut run_max = f64::NEG_INFINITY;
        for x in 0..ext_w {
            let occluded = run_max > xr[x];
            run_max = run_max.max(xr[x]);
            let col = x as isize - scene.margin_left as isize;
            if (0..w as isize).contains(&col) {
                let inside = xr[x] >= 0.0 && xr[x] <= (w - 1) as f64;
                visible[y * w + col as usize] = inside && !occluded;
            }
        }
    }
    Ok(StereoPair {
        left: scene.texture.clone(),
        right: RgbImage::new(w, h, right).expect("sized"),
        visible,
    })
}

impl SyntheticScene {
    /// Re-renders the scene after moving the model by `delta` (model frame).
    pub fn moved(&self, delta: &RigidTransform) -> Result<SyntheticScene, SynthError> {
        render_scene(self.seed, &self.params, self.geometry.clone(), self.pose.compose(delta))
    }

    /// The colourless model: the surface sampled on its own grid in the model
    /// frame, with the feature class of each sample as its annotation.
    pub fn model_cloud(&self, spacing: f64) -> (LabeledCloud, ModelAnnotation) {
        let half_w = self.params.width as f64 * self.params.pixel_mm / 2.0 + 4.0;
        let half_h = self.params.height as f64 * self.params.pixel_mm / 2.0 + 4.0;
        let (nx, ny) = ((2.0 * half_w / spacing) as usize, (2.0 * half_h / spacing) as usize);
        let mut points = Vec::with_capacity(nx * ny);
        let mut classes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = (
                    -half_w + (i as f64 + 0.5) * spacing,
                    -half_h + (j as f64 + 0.5) * spacing,
                );
                points.push(CloudPoint::new(
                    Point3::new(x, y, self.geometry.height(x, y)),
                    [160, 160, 160],
                    None,
                ));
                let c = self.geometry.label(x, y);
                classes.push((c != 0).then_some(c));
            }
        }
        (LabeledCloud::new(points), ModelAnnotation { classes })
    }

    /// Camera-frame points of the height raster, for closure checks.
    pub fn height_field_point(&self, x: usize, y: usize) -> Point3<f64> {
        let c = &self.calib;
        Point3::new(
            (x as f64 - c.c_x) * c.p_rho_x,
            (y as f64 - c.c_y) * c.p_rho_y,
            self.depth[y * self.params.width + x],
        )
    }
}

/// A registration frame rendered at a perturbed pose.
#[derive(Debug, Clone)]
pub struct PosedFrame {
    pub disparity: DisparityMap,
    pub rgb: RgbImage,
    pub mask: LabelMask,
    /// Applied perturbation, in the model frame.
    pub delta: RigidTransform,
    /// Model-to-camera pose of the frame; the registration target.
    pub truth: RigidTransform,
}

/// Moves the model by `delta`, renders the frame, adds Gaussian depth noise of
/// `noise_mm` and reassigns `mislabel` of the feature pixels to a different
/// feature class.
pub fn perturb_pose(
    scene: &SyntheticScene,
    delta: &RigidTransform,
    noise_mm: f64,
    mislabel: f64,
    seed: u64,
) -> Result<PosedFrame, SynthError> {
    if !(0.0..=1.0).contains(&mislabel) || !(noise_mm >= 0.0) {
        return Err(SynthError::InvalidParams("noise >= 0 and mislabel in [0, 1]".into()));
    }
    let truth = scene.pose.compose(delta);
    check_pose(&truth)?;
    let p = &scene.params;
    let r = rasterize(&scene.geometry, &scene.calib, &truth, 0, p.width, p.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_mm * p.h_rho).expect("finite sigma");
    let disparity: Vec<f64> = r
        .disparity
        .iter()
        .map(|d| if noise_mm > 0.0 { d + normal.sample(&mut rng) } else { *d })
        .collect();
    let mut labels = r.labels;
    if mislabel > 0.0 {
        for l in labels.iter_mut().filter(|l| **l != 0) {
            if rng.random::<f64>() < mislabel {
                let other = rng.random_range(1..SCENE_CLASSES - 1);
                *l = if other >= *l { other + 1 } else { other };
            }
        }
    }
    Ok(PosedFrame {
        disparity: DisparityMap::new(p.width, p.height, disparity).expect("sized"),
        rgb: value_noise_texture(p.width, p.height, p.contrast_floor, seed ^ 0x7e57),
        mask: LabelMask::new(p.width, p.height, SCENE_CLASSES, labels).expect("classes < 7"),
        delta: *delta,
        truth,
    })
}

/// Uniform in-plane perturbation: angle within `max_angle` radians, lateral
/// shift within a disc of `max_shift` mm and depth shift within `max_dz` mm.
pub fn random_inplane_delta(rng: &mut ChaCha8Rng, max_shift: f64, max_angle: f64, max_dz: f64) -> RigidTransform {
    let angle = rng.random_range(-max_angle..=max_angle);
    let r = max_shift * rng.random::<f64>().sqrt();
    let th = rng.random_range(0.0..std::f64::consts::TAU);
    let dz = rng.random_range(-max_dz..=max_dz);
    RigidTransform::from_inplane(angle, Vector3::new(r * th.cos(), r * th.sin(), dz))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLogParams {
    pub h_rho: f64,
    pub d_e: f64,
    pub steps: usize,
    /// mm
    pub increment: f64,
    /// Disparity noise per reading, px.
    pub noise_px: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPreset {
    /// 21 stage positions 0.50 mm apart, ten readings each.
    StepHeightPaper,
    /// 21 stage positions 0.05 mm apart spanning 0 to 1 mm.
    ResolutionPaper,
}

impl StepPreset {
    /// Noise equivalent to 0.05 mm of depth per reading. The stage zero sits
    /// 2 mm into the depth of field, hence `d_e = -2`.
    pub fn params(self) -> StepLogParams {
        let h_rho = 6.0;
        let increment = match self {
            StepPreset::StepHeightPaper => 0.5,
            StepPreset::ResolutionPaper => 0.05,
        };
        StepLogParams {
            h_rho,
            d_e: -2.0,
            steps: 21,
            increment,
            noise_px: 0.05 * h_rho,
            repeats: 10,
        }
    }
}

/// Raw readings of a step-height run: `h = h_rho (z - d_e) + noise`.
pub fn make_step_readings(p: &StepLogParams, seed: u64) -> Result<Vec<StepReading>, SynthError> {
    if p.steps < 3 || p.repeats == 0 {
        return Err(SynthError::InvalidParams("need >= 3 steps and >= 1 repeat".into()));
    }
    if !(p.noise_px >= 0.0) {
        return Err(SynthError::InvalidParams("noise must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, p.noise_px).expect("finite sigma");
    let mut out = Vec::with_capacity(p.steps * p.repeats);
    for i in 0..p.steps {
        let z = i as f64 * p.increment;
        for _ in 0..p.repeats {
            let noise = if p.noise_px > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            out.push(StepReading {
                z_true_mm: z,
                h_px: p.h_rho * (z - p.d_e) + noise,
            });
        }
    }
    Ok(out)
}

pub fn make_step_log(p: &StepLogParams, seed: u64) -> Result<Vec<StepSample>, SynthError> {
    Ok(average_readings(&make_step_readings(p, seed)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowlPlaneParams {
    pub width: usize,
    pub height: usize,
    pub pixel_mm: f64,
    pub h_rho: f64,
    pub d_e: f64,
    /// Depth of the target beyond `d_e` at the image centre, mm.
    pub offset: f64,
    /// Target tilt, mm of depth per mm of x and y.
    pub tilt: [f64; 2],
    /// Depth excess at the left and right image borders, mm.
    pub bowl_amplitude: f64,
    pub noise_mm: f64,
}

impl Default for BowlPlaneParams {
    fn default() -> Self {
        Self {
            width: 240,
            height: 160,
            pixel_mm: 0.0433,
            h_rho: 6.0,
            d_e: 500.0,
            offset: 3.0,
            tilt: [0.02, -0.01],
            bowl_amplitude: 1.0,
            noise_mm: 0.01,
        }
    }
}

impl BowlPlaneParams {
    pub fn calib(&self) -> CalibrationParams {
        CalibrationParams {
            h_rho: self.h_rho,
            p_rho_x: self.pixel_mm,
            p_rho_y: self.pixel_mm,
            c_x: self.width as f64 / 2.0,
            c_y: self.height as f64 / 2.0,
            d_e: self.d_e,
            optical: OpticalConfig::default(),
        }
    }

    /// Column-wise depth excess of the bowl, mm.
    pub fn bowl(&self, column: usize) -> f64 {
        let t = (column as f64 - self.width as f64 / 2.0) / (self.width as f64 / 2.0);
        self.bowl_amplitude * t * t
    }
}

/// Disparity of a flat tilted target seen through a bowl-shaped column
/// distortion, with Gaussian depth noise.
pub fn make_bowl_plane(p: &BowlPlaneParams, seed: u64) -> DisparityMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, p.noise_mm.max(0.0)).expect("finite sigma");
    let c = p.calib();
    let mut v = Vec::with_capacity(p.width * p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let (mx, my) = ((x as f64 - c.c_x) * c.p_rho_x, (y as f64 - c.c_y) * c.p_rho_y);
            let noise = if p.noise_mm > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let dz = p.offset + p.tilt[0] * mx + p.tilt[1] * my + p.bowl(x) + noise;
            v.push(p.h_rho * dz);
        }
    }
    DisparityMap::new(p.width, p.height, v).expect("sized")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveConfig {
    pub d_e: f64,
    /// Half convergence angle, radians.
    pub phi: f64,
    pub baseline: f64,
    pub dx_max: f64,
    pub dz_max: f64,
}

impl Default for PerspectiveConfig {
    fn default() -> Self {
        Self {
            d_e: 500.0,
            phi: 7f64.to_radians(),
            baseline: 135.0,
            dx_max: 20.8,
            dz_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerspectiveReport {
    /// `d_e cos(phi) + (B / 2) sin(phi)`
    pub dominant: f64,
    /// `|dx_max| sin(phi) + |dz_max| cos(phi)`
    pub minor: f64,
    /// Largest relative gap between the perspective projection of the left
    /// view and its constant-depth (linear) approximation over the volume.
    pub max_relative_deviation: f64,
}

/// Compares the left-view perspective projection against the linear model's
/// constant-scale approximation over `|dx| <= dx_max`, `0 <= dz <= dz_max`.
pub fn perspective_check(cfg: &PerspectiveConfig) -> PerspectiveReport {
    let (s, c) = cfg.phi.sin_cos();
    let dominant = cfg.d_e * c + cfg.baseline / 2.0 * s;
    let minor = cfg.dx_max.abs() * s + cfg.dz_max.abs() * c;
    let mut worst: f64 = 0.0;
    let n = 200;
    for i in 0..=n {
        let dx = -cfg.dx_max + 2.0 * cfg.dx_max * i as f64 / n as f64;
        for j in 0..=n {
            let dz = cfg.dz_max * j as f64 / n as f64;
            let z_l = (dx + cfg.baseline / 2.0) * s + (cfg.d_e + dz) * c;
            let x_l = (dx + cfg.baseline / 2.0) * c - (cfg.d_e + dz) * s;
            // unit focal length: perspective divides by z_l, the linear model by the constant
            let persp = x_l / z_l;
            let linear = x_l / dominant;
            if persp != 0.0 {
                worst = worst.max(((linear - persp) / persp).abs());
            }
            worst = worst.max((z_l / dominant - 1.0).abs());
        }
    }
    PerspectiveReport {
        dominant,
        minor,
        max_relative_deviation: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SkullParams {
        SkullParams {
            width: 240,
            height: 136,
            pixel_mm: 0.173,
            ..SkullParams::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = make_skull_surface(3, &small()).unwrap();
        let b = make_skull_surface(3, &small()).unwrap();
        assert_eq!(a.texture, b.texture);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.disparity, b.disparity);
        let c = make_skull_surface(4, &small()).unwrap();
        assert_ne!(a.texture, c.texture);
    }

    #[test]
    fn six_feature_classes_and_undefined() {
        for seed in 0..5 {
            let s = make_skull_surface(seed, &small()).unwrap();
            let mut seen = [false; 7];
            for &c in s.labels.ids() {
                seen[c as usize] = true;
            }
            assert!(seen.iter().all(|&v| v), "seed {seed}: {seen:?}");
        }
    }

    #[test]
    fn orientation_information_present() {
        let s = make_skull_surface(1, &small()).unwrap();
        let p = &s.params;
        let (hw, hh) = (p.width as f64 * p.pixel_mm / 2.0, p.height as f64 * p.pixel_mm / 2.0);
        let normals: Vec<Vector3<f64>> = (0..40)
            .flat_map(|i| (0..24).map(move |j| (i, j)))
            .map(|(i, j)| {
                s.geometry.normal(-hw + 2.0 * hw * i as f64 / 39.0, -hh + 2.0 * hh * j as f64 / 23.0)
            })
            .collect();
        let mut widest: f64 = 0.0;
        for a in &normals {
            for b in &normals {
                widest = widest.max(a.dot(b).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        assert!(widest >= 20.0, "{widest}");
    }

    #[test]
    fn contrast_floor_holds() {
        let t = value_noise_texture(200, 120, 30, 9);
        assert!(block_contrast(&t).iter().all(|&c| c >= 30.0));
    }

    #[test]
    fn flat_scene_right_is_uniform_shift() {
        let mut p = small();
        p.dome_amplitude = 0.0;
        p.bump_amplitude = 0.0;
        p.ridge_height = 0.0;
        let s = make_skull_surface(2, &p).unwrap();
        let h0 = s.disparity.values()[0];
        assert!(s.disparity.values().iter().all(|&d| d == h0));
        let pair = render_stereo(&s).unwrap();
        let shift = h0.round() as usize;
        assert!((h0 - shift as f64).abs() < 1e-9, "integer disparity expected, got {h0}");
        for y in 0..p.height {
            for x in shift..p.width {
                assert_eq!(pair.right.pixel(x - shift, y), pair.left.pixel(x, y));
                assert!(pair.visible[y * p.width + x]);
            }
            assert!(!pair.visible[y * p.width]);
        }
    }

    #[test]
    fn unsupported_pose_rejected() {
        let s = make_skull_surface(0, &small()).unwrap();
        let tilt = RigidTransform::exp(&nalgebra::Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(perturb_pose(&s, &tilt, 0.0, 0.0, 1).unwrap_err(), SynthError::UnsupportedPose);
    }

    #[test]
    fn perturbation_with_identity_reproduces_scene() {
        let s = make_skull_surface(0, &small()).unwrap();
        let f = perturb_pose(&s, &RigidTransform::identity(), 0.0, 0.0, 1).unwrap();
        assert_eq!(f.disparity, s.disparity);
        assert_eq!(f.mask, s.labels);
        assert_eq!(f.truth, s.pose);
    }

    #[test]
    fn mislabel_fraction_is_respected() {
        let s = make_skull_surface(0, &small()).unwrap();
        let f = perturb_pose(&s, &RigidTransform::identity(), 0.0, 0.1, 5).unwrap();
        let feature: Vec<(u8, u8)> = s
            .labels
            .ids()
            .iter()
            .zip(f.mask.ids())
            .filter(|(a, _)| **a != 0)
            .map(|(a, b)| (*a, *b))
            .collect();
        let flipped = feature.iter().filter(|(a, b)| a != b).count() as f64 / feature.len() as f64;
        assert!((flipped - 0.1).abs() < 0.02, "{flipped}");
        assert!(feature.iter().all(|(_, b)| *b != 0));
    }

    #[test]
    fn noise_free_step_log_is_exact() {
        let mut p = StepPreset::StepHeightPaper.params();
        p.noise_px = 0.0;
        let log = make_step_log(&p, 0).unwrap();
        assert_eq!(log.len(), 21);
        assert_eq!(log[20].z_true, 10.0);
        assert_eq!(log[3].repeats, 10);
        let fit = crate::calibration::fit_linear(&log).unwrap();
        match fit.params {
            crate::calibration::FitParams::Linear { h_rho, d_e } => {
                assert!((h_rho - 6.0).abs() < 1e-9);
                assert!((d_e + 2.0).abs() < 1e-9);
            }
            _ => unreachable!(),
        }
        let r = StepPreset::ResolutionPaper.params();
        assert_eq!((r.steps, r.increment), (21, 0.05));
    }

    #[test]
    fn dominance_numbers() {
        let r = perspective_check(&PerspectiveConfig::default());
        // 500 cos 7deg + 67.5 sin 7deg, evaluated by hand
        assert!((r.dominant - 504.4993).abs() < 1e-3, "{}", r.dominant);
        // printed as roughly 503
        assert!((r.dominant - 503.0).abs() < 2.0);
        // 20.8 sin 7deg + 5 cos 7deg
        assert!((r.minor - 7.4975).abs() < 1e-3, "{}", r.minor);
        assert!(r.minor < r.dominant / 30.0);
        assert!(r.max_relative_deviation < 0.03, "{}", r.max_relative_deviation);
    }
}
