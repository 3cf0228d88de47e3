//! Disparity to depth under the linear stereo-microscope model, the competing
//! reciprocal (pinhole-style) model, and point-cloud reconstruction.
//!
//! Lengths are millimetres and image coordinates pixels throughout; this
//! module is the only place the two meet.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{DisparityMap, RgbImage};
use crate::labeling::LabelMask;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("invalid disparity")]
    InvalidDisparity,
    #[error("disparity {h} sits on the model pole")]
    Pole { h: f64 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("optical parameter `{0}` is required")]
    MissingOptical(&'static str),
    #[error("half convergence angle must be nonzero")]
    ZeroConvergence,
}

/// Optical configuration of the rig. All fields optional since the linear
/// model does not need them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    /// Focal length, mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    /// Magnification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    /// Half convergence angle, radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Baseline, mm.
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    /// Working distance of a single microscope, mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_w: Option<f64>,
}

/// Parameters of the linear disparity-depth model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    /// Depth response to unit disparity, px/mm.
    pub h_rho: f64,
    /// Object-space pixel width, mm/px.
    #[serde(rename = "P_rho_x")]
    pub p_rho_x: f64,
    /// Object-space pixel height, mm/px.
    #[serde(rename = "P_rho_y")]
    pub p_rho_y: f64,
    pub c_x: f64,
    pub c_y: f64,
    /// Effective working distance, mm.
    pub d_e: f64,
    #[serde(flatten)]
    pub optical: OpticalConfig,
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: &str| Err(ProjectionError::InvalidCalibration(m.to_string()));
        let all = [self.h_rho, self.p_rho_x, self.p_rho_y, self.c_x, self.c_y, self.d_e];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite field");
        }
        if self.h_rho == 0.0 {
            return bad("h_rho must be nonzero");
        }
        if !(self.p_rho_x > 0.0 && self.p_rho_y > 0.0) {
            return bad("pixel sizes must be positive");
        }
        if self.d_e < 0.0 {
            return bad("d_e must be nonnegative");
        }
        if let (Some(f), Some(m), Some(dw)) = (self.optical.f, self.optical.m, self.optical.d_w) {
            let thin_lens = f * (1.0 + 1.0 / m);
            if !((dw - thin_lens).abs() <= 0.01 * dw.abs()) {
                return Err(ProjectionError::InvalidCalibration(format!(
                    "d_w = {dw} mm violates the thin lens relation f(1 + 1/m) = {thin_lens:.3} mm"
                )));
            }
        }
        Ok(())
    }

    /// Depth per unit of sensor-plane disparity under the orthographic
    /// approximation, `1 / (2 m sin(phi))`.
    pub fn orthographic_slope(&self) -> Result<f64, ProjectionError> {
        let m = self.optical.m.ok_or(ProjectionError::MissingOptical("m"))?;
        let phi = self.optical.phi.ok_or(ProjectionError::MissingOptical("phi"))?;
        if phi.sin() == 0.0 {
            return Err(ProjectionError::ZeroConvergence);
        }
        if m == 0.0 {
            return Err(ProjectionError::InvalidCalibration("m must be nonzero".into()));
        }
        Ok(1.0 / (2.0 * m * phi.sin()))
    }

    /// `h_rho` implied by the optics for a sensor with the given pixel pitch (mm).
    pub fn implied_h_rho(&self, sensor_pitch_mm: f64) -> Result<f64, ProjectionError> {
        Ok(1.0 / (self.orthographic_slope()? * sensor_pitch_mm))
    }
}

/// A reconstructed point with its colour and optional feature label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Point3<f64>,
    pub color: [u8; 3],
    pub label: Option<u8>,
}

impl CloudPoint {
    pub fn new(position: Point3<f64>, color: [u8; 3], label: Option<u8>) -> Self {
        Self {
            position,
            color,
            label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub points: Vec<CloudPoint>,
}

impl LabeledCloud {
    pub fn new(points: Vec<CloudPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Point3<f64>> + '_ {
        self.points.iter().map(|p| &p.position)
    }

    pub fn all_finite(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.position.iter().all(|c| c.is_finite()))
    }
}

/// Source pixel `(x', y')` of each point of a reconstructed cloud.
pub type PixelIndex = Vec<[u32; 2]>;

/// `z = d_e + h / h_rho`, `x = (x' - c_x) P_rho_x`, `y = (y' - c_y) P_rho_y`.
pub fn reconstruct_point(
    pixel: (f64, f64),
    h: f64,
    calib: &CalibrationParams,
) -> Result<Point3<f64>, ProjectionError> {
    if !h.is_finite() {
        return Err(ProjectionError::InvalidDisparity);
    }
    Ok(Point3::new(
        (pixel.0 - calib.c_x) * calib.p_rho_x,
        (pixel.1 - calib.c_y) * calib.p_rho_y,
        calib.d_e + h / calib.h_rho,
    ))
}

/// Inverse of [`reconstruct_point`]: the left-image pixel and disparity of a point.
pub fn project_point(p: &Point3<f64>, calib: &CalibrationParams) -> ((f64, f64), f64) {
    (
        (p.x / calib.p_rho_x + calib.c_x, p.y / calib.p_rho_y + calib.c_y),
        (p.z - calib.d_e) * calib.h_rho,
    )
}

pub fn reconstruct_cloud(
    d: &DisparityMap,
    color: &RgbImage,
    calib: &CalibrationParams,
    labels: Option<&LabelMask>,
) -> Result<LabeledCloud, ProjectionError> {
    reconstruct_cloud_indexed(d, color, calib, labels).map(|(c, _)| c)
}

/// Like [`reconstruct_cloud`] but also returns the source pixel of every point.
/// Mask class 0 (undefined) yields an unlabeled point.
pub fn reconstruct_cloud_indexed(
    d: &DisparityMap,
    color: &RgbImage,
    calib: &CalibrationParams,
    labels: Option<&LabelMask>,
) -> Result<(LabeledCloud, PixelIndex), ProjectionError> {
    let (w, h) = (d.width(), d.height());
    if color.width() != w || color.height() != h {
        return Err(ProjectionError::DimensionMismatch(
            w,
            h,
            color.width(),
            color.height(),
        ));
    }
    if let Some(m) = labels {
        if m.width() != w || m.height() != h {
            return Err(ProjectionError::DimensionMismatch(w, h, m.width(), m.height()));
        }
    }
    let mut points = Vec::new();
    let mut index = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let Some(disp) = d.get(x, y) else { continue };
            let position = reconstruct_point((x as f64, y as f64), disp, calib)?;
            let label = labels.map(|m| m.get(x, y)).filter(|&c| c != 0);
            points.push(CloudPoint::new(position, color.pixel(x, y), label));
            index.push([x as u32, y as u32]);
        }
    }
    Ok((LabeledCloud::new(points), index))
}

/// Reciprocal comparison model `z = a / (h - b) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeFitParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub fn pinhole_depth(h: f64, p: &PinholeFitParams) -> Result<f64, ProjectionError> {
    let den = h - p.b;
    if den == 0.0 || !den.is_finite() {
        return Err(ProjectionError::Pole { h });
    }
    Ok(p.a / den + p.c)
}

/// Depth under the orthographic approximation of the converging rig,
/// `(h / m + B cos(phi)) / (2 sin(phi))`, with `h` in sensor-plane units.
pub fn orthographic_depth(h: f64, calib: &CalibrationParams) -> Result<f64, ProjectionError> {
    let m = calib.optical.m.ok_or(ProjectionError::MissingOptical("m"))?;
    let phi = calib.optical.phi.ok_or(ProjectionError::MissingOptical("phi"))?;
    let b = calib
        .optical
        .baseline
        .ok_or(ProjectionError::MissingOptical("B"))?;
    if phi.sin() == 0.0 {
        return Err(ProjectionError::ZeroConvergence);
    }
    if m == 0.0 {
        return Err(ProjectionError::InvalidCalibration("m must be nonzero".into()));
    }
    Ok((h / m + b * phi.cos()) / (2.0 * phi.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn calib() -> CalibrationParams {
        CalibrationParams {
            h_rho: 10.0,
            p_rho_x: 0.077,
            p_rho_y: 0.077,
            c_x: 480.0,
            c_y: 270.0,
            d_e: 500.0,
            optical: OpticalConfig {
                f: Some(75.0),
                m: Some(0.175),
                phi: Some(7f64.to_radians()),
                baseline: Some(135.0),
                d_w: Some(500.0),
            },
        }
    }

    #[test]
    fn principal_point_zero_disparity() {
        let c = calib();
        let p = reconstruct_point((c.c_x, c.c_y), 0.0, &c).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 500.0));
    }

    #[test]
    fn direct_substitution() {
        let c = calib();
        let p = reconstruct_point((c.c_x + 100.0, c.c_y), 5.0, &c).unwrap();
        assert!((p.x - 7.7).abs() < 1e-12);
        assert_eq!(p.y, 0.0);
        assert!((p.z - 500.5).abs() < 1e-12);
        assert_eq!(
            reconstruct_point((0.0, 0.0), f64::NAN, &c),
            Err(ProjectionError::InvalidDisparity)
        );
    }

    #[test]
    fn pinhole_examples() {
        let p = PinholeFitParams {
            a: 1000.0,
            b: 0.0,
            c: 0.0,
        };
        assert_eq!(pinhole_depth(10.0, &p).unwrap(), 100.0);
        assert_eq!(pinhole_depth(20.0, &p).unwrap(), 50.0);
        assert!(pinhole_depth(0.0, &p).is_err());
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let z = pinhole_depth(i as f64 * 0.37, &p).unwrap();
            assert!(z < prev);
            prev = z;
        }
    }

    #[test]
    fn orthographic_examples() {
        let c = calib();
        let z0 = orthographic_depth(0.0, &c).unwrap();
        // 135 cos 7deg / (2 sin 7deg), evaluated by hand: 549.7
        assert!((z0 - 549.7).abs() < 0.05, "{z0}");
        let steps: Vec<f64> = (0..10)
            .map(|i| {
                orthographic_depth(i as f64 + 1.0, &c).unwrap()
                    - orthographic_depth(i as f64, &c).unwrap()
            })
            .collect();
        for s in &steps {
            assert!((s - steps[0]).abs() < 1e-9);
        }
        let implied = c.implied_h_rho(1.0).unwrap();
        assert!((implied - 2.0 * 0.175 * 7f64.to_radians().sin()).abs() < 1e-12);
        // slope check against the finite difference of the depth formula
        assert!((steps[0] - c.orthographic_slope().unwrap()).abs() < 1e-9);

        let mut flat = c;
        flat.optical.phi = Some(0.0);
        assert_eq!(orthographic_depth(1.0, &flat), Err(ProjectionError::ZeroConvergence));
    }

    #[test]
    fn calibration_validation() {
        assert!(calib().validate().is_ok());
        let mut c = calib();
        c.h_rho = 0.0;
        assert!(c.validate().is_err());
        let mut c = calib();
        c.p_rho_y = -1.0;
        assert!(c.validate().is_err());
        let mut c = calib();
        c.optical.d_w = Some(400.0);
        assert!(c.validate().is_err());
        let mut c = calib();
        c.optical.f = None;
        c.optical.d_w = Some(400.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn calibration_json_field_names() {
        let json = serde_json::to_value(calib()).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["B", "P_rho_x", "P_rho_y", "c_x", "c_y", "d_e", "d_w", "f", "h_rho", "m", "phi"]
        );
        let back: CalibrationParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, calib());
    }

    #[test]
    fn cloud_cases() {
        let c = calib();
        let rgb = RgbImage::filled(4, 3, [9, 8, 7]).unwrap();
        let none = DisparityMap::invalid(4, 3).unwrap();
        assert!(reconstruct_cloud(&none, &rgb, &c, None).unwrap().is_empty());

        let flat = DisparityMap::new(4, 3, vec![2.5; 12]).unwrap();
        let cloud = reconstruct_cloud(&flat, &rgb, &c, None).unwrap();
        assert_eq!(cloud.len(), 12);
        for p in &cloud.points {
            assert_eq!(p.position.z, 500.25);
            assert_eq!(p.color, [9, 8, 7]);
        }

        let small = RgbImage::filled(3, 3, [0, 0, 0]).unwrap();
        assert!(matches!(
            reconstruct_cloud(&flat, &small, &c, None),
            Err(ProjectionError::DimensionMismatch(..))
        ));
    }

    proptest! {
        #[test]
        fn depth_is_affine_in_disparity(h in -50.0f64..50.0, step in 0.01f64..5.0) {
            let c = calib();
            let z = |h| reconstruct_point((3.0, 4.0), h, &c).unwrap().z;
            let second = z(h + 2.0 * step) - 2.0 * z(h + step) + z(h);
            prop_assert!(second.abs() < 1e-9);
        }

        #[test]
        fn lateral_spacing(col in 0u32..900, k in 1u32..50, h in 0.0f64..30.0) {
            let c = calib();
            let a = reconstruct_point((col as f64, 10.0), h, &c).unwrap();
            let b = reconstruct_point(((col + k) as f64, 10.0), h, &c).unwrap();
            prop_assert!((b.x - a.x - k as f64 * c.p_rho_x).abs() < 1e-9);
        }

        #[test]
        fn project_reconstruct_round_trip(x in -40.0f64..40.0, y in -25.0f64..25.0, z in 495.0f64..510.0) {
            let c = calib();
            let p = Point3::new(x, y, z);
            let (px, h) = project_point(&p, &c);
            let q = reconstruct_point(px, h, &c).unwrap();
            prop_assert!((p - q).norm() <= 1e-9);
        }
    }
}
