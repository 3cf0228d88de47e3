use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::icp::{color_icp_refine, ColorIcpParams};
use super::normals::{estimate_normals, voxel_downsample};
use super::ransac::{estimate_inplane_orientation, ransac_coarse_align, RansacParams};
use super::spatial::median_spacing;
use super::RegistrationError;
use crate::imaging::{DisparityMap, RgbImage};
use crate::labeling::{colorize_model, mask_cloud, LabelMask, LabelPalette, ModelAnnotation};
use crate::projection::{CalibrationParams, LabeledCloud};
use crate::transform::RigidTransform;

/// Method combination: RANSAC alone, or with the in-plane constraint (Cs),
/// the colour term with label-strict matching (Co), or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    R,
    RCs,
    RCo,
    #[default]
    RCsCo,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::R, Variant::RCs, Variant::RCo, Variant::RCsCo];

    pub fn uses_constraint(self) -> bool {
        matches!(self, Variant::RCs | Variant::RCsCo)
    }

    pub fn uses_color(self) -> bool {
        matches!(self, Variant::RCo | Variant::RCsCo)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::R => "R",
            Variant::RCs => "R+Cs",
            Variant::RCo => "R+Co",
            Variant::RCsCo => "R+Cs+Co",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('+', "").as_str() {
            "R" => Ok(Variant::R),
            "RCs" => Ok(Variant::RCs),
            "RCo" => Ok(Variant::RCo),
            "RCsCo" => Ok(Variant::RCsCo),
            _ => Err(format!("unknown variant '{s}' (expected R, RCs, RCo or RCsCo)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub variant: Variant,
    /// Neighbourhood size for the coarse-stage normals.
    pub normal_k: usize,
    /// Coarse-stage voxel size in multiples of the median spacing of A.
    pub coarse_voxel_factor: f64,
    pub ransac: RansacParams,
    pub icp: ColorIcpParams,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            variant: Variant::default(),
            normal_k: 20,
            coarse_voxel_factor: 4.0,
            ransac: RansacParams::default(),
            icp: ColorIcpParams::default(),
        }
    }
}

impl RegistrationParams {
    /// Stage parameters with the variant's switches applied.
    pub fn effective(&self) -> (RansacParams, ColorIcpParams) {
        let mut ransac = self.ransac;
        let mut icp = self.icp;
        if !self.variant.uses_constraint() {
            ransac.inplane_angle_window = PI;
        }
        if !self.variant.uses_color() {
            icp.delta = 1.0;
            icp.label_strict = false;
        }
        (ransac, icp)
    }
}

pub struct Frame<'a> {
    pub disparity: &'a DisparityMap,
    pub rgb: &'a RgbImage,
    pub mask: &'a LabelMask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageDiagnostics {
    pub stage: &'static str,
    pub ms: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub variant: Variant,
    pub stages: Vec<StageDiagnostics>,
    pub inplane_angle: Option<f64>,
    pub ransac_inliers: usize,
    pub ransac_inlier_fraction: f64,
    pub fitness: f64,
    pub rmse: f64,
    pub converged: bool,
    pub icp_iterations: usize,
}

impl Diagnostics {
    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationOutput {
    pub t_refined: RigidTransform,
    pub t_init: RigidTransform,
    pub diagnostics: Diagnostics,
}

struct Timer {
    stages: Vec<StageDiagnostics>,
}

impl Timer {
    fn run<T, E>(
        &mut self,
        stage: &'static str,
        f: impl FnOnce() -> Result<T, E>,
        count: impl Fn(&T) -> usize,
    ) -> Result<T, RegistrationError>
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        let start = Instant::now();
        let out = f().map_err(|e| RegistrationError::Stage {
            stage,
            source: Box::new(e),
        })?;
        self.stages.push(StageDiagnostics {
            stage,
            ms: start.elapsed().as_secs_f64() * 1e3,
            points: count(&out),
        });
        Ok(out)
    }
}

/// Full pipeline for one frame: model colouring, frame masking, then
/// [`register_clouds`].
pub fn register(
    model: &LabeledCloud,
    annotation: &ModelAnnotation,
    palette: &LabelPalette,
    frame: Frame<'_>,
    calib: &CalibrationParams,
    params: &RegistrationParams,
) -> Result<RegistrationOutput, RegistrationError> {
    let mut timer = Timer { stages: Vec::new() };
    let a = timer.run(
        "colorize_model",
        || {
            let a = colorize_model(model, annotation, palette).map_err(boxed)?;
            if a.is_empty() {
                return Err(boxed(RegistrationError::EmptyCloud("A")));
            }
            Ok(a)
        },
        LabeledCloud::len,
    )?;
    let b = timer.run(
        "mask_cloud",
        || {
            let b = mask_cloud(frame.disparity, frame.rgb, frame.mask, palette, calib)
                .map_err(boxed)?;
            if b.is_empty() {
                return Err(boxed(RegistrationError::EmptyCloud("B")));
            }
            Ok(b)
        },
        LabeledCloud::len,
    )?;
    register_with_timer(&a, &b, params, timer)
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

fn boxed(e: impl std::error::Error + Send + Sync + 'static) -> StageError {
    StageError(Box::new(e))
}

/// Carries a boxed error through [`Timer::run`] while keeping its message.
#[derive(Debug)]
struct StageError(BoxError);

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        self.0.source()
    }
}

/// Registration stages after both clouds exist: normals on the coarse
/// clouds, in-plane orientation, RANSAC and coloured ICP.
pub fn register_clouds(
    a: &LabeledCloud,
    b: &LabeledCloud,
    params: &RegistrationParams,
) -> Result<RegistrationOutput, RegistrationError> {
    register_with_timer(a, b, params, Timer { stages: Vec::new() })
}

fn register_with_timer(
    a: &LabeledCloud,
    b: &LabeledCloud,
    params: &RegistrationParams,
    mut timer: Timer,
) -> Result<RegistrationOutput, RegistrationError> {
    if a.is_empty() {
        return Err(RegistrationError::EmptyCloud("A"));
    }
    if b.is_empty() {
        return Err(RegistrationError::EmptyCloud("B"));
    }
    let (ransac_params, icp_params) = params.effective();
    let a_pos: Vec<_> = a.points.iter().map(|p| p.position).collect();
    let spacing = median_spacing(&a_pos).unwrap_or(1.0);
    let coarse = params.coarse_voxel_factor * spacing;
    let k = params.normal_k;

    let a_coarse = timer.run(
        "normals_a",
        || {
            let d = voxel_downsample(a, coarse);
            estimate_normals(&d, k.min(d.len()).max(3))
        },
        |n| n.valid_count(),
    )?;
    let b_coarse = timer.run(
        "normals_b",
        || {
            let d = voxel_downsample(b, coarse);
            estimate_normals(&d, k.min(d.len()).max(3))
        },
        |n| n.valid_count(),
    )?;
    let inplane = if params.variant.uses_constraint() {
        Some(timer.run("inplane_orientation", || estimate_inplane_orientation(a, b), |_| 0)?)
    } else {
        None
    };
    let coarse_fit = timer.run(
        "ransac",
        || ransac_coarse_align(&a_coarse, &b_coarse, &ransac_params, inplane.unwrap_or(0.0)),
        |r| r.inliers,
    )?;
    let a_fine = timer.run(
        "normals_icp",
        || estimate_normals(a, icp_params.normal_k.min(a.len()).max(3)),
        |n| n.valid_count(),
    )?;
    let fine = timer.run(
        "color_icp",
        || color_icp_refine(&a_fine, b, &coarse_fit.transform, &icp_params),
        |r| (r.fitness * b.len() as f64).round() as usize,
    )?;
    Ok(RegistrationOutput {
        t_refined: fine.transform,
        t_init: coarse_fit.transform,
        diagnostics: Diagnostics {
            variant: params.variant,
            stages: timer.stages,
            inplane_angle: inplane,
            ransac_inliers: coarse_fit.inliers,
            ransac_inlier_fraction: coarse_fit.inlier_fraction,
            fitness: fine.fitness,
            rmse: fine.rmse,
            converged: fine.converged,
            icp_iterations: fine.iterations,
        },
    })
}
