//! On-disk layout of scene bundles and frame sequences.
//!
//! A bundle is one directory holding a rendered frame together with its
//! calibration, palette and annotated model. A sequence keeps the shared
//! files at its root and one frame directory per pose under `frames/`,
//! listed in `index.json`.

use std::path::{Path, PathBuf};

use microreg::imaging::{DisparityMap, RgbImage};
use microreg::io::{read_json, read_label_png, read_pfm, read_ply, read_rgb_png};
use microreg::labeling::{LabelMask, LabelPalette, ModelAnnotation};
use microreg::projection::LabeledCloud;
use microreg::transform::RigidTransform;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const INDEX: &str = "index.json";
pub const CALIB: &str = "calib.json";
pub const PALETTE: &str = "palette.json";
pub const MODEL: &str = "model.ply";
pub const LEFT: &str = "left.png";
pub const RIGHT: &str = "right.png";
pub const LABELS: &str = "labels.png";
pub const DISPARITY: &str = "disparity.pfm";
pub const POSE: &str = "pose.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceIndex {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Frame directories relative to the sequence root, in frame order.
    pub frames: Vec<String>,
}

/// Ground-truth pose file of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    /// Model-to-camera pose the frame was rendered at.
    pub truth: RigidTransform,
    /// Perturbation applied to the base pose, model frame.
    pub delta: RigidTransform,
}

/// Frame directories of a bundle (itself) or a sequence (from its index).
pub fn frame_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let index = root.join(INDEX);
    if index.is_file() {
        let idx: SequenceIndex = read_json(&index)?;
        if idx.frames.is_empty() {
            return Err(CliError::Invalid(format!("{}: sequence has no frames", index.display())));
        }
        Ok(idx.frames.iter().map(|f| (f.clone(), root.join(f))).collect())
    } else if root.join(LABELS).is_file() {
        Ok(vec![(".".to_string(), root.to_path_buf())])
    } else {
        Err(CliError::io(
            root.join(INDEX),
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "not a sequence (no index.json) or bundle (no labels.png)",
            ),
        ))
    }
}

/// The annotated model: `model.ply` with feature classes as point labels.
pub fn read_model(root: &Path) -> Result<(LabeledCloud, ModelAnnotation), CliError> {
    let cloud = read_ply(&root.join(MODEL))?;
    let classes = cloud.points.iter().map(|p| p.label).collect();
    Ok((cloud, ModelAnnotation { classes }))
}

pub struct FrameData {
    pub disparity: DisparityMap,
    pub rgb: RgbImage,
    pub mask: LabelMask,
}

pub fn frame_files(dir: &Path, disparity: Option<&Path>) -> Vec<PathBuf> {
    vec![
        disparity.map_or_else(|| dir.join(DISPARITY), Path::to_path_buf),
        dir.join(LEFT),
        dir.join(LABELS),
    ]
}

pub fn read_frame(dir: &Path, disparity: Option<&Path>, palette: &LabelPalette) -> Result<FrameData, CliError> {
    let files = frame_files(dir, disparity);
    Ok(FrameData {
        disparity: read_pfm(&files[0])?,
        rgb: read_rgb_png(&files[1])?,
        mask: read_label_png(&files[2], palette)?,
    })
}

pub fn read_pose(dir: &Path) -> Result<PoseFile, CliError> {
    Ok(read_json(&dir.join(POSE))?)
}
