//! Two-stage rigid registration of the labelled model features (Cloud A)
//! onto the labelled reconstruction of a frame (Cloud B): constrained
//! label-identity RANSAC, then coloured ICP.
//!
//! Every transform returned here maps model coordinates into the camera
//! frame, so `B ~ T A`.

mod icp;
mod normals;
mod pipeline;
mod ransac;
mod spatial;

pub use icp::{color_icp_refine, ColorIcpParams, IcpResult, ScaleTrace};
pub use normals::{estimate_normals, orient_to_camera, voxel_downsample, NormalCloud};
pub use pipeline::{
    register, register_clouds, Diagnostics, Frame, RegistrationOutput, RegistrationParams,
    StageDiagnostics, Variant,
};
pub use ransac::{
    estimate_inplane_orientation, inplane_from_centroids, label_centroids_2d, ransac_coarse_align,
    wrap_angle, RansacParams, RansacResult,
};
pub use spatial::{median_spacing, SpatialIndex};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("the clouds share no labels")]
    NoSharedLabels,
    #[error("{0} shared label centroid(s); need at least 2 distinct ones")]
    TooFewSharedLabels(usize),
    #[error("all {rejected} hypotheses violate the in-plane orientation constraint")]
    ConstraintRejectedAll { rejected: usize },
    #[error("no non-degenerate hypothesis could be sampled")]
    NoHypothesis,
    #[error("no correspondences within the search radius at the initial transform")]
    NoCorrespondences,
    #[error("empty Cloud {0}")]
    EmptyCloud(&'static str),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl RegistrationError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Self::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
