//! Stereo reconstruction and label-aware registration for surgical
//! microscope imagery.

pub mod calibration;
pub mod distortion;
pub mod evaluation;
pub mod imaging;
pub mod io;
pub mod labeling;
pub mod projection;
pub mod registration;
pub mod synthgen;
pub mod transform;
