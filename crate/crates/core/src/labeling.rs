//! Label masks, the label colour palette, and construction of the
//! label-colorized clouds used for registration: Cloud A from the annotated
//! model, Cloud B from a segmented RGB-D frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{DisparityMap, RgbImage};
use crate::projection::{reconstruct_point, CalibrationParams, CloudPoint, LabeledCloud, PixelIndex};

/// Class id reserved for "not a registration feature".
pub const UNDEFINED_CLASS: u8 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum LabelingError {
    #[error("class id {0} is not in the palette")]
    UnknownClass(u8),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("annotation covers {annotation} points but the model has {model}")]
    AnnotationLength { annotation: usize, model: usize },
    #[error("invalid palette: {0}")]
    InvalidPalette(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
}

/// Per-pixel feature class ids in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    classes: u8,
    ids: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, classes: u8, ids: Vec<u8>) -> Result<Self, LabelingError> {
        if width == 0 || height == 0 || ids.len() != width * height {
            return Err(LabelingError::InvalidMask(format!(
                "{} ids for a {width}x{height} mask",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&c| c >= classes) {
            return Err(LabelingError::InvalidMask(format!(
                "class {bad} outside [0, {classes})"
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            ids,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> u8 {
        self.classes
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.ids[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureRole {
    SutureLine,
    Surface,
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub rgb: [u8; 3],
    pub role: FeatureRole,
}

/// Class id to colour and role. Serialized as `{class_id: {rgb, role}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u8, PaletteEntry>", into = "BTreeMap<u8, PaletteEntry>")]
pub struct LabelPalette {
    entries: BTreeMap<u8, PaletteEntry>,
}

impl TryFrom<BTreeMap<u8, PaletteEntry>> for LabelPalette {
    type Error = LabelingError;

    fn try_from(entries: BTreeMap<u8, PaletteEntry>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<LabelPalette> for BTreeMap<u8, PaletteEntry> {
    fn from(p: LabelPalette) -> Self {
        p.entries
    }
}

impl Default for LabelPalette {
    /// Seven classes: undefined, four suture lines and two surface patches,
    /// coloured with the six saturated corners of the RGB cube.
    fn default() -> Self {
        let corners = [
            [255, 0, 255],
            [0, 255, 255],
            [255, 255, 0],
            [255, 0, 0],
            [0, 255, 0],
            [0, 0, 255],
        ];
        let mut entries = BTreeMap::new();
        entries.insert(
            UNDEFINED_CLASS,
            PaletteEntry {
                rgb: [0, 0, 0],
                role: FeatureRole::Undefined,
            },
        );
        for (i, rgb) in corners.into_iter().enumerate() {
            let role = if i < 4 {
                FeatureRole::SutureLine
            } else {
                FeatureRole::Surface
            };
            entries.insert(i as u8 + 1, PaletteEntry { rgb, role });
        }
        Self::new(entries).expect("default palette is valid")
    }
}

impl LabelPalette {
    pub fn new(entries: BTreeMap<u8, PaletteEntry>) -> Result<Self, LabelingError> {
        match entries.get(&UNDEFINED_CLASS) {
            Some(e) if e.role == FeatureRole::Undefined => {}
            _ => {
                return Err(LabelingError::InvalidPalette(
                    "class 0 must exist with role `undefined`".into(),
                ))
            }
        }
        let undefined = entries
            .values()
            .filter(|e| e.role == FeatureRole::Undefined)
            .count();
        if undefined != 1 {
            return Err(LabelingError::InvalidPalette(format!(
                "exactly one undefined class expected, found {undefined}"
            )));
        }
        let mut seen = BTreeMap::new();
        for (id, e) in &entries {
            if let Some(other) = seen.insert(e.rgb, *id) {
                return Err(LabelingError::InvalidPalette(format!(
                    "classes {other} and {id} share colour {:?}",
                    e.rgb
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, class: u8) -> Result<&PaletteEntry, LabelingError> {
        self.entries
            .get(&class)
            .ok_or(LabelingError::UnknownClass(class))
    }

    pub fn rgb(&self, class: u8) -> Result<[u8; 3], LabelingError> {
        self.get(class).map(|e| e.rgb)
    }

    /// Inverse colour lookup.
    pub fn class_of(&self, rgb: [u8; 3]) -> Option<u8> {
        self.entries
            .iter()
            .find(|(_, e)| e.rgb == rgb)
            .map(|(id, _)| *id)
    }

    /// Ids of the registration feature classes (everything but undefined).
    pub fn feature_classes(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries
            .iter()
            .filter(|(_, e)| e.role != FeatureRole::Undefined)
            .map(|(id, _)| *id)
    }

    pub fn class_count(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, class: u8) -> bool {
        self.entries.contains_key(&class)
    }
}

/// Per-model-point feature class; `None` for points outside every feature.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelAnnotation {
    pub classes: Vec<Option<u8>>,
}

/// Cloud A: the annotated feature points of the model, painted with palette
/// colours. Unannotated points and points annotated as undefined are dropped.
pub fn colorize_model(
    model: &LabeledCloud,
    ann: &ModelAnnotation,
    palette: &LabelPalette,
) -> Result<LabeledCloud, LabelingError> {
    if ann.classes.len() != model.len() && !ann.classes.is_empty() {
        return Err(LabelingError::AnnotationLength {
            annotation: ann.classes.len(),
            model: model.len(),
        });
    }
    let mut points = Vec::new();
    for (p, class) in model.points.iter().zip(&ann.classes) {
        let Some(class) = *class else { continue };
        let rgb = palette.rgb(class)?;
        if class == UNDEFINED_CLASS {
            continue;
        }
        points.push(CloudPoint::new(p.position, rgb, Some(class)));
    }
    Ok(LabeledCloud::new(points))
}

/// Cloud B: reconstructs every pixel with a defined class and a valid
/// disparity, coloured by its class rather than by the image.
pub fn mask_cloud(
    d: &DisparityMap,
    rgb: &RgbImage,
    mask: &LabelMask,
    palette: &LabelPalette,
    calib: &CalibrationParams,
) -> Result<LabeledCloud, LabelingError> {
    mask_cloud_indexed(d, rgb, mask, palette, calib).map(|(c, _)| c)
}

pub fn mask_cloud_indexed(
    d: &DisparityMap,
    rgb: &RgbImage,
    mask: &LabelMask,
    palette: &LabelPalette,
    calib: &CalibrationParams,
) -> Result<(LabeledCloud, PixelIndex), LabelingError> {
    let (w, h) = (d.width(), d.height());
    for (ow, oh) in [(rgb.width(), rgb.height()), (mask.width(), mask.height())] {
        if ow != w || oh != h {
            return Err(LabelingError::DimensionMismatch(w, h, ow, oh));
        }
    }
    let mut points = Vec::new();
    let mut index = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let class = mask.get(x, y);
            let color = palette.rgb(class)?;
            if class == UNDEFINED_CLASS {
                continue;
            }
            let Some(disp) = d.get(x, y) else { continue };
            let position = reconstruct_point((x as f64, y as f64), disp, calib)
                .expect("disparity checked valid");
            points.push(CloudPoint::new(position, color, Some(class)));
            index.push([x as u32, y as u32]);
        }
    }
    Ok((LabeledCloud::new(points), index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::OpticalConfig;
    use nalgebra::Point3;
    use std::collections::BTreeSet;

    fn calib() -> CalibrationParams {
        CalibrationParams {
            h_rho: 3.0,
            p_rho_x: 0.1,
            p_rho_y: 0.1,
            c_x: 2.0,
            c_y: 2.0,
            d_e: 0.0,
            optical: OpticalConfig::default(),
        }
    }

    fn model(n: usize) -> LabeledCloud {
        LabeledCloud::new(
            (0..n)
                .map(|i| CloudPoint::new(Point3::new(i as f64, 0.0, 1.0), [128, 128, 128], None))
                .collect(),
        )
    }

    #[test]
    fn default_palette_shape() {
        let p = LabelPalette::default();
        assert_eq!(p.class_count(), 7);
        assert_eq!(p.feature_classes().count(), 6);
        for c in p.feature_classes() {
            let rgb = p.rgb(c).unwrap();
            assert!(rgb.iter().all(|&v| v == 0 || v == 255));
            assert_ne!(rgb, [0, 0, 0]);
            assert_ne!(rgb, [255, 255, 255]);
            assert_eq!(p.class_of(rgb), Some(c));
        }
    }

    #[test]
    fn palette_json_round_trip_and_rejects() {
        let p = LabelPalette::default();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"1\":{\"rgb\":[255,0,255],\"role\":\"suture-line\"}"));
        let back: LabelPalette = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let dup = r#"{"0":{"rgb":[0,0,0],"role":"undefined"},"1":{"rgb":[0,0,0],"role":"surface"}}"#;
        assert!(serde_json::from_str::<LabelPalette>(dup).is_err());
        let no_undef = r#"{"1":{"rgb":[0,0,255],"role":"surface"}}"#;
        assert!(serde_json::from_str::<LabelPalette>(no_undef).is_err());
    }

    #[test]
    fn empty_annotation_gives_empty_cloud() {
        let a = colorize_model(&model(5), &ModelAnnotation::default(), &LabelPalette::default())
            .unwrap();
        assert!(a.is_empty());
        let a = colorize_model(
            &model(3),
            &ModelAnnotation {
                classes: vec![None; 3],
            },
            &LabelPalette::default(),
        )
        .unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn six_feature_classes_six_colours() {
        let palette = LabelPalette::default();
        let classes: Vec<Option<u8>> = (0..30).map(|i| Some((i % 6) as u8 + 1)).collect();
        let mut ann = ModelAnnotation { classes };
        ann.classes.push(None);
        let a = colorize_model(&model(31), &ann, &palette).unwrap();
        assert_eq!(a.len(), 30);
        let colours: BTreeSet<[u8; 3]> = a.points.iter().map(|p| p.color).collect();
        assert_eq!(colours.len(), 6);
        // same class, same colour
        assert_eq!(a.points[0].color, a.points[6].color);

        let bad = ModelAnnotation {
            classes: vec![Some(9)],
        };
        assert_eq!(
            colorize_model(&model(1), &bad, &palette),
            Err(LabelingError::UnknownClass(9))
        );
    }

    #[test]
    fn mask_cloud_counts() {
        let palette = LabelPalette::default();
        let rgb = RgbImage::filled(4, 4, [10, 20, 30]).unwrap();
        let mut disp = vec![6.0; 16];
        disp[5] = f64::NAN;
        let d = DisparityMap::new(4, 4, disp).unwrap();

        let undefined = LabelMask::new(4, 4, 7, vec![0; 16]).unwrap();
        assert!(mask_cloud(&d, &rgb, &undefined, &palette, &calib())
            .unwrap()
            .is_empty());

        let mut ids = vec![0u8; 16];
        for i in [1usize, 2, 5, 6, 9] {
            ids[i] = 3;
        }
        let mask = LabelMask::new(4, 4, 7, ids).unwrap();
        let b = mask_cloud(&d, &rgb, &mask, &palette, &calib()).unwrap();
        // pixel 5 has no disparity
        assert_eq!(b.len(), 4);
        assert!(b.points.iter().all(|p| p.color == [255, 255, 0] && p.label == Some(3)));
        assert!(b.points.iter().all(|p| (p.position.z - 2.0).abs() < 1e-12));

        let small = LabelMask::new(3, 4, 7, vec![0; 12]).unwrap();
        assert!(matches!(
            mask_cloud(&d, &rgb, &small, &palette, &calib()),
            Err(LabelingError::DimensionMismatch(..))
        ));
        let eight = LabelMask::new(4, 4, 9, vec![8; 16]).unwrap();
        assert_eq!(
            mask_cloud(&d, &rgb, &eight, &palette, &calib()),
            Err(LabelingError::UnknownClass(8))
        );
    }

    #[test]
    fn mask_rejects_out_of_range_ids() {
        assert!(LabelMask::new(2, 1, 3, vec![0, 3]).is_err());
    }
}
