//! Pose error metrics and sequence statistics with Tukey-fence outlier
//! exclusion.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::RigidTransform;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("{errors} error entries but {latencies} latencies")]
    LengthMismatch { errors: usize, latencies: usize },
    #[error("frame index {0} out of range")]
    BadIndex(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// mm
    pub e_t: f64,
    /// degrees
    pub e_r: f64,
}

/// `|t1 - t2|_2` in mm.
pub fn translational_error(t1: &RigidTransform, t2: &RigidTransform) -> f64 {
    (t1.translation - t2.translation).norm()
}

/// Geodesic angle between the rotations, `acos((tr(R1 R2^T) - 1) / 2)`, in
/// degrees. The cosine is clamped to `[-1, 1]`.
pub fn rotational_error(t1: &RigidTransform, t2: &RigidTransform) -> f64 {
    let trace = (t1.rotation * t2.rotation.transpose()).trace();
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn pose_error(estimate: &RigidTransform, reference: &RigidTransform) -> PoseError {
    PoseError {
        e_t: translational_error(estimate, reference),
        e_r: rotational_error(estimate, reference),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub iqr: f64,
    pub count: usize,
}

impl ChannelStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean,
            std,
            median: quantile(&sorted, 0.5),
            iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
            count: n,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Indices outside `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`.
pub fn tukey_outliers(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < lo || **v > hi)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutlierRule {
    #[default]
    Tukey,
    /// Only the explicitly listed frames are excluded.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub errors: Vec<PoseError>,
    pub latencies: Vec<f64>,
    pub translation_raw: ChannelStats,
    pub rotation_raw: ChannelStats,
    pub translation: ChannelStats,
    pub rotation: ChannelStats,
    pub translation_outliers: Vec<usize>,
    pub rotation_outliers: Vec<usize>,
    /// Seconds per frame.
    pub mean_latency: f64,
}

impl SequenceReport {
    /// Per-frame CSV: `frame,e_t_mm,e_r_deg,latency_s,outlier`. The outlier
    /// column lists the flagged channels (`t`, `r`, `tr`) or is empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvaluationError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["frame", "e_t_mm", "e_r_deg", "latency_s", "outlier"])?;
        for (i, (e, l)) in self.errors.iter().zip(&self.latencies).enumerate() {
            let mut flag = String::new();
            if self.translation_outliers.contains(&i) {
                flag.push('t');
            }
            if self.rotation_outliers.contains(&i) {
                flag.push('r');
            }
            wtr.write_record([
                i.to_string(),
                e.e_t.to_string(),
                e.e_r.to_string(),
                l.to_string(),
                flag,
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

pub fn sequence_statistics(
    errors: &[PoseError],
    latencies: &[f64],
) -> Result<SequenceReport, EvaluationError> {
    sequence_statistics_with(errors, latencies, OutlierRule::Tukey, &[], &[])
}

/// Sequence statistics with either Tukey fences per channel or explicit
/// exclusion lists for each channel.
pub fn sequence_statistics_with(
    errors: &[PoseError],
    latencies: &[f64],
    rule: OutlierRule,
    exclude_translation: &[usize],
    exclude_rotation: &[usize],
) -> Result<SequenceReport, EvaluationError> {
    if errors.len() < 2 {
        return Err(EvaluationError::TooFewFrames(errors.len()));
    }
    if latencies.len() != errors.len() {
        return Err(EvaluationError::LengthMismatch {
            errors: errors.len(),
            latencies: latencies.len(),
        });
    }
    let t: Vec<f64> = errors.iter().map(|e| e.e_t).collect();
    let r: Vec<f64> = errors.iter().map(|e| e.e_r).collect();
    let (to, ro) = match rule {
        OutlierRule::Tukey => (tukey_outliers(&t), tukey_outliers(&r)),
        OutlierRule::Explicit => {
            for &i in exclude_translation.iter().chain(exclude_rotation) {
                if i >= errors.len() {
                    return Err(EvaluationError::BadIndex(i));
                }
            }
            let sorted = |v: &[usize]| {
                let mut v = v.to_vec();
                v.sort_unstable();
                v.dedup();
                v
            };
            (sorted(exclude_translation), sorted(exclude_rotation))
        }
    };
    let retained = |vals: &[f64], out: &[usize]| -> Vec<f64> {
        vals.iter()
            .enumerate()
            .filter(|(i, _)| !out.contains(i))
            .map(|(_, v)| *v)
            .collect()
    };
    let kept_t = retained(&t, &to);
    let kept_r = retained(&r, &ro);
    // Excluding everything leaves nothing to summarize; fall back to raw.
    let stats = |kept: &[f64], all: &[f64]| {
        if kept.is_empty() {
            ChannelStats::of(all)
        } else {
            ChannelStats::of(kept)
        }
    };
    Ok(SequenceReport {
        errors: errors.to_vec(),
        latencies: latencies.to_vec(),
        translation_raw: ChannelStats::of(&t),
        rotation_raw: ChannelStats::of(&r),
        translation: stats(&kept_t, &t),
        rotation: stats(&kept_r, &r),
        translation_outliers: to,
        rotation_outliers: ro,
        mean_latency: latencies.iter().sum::<f64>() / latencies.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
    use proptest::prelude::*;

    fn tf(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> RigidTransform {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        RigidTransform::new(r.into_inner(), t).unwrap()
    }

    #[test]
    fn translation_cases() {
        let a = RigidTransform::identity();
        assert_eq!(translational_error(&a, &a), 0.0);
        let b = tf(Vector3::z(), 0.0, Vector3::new(1.0, 2.0, 2.0));
        assert_eq!(translational_error(&b, &a), 3.0);
    }

    #[test]
    fn rotation_cases() {
        let id = RigidTransform::identity();
        assert_eq!(rotational_error(&id, &id), 0.0);
        let r30 = tf(Vector3::z(), 30f64.to_radians(), Vector3::zeros());
        assert!((rotational_error(&r30, &id) - 30.0).abs() < 1e-9);
        // trace slightly above 3
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.0 + 1e-15;
        let nudged = RigidTransform::from_parts_unchecked(m, Vector3::zeros());
        let e = rotational_error(&nudged, &id);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn constant_sequence() {
        let errs = vec![PoseError { e_t: 1.0, e_r: 2.0 }; 6];
        let rep = sequence_statistics(&errs, &[0.5; 6]).unwrap();
        assert_eq!(rep.translation.std, 0.0);
        assert!(rep.translation_outliers.is_empty());
        assert!(rep.rotation_outliers.is_empty());
        assert_eq!(rep.mean_latency, 0.5);
    }

    #[test]
    fn single_gross_outlier() {
        let errs: Vec<PoseError> = [1.0, 1.0, 1.0, 1.0, 100.0]
            .iter()
            .map(|&e| PoseError { e_t: e, e_r: 1.0 })
            .collect();
        let rep = sequence_statistics(&errs, &[1.0; 5]).unwrap();
        assert_eq!(rep.translation_outliers, vec![4]);
        assert_eq!(rep.translation.mean, 1.0);
        assert!(rep.translation_raw.mean > 20.0);
        assert!(rep.rotation_outliers.is_empty());

        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("frame,e_t_mm,e_r_deg,latency_s,outlier\n"));
        assert!(text.lines().nth(5).unwrap().ends_with(",t"));
    }

    #[test]
    fn explicit_exclusion_mirrors_manual_choice() {
        let errs: Vec<PoseError> = (0..8)
            .map(|i| PoseError {
                e_t: i as f64,
                e_r: 10.0 - i as f64,
            })
            .collect();
        let rep =
            sequence_statistics_with(&errs, &[0.0; 8], OutlierRule::Explicit, &[7, 6], &[0])
                .unwrap();
        assert_eq!(rep.translation_outliers, vec![6, 7]);
        assert_eq!(rep.translation.count, 6);
        assert_eq!(rep.rotation.count, 7);
        assert_eq!(rep.translation.mean, 2.5);
        assert!(sequence_statistics_with(&errs, &[0.0; 8], OutlierRule::Explicit, &[9], &[])
            .is_err());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            sequence_statistics(&[], &[]),
            Err(EvaluationError::TooFewFrames(0))
        ));
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            0.0f64..std::f64::consts::PI,
            proptest::array::uniform3(-50.0f64..50.0),
        )
            .prop_filter("axis", |(x, y, z, _, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a, t)| tf(Vector3::new(x, y, z), a, Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn rotation_error_symmetric_and_left_invariant(a in arb_transform(), b in arb_transform(), g in arb_transform()) {
            prop_assert_eq!(rotational_error(&a, &b), rotational_error(&b, &a));
            let ga = g.compose(&a);
            let gb = g.compose(&b);
            prop_assert!((rotational_error(&ga, &gb) - rotational_error(&a, &b)).abs() < 1e-6);
        }

        #[test]
        fn translation_triangle_inequality(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let ab = translational_error(&a, &b);
            let bc = translational_error(&b, &c);
            let ac = translational_error(&a, &c);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
