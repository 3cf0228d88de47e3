//! Planar distortion field: a per-column depth residual estimated from the
//! reconstruction of a flat target and subtracted from later reconstructions.
//!
//! The residual is assumed constant along image columns, so the field is a
//! plain table indexed by the source pixel column `x'`.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::{LabeledCloud, PixelIndex};

#[derive(Debug, Error)]
pub enum DistortionError {
    #[error("{points} points for {width} columns; need at least 10 per column on average")]
    TooFewPoints { points: usize, width: usize },
    #[error("plane fit is rank deficient")]
    RankDeficient,
    #[error("pixel index has {index} entries for {points} points")]
    IndexLength { index: usize, points: usize },
    #[error("column {column} outside a field of width {width}")]
    WidthMismatch { column: usize, width: usize },
    #[error("non-finite field entry at column {0}")]
    NonFinite(usize),
    #[error("field csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionField {
    per_column_residual: Vec<f64>,
}

impl DistortionField {
    pub fn new(per_column_residual: Vec<f64>) -> Result<Self, DistortionError> {
        if let Some(i) = per_column_residual.iter().position(|v| !v.is_finite()) {
            return Err(DistortionError::NonFinite(i));
        }
        Ok(Self {
            per_column_residual,
        })
    }

    pub fn zeros(width: usize) -> Self {
        Self {
            per_column_residual: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.per_column_residual.len()
    }

    pub fn residuals(&self) -> &[f64] {
        &self.per_column_residual
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DistortionError> {
        let mut wtr = csv::Writer::from_writer(writer);
        for (column, residual_mm) in self.per_column_residual.iter().enumerate() {
            wtr.serialize(FieldRow {
                column,
                residual_mm: *residual_mm,
            })?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DistortionError> {
        let mut rows: Vec<FieldRow> = csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<Result<_, _>>()?;
        rows.sort_by_key(|r| r.column);
        for (i, r) in rows.iter().enumerate() {
            if r.column != i {
                return Err(DistortionError::WidthMismatch {
                    column: r.column,
                    width: rows.len(),
                });
            }
        }
        Self::new(rows.into_iter().map(|r| r.residual_mm).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct FieldRow {
    column: usize,
    residual_mm: f64,
}

/// Plane `z = a x + b y + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Plane {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// Least-squares plane over the selected points (centred normal equations).
pub fn fit_plane(cloud: &LabeledCloud, keep: &[bool]) -> Result<Plane, DistortionError> {
    let pts: Vec<_> = cloud
        .points
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| p.position)
        .collect();
    if pts.len() < 3 {
        return Err(DistortionError::RankDeficient);
    }
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut m = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for p in &pts {
        let d = p.coords - mean;
        let row = Vector3::new(d.x, d.y, 1.0);
        m += row * row.transpose();
        rhs += row * d.z;
    }
    // collinear footprints leave the 2x2 lateral block singular
    let lateral = m.fixed_view::<2, 2>(0, 0).into_owned();
    let scale = lateral.trace().max(f64::MIN_POSITIVE);
    if lateral.determinant() <= 1e-12 * scale * scale {
        return Err(DistortionError::RankDeficient);
    }
    let sol = m.lu().solve(&rhs).ok_or(DistortionError::RankDeficient)?;
    Ok(Plane {
        a: sol.x,
        b: sol.y,
        c: mean.z + sol.z - sol.x * mean.x - sol.y * mean.y,
    })
}

/// Plane fit with one pass of 3-sigma residual rejection.
pub fn robust_plane(cloud: &LabeledCloud) -> Result<(Plane, Vec<bool>), DistortionError> {
    let all = vec![true; cloud.len()];
    let first = fit_plane(cloud, &all)?;
    let res: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| p.position.z - first.eval(p.position.x, p.position.y))
        .collect();
    let sigma = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    let keep: Vec<bool> = res.iter().map(|r| r.abs() <= 3.0 * sigma).collect();
    let plane = fit_plane(cloud, &keep)?;
    Ok((plane, keep))
}

/// RMS distance in z of the cloud from its own robust plane.
pub fn plane_fit_rmse(cloud: &LabeledCloud) -> Result<f64, DistortionError> {
    let (plane, _) = robust_plane(cloud)?;
    let ss: f64 = cloud
        .points
        .iter()
        .map(|p| (p.position.z - plane.eval(p.position.x, p.position.y)).powi(2))
        .sum();
    Ok((ss / cloud.len() as f64).sqrt())
}

/// Estimates the per-column residual of a reconstructed planar target.
/// Columns without points are linearly interpolated from their neighbours.
pub fn estimate_field(
    planar_cloud: &LabeledCloud,
    pixel_index: &PixelIndex,
    width: usize,
) -> Result<DistortionField, DistortionError> {
    if pixel_index.len() != planar_cloud.len() {
        return Err(DistortionError::IndexLength {
            index: pixel_index.len(),
            points: planar_cloud.len(),
        });
    }
    if width == 0 || planar_cloud.len() < 10 * width {
        return Err(DistortionError::TooFewPoints {
            points: planar_cloud.len(),
            width,
        });
    }
    let (plane, keep) = robust_plane(planar_cloud)?;
    let mut sum = vec![0.0; width];
    let mut count = vec![0usize; width];
    for ((p, px), k) in planar_cloud.points.iter().zip(pixel_index).zip(&keep) {
        let col = px[0] as usize;
        if col >= width {
            return Err(DistortionError::WidthMismatch { column: col, width });
        }
        if *k {
            sum[col] += p.position.z - plane.eval(p.position.x, p.position.y);
            count[col] += 1;
        }
    }
    let known: Vec<usize> = (0..width).filter(|&c| count[c] > 0).collect();
    let mut field = vec![0.0; width];
    for &c in &known {
        field[c] = sum[c] / count[c] as f64;
    }
    for c in 0..width {
        if count[c] > 0 {
            continue;
        }
        let right = known.partition_point(|&k| k < c);
        field[c] = match (right.checked_sub(1).map(|i| known[i]), known.get(right)) {
            (Some(l), Some(&r)) => {
                let t = (c - l) as f64 / (r - l) as f64;
                field[l] * (1.0 - t) + field[r] * t
            }
            (Some(l), None) => field[l],
            (None, Some(&r)) => field[r],
            (None, None) => unreachable!("cloud is non-empty"),
        };
    }
    DistortionField::new(field)
}

/// Subtracts the field from every point's depth according to its source column.
pub fn compensate(
    cloud: &LabeledCloud,
    pixel_index: &PixelIndex,
    field: &DistortionField,
) -> Result<LabeledCloud, DistortionError> {
    if pixel_index.len() != cloud.len() {
        return Err(DistortionError::IndexLength {
            index: pixel_index.len(),
            points: cloud.len(),
        });
    }
    let mut out = cloud.clone();
    for (p, px) in out.points.iter_mut().zip(pixel_index) {
        let col = px[0] as usize;
        let r = field
            .per_column_residual
            .get(col)
            .ok_or(DistortionError::WidthMismatch {
                column: col,
                width: field.width(),
            })?;
        p.position.z -= r;
    }
    Ok(out)
}
