use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::spatial::SpatialIndex;
use super::RegistrationError;
use crate::projection::{CloudPoint, LabeledCloud};

/// A cloud with one normal per point. `None` marks a degenerate neighbourhood;
/// such points take no part in normal-dependent stages.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalCloud {
    pub cloud: LabeledCloud,
    pub normals: Vec<Option<Vector3<f64>>>,
}

impl NormalCloud {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.cloud.points.iter().map(|p| p.position).collect()
    }
}

/// Relative size of the middle covariance eigenvalue below which a
/// neighbourhood counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-10;

/// Smallest-eigenvector normals of the k-nearest-neighbour covariance
/// (the query point included), oriented to face the camera (`n_z <= 0`).
pub fn estimate_normals(cloud: &LabeledCloud, k: usize) -> Result<NormalCloud, RegistrationError> {
    if k < 3 {
        return Err(RegistrationError::InvalidParams(format!(
            "normal neighbourhood k = {k} < 3"
        )));
    }
    if cloud.len() < k {
        return Err(RegistrationError::TooFewPoints {
            need: k,
            got: cloud.len(),
        });
    }
    let positions: Vec<Point3<f64>> = cloud.points.iter().map(|p| p.position).collect();
    let index = SpatialIndex::new(&positions);
    let normals = positions
        .par_iter()
        .map(|p| {
            let nbrs: Vec<Point3<f64>> = index.knn(p, k).iter().map(|&(i, _)| positions[i]).collect();
            normal_of(&nbrs)
        })
        .collect();
    Ok(NormalCloud {
        cloud: cloud.clone(),
        normals,
    })
}

fn normal_of(nbrs: &[Point3<f64>]) -> Option<Vector3<f64>> {
    let n = nbrs.len() as f64;
    let mean = nbrs.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::<f64>::zeros();
    for p in nbrs {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(max > 0.0) || mid <= COLLINEAR_RATIO * max {
        return None;
    }
    let n = eig.eigenvectors.column(order[0]).normalize();
    Some(orient_to_camera(n))
}

/// Flips `n` so that `n . (0, 0, -1) >= 0`; exact ties fall back to the y
/// then x component so the sign is always determined.
pub fn orient_to_camera(n: Vector3<f64>) -> Vector3<f64> {
    let key = [n.z, n.y, n.x].into_iter().find(|c| *c != 0.0).unwrap_or(0.0);
    if key > 0.0 {
        -n
    } else {
        n
    }
}

/// Averages the points of each (voxel, label) cell. Colours are taken from
/// the first point of the cell; cells are emitted in first-seen order.
pub fn voxel_downsample(cloud: &LabeledCloud, voxel: f64) -> LabeledCloud {
    if !(voxel > 0.0) {
        return cloud.clone();
    }
    let mut slots: HashMap<(i64, i64, i64, Option<u8>), usize> = HashMap::new();
    let mut acc: Vec<(Vector3<f64>, usize, CloudPoint)> = Vec::new();
    for p in &cloud.points {
        let key = (
            (p.position.x / voxel).floor() as i64,
            (p.position.y / voxel).floor() as i64,
            (p.position.z / voxel).floor() as i64,
            p.label,
        );
        let slot = *slots.entry(key).or_insert_with(|| {
            acc.push((Vector3::zeros(), 0, *p));
            acc.len() - 1
        });
        acc[slot].0 += p.position.coords;
        acc[slot].1 += 1;
    }
    LabeledCloud::new(
        acc.into_iter()
            .map(|(sum, n, first)| {
                CloudPoint::new(Point3::from(sum / n as f64), first.color, first.label)
            })
            .collect(),
    )
}
