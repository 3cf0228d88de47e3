use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Point3;

/// Static k-d tree over a point set. Query results are indices into the
/// slice the index was built from.
pub struct SpatialIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
    len: usize,
}

impl SpatialIndex {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self {
            tree: (!coords.is_empty()).then(|| ImmutableKdTree::new_from_slice(&coords)),
            len: coords.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Nearest point and its squared distance.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        let nn = self.tree.as_ref()?.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        Some((nn.item as usize, nn.distance))
    }

    /// Up to `k` nearest points as `(index, squared distance)`, ordered by
    /// distance then index.
    pub fn knn(&self, q: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let (Some(tree), Some(k)) = (&self.tree, NonZero::new(k)) else {
            return Vec::new();
        };
        let mut out: Vec<(usize, f64)> = tree
            .nearest_n::<SquaredEuclidean>(&[q.x, q.y, q.z], k)
            .into_iter()
            .map(|nn| (nn.item as usize, nn.distance))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Median nearest-neighbour distance; `None` for fewer than two points.
pub fn median_spacing(points: &[Point3<f64>]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let index = SpatialIndex::new(points);
    let mut d: Vec<f64> = points
        .iter()
        .map(|p| index.knn(p, 2).get(1).map_or(0.0, |n| n.1.sqrt()))
        .collect();
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}
