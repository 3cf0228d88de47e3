use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normals::NormalCloud;
use super::spatial::SpatialIndex;
use super::RegistrationError;
use crate::transform::{kabsch, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_iterations: usize,
    pub sample_size: usize,
    /// mm
    pub inlier_distance: f64,
    /// radians
    pub normal_angle_max: f64,
    /// Half-width, radians, of the accepted in-plane rotation band around the
    /// orientation estimate. `PI` or more disables the constraint.
    pub inplane_angle_window: f64,
    pub rng_seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            sample_size: 3,
            inlier_distance: 0.5,
            normal_angle_max: 30f64.to_radians(),
            inplane_angle_window: 25f64.to_radians(),
            rng_seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: &str| Err(RegistrationError::InvalidParams(m.to_string()));
        if self.sample_size != 3 {
            return bad("ransac sample_size must be 3");
        }
        if !(self.inlier_distance > 0.0) {
            return bad("ransac inlier_distance must be > 0");
        }
        if self.max_iterations == 0 {
            return bad("ransac max_iterations must be > 0");
        }
        if !(self.normal_angle_max >= 0.0) || !(self.inplane_angle_window >= 0.0) {
            return bad("ransac angles must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RansacResult {
    /// Model-to-camera transform, `B ~ T A`.
    pub transform: RigidTransform,
    pub inliers: usize,
    /// Inliers over the B points that took part in scoring.
    pub inlier_fraction: f64,
    /// Hypotheses that passed the in-plane constraint and were scored.
    pub scored: usize,
    pub rejected_by_constraint: usize,
}

/// Wraps an angle to `(-PI, PI]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Per-label point lists and trees over the valid-normal points of a cloud.
pub(crate) struct LabelTrees {
    pub labels: BTreeMap<u8, (Vec<usize>, SpatialIndex)>,
}

impl LabelTrees {
    pub fn new(nc: &NormalCloud) -> Self {
        let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, (p, n)) in nc.cloud.points.iter().zip(&nc.normals).enumerate() {
            if let (Some(l), Some(_)) = (p.label, n) {
                groups.entry(l).or_default().push(i);
            }
        }
        let labels = groups
            .into_iter()
            .map(|(l, idx)| {
                let pts: Vec<Point3<f64>> = idx.iter().map(|&i| nc.cloud.points[i].position).collect();
                (l, (idx, SpatialIndex::new(&pts)))
            })
            .collect();
        Self { labels }
    }

    /// Nearest same-label point: `(cloud index, squared distance)`.
    pub fn nearest(&self, label: u8, q: &Point3<f64>) -> Option<(usize, f64)> {
        let (idx, tree) = self.labels.get(&label)?;
        tree.nearest(q).map(|(i, d)| (idx[i], d))
    }
}

struct Scorer<'a> {
    a: &'a NormalCloud,
    b: &'a NormalCloud,
    trees: &'a LabelTrees,
    max_d2: f64,
    min_cos: f64,
}

impl Scorer<'_> {
    /// `(a index, b index, squared distance)` of every inlier pair among
    /// `b_idx` under `t`.
    fn matches(&self, t: &RigidTransform, b_idx: &[usize]) -> Vec<(usize, usize, f64)> {
        let inv = t.inverse();
        b_idx
            .iter()
            .filter_map(|&bi| {
                let bp = &self.b.cloud.points[bi];
                let q = inv.apply(&bp.position);
                let (ai, d2) = self.trees.nearest(bp.label?, &q)?;
                if d2 > self.max_d2 {
                    return None;
                }
                let na = self.a.normals[ai]?;
                let nb = inv.apply_vector(&self.b.normals[bi]?);
                (na.dot(&nb).abs() >= self.min_cos).then_some((ai, bi, d2))
            })
            .collect()
    }

    fn inlier_pairs(&self, t: &RigidTransform, b_idx: &[usize]) -> Vec<(usize, usize)> {
        self.matches(t, b_idx).into_iter().map(|(ai, bi, _)| (ai, bi)).collect()
    }

    fn score(&self, t: &RigidTransform, b_idx: &[usize]) -> usize {
        self.matches(t, b_idx).len()
    }

    /// Inlier count and summed squared inlier distance.
    fn score_with_residual(&self, t: &RigidTransform, b_idx: &[usize]) -> (usize, f64) {
        let m = self.matches(t, b_idx);
        (m.len(), m.iter().map(|x| x.2).sum())
    }
}

enum Outcome {
    Degenerate,
    Rejected,
    Scored(RigidTransform, usize),
}

/// Points scored in the screening pass before the best hypotheses are
/// rescored on all of B.
const SCREEN_POINTS: usize = 256;
const FINALISTS: usize = 16;
/// Least-squares re-fits of the winner, each over the inliers of the last.
const REFINE_PASSES: usize = 5;

/// Label-identity RANSAC with an in-plane rotation constraint.
///
/// Each hypothesis draws three B points with pairwise separation, then
/// same-label A partners whose mutual distances agree with the B triangle.
/// Hypotheses are generated from per-iteration streams of one seeded
/// generator, so the result does not depend on the thread count.
pub fn ransac_coarse_align(
    a: &NormalCloud,
    b: &NormalCloud,
    params: &RansacParams,
    inplane: f64,
) -> Result<RansacResult, RegistrationError> {
    params.validate()?;
    let trees = LabelTrees::new(a);
    let b_idx: Vec<usize> = (0..b.len())
        .filter(|&i| {
            b.normals[i].is_some()
                && b.cloud.points[i]
                    .label
                    .is_some_and(|l| trees.labels.contains_key(&l))
        })
        .collect();
    if b_idx.is_empty() {
        return Err(RegistrationError::NoSharedLabels);
    }
    if b_idx.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            need: 3,
            got: b_idx.len(),
        });
    }
    let scorer = Scorer {
        a,
        b,
        trees: &trees,
        max_d2: params.inlier_distance.powi(2),
        min_cos: params.normal_angle_max.min(PI / 2.0).cos(),
    };
    let stride = b_idx.len().div_ceil(SCREEN_POINTS);
    let screen: Vec<usize> = b_idx.iter().step_by(stride).copied().collect();
    let min_sep = 4.0 * params.inlier_distance;
    let tol = 2.0 * params.inlier_distance;

    let outcomes: Vec<Outcome> = (0..params.max_iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
            rng.set_stream(it as u64);
            let Some(t) = hypothesis(&mut rng, a, b, &trees, &b_idx, min_sep, tol) else {
                return Outcome::Degenerate;
            };
            if wrap_angle(t.inplane_angle() - inplane).abs() > params.inplane_angle_window {
                return Outcome::Rejected;
            }
            let s = scorer.score(&t, &screen);
            Outcome::Scored(t, s)
        })
        .collect();

    let rejected = outcomes.iter().filter(|o| matches!(o, Outcome::Rejected)).count();
    let mut scored: Vec<(usize, usize, RigidTransform)> = outcomes
        .into_iter()
        .enumerate()
        .filter_map(|(i, o)| match o {
            Outcome::Scored(t, s) => Some((s, i, t)),
            _ => None,
        })
        .collect();
    if scored.is_empty() {
        return Err(if rejected > 0 {
            RegistrationError::ConstraintRejectedAll { rejected }
        } else {
            RegistrationError::NoHypothesis
        });
    }
    let n_scored = scored.len();
    // highest screening score first, earliest iteration on ties
    scored.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    scored.truncate(FINALISTS);
    let finals: Vec<(usize, f64)> = scored
        .par_iter()
        .map(|(_, _, t)| scorer.score_with_residual(t, &b_idx))
        .collect();
    // most inliers, then smallest residual, then earliest iteration
    let mut best = 0;
    for (k, &(n, r)) in finals.iter().enumerate().skip(1) {
        let (bn, br) = finals[best];
        if n > bn || (n == bn && r < br) {
            best = k;
        }
    }
    let mut transform = scored[best].2;
    let mut pairs = scorer.inlier_pairs(&transform, &b_idx);
    for _ in 0..REFINE_PASSES {
        let src: Vec<Point3<f64>> = pairs.iter().map(|&(ai, _)| a.cloud.points[ai].position).collect();
        let dst: Vec<Point3<f64>> = pairs.iter().map(|&(_, bi)| b.cloud.points[bi].position).collect();
        let Some(fit) = kabsch(&src, &dst) else { break };
        transform = fit;
        let next = scorer.inlier_pairs(&transform, &b_idx);
        if next == pairs || next.len() < pairs.len() {
            break;
        }
        pairs = next;
    }
    Ok(RansacResult {
        transform,
        inliers: pairs.len(),
        inlier_fraction: pairs.len() as f64 / b_idx.len() as f64,
        scored: n_scored,
        rejected_by_constraint: rejected,
    })
}

fn hypothesis(
    rng: &mut ChaCha8Rng,
    a: &NormalCloud,
    b: &NormalCloud,
    trees: &LabelTrees,
    b_idx: &[usize],
    min_sep: f64,
    tol: f64,
) -> Option<RigidTransform> {
    let bpos = |i: usize| b.cloud.points[b_idx[i]].position;
    let i1 = rng.random_range(0..b_idx.len());
    let i2 = rng.random_range(0..b_idx.len());
    let i3 = rng.random_range(0..b_idx.len());
    let (b1, b2, b3) = (bpos(i1), bpos(i2), bpos(i3));
    let (d12, d13, d23) = ((b2 - b1).norm(), (b3 - b1).norm(), (b3 - b2).norm());
    if d12 < min_sep || d13 < min_sep || d23 < min_sep {
        return None;
    }
    // reject slivers: height of the triangle over its longest side
    let area2 = (b2 - b1).cross(&(b3 - b1)).norm();
    if area2 / d12.max(d13).max(d23) < 0.5 * min_sep {
        return None;
    }
    let label = |i: usize| b.cloud.points[b_idx[i]].label.expect("filtered to labeled");
    let apos = |i: usize| a.cloud.points[i].position;
    let (l1, _) = trees.labels.get(&label(i1))?;
    let a1 = l1[rng.random_range(0..l1.len())];
    let (l2, _) = trees.labels.get(&label(i2))?;
    let c2: Vec<usize> = l2
        .iter()
        .copied()
        .filter(|&j| ((apos(j) - apos(a1)).norm() - d12).abs() <= tol)
        .collect();
    if c2.is_empty() {
        return None;
    }
    let a2 = c2[rng.random_range(0..c2.len())];
    let (l3, _) = trees.labels.get(&label(i3))?;
    let c3: Vec<usize> = l3
        .iter()
        .copied()
        .filter(|&j| {
            ((apos(j) - apos(a1)).norm() - d13).abs() <= tol
                && ((apos(j) - apos(a2)).norm() - d23).abs() <= tol
        })
        .collect();
    if c3.is_empty() {
        return None;
    }
    let a3 = c3[rng.random_range(0..c3.len())];
    kabsch(&[apos(a1), apos(a2), apos(a3)], &[b1, b2, b3])
}

/// Centroid of each label's points, `(x, y)` only.
pub fn label_centroids_2d(cloud: &crate::projection::LabeledCloud) -> BTreeMap<u8, [f64; 2]> {
    let mut acc: BTreeMap<u8, (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        if let Some(l) = p.label {
            let e = acc.entry(l).or_insert((Vector3::zeros(), 0));
            e.0 += p.position.coords;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(l, (s, n))| (l, [s.x / n as f64, s.y / n as f64]))
        .collect()
}

/// Least-squares 2D rotation (no scale) taking the A constellation onto the
/// B constellation, over the labels both share.
pub fn inplane_from_centroids(
    a: &BTreeMap<u8, [f64; 2]>,
    b: &BTreeMap<u8, [f64; 2]>,
) -> Result<f64, RegistrationError> {
    let shared: Vec<([f64; 2], [f64; 2])> = a
        .iter()
        .filter_map(|(l, pa)| b.get(l).map(|pb| (*pa, *pb)))
        .collect();
    if shared.len() < 2 {
        return Err(RegistrationError::TooFewSharedLabels(shared.len()));
    }
    let n = shared.len() as f64;
    let mean = |sel: fn(&([f64; 2], [f64; 2])) -> [f64; 2]| {
        let s = shared.iter().map(sel).fold([0.0, 0.0], |m, p| [m[0] + p[0], m[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ma, mb) = (mean(|s| s.0), mean(|s| s.1));
    let (mut dot, mut cross) = (0.0, 0.0);
    for (pa, pb) in &shared {
        let (ax, ay) = (pa[0] - ma[0], pa[1] - ma[1]);
        let (bx, by) = (pb[0] - mb[0], pb[1] - mb[1]);
        dot += ax * bx + ay * by;
        cross += ax * by - ay * bx;
    }
    if dot == 0.0 && cross == 0.0 {
        return Err(RegistrationError::TooFewSharedLabels(1));
    }
    Ok(cross.atan2(dot))
}

/// In-plane rotation of B relative to A estimated from label centroids
/// projected onto the image plane.
pub fn estimate_inplane_orientation(
    a: &crate::projection::LabeledCloud,
    b: &crate::projection::LabeledCloud,
) -> Result<f64, RegistrationError> {
    inplane_from_centroids(&label_centroids_2d(a), &label_centroids_2d(b))
}
