use nalgebra::{Matrix3, Matrix6, Point3, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normals::{estimate_normals, voxel_downsample, NormalCloud};
use super::spatial::{median_spacing, SpatialIndex};
use super::RegistrationError;
use crate::projection::LabeledCloud;
use crate::transform::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorIcpParams {
    /// Weight of the geometric term; `1 - delta` weighs the colour term.
    pub delta: f64,
    /// Per scale.
    pub max_iterations: usize,
    /// mm at the finest scale; `None` means 5x the median spacing of A.
    pub correspondence_radius: Option<f64>,
    pub convergence_eps: f64,
    pub label_strict: bool,
    /// Coarse-to-fine over voxel sizes of 4x, 2x and 1x the median spacing.
    pub multi_scale: bool,
    /// Neighbourhood size for normals and colour gradients.
    pub normal_k: usize,
}

impl Default for ColorIcpParams {
    fn default() -> Self {
        Self {
            delta: 0.968,
            max_iterations: 30,
            correspondence_radius: None,
            convergence_eps: 1e-6,
            label_strict: true,
            multi_scale: true,
            normal_k: 20,
        }
    }
}

impl ColorIcpParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: &str| Err(RegistrationError::InvalidParams(m.to_string()));
        if !(0.0..=1.0).contains(&self.delta) {
            return bad("icp delta must lie in [0, 1]");
        }
        if self.correspondence_radius.is_some_and(|r| !(r > 0.0)) {
            return bad("icp correspondence_radius must be > 0");
        }
        if self.normal_k < 3 {
            return bad("icp normal_k must be >= 3");
        }
        if !(self.convergence_eps >= 0.0) {
            return bad("icp convergence_eps must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleTrace {
    pub voxel: f64,
    pub radius: f64,
    /// Objective after each accepted iteration, starting with its value at
    /// the scale's initial transform.
    pub objective: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcpResult {
    /// Model-to-camera transform, `B ~ T A`.
    pub transform: RigidTransform,
    /// Fraction of B points with an accepted correspondence.
    pub fitness: f64,
    /// RMS distance over accepted correspondences, mm.
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    pub scales: Vec<ScaleTrace>,
}

/// Target side of one scale: A points with valid normals, colours in [0, 1]
/// and per-channel tangent-plane colour gradients.
struct Target {
    pos: Vec<Point3<f64>>,
    normal: Vec<Vector3<f64>>,
    color: Vec<Vector3<f64>>,
    grad: Vec<[Vector3<f64>; 3]>,
    label: Vec<Option<u8>>,
    tree: SpatialIndex,
}

impl Target {
    fn new(a: &NormalCloud, k: usize, with_color: bool) -> Self {
        let keep: Vec<usize> = (0..a.len()).filter(|&i| a.normals[i].is_some()).collect();
        let pos: Vec<Point3<f64>> = keep.iter().map(|&i| a.cloud.points[i].position).collect();
        let normal: Vec<Vector3<f64>> = keep.iter().map(|&i| a.normals[i].unwrap()).collect();
        let color: Vec<Vector3<f64>> = keep
            .iter()
            .map(|&i| rgb_unit(a.cloud.points[i].color))
            .collect();
        let label = keep.iter().map(|&i| a.cloud.points[i].label).collect();
        let tree = SpatialIndex::new(&pos);
        let grad = if with_color {
            (0..pos.len())
                .into_par_iter()
                .map(|i| color_gradient(i, &pos, &normal, &color, &tree, k))
                .collect()
        } else {
            vec![[Vector3::zeros(); 3]; pos.len()]
        };
        Self {
            pos,
            normal,
            color,
            grad,
            label,
            tree,
        }
    }
}

fn rgb_unit(c: [u8; 3]) -> Vector3<f64> {
    Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 255.0
}

/// Least-squares gradient of each colour channel over the neighbours
/// projected onto the tangent plane, constrained orthogonal to the normal.
fn color_gradient(
    i: usize,
    pos: &[Point3<f64>],
    normal: &[Vector3<f64>],
    color: &[Vector3<f64>],
    tree: &SpatialIndex,
    k: usize,
) -> [Vector3<f64>; 3] {
    let (p, n) = (pos[i], normal[i]);
    let mut m = n * n.transpose();
    let mut rhs = Matrix3::<f64>::zeros();
    for (j, _) in tree.knn(&p, k) {
        if j == i {
            continue;
        }
        let d = pos[j] - p;
        let s = d - n * n.dot(&d);
        m += s * s.transpose();
        rhs += s * (color[j] - color[i]).transpose();
    }
    match m.try_inverse() {
        Some(inv) => {
            let g = inv * rhs;
            [g.column(0).into(), g.column(1).into(), g.column(2).into()]
        }
        None => [Vector3::zeros(); 3],
    }
}

struct Source {
    pos: Vec<Point3<f64>>,
    color: Vec<Vector3<f64>>,
    label: Vec<Option<u8>>,
}

impl Source {
    fn new(b: &LabeledCloud) -> Self {
        Self {
            pos: b.points.iter().map(|p| p.position).collect(),
            color: b.points.iter().map(|p| rgb_unit(p.color)).collect(),
            label: b.points.iter().map(|p| p.label).collect(),
        }
    }
}

/// Objective, statistics and normal equations at one transform.
#[derive(Clone)]
struct Eval {
    objective: f64,
    matched: usize,
    sq_dist: f64,
    jtj: Matrix6<f64>,
    jtr: Vector6<f64>,
}

impl Eval {
    fn zero() -> Self {
        Self {
            objective: 0.0,
            matched: 0,
            sq_dist: 0.0,
            jtj: Matrix6::zeros(),
            jtr: Vector6::zeros(),
        }
    }

    fn add(&mut self, o: &Eval) {
        self.objective += o.objective;
        self.matched += o.matched;
        self.sq_dist += o.sq_dist;
        self.jtj += o.jtj;
        self.jtr += o.jtr;
    }
}

/// Fixed chunking keeps floating-point summation order independent of the
/// thread count.
const CHUNK: usize = 512;

struct Problem<'a> {
    target: &'a Target,
    source: &'a Source,
    delta: f64,
    radius2: f64,
    strict: bool,
    /// Cost of an unmatched or truncated source point.
    cap: f64,
}

impl Problem<'_> {
    /// `t` maps source (camera) points into the target (model) frame.
    fn evaluate(&self, t: &RigidTransform) -> Eval {
        let partial: Vec<Eval> = self
            .source
            .pos
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut e = Eval::zero();
                for (k, b) in chunk.iter().enumerate() {
                    self.accumulate(c * CHUNK + k, &t.apply(b), &mut e);
                }
                e
            })
            .collect();
        let mut total = Eval::zero();
        for p in &partial {
            total.add(p);
        }
        total.objective /= self.source.pos.len() as f64;
        total
    }

    /// Target partner of source point `bi` placed at `q`, with its squared
    /// distance.
    fn correspondence(&self, bi: usize, q: &Point3<f64>) -> Option<(usize, f64)> {
        let tg = self.target;
        let (ai, d2) = tg.tree.nearest(q)?;
        if d2 > self.radius2 || (self.strict && tg.label[ai] != self.source.label[bi]) {
            return None;
        }
        Some((ai, d2))
    }

    fn accumulate(&self, bi: usize, q: &Point3<f64>, e: &mut Eval) {
        let tg = self.target;
        let Some((ai, d2)) = self.correspondence(bi, q) else {
            e.objective += self.cap;
            return;
        };
        let n = tg.normal[ai];
        let diff = q - tg.pos[ai];
        let rg = diff.dot(&n);
        let mut cost = self.delta * rg * rg;
        let mut rc = [0.0; 3];
        if self.delta < 1.0 {
            for (ch, r) in rc.iter_mut().enumerate() {
                *r = tg.color[ai][ch] + tg.grad[ai][ch].dot(&diff) - self.source.color[bi][ch];
                cost += (1.0 - self.delta) * *r * *r;
            }
        }
        if cost >= self.cap {
            e.objective += self.cap;
            return;
        }
        e.objective += cost;
        e.matched += 1;
        e.sq_dist += d2;
        let jg = jacobian_row(q, &n);
        e.jtj += self.delta * jg * jg.transpose();
        e.jtr += self.delta * jg * rg;
        if self.delta < 1.0 {
            for (ch, r) in rc.iter().enumerate() {
                let jc = jacobian_row(q, &tg.grad[ai][ch]);
                e.jtj += (1.0 - self.delta) * jc * jc.transpose();
                e.jtr += (1.0 - self.delta) * jc * *r;
            }
        }
    }
}

/// Derivative of `v . (q - p)` under the left perturbation `exp(xi) T`.
fn jacobian_row(q: &Point3<f64>, v: &Vector3<f64>) -> Vector6<f64> {
    let w = q.coords.cross(v);
    Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

fn solve_step(e: &Eval) -> Option<Vector6<f64>> {
    let scale = (0..6).map(|i| e.jtj[(i, i)]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let damped = e.jtj + Matrix6::identity() * (1e-9 * scale);
    damped.cholesky().map(|c| -c.solve(&e.jtr))
}

const MAX_HALVINGS: usize = 10;

/// Coloured ICP between model features `a` and camera features `b`,
/// starting from the model-to-camera estimate `t_init`.
///
/// Each Gauss-Newton step is line-searched on the full objective with fresh
/// correspondences, so accepted objective values never increase.
pub fn color_icp_refine(
    a: &NormalCloud,
    b: &LabeledCloud,
    t_init: &RigidTransform,
    params: &ColorIcpParams,
) -> Result<IcpResult, RegistrationError> {
    params.validate()?;
    if a.valid_count() == 0 {
        return Err(RegistrationError::EmptyCloud("A"));
    }
    if b.is_empty() {
        return Err(RegistrationError::EmptyCloud("B"));
    }
    let spacing = median_spacing(&a.positions()).unwrap_or(1.0).max(1e-9);
    let base_radius = params.correspondence_radius.unwrap_or(5.0 * spacing);
    let levels: &[f64] = if params.multi_scale { &[4.0, 2.0, 1.0] } else { &[0.0] };
    let with_color = params.delta < 1.0;

    // internal transform maps camera points into the model frame
    let mut t = t_init.inverse();
    let mut scales = Vec::new();
    let mut iterations = 0;
    let mut last = None;
    for (level, &factor) in levels.iter().enumerate() {
        let (a_s, b_s, voxel) = if factor > 0.0 {
            let voxel = factor * spacing;
            let ad = voxel_downsample(&a.cloud, voxel);
            let an = match estimate_normals(&ad, params.normal_k.min(ad.len())) {
                Ok(n) => n,
                Err(_) => continue,
            };
            (an, voxel_downsample(b, voxel), voxel)
        } else {
            (a.clone(), b.clone(), spacing)
        };
        if b_s.is_empty() {
            continue;
        }
        let radius = base_radius * factor.max(1.0);
        let target = Target::new(&a_s, params.normal_k, with_color);
        let source = Source::new(&b_s);
        let problem = Problem {
            target: &target,
            source: &source,
            delta: params.delta,
            radius2: radius * radius,
            strict: params.label_strict,
            cap: params.delta * radius * radius + (1.0 - params.delta) * 3.0,
        };
        let mut cur = problem.evaluate(&t);
        if level == 0 && cur.matched == 0 {
            return Err(RegistrationError::NoCorrespondences);
        }
        let mut trace = ScaleTrace {
            voxel,
            radius,
            objective: vec![cur.objective],
            converged: false,
        };
        let n_src = source.pos.len() as f64;
        for _ in 0..params.max_iterations {
            let Some(step) = solve_step(&cur) else {
                trace.converged = true;
                break;
            };
            iterations += 1;
            let mut accepted = None;
            let mut alpha = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let trial = RigidTransform::exp(&(step * alpha)).compose(&t).renormalized();
                let e = problem.evaluate(&trial);
                if e.objective <= cur.objective {
                    accepted = Some((trial, e));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((trial, e)) = accepted else {
                // no descent along the Gauss-Newton direction: stationary
                trace.converged = true;
                break;
            };
            let d_fit = (e.matched as f64 - cur.matched as f64).abs() / n_src;
            let d_rmse = (rmse(&e) - rmse(&cur)).abs();
            t = trial;
            trace.objective.push(e.objective);
            cur = e;
            if d_fit < params.convergence_eps && d_rmse < params.convergence_eps {
                trace.converged = true;
                break;
            }
        }
        last = Some((cur.matched as f64 / n_src, rmse(&cur), trace.converged));
        scales.push(trace);
    }
    let (fitness, rmse, converged) = last.ok_or(RegistrationError::EmptyCloud("A"))?;
    Ok(IcpResult {
        transform: t.inverse(),
        fitness,
        rmse,
        converged,
        iterations,
        scales,
    })
}

fn rmse(e: &Eval) -> f64 {
    if e.matched == 0 {
        0.0
    } else {
        (e.sq_dist / e.matched as f64).sqrt()
    }
}
