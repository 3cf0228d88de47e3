use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("rotation is not orthonormal (|R^T R - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation determinant {0} is not +1")]
    NotProper(f64),
    #[error("bottom row of a rigid 4x4 matrix must be [0, 0, 0, 1]")]
    BadHomogeneousRow,
    #[error("non-finite entry")]
    NonFinite,
}

const ORTHO_TOL: f64 = 1e-9;

/// Rotation followed by translation, `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, TransformError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(TransformError::NonFinite);
        }
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if dev > ORTHO_TOL {
            return Err(TransformError::NotOrthonormal(dev));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(TransformError::NotProper(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Skips the orthonormality check; for tests that need slightly broken input.
    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about the camera z axis by `angle` radians, then translation.
    pub fn from_inplane(angle: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix(),
            translation,
        }
    }

    /// Nearest proper rotation to `m` (SVD projection), with translation.
    pub fn from_approx(m: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: orthonormalize(&m),
            translation,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Exponential map of a twist `(omega, v)` (rotation vector first).
    pub fn exp(twist: &Vector6<f64>) -> Self {
        let omega = Vector3::new(twist[0], twist[1], twist[2]);
        let v = Vector3::new(twist[3], twist[4], twist[5]);
        let rot = Rotation3::new(omega);
        let theta = omega.norm();
        let k = skew(&omega);
        let jac = if theta < 1e-10 {
            Matrix3::identity() + 0.5 * k
        } else {
            Matrix3::identity()
                + (1.0 - theta.cos()) / (theta * theta) * k
                + (theta - theta.sin()) / (theta * theta * theta) * k * k
        };
        Self {
            rotation: *rot.matrix(),
            translation: jac * v,
        }
    }

    /// Rotation angle about the camera z axis of the best in-plane
    /// approximation of `R`.
    pub fn inplane_angle(&self) -> f64 {
        let r = &self.rotation;
        (r[(1, 0)] - r[(0, 1)]).atan2(r[(0, 0)] + r[(1, 1)])
    }

    /// Re-projects the rotation onto SO(3) to shed accumulated rounding.
    pub fn renormalized(&self) -> Self {
        Self::from_approx(self.rotation, self.translation)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, TransformError> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(TransformError::BadHomogeneousRow);
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Row-major 4x4 nested array.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self, TransformError> {
        Self::from_matrix(&Matrix4::from_fn(|i, j| rows[i][j]))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TransformJson {
            matrix: self.to_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = TransformJson::deserialize(d)?;
        Self::from_rows(&j.matrix).map_err(serde::de::Error::custom)
    }
}

/// On-disk form: `{"matrix": [[r00, r01, r02, tx], ..., [0, 0, 0, 1]]}`.
#[derive(Serialize, Deserialize)]
struct TransformJson {
    matrix: [[f64; 4]; 4],
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]` (Kabsch).
/// Returns `None` for fewer than 3 pairs.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<RigidTransform> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n as f64;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n as f64;
    let mut h = Matrix3::<f64>::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d.coords - cd) * (s.coords - cs).transpose();
    }
    let r = orthonormalize(&h);
    Some(RigidTransform {
        rotation: r,
        translation: cd - r * cs,
    })
}
