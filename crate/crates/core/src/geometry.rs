//! Pinhole projection, the 6th-order radial distortion model and
//! rotation-vector algebra.
//!
//! Pixel coordinates are continuous with the origin at the sensor corner.
//! Target points live on the `Z = 0` plane of the world frame and are
//! expressed in millimetres.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Below this rotation angle the Rodrigues terms switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// Focal lengths and principal point of a zero-skew pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive and finite, got fx={fx}, fy={fy}"
            )));
        }
        if !(u0.is_finite() && v0.is_finite()) {
            return Err(Error::InvalidParameter("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, u0, v0 })
    }

    /// Skew is not modelled.
    pub fn skew(&self) -> f64 {
        0.0
    }

    pub fn principal_point(&self) -> Point2 {
        Point2::new(self.u0, self.v0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.u0, 0.0, self.fy, self.v0, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.u0 / self.fx,
            0.0,
            1.0 / self.fy,
            -self.v0 / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Target pose as a rotation vector (radians) and a translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    pub theta: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl PoseParams {
    pub fn new(theta: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { theta, t }
    }

    /// Builds a pose from angles given in degrees.
    pub fn from_degrees(theta_deg: [f64; 3], t: [f64; 3]) -> Self {
        Self {
            theta: Vector3::new(
                theta_deg[0].to_radians(),
                theta_deg[1].to_radians(),
                theta_deg[2].to_radians(),
            ),
            t: Vector3::from(t),
        }
    }

    pub fn theta_degrees(&self) -> [f64; 3] {
        [
            self.theta.x.to_degrees(),
            self.theta.y.to_degrees(),
            self.theta.z.to_degrees(),
        ]
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_axis_angle(&self.theta)
    }

    /// The 3x3 matrix `[r1 r2 t]` mapping plane points `(X, Y, 1)` to camera coordinates.
    pub fn plane_matrix(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let mut e = r;
        e.set_column(2, &self.t);
        e
    }
}

/// Coefficients of the even radial polynomial on normalized radius powers 2, 4 and 6.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RadialDistortion {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl RadialDistortion {
    pub const fn new(k1: f64, k2: f64, k3: f64) -> Self {
        Self { k1, k2, k3 }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Relative radial displacement `k1 r^2 + k2 r^4 + k3 r^6` at squared normalized radius `r2`.
    pub fn relative_displacement(&self, r2: f64) -> f64 {
        r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub width: f64,
    pub height: f64,
}

impl SensorSpec {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sensor size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// Paired target points (mm, on the `Z = 0` plane) and detected image points (px).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub target: Vec<Point2>,
    pub image: Vec<Point2>,
    /// Ideal (undistorted) image points, only known for synthetic data.
    pub ideal: Option<Vec<Point2>>,
}

impl CorrespondenceSet {
    pub fn new(target: Vec<Point2>, image: Vec<Point2>) -> Result<Self> {
        if target.len() != image.len() {
            return Err(Error::LengthMismatch {
                left: target.len(),
                right: image.len(),
            });
        }
        Ok(Self {
            target,
            image,
            ideal: None,
        })
    }

    pub fn with_ideal(mut self, ideal: Vec<Point2>) -> Result<Self> {
        if ideal.len() != self.target.len() {
            return Err(Error::LengthMismatch {
                left: self.target.len(),
                right: ideal.len(),
            });
        }
        self.ideal = Some(ideal);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Keeps the correspondences selected by `keep`, preserving order.
    pub fn filter<F: Fn(usize) -> bool>(&self, keep: F) -> CorrespondenceSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        CorrespondenceSet {
            target: idx.iter().map(|&i| self.target[i]).collect(),
            image: idx.iter().map(|&i| self.image[i]).collect(),
            ideal: self
                .ideal
                .as_ref()
                .map(|ideal| idx.iter().map(|&i| ideal[i]).collect()),
        }
    }
}

fn skew_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula. The result is orthonormal with determinant +1.
pub fn rotation_from_axis_angle(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle2 = theta.norm_squared();
    let angle = angle2.sqrt();
    let k = skew_matrix(theta);
    let (a, b) = if angle < SMALL_ANGLE {
        (1.0 - angle2 / 6.0, 0.5 - angle2 / 24.0)
    } else {
        (angle.sin() / angle, (1.0 - angle.cos()) / angle2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`rotation_from_axis_angle`]; returns the representative with `|theta| <= pi`.
pub fn axis_angle_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let s = v.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = s.atan2(c);

    if angle < SMALL_ANGLE {
        // sin(a)/a ~ 1 - a^2/6
        return v * (1.0 + angle * angle / 6.0);
    }
    if c > -0.9 {
        return v * (angle / s);
    }

    // Near pi the antisymmetric part vanishes; recover the axis from the symmetric part.
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let col = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = b.column(col).into_owned();
    let n = axis.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    axis /= n;
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Projects a target point through the ideal pinhole model.
pub fn project_ideal(pw: &Point2, a: &CameraIntrinsics, e: &PoseParams) -> Result<Point2> {
    project_with_rotation(pw, a, &e.rotation(), &e.t)
}

/// Same as [`project_ideal`] with a precomputed rotation matrix.
pub fn project_with_rotation(
    pw: &Point2,
    a: &CameraIntrinsics,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Result<Point2> {
    let xc = r[(0, 0)] * pw.x + r[(0, 1)] * pw.y + t.x;
    let yc = r[(1, 0)] * pw.x + r[(1, 1)] * pw.y + t.y;
    let zc = r[(2, 0)] * pw.x + r[(2, 1)] * pw.y + t.z;
    if zc <= 0.0 || !zc.is_finite() {
        return Err(Error::NonPositiveDepth);
    }
    Ok(Point2::new(a.fx * xc / zc + a.u0, a.fy * yc / zc + a.v0))
}

/// Moves an ideal image point radially about the principal point.
pub fn apply_distortion(p: &Point2, a: &CameraIntrinsics, k: &RadialDistortion) -> Point2 {
    if k.is_zero() {
        return *p;
    }
    let xn = (p.x - a.u0) / a.fx;
    let yn = (p.y - a.v0) / a.fy;
    let r2 = xn * xn + yn * yn;
    let factor = 1.0 + k.relative_displacement(r2);
    Point2::new(a.fx * xn * factor + a.u0, a.fy * yn * factor + a.v0)
}

/// Inverts [`apply_distortion`] by Newton iteration on the squared normalized radius.
///
/// Returns `None` when the radial map is not invertible at this radius.
pub fn remove_distortion(pd: &Point2, a: &CameraIntrinsics, k: &RadialDistortion) -> Option<Point2> {
    let xd = (pd.x - a.u0) / a.fx;
    let yd = (pd.y - a.v0) / a.fy;
    let rd = xd.hypot(yd);
    if rd == 0.0 {
        return Some(*pd);
    }
    // solve g(r) = r (1 + k1 r^2 + k2 r^4 + k3 r^6) - rd = 0
    let mut r = rd;
    for _ in 0..50 {
        let r2 = r * r;
        let g = r * (1.0 + k.relative_displacement(r2)) - rd;
        let dg = 1.0 + r2 * (3.0 * k.k1 + r2 * (5.0 * k.k2 + 7.0 * k.k3 * r2));
        if dg <= 0.0 {
            return None;
        }
        let step = g / dg;
        r -= step;
        if step.abs() < 1e-16 * rd.max(1e-300) {
            break;
        }
    }
    let scale = r / rd;
    Some(Point2::new(
        a.fx * xd * scale + a.u0,
        a.fy * yd * scale + a.v0,
    ))
}

/// Per-point Euclidean distance between two equally long point lists.
pub fn total_disparity(a: &[Point2], b: &[Point2]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(p, q)| p.dist(q)).collect())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Median of a slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
