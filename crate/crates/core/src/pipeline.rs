//! The single-image calibration workflow.
//!
//! 1. Locate the center of distortion from the collinearity of detected
//!    points, homography-reprojected points and the center.
//! 2. Re-estimate the homography on the points inside the largest circle
//!    around that center, derive the focal length in closed form and the pose.
//! 3. Refine either with the 6th-order polynomial model by reprojection error
//!    (model-based) or by making the radial curve monotone and then pinning
//!    its scale at the origin (model-free).

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;

use crate::curve::{undistort_points, RadialCurve};
use crate::error::{Error, Result, Stage};
use crate::geometry::{
    axis_angle_from_rotation, mean_std, median, rotation_from_axis_angle, total_disparity, CameraIntrinsics,
    CorrespondenceSet, Point2, PoseParams, RadialDistortion, SensorSpec,
};
use crate::homography::{estimate_homography, extrinsics_from_homography, reproject, Homography};
use crate::optimize::{
    least_squares, minimize, minimize_scalar_constrained, BoundedProblem, LeastSquaresProblem,
    OptimResult, ScaleConstraint, DEFAULT_TOL,
};

const CHUNK: usize = 16384;

/// Below this many points the center-of-distortion search is refused.
pub const MIN_STEP1_POINTS: usize = 1000;
/// Below this many points the center-of-distortion search runs with a warning.
pub const DENSE_STEP1_POINTS: usize = 10_000;
/// Median homography disparity below which there is no radial field to exploit, px.
pub const MIN_MEDIAN_DISPARITY: f64 = 0.05;
/// Smallest `|h31 * h32|` (with `h33 = 1`) accepted by the closed-form focal length.
pub const MIN_H31_H32: f64 = 1e-12;
/// Bracket for the model-free scale search.
pub const SCALE_BRACKET: (f64, f64) = (0.5, 2.0);
/// Starting collinearity scale; the cost is maximal near 1, so the search starts below it.
pub const STEP1_SCALE_START: f64 = 0.9;

fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    // fixed chunking keeps the reduction order independent of the thread pool
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partial: Vec<f64> = starts
        .par_iter()
        .map(|&s| (s..(s + CHUNK).min(n)).map(&f).sum::<f64>())
        .collect();
    partial.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ModelBased,
    ModelFree,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ModelBased => "mb",
            Mode::ModelFree => "mf",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "mb" => Some(Mode::ModelBased),
            "mf" => Some(Mode::ModelFree),
            _ => None,
        }
    }
}

/// Starting point of the center-of-distortion search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodInit {
    SensorCenter,
    /// Centroid of the 1% lowest-disparity points in the central third of the image.
    DisparityMinimum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step1Config {
    pub init: CodInit,
    pub tol: f64,
}

impl Default for Step1Config {
    fn default() -> Self {
        Self {
            init: CodInit::SensorCenter,
            tol: DEFAULT_TOL,
        }
    }
}

/// Optimum of the collinearity search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step1Params {
    pub sx: f64,
    pub sy: f64,
    pub u0: f64,
    pub v0: f64,
    pub uc: f64,
    pub vc: f64,
    /// Mean distance of the center from the point-pair lines at the optimum, px.
    pub cc: f64,
}

impl Step1Params {
    pub fn aspect_ratio(&self) -> f64 {
        self.sy / self.sx
    }

    pub fn cod(&self) -> Point2 {
        Point2::new(self.u0, self.v0)
    }

    fn from_vec(x: &[f64], cc: f64) -> Self {
        Self {
            sx: x[0],
            sy: x[1],
            u0: x[2],
            v0: x[3],
            uc: x[4],
            vc: x[5],
            cc,
        }
    }
}

/// What a calibration stage carries as its distortion description.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionPayload {
    None,
    Polynomial(RadialDistortion),
    Curve(RadialCurve),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub stage: Stage,
    pub intrinsics: CameraIntrinsics,
    pub pose: PoseParams,
    pub distortion: DistortionPayload,
    pub rpe_mean: f64,
    pub rpe_std: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Step1Output {
    pub params: Step1Params,
    pub converged: bool,
    pub evaluations: usize,
    /// Fewer than [`DENSE_STEP1_POINTS`] points were available.
    pub sparse_warning: bool,
    pub homography: Homography,
    pub disparity: Vec<f64>,
    /// Closed-form focal length and pose from the all-points homography, when defined.
    pub result: Option<CalibrationResult>,
}

#[derive(Debug, Clone)]
pub struct Step2Output {
    pub result: CalibrationResult,
    pub curve: RadialCurve,
    pub subset_homography: Homography,
    pub subset_size: usize,
    pub circle_radius: f64,
    /// `H'_d p_w` for every point.
    pub undistorted: Vec<Point2>,
}

/// Scale-selection rule of the model-free refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleVariant {
    EpsilonConstraint,
    MedianConstraint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelFreeConfig {
    /// Slack in px for the epsilon variant.
    pub epsilon: f64,
    /// Number of points closest to the center used by the median variant.
    pub n_prime_p: usize,
    pub variant: ScaleVariant,
    pub tol: f64,
}

impl Default for ModelFreeConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            n_prime_p: 200,
            variant: ScaleVariant::MedianConstraint,
            tol: DEFAULT_TOL,
        }
    }
}

impl ModelFreeConfig {
    /// Epsilon variant with the slack set to 3.5 sigma of a known noise level.
    pub fn for_known_noise(sigma: f64) -> Self {
        Self {
            epsilon: 3.5 * sigma,
            variant: ScaleVariant::EpsilonConstraint,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.n_prime_p < 10 {
            return Err(Error::InvalidParameter(format!(
                "n'_p must be >= 10, got {}",
                self.n_prime_p
            )));
        }
        Ok(())
    }

    fn constraint(&self) -> ScaleConstraint {
        match self.variant {
            ScaleVariant::EpsilonConstraint => ScaleConstraint::Epsilon(self.epsilon),
            ScaleVariant::MedianConstraint => ScaleConstraint::Median {
                n_prime: self.n_prime_p,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelBasedConfig {
    pub tol: f64,
}

impl Default for ModelBasedConfig {
    fn default() -> Self {
        Self { tol: 1e-14 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub step1: Step1Config,
    pub model_based: ModelBasedConfig,
    pub model_free: ModelFreeConfig,
}

// ---------------------------------------------------------------------------
// Step 1

/// Mean distance of the origin from the lines through each centered pair
/// `(p_d - cod, S (p_p - c))`.
pub fn collinearity_cost(pd: &[Point2], pp: &[Point2], x: &[f64]) -> f64 {
    let (sx, sy, u0, v0, uc, vc) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let n = pd.len();
    let sum = chunked_sum(n, |i| {
        let (xd, yd) = (pd[i].x - u0, pd[i].y - v0);
        let (xu, yu) = (sx * (pp[i].x - uc), sy * (pp[i].y - vc));
        let den2 = (yd - yu) * (yd - yu) + (xd - xu) * (xd - xu);
        if den2 > 1e-24 {
            (xu * yd - yu * xd).abs() / den2.sqrt()
        } else {
            0.0
        }
    });
    sum / n as f64
}

/// Centroid of the 1% lowest-disparity points in the central third of the sensor.
pub fn disparity_minimum(pd: &[Point2], disparity: &[f64], sensor: &SensorSpec) -> Point2 {
    let (w, h) = (sensor.width, sensor.height);
    let mut central: Vec<(f64, usize)> = pd
        .iter()
        .enumerate()
        .filter(|(_, p)| p.x >= w / 3.0 && p.x <= 2.0 * w / 3.0 && p.y >= h / 3.0 && p.y <= 2.0 * h / 3.0)
        .map(|(i, _)| (disparity[i], i))
        .collect();
    if central.is_empty() {
        return sensor.center();
    }
    central.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = (central.len() / 100).max(1);
    let (sx, sy) = central[..k]
        .iter()
        .fold((0.0, 0.0), |(a, b), &(_, i)| (a + pd[i].x, b + pd[i].y));
    Point2::new(sx / k as f64, sy / k as f64)
}

/// Collinearity search on precomputed detected / reprojected pairs.
pub fn step1_from_reprojection(
    pd: &[Point2],
    pp: &[Point2],
    sensor: &SensorSpec,
    init: Point2,
    tol: f64,
) -> Result<(Step1Params, OptimResult)> {
    if pd.len() != pp.len() {
        return Err(Error::LengthMismatch {
            left: pd.len(),
            right: pp.len(),
        });
    }
    // searched as (Sx, Sy, u0, v0, uc - u0, vc - v0): the two centers move together
    let (w, h) = (sensor.width, sensor.height);
    let lower = vec![0.5, 0.5, -0.25 * w, -0.25 * h, -0.25 * w, -0.25 * h];
    let upper = vec![2.0, 2.0, 1.25 * w, 1.25 * h, 0.25 * w, 0.25 * h];
    let x0 = vec![
        STEP1_SCALE_START,
        STEP1_SCALE_START,
        init.x.clamp(lower[2], upper[2]),
        init.y.clamp(lower[3], upper[3]),
        0.0,
        0.0,
    ];
    let to_params = |y: &[f64]| [y[0], y[1], y[2], y[3], y[2] + y[4], y[3] + y[5]];
    // wide scale steps: the cost decreases away from S = 1 and the COD is best conditioned there
    let step = vec![0.1, 0.1, 20.0, 20.0, 2.0, 2.0];
    let problem = BoundedProblem::new(lower, upper, x0, |y| collinearity_cost(pd, pp, &to_params(y)))
        .with_step(step)
        .with_max_iter(20_000)
        .with_max_restarts(5);
    let mut res = minimize(&problem, tol)?;
    res.x = to_params(&res.x).to_vec();
    Ok((Step1Params::from_vec(&res.x, res.f), res))
}

/// Estimates the center of distortion from a dense correspondence set.
pub fn step1_estimate_cod(
    set: &CorrespondenceSet,
    sensor: &SensorSpec,
    config: &Step1Config,
) -> Result<Step1Output> {
    let n = set.len();
    if n < MIN_STEP1_POINTS {
        return Err(Error::InsufficientDensity {
            required: MIN_STEP1_POINTS,
            got: n,
        });
    }
    let hd = estimate_homography(&set.target, &set.image)?;
    let pp = reproject(&hd, &set.target)?;
    let disparity = total_disparity(&pp, &set.image)?;
    let med = median(&disparity).unwrap_or(0.0);
    if med < MIN_MEDIAN_DISPARITY {
        return Err(Error::DistortionTooSmall {
            median_disparity: med,
        });
    }
    let init = match config.init {
        CodInit::SensorCenter => sensor.center(),
        CodInit::DisparityMinimum => disparity_minimum(&set.image, &disparity, sensor),
    };
    let (params, res) = step1_from_reprojection(&set.image, &pp, sensor, init, config.tol)?;

    let mut warnings = Vec::new();
    let sparse_warning = n < DENSE_STEP1_POINTS;
    if sparse_warning {
        warnings.push(format!("only {n} points; a dense grid (>= {DENSE_STEP1_POINTS}) is expected"));
    }
    if !res.converged {
        warnings.push("center-of-distortion search did not converge".into());
    }
    let on_bound = |v: f64| v <= SCALE_BRACKET.0 + 1e-6 || v >= SCALE_BRACKET.1 - 1e-6;
    if on_bound(params.sx) || on_bound(params.sy) {
        warnings.push("collinearity scale factor on its bound; only the COD is meaningful".into());
    }
    let result = focal_from_homography(&hd, params.u0, params.v0)
        .ok()
        .and_then(|f| CameraIntrinsics::new(f, f, params.u0, params.v0).ok())
        .and_then(|a| {
            let pose = extrinsics_from_homography(&hd, &a).ok()?;
            let (m, s) = ideal_rpe(set, &a, &pose);
            Some(CalibrationResult {
                stage: Stage::Step1,
                intrinsics: a,
                pose,
                distortion: DistortionPayload::None,
                rpe_mean: m,
                rpe_std: s,
                warnings: warnings.clone(),
            })
        });
    Ok(Step1Output {
        params,
        converged: res.converged,
        evaluations: res.evaluations,
        sparse_warning,
        homography: hd,
        disparity,
        result,
    })
}

// ---------------------------------------------------------------------------
// Step 2

/// Closed-form focal length (`fx = fy`) from a homography and the principal point.
pub fn focal_from_homography(h: &Homography, u0: f64, v0: f64) -> Result<f64> {
    let (h11, h12, h21, h22, h31, h32) = (h.h(1, 1), h.h(1, 2), h.h(2, 1), h.h(2, 2), h.h(3, 1), h.h(3, 2));
    let den = h31 * h32;
    if den.abs() < MIN_H31_H32 {
        return Err(Error::IllPosedPose(den.abs()));
    }
    let num = (h11 - u0 * h31) * (h12 - u0 * h32) + (h21 - v0 * h31) * (h22 - v0 * h32);
    Ok((num / den).abs().sqrt())
}

fn ideal_rpe(set: &CorrespondenceSet, a: &CameraIntrinsics, pose: &PoseParams) -> (f64, f64) {
    let h = a.matrix() * pose.plane_matrix();
    let err: Vec<f64> = set
        .target
        .iter()
        .zip(&set.image)
        .map(|(pw, pd)| {
            let q = h * Vector3::new(pw.x, pw.y, 1.0);
            Point2::new(q.x / q.z, q.y / q.z).dist(pd)
        })
        .collect();
    mean_std(&err)
}

/// Focal length and pose initialization, plus the first radial curve.
pub fn step2_init(set: &CorrespondenceSet, cod: Point2, sensor: &SensorSpec) -> Result<Step2Output> {
    if !(cod.x > 0.0 && cod.y > 0.0 && cod.x < sensor.width && cod.y < sensor.height) {
        return Err(Error::InvalidParameter(format!(
            "center of distortion ({}, {}) outside the sensor",
            cod.x, cod.y
        )));
    }
    let radius = cod
        .x
        .min(cod.y)
        .min(sensor.width - cod.x)
        .min(sensor.height - cod.y);
    let subset = set.filter(|i| set.image[i].dist(&cod) <= radius);
    let h_sub = estimate_homography(&subset.target, &subset.image)?;
    let f = focal_from_homography(&h_sub, cod.x, cod.y)?;
    let a = CameraIntrinsics::new(f, f, cod.x, cod.y)?;
    let pose = extrinsics_from_homography(&h_sub, &a)?;
    let undistorted = reproject(&h_sub, &set.target)?;
    let raw: Vec<(f64, f64)> = set
        .image
        .iter()
        .zip(&undistorted)
        .map(|(pd, pu)| (pd.dist(&cod), pu.dist(&cod)))
        .collect();
    let curve = RadialCurve::from_samples(cod, &raw);
    let (m, s) = ideal_rpe(set, &a, &pose);
    Ok(Step2Output {
        result: CalibrationResult {
            stage: Stage::Step2,
            intrinsics: a,
            pose,
            distortion: DistortionPayload::Curve(curve.clone()),
            rpe_mean: m,
            rpe_std: s,
            warnings: Vec::new(),
        },
        curve,
        subset_homography: h_sub,
        subset_size: subset.len(),
        circle_radius: radius,
        undistorted,
    })
}

// ---------------------------------------------------------------------------
// Step 3A

/// Parameter layout of the model-based refinement.
pub const MB_PARAMS: [&str; 13] = [
    "fx", "fy", "u0", "v0", "theta_x", "theta_y", "theta_z", "tx", "ty", "tz", "k1", "k2", "k3",
];

pub fn mb_pack(a: &CameraIntrinsics, e: &PoseParams, k: &RadialDistortion) -> Vec<f64> {
    vec![
        a.fx, a.fy, a.u0, a.v0, e.theta.x, e.theta.y, e.theta.z, e.t.x, e.t.y, e.t.z, k.k1, k.k2,
        k.k3,
    ]
}

pub fn mb_unpack(x: &[f64]) -> (CameraIntrinsics, PoseParams, RadialDistortion) {
    (
        CameraIntrinsics {
            fx: x[0],
            fy: x[1],
            u0: x[2],
            v0: x[3],
        },
        PoseParams::new(Vector3::new(x[4], x[5], x[6]), Vector3::new(x[7], x[8], x[9])),
        RadialDistortion::new(x[10], x[11], x[12]),
    )
}

/// Left Jacobian of the rotation exponential: `exp([w + d]x) ~ exp([J_l d]x) exp([w]x)`.
fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle2 = w.norm_squared();
    let angle = angle2.sqrt();
    let k = Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    let (b, c) = if angle < 1e-8 {
        (0.5 - angle2 / 24.0, 1.0 / 6.0 - angle2 / 120.0)
    } else {
        ((1.0 - angle.cos()) / angle2, (angle - angle.sin()) / (angle2 * angle))
    };
    Matrix3::identity() + k * b + k * k * c
}

/// `d(R(theta) p) / d theta = -R [p]x J_r(theta)`.
fn rotation_point_jacobian(theta: &Vector3<f64>, r: &Matrix3<f64>, p: &Vector3<f64>) -> Matrix3<f64> {
    let angle2 = theta.norm_squared();
    let angle = angle2.sqrt();
    let k = Matrix3::new(0.0, -theta.z, theta.y, theta.z, 0.0, -theta.x, -theta.y, theta.x, 0.0);
    let (b, c) = if angle < 1e-8 {
        (0.5 - angle2 / 24.0, 1.0 / 6.0 - angle2 / 120.0)
    } else {
        ((1.0 - angle.cos()) / angle2, (angle - angle.sin()) / (angle2 * angle))
    };
    let jr = Matrix3::identity() - k * b + k * k * c;
    let px = Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0);
    -(r * px * jr)
}

/// Residuals `model - observed`, two per point, of the distorted projection.
pub fn mb_residuals(set: &CorrespondenceSet, x: &[f64]) -> DVector<f64> {
    let (a, e, k) = mb_unpack(x);
    let r = rotation_from_axis_angle(&e.theta);
    let n = set.len();
    let chunks: Vec<Vec<f64>> = (0..n)
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&s| {
            let mut out = Vec::with_capacity(2 * CHUNK);
            for i in s..(s + CHUNK).min(n) {
                let (pw, pd) = (set.target[i], set.image[i]);
                let xc = r[(0, 0)] * pw.x + r[(0, 1)] * pw.y + e.t.x;
                let yc = r[(1, 0)] * pw.x + r[(1, 1)] * pw.y + e.t.y;
                let zc = r[(2, 0)] * pw.x + r[(2, 1)] * pw.y + e.t.z;
                let (xn, yn) = (xc / zc, yc / zc);
                let d = 1.0 + k.relative_displacement(xn * xn + yn * yn);
                out.push(a.fx * xn * d + a.u0 - pd.x);
                out.push(a.fy * yn * d + a.v0 - pd.y);
            }
            out
        })
        .collect();
    DVector::from_iterator(2 * n, chunks.into_iter().flatten())
}

/// Analytic Jacobian of [`mb_residuals`].
pub fn mb_jacobian(set: &CorrespondenceSet, x: &[f64]) -> DMatrix<f64> {
    let (a, e, k) = mb_unpack(x);
    let r = rotation_from_axis_angle(&e.theta);
    let n = set.len();
    let rows: Vec<[[f64; 13]; 2]> = set
        .target
        .par_iter()
        .map(|pw| {
            let p = Vector3::new(pw.x, pw.y, 0.0);
            let c = r * p + e.t;
            let (xn, yn) = (c.x / c.z, c.y / c.z);
            let r2 = xn * xn + yn * yn;
            let d = 1.0 + k.relative_displacement(r2);
            let dd = k.k1 + r2 * (2.0 * k.k2 + 3.0 * k.k3 * r2); // dD/d(r2)

            // d(xd, yd)/d(xn, yn)
            let dxa = a.fx * (d + 2.0 * xn * xn * dd);
            let dxb = a.fx * 2.0 * xn * yn * dd;
            let dya = a.fy * 2.0 * xn * yn * dd;
            let dyb = a.fy * (d + 2.0 * yn * yn * dd);
            // d(xn, yn)/d(camera point)
            let iz = 1.0 / c.z;
            let da = Vector3::new(iz, 0.0, -c.x * iz * iz);
            let db = Vector3::new(0.0, iz, -c.y * iz * iz);
            let gx = da * dxa + db * dxb; // d xd / d c
            let gy = da * dya + db * dyb;
            let jt = rotation_point_jacobian(&e.theta, &r, &p);
            let gx_theta = jt.transpose() * gx;
            let gy_theta = jt.transpose() * gy;

            let (r4, r6) = (r2 * r2, r2 * r2 * r2);
            [
                [
                    xn * d, 0.0, 1.0, 0.0, gx_theta.x, gx_theta.y, gx_theta.z, gx.x, gx.y, gx.z,
                    a.fx * xn * r2, a.fx * xn * r4, a.fx * xn * r6,
                ],
                [
                    0.0, yn * d, 0.0, 1.0, gy_theta.x, gy_theta.y, gy_theta.z, gy.x, gy.y, gy.z,
                    a.fy * yn * r2, a.fy * yn * r4, a.fy * yn * r6,
                ],
            ]
        })
        .collect();
    let mut jac = DMatrix::zeros(2 * n, 13);
    for (i, pair) in rows.iter().enumerate() {
        for c in 0..13 {
            jac[(2 * i, c)] = pair[0][c];
            jac[(2 * i + 1, c)] = pair[1][c];
        }
    }
    jac
}

/// Box used by the model-based refinement around a Step-2 initialization.
pub fn mb_bounds(init: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let five_deg = 5f64.to_radians();
    let t_norm = (init[7] * init[7] + init[8] * init[8] + init[9] * init[9]).sqrt();
    let mut lo = vec![0.0; 13];
    let mut hi = vec![0.0; 13];
    for i in 0..2 {
        lo[i] = init[i] * 0.95;
        hi[i] = init[i] * 1.05;
    }
    for i in 2..4 {
        lo[i] = init[i] - 30.0;
        hi[i] = init[i] + 30.0;
    }
    for i in 4..7 {
        lo[i] = init[i] - five_deg;
        hi[i] = init[i] + five_deg;
    }
    for i in 7..10 {
        lo[i] = init[i] - 0.1 * t_norm;
        hi[i] = init[i] + 0.1 * t_norm;
    }
    let kmax = [50.0, 500.0, 5000.0];
    for (i, m) in kmax.iter().enumerate() {
        lo[10 + i] = -m;
        hi[10 + i] = *m;
    }
    (lo, hi)
}

fn polynomial_rpe(set: &CorrespondenceSet, x: &[f64]) -> (f64, f64) {
    let r = mb_residuals(set, x);
    let err: Vec<f64> = r.as_slice().chunks(2).map(|c| c[0].hypot(c[1])).collect();
    mean_std(&err)
}

/// Model-based refinement of all 13 parameters by reprojection error.
pub fn step3a_model_based(
    set: &CorrespondenceSet,
    init: &CalibrationResult,
    config: &ModelBasedConfig,
) -> Result<CalibrationResult> {
    let x0 = mb_pack(&init.intrinsics, &init.pose, &RadialDistortion::zero());
    let (lo, hi) = mb_bounds(&x0);
    let problem = LeastSquaresProblem::new(lo.clone(), hi.clone(), x0.clone(), |x| mb_residuals(set, x))
        .with_jacobian(|x| mb_jacobian(set, x));
    let cost0 = 0.5 * mb_residuals(set, &x0).norm_squared();
    let res = least_squares(&problem, config.tol)?;
    if !res.f.is_finite() || res.f > cost0 {
        return Err(Error::OptimizationDiverged(format!(
            "cost went from {cost0:.6e} to {:.6e}",
            res.f
        )));
    }
    let mut warnings = Vec::new();
    let active = res.active_bounds(&lo, &hi);
    if !active.is_empty() {
        let names: Vec<&str> = active.iter().map(|&i| MB_PARAMS[i]).collect();
        warnings.push(format!("parameters on bounds: {}", names.join(", ")));
    }
    if !res.converged {
        warnings.push("model-based refinement hit the iteration limit".into());
    }
    let (a, e, k) = mb_unpack(&res.x);
    let (m, s) = polynomial_rpe(set, &res.x);
    Ok(CalibrationResult {
        stage: Stage::Step3A,
        intrinsics: a,
        pose: e,
        distortion: DistortionPayload::Polynomial(k),
        rpe_mean: m,
        rpe_std: s,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Step 3B

/// Monotonicity objective over `(u0, v0, FR, theta, t)` at a fixed `fx`.
pub struct MonotonicityObjective<'a> {
    set: &'a CorrespondenceSet,
    fx: f64,
    order: Mutex<Vec<u32>>,
}

impl<'a> MonotonicityObjective<'a> {
    pub fn new(set: &'a CorrespondenceSet, fx: f64) -> Self {
        Self {
            set,
            fx,
            order: Mutex::new((0..set.len() as u32).collect()),
        }
    }

    /// Indices sorted by distorted radius about `cod`, ties by input order.
    pub fn order_by_distorted_radius(&self, cod: Point2) -> Vec<u32> {
        let image = &self.set.image;
        let key = |i: u32| {
            let p = image[i as usize];
            let (dx, dy) = (p.x - cod.x, p.y - cod.y);
            (dx * dx + dy * dy, i)
        };
        let previous = self.order.lock().map(|o| o.clone()).unwrap_or_default();
        let mut keyed: Vec<(f64, u32)> = if previous.len() == image.len() {
            previous.iter().map(|&i| key(i)).collect()
        } else {
            (0..image.len() as u32).map(key).collect()
        };
        let less = |a: &(f64, u32), b: &(f64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
        // small center moves only permute near neighbours: insertion sort from the
        // previous order, falling back to a full sort past a work budget
        let budget = 64 * keyed.len();
        let mut moves = 0usize;
        let mut sorted = true;
        'outer: for i in 1..keyed.len() {
            let item = keyed[i];
            let mut j = i;
            while j > 0 && less(&item, &keyed[j - 1]) {
                keyed[j] = keyed[j - 1];
                j -= 1;
                moves += 1;
                if moves > budget {
                    keyed[j] = item;
                    sorted = false;
                    break 'outer;
                }
            }
            keyed[j] = item;
        }
        if !sorted {
            keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let order: Vec<u32> = keyed.into_iter().map(|(_, i)| i).collect();
        if let Ok(mut o) = self.order.lock() {
            o.clone_from(&order);
        }
        order
    }

    pub fn intrinsics(&self, x: &[f64]) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fx * x[2],
            u0: x[0],
            v0: x[1],
        }
    }

    pub fn pose(x: &[f64]) -> PoseParams {
        PoseParams::new(Vector3::new(x[3], x[4], x[5]), Vector3::new(x[6], x[7], x[8]))
    }

    /// Undistorted radii `|A E p_w - cod|` for every point.
    pub fn undistorted_radii(&self, x: &[f64]) -> Vec<f64> {
        let a = self.intrinsics(x);
        let h = a.matrix() * Self::pose(x).plane_matrix();
        let cod = a.principal_point();
        self.set
            .target
            .iter()
            .map(|pw| {
                let q = h * Vector3::new(pw.x, pw.y, 1.0);
                (q.x / q.z - cod.x).hypot(q.y / q.z - cod.y)
            })
            .collect()
    }

    /// Successive differences of the undistorted radii along a fixed order.
    pub fn increments(&self, order: &[u32], x: &[f64]) -> DVector<f64> {
        let ru = self.undistorted_radii(x);
        DVector::from_iterator(
            order.len().saturating_sub(1),
            order.windows(2).map(|w| ru[w[1] as usize] - ru[w[0] as usize]),
        )
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let order = self.order_by_distorted_radius(Point2::new(x[0], x[1]));
        let a = self.intrinsics(x);
        let h = a.matrix() * Self::pose(x).plane_matrix();
        let (u0, v0) = (a.u0, a.v0);
        let target = &self.set.target;
        let radius = |i: u32| {
            let p = target[i as usize];
            let w = 1.0 / (h[(2, 0)] * p.x + h[(2, 1)] * p.y + h[(2, 2)]);
            let dx = (h[(0, 0)] * p.x + h[(0, 1)] * p.y + h[(0, 2)]) * w - u0;
            let dy = (h[(1, 0)] * p.x + h[(1, 1)] * p.y + h[(1, 2)]) * w - v0;
            (dx * dx + dy * dy).sqrt()
        };
        let mut sum = 0.0;
        let mut prev = match order.first() {
            Some(&i) => radius(i),
            None => return 0.0,
        };
        for &i in &order[1..] {
            let r = radius(i);
            let d = r - prev;
            sum += d * d;
            prev = r;
        }
        sum
    }
}

/// Fraction of successive block means of the sorted radii that decrease by more
/// than their noise level. Blocks hold about a thousandth of the points, so a
/// fold in the curve shows up while point scatter averages out.
fn decreasing_fraction(sorted_ru: &[f64]) -> f64 {
    let n = sorted_ru.len();
    let b = (n / 1000).max(1);
    let blocks: Vec<&[f64]> = sorted_ru.chunks(b).filter(|c| c.len() == b).collect();
    if blocks.len() < 3 {
        return 0.0;
    }
    let means: Vec<f64> = blocks.iter().map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let resid: Vec<f64> = blocks
        .iter()
        .zip(&means)
        .flat_map(|(c, m)| c.iter().map(move |r| (r - m).abs()))
        .collect();
    let sigma = 1.4826 * median(&resid).unwrap_or(0.0);
    let tol = 3.0 * std::f64::consts::SQRT_2 * sigma / (b as f64).sqrt();
    let bad = means.windows(2).filter(|w| w[1] - w[0] < -tol).count();
    bad as f64 / (means.len() - 1) as f64
}

/// Minimum of the monotonicity objective at a fixed center: the radial order
/// is then fixed and the rest is a smooth least-squares problem.
///
/// Radii about the center do not change under a roll about the optical axis,
/// so the rotation is updated as `exp([w]x) R0` with `w = (wx, wy, 0)`.
/// Inner parameters: `(FR, wx, wy, tx, ty, tz)`.
struct CenteredSolver<'o, 'a> {
    objective: &'o MonotonicityObjective<'a>,
    r0: Matrix3<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    warm: Mutex<Vec<f64>>,
    evaluations: Mutex<usize>,
}

impl CenteredSolver<'_, '_> {
    fn full(&self, u0: f64, v0: f64, y: &[f64]) -> Vec<f64> {
        let r = rotation_from_axis_angle(&Vector3::new(y[1], y[2], 0.0)) * self.r0;
        let theta = axis_angle_from_rotation(&r);
        vec![u0, v0, y[0], theta.x, theta.y, theta.z, y[3], y[4], y[5]]
    }

    /// Jacobian of the increments along `order` with respect to the inner parameters.
    fn jacobian(&self, order: &[u32], y: &[f64]) -> DMatrix<f64> {
        let w = Vector3::new(y[1], y[2], 0.0);
        let r = rotation_from_axis_angle(&w) * self.r0;
        let jl = left_jacobian(&w);
        let t = Vector3::new(y[3], y[4], y[5]);
        let (fx, fr) = (self.objective.fx, y[0]);
        let per_point: Vec<[f64; 6]> = self
            .objective
            .set
            .target
            .iter()
            .map(|pw| {
                let rp = r * Vector3::new(pw.x, pw.y, 0.0);
                let c = rp + t;
                let iz = 1.0 / c.z;
                let (a, b) = (fx * c.x * iz, fx * fr * c.y * iz);
                let rad = a.hypot(b);
                if rad == 0.0 {
                    return [0.0; 6];
                }
                let g = Vector3::new(a * fx * iz / rad, b * fx * fr * iz / rad, -rad * iz);
                let rpx = Matrix3::new(0.0, -rp.z, rp.y, rp.z, 0.0, -rp.x, -rp.y, rp.x, 0.0);
                let gw = -(rpx * jl).transpose() * g;
                [b / rad * fx * c.y * iz, gw.x, gw.y, g.x, g.y, g.z]
            })
            .collect();
        let mut jac = DMatrix::zeros(order.len().saturating_sub(1), 6);
        for (i, w) in order.windows(2).enumerate() {
            let (p, q) = (&per_point[w[1] as usize], &per_point[w[0] as usize]);
            for k in 0..6 {
                jac[(i, k)] = p[k] - q[k];
            }
        }
        jac
    }

    fn solve(&self, u0: f64, v0: f64) -> Result<(Vec<f64>, f64)> {
        let order = self.objective.order_by_distorted_radius(Point2::new(u0, v0));
        let warm = self.warm.lock().map(|w| w.clone()).unwrap_or_default();
        let problem = LeastSquaresProblem::new(self.lo.clone(), self.hi.clone(), warm, |y| {
            self.objective.increments(&order, &self.full(u0, v0, y))
        })
        .with_jacobian(|y| self.jacobian(&order, y));
        let mut problem = problem;
        problem.max_iter = 50;
        let res = least_squares(&problem, 1e-12)?;
        if let Ok(mut e) = self.evaluations.lock() {
            *e += res.evaluations + res.iterations;
        }
        if let Ok(mut w) = self.warm.lock() {
            w.clone_from(&res.x);
        }
        Ok((self.full(u0, v0, &res.x), 2.0 * res.f))
    }
}

/// Details of a model-free run beyond the calibration result.
#[derive(Debug, Clone)]
pub struct Step3bOutput {
    pub result: CalibrationResult,
    pub scale: f64,
    pub fy_ratio: f64,
    /// Monotonicity objective before and after the search.
    pub objective: (f64, f64),
    pub evaluations: usize,
    /// Curve `(r_d, S r_u')` before the monotone fit.
    pub raw_curve: RadialCurve,
}

/// Model-free refinement.
pub fn step3b_model_free(
    set: &CorrespondenceSet,
    init: &CalibrationResult,
    config: &ModelFreeConfig,
) -> Result<Step3bOutput> {
    config.validate()?;
    let a0 = init.intrinsics;
    let e0 = init.pose;
    let objective = MonotonicityObjective::new(set, a0.fx);
    let x0 = vec![
        a0.u0,
        a0.v0,
        a0.fy / a0.fx,
        e0.theta.x,
        e0.theta.y,
        e0.theta.z,
        e0.t.x,
        e0.t.y,
        e0.t.z,
    ];
    // same box as the model-based refinement, with FR in place of fy
    let mb0 = mb_pack(&a0, &e0, &RadialDistortion::zero());
    let (mlo, mhi) = mb_bounds(&mb0);
    let mut lo = vec![mlo[2], mlo[3], x0[2] * 0.95];
    let mut hi = vec![mhi[2], mhi[3], x0[2] * 1.05];
    lo.extend_from_slice(&mlo[4..10]);
    hi.extend_from_slice(&mhi[4..10]);
    let m0 = objective.value(&x0);
    let five_deg = 5f64.to_radians();
    let inner_lo = vec![lo[2], -five_deg, -five_deg, lo[6], lo[7], lo[8]];
    let inner_hi = vec![hi[2], five_deg, five_deg, hi[6], hi[7], hi[8]];
    let solver = CenteredSolver {
        objective: &objective,
        r0: e0.rotation(),
        lo: inner_lo,
        hi: inner_hi,
        warm: Mutex::new(vec![x0[2], 0.0, 0.0, x0[6], x0[7], x0[8]]),
        evaluations: Mutex::new(0),
    };
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let outer = BoundedProblem::new(lo[..2].to_vec(), hi[..2].to_vec(), x0[..2].to_vec(), |c| {
        match solver.solve(c[0], c[1]) {
            Ok((_, m)) => m,
            Err(e) => {
                if let Ok(mut f) = failure.lock() {
                    f.get_or_insert(e);
                }
                f64::INFINITY
            }
        }
    })
    .with_step(vec![0.5, 0.5])
    .with_max_iter(2_000)
    .with_max_restarts(1);
    let mut res = minimize(&outer, config.tol)?;
    drop(outer);
    if let Some(e) = failure.into_inner().ok().flatten() {
        return Err(e);
    }
    let (x, m_final) = solver.solve(res.x[0], res.x[1])?;
    res.f = m_final;
    res.evaluations += solver.evaluations.lock().map(|e| *e).unwrap_or(0);

    let a1 = objective.intrinsics(&x);
    let pose = MonotonicityObjective::pose(&x);
    let cod = a1.principal_point();
    let order = objective.order_by_distorted_radius(cod);
    let ru = objective.undistorted_radii(&x);
    let ru_sorted: Vec<f64> = order.iter().map(|&i| ru[i as usize]).collect();
    let rd_sorted: Vec<f64> = order
        .iter()
        .map(|&i| set.image[i as usize].dist(&cod))
        .collect();

    let fraction = decreasing_fraction(&ru_sorted);
    if fraction > 0.01 {
        return Err(Error::MonotonicityFailed {
            fraction: 100.0 * fraction,
        });
    }

    let scale = minimize_scalar_constrained(&ru_sorted, &rd_sorted, config.constraint(), SCALE_BRACKET)?;
    let fy_ratio = x[2];
    let intrinsics = CameraIntrinsics::new(scale * a1.fx, scale * fy_ratio * a1.fx, a1.u0, a1.v0)?;

    let raw: Vec<(f64, f64)> = rd_sorted
        .iter()
        .zip(&ru_sorted)
        .map(|(&d, &u)| (d, scale * u))
        .collect();
    let raw_curve = RadialCurve::from_samples(cod, &raw);
    let curve = raw_curve.monotone_fit();

    // residual between undistorted detections and the ideal projection
    let ideal: Vec<Point2> = {
        let h = intrinsics.matrix() * pose.plane_matrix();
        set.target
            .iter()
            .map(|pw| {
                let q = h * Vector3::new(pw.x, pw.y, 1.0);
                Point2::new(q.x / q.z, q.y / q.z)
            })
            .collect()
    };
    let und = undistort_points(&set.image, &curve)?;
    let err: Vec<f64> = und.iter().zip(&ideal).map(|(u, p)| u.point.dist(p)).collect();
    let (m, s) = mean_std(&err);

    let mut warnings = Vec::new();
    if !res.converged {
        warnings.push("monotonicity search hit the iteration limit".into());
    }
    warnings.push("pose kept from the monotonicity search; scale applied to intrinsics only".into());
    Ok(Step3bOutput {
        result: CalibrationResult {
            stage: Stage::Step3B,
            intrinsics,
            pose,
            distortion: DistortionPayload::Curve(curve),
            rpe_mean: m,
            rpe_std: s,
            warnings,
        },
        scale,
        fy_ratio,
        objective: (m0, res.f),
        evaluations: res.evaluations,
        raw_curve,
    })
}

// ---------------------------------------------------------------------------
// Full workflow

/// Per-stage outputs of a pipeline run; `failure` holds the first stage error.
#[derive(Debug)]
pub struct PipelineRun {
    pub mode: Mode,
    pub step1: Option<Step1Output>,
    pub step2: Option<Step2Output>,
    pub step3b: Option<Step3bOutput>,
    pub final_result: Option<CalibrationResult>,
    pub failure: Option<Error>,
}

impl PipelineRun {
    /// All stage results in order.
    pub fn stages(&self) -> Vec<&CalibrationResult> {
        let mut v = Vec::new();
        if let Some(r) = self.step1.as_ref().and_then(|s| s.result.as_ref()) {
            v.push(r);
        }
        if let Some(s) = &self.step2 {
            v.push(&s.result);
        }
        if let Some(r) = &self.final_result {
            v.push(r);
        }
        v
    }

    /// Final curve, when the run produced one.
    pub fn curve(&self) -> Option<&RadialCurve> {
        match self.final_result.as_ref().map(|r| &r.distortion) {
            Some(DistortionPayload::Curve(c)) => Some(c),
            _ => self.step2.as_ref().map(|s| &s.curve),
        }
    }
}

/// Runs every stage, keeping partial results when a stage fails.
pub fn execute_pipeline(
    set: &CorrespondenceSet,
    sensor: &SensorSpec,
    mode: Mode,
    config: &PipelineConfig,
) -> PipelineRun {
    let mut run = PipelineRun {
        mode,
        step1: None,
        step2: None,
        step3b: None,
        final_result: None,
        failure: None,
    };
    let step1 = match step1_estimate_cod(set, sensor, &config.step1) {
        Ok(s) => s,
        Err(e) => {
            run.failure = Some(e.at(Stage::Step1));
            return run;
        }
    };
    let cod = step1.params.cod();
    run.step1 = Some(step1);
    let step2 = match step2_init(set, cod, sensor) {
        Ok(s) => s,
        Err(e) => {
            run.failure = Some(e.at(Stage::Step2));
            return run;
        }
    };
    let init = step2.result.clone();
    run.step2 = Some(step2);
    match mode {
        Mode::ModelBased => match step3a_model_based(set, &init, &config.model_based) {
            Ok(r) => run.final_result = Some(r),
            Err(e) => run.failure = Some(e.at(Stage::Step3A)),
        },
        Mode::ModelFree => match step3b_model_free(set, &init, &config.model_free) {
            Ok(out) => {
                run.final_result = Some(out.result.clone());
                run.step3b = Some(out);
            }
            Err(e) => run.failure = Some(e.at(Stage::Step3B)),
        },
    }
    run
}

/// Step 1, Step 2 and the selected refinement; errors carry their stage.
pub fn run_full_pipeline(
    set: &CorrespondenceSet,
    sensor: &SensorSpec,
    mode: Mode,
    config: &PipelineConfig,
) -> Result<PipelineRun> {
    let mut run = execute_pipeline(set, sensor, mode, config);
    match run.failure.take() {
        Some(e) => Err(e),
        None => Ok(run),
    }
}
