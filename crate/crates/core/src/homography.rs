//! Planar homography estimation (normalized DLT) and pose extraction.

use nalgebra::{DMatrix, Matrix3, SMatrix, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{axis_angle_from_rotation, CameraIntrinsics, Point2, PoseParams};

/// Above this many correspondences the DLT is solved through the 9x9 normal matrix.
pub const NORMAL_EQUATIONS_THRESHOLD: usize = 10_000;

const CHUNK: usize = 4096;

/// A 3x3 projective map from the target plane (mm) to the image (px).
///
/// Stored with `h33 = 1` when `|h33| > 1e-12`, otherwise with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DltSolver {
    /// SVD of the full `2n x 9` design matrix.
    Svd,
    /// Smallest eigenvector of the accumulated `9 x 9` normal matrix.
    NormalEquations,
    /// `Svd` up to [`NORMAL_EQUATIONS_THRESHOLD`] points, `NormalEquations` above.
    Auto,
}

impl Homography {
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateConfiguration("non-finite homography".into()));
        }
        let scale = if m[(2, 2)].abs() > 1e-12 {
            m[(2, 2)]
        } else {
            m.norm()
        };
        if scale == 0.0 {
            return Err(Error::DegenerateConfiguration("zero homography".into()));
        }
        Ok(Self { m: m / scale })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Component `h_jk` with one-based indices.
    pub fn h(&self, j: usize, k: usize) -> f64 {
        self.m[(j - 1, k - 1)]
    }

    pub fn apply(&self, p: &Point2) -> Result<Point2> {
        let m = &self.m;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if w.abs() < 1e-12 {
            return Err(Error::NonPositiveDepth);
        }
        Ok(Point2::new(
            (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
            (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::DegenerateConfiguration("singular homography".into()))?;
        Homography::from_matrix(inv)
    }
}

/// Similarity transform moving the centroid to the origin and the mean distance to sqrt(2).
fn normalizing_transform(pts: &[Point2]) -> Result<Matrix3<f64>> {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::DegenerateConfiguration("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;

    // Collinearity check on the normalized spread.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (x, y) = ((p.x - cx) * s, (p.y - cy) * s);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (lmin, lmax) = (tr / 2.0 - disc, tr / 2.0 + disc);
    if lmin <= 1e-12 * lmax {
        return Err(Error::DegenerateConfiguration("points are collinear".into()));
    }

    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: &Point2) -> (f64, f64) {
    (t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

fn design_rows(src: (f64, f64), dst: (f64, f64)) -> [[f64; 9]; 2] {
    let ((x, y), (u, v)) = (src, dst);
    [
        [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u],
        [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v],
    ]
}

fn solve_svd(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<[f64; 9]> {
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let r = design_rows(*s, *d);
        for c in 0..9 {
            a[(2 * i, c)] = r[0][c];
            a[(2 * i + 1, c)] = r[1][c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::DegenerateConfiguration("empty SVD".into()))?;
    let mut h = [0.0; 9];
    for (c, hc) in h.iter_mut().enumerate() {
        *hc = v_t[(imin, c)];
    }
    Ok(h)
}

fn solve_normal(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<[f64; 9]> {
    let partials: Vec<SMatrix<f64, 9, 9>> = src
        .par_chunks(CHUNK)
        .zip(dst.par_chunks(CHUNK))
        .map(|(s, d)| {
            let mut ata = SMatrix::<f64, 9, 9>::zeros();
            for (a, b) in s.iter().zip(d) {
                for row in design_rows(*a, *b) {
                    for j in 0..9 {
                        if row[j] == 0.0 {
                            continue;
                        }
                        for k in j..9 {
                            ata[(j, k)] += row[j] * row[k];
                        }
                    }
                }
            }
            ata
        })
        .collect();
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for p in &partials {
        ata += p;
    }
    for j in 0..9 {
        for k in 0..j {
            ata[(j, k)] = ata[(k, j)];
        }
    }
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::DegenerateConfiguration("empty eigen decomposition".into()))?;
    let mut h = [0.0; 9];
    for (c, hc) in h.iter_mut().enumerate() {
        *hc = eig.eigenvectors[(c, imin)];
    }
    Ok(h)
}

/// Estimates the homography mapping `pw` (target, mm) onto `pd` (image, px).
pub fn estimate_homography(pw: &[Point2], pd: &[Point2]) -> Result<Homography> {
    estimate_homography_with(pw, pd, DltSolver::Auto)
}

pub fn estimate_homography_with(
    pw: &[Point2],
    pd: &[Point2],
    solver: DltSolver,
) -> Result<Homography> {
    if pw.len() != pd.len() {
        return Err(Error::LengthMismatch {
            left: pw.len(),
            right: pd.len(),
        });
    }
    if pw.len() < 4 {
        return Err(Error::InsufficientPoints {
            required: 4,
            got: pw.len(),
        });
    }
    if pw.iter().chain(pd).any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("non-finite correspondence".into()));
    }
    let t_src = normalizing_transform(pw)?;
    let t_dst = normalizing_transform(pd)?;
    let src: Vec<(f64, f64)> = pw.iter().map(|p| transform(&t_src, p)).collect();
    let dst: Vec<(f64, f64)> = pd.iter().map(|p| transform(&t_dst, p)).collect();

    let solver = match solver {
        DltSolver::Auto if pw.len() > NORMAL_EQUATIONS_THRESHOLD => DltSolver::NormalEquations,
        DltSolver::Auto => DltSolver::Svd,
        s => s,
    };
    let h = match solver {
        DltSolver::NormalEquations => solve_normal(&src, &dst)?,
        _ => solve_svd(&src, &dst)?,
    };
    let hn = Matrix3::from_row_slice(&h);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("normalization".into()))?;
    let m = t_dst_inv * hn * t_src;
    let det = m.determinant();
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(Error::DegenerateConfiguration("rank-deficient homography".into()));
    }
    Homography::from_matrix(m)
}

/// Maps every target point through `h`.
pub fn reproject(h: &Homography, pw: &[Point2]) -> Result<Vec<Point2>> {
    pw.iter().map(|p| h.apply(p)).collect()
}

/// Nearest rotation in the Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    r
}

/// Recovers the target pose from a homography and known intrinsics.
pub fn extrinsics_from_homography(h: &Homography, a: &CameraIntrinsics) -> Result<PoseParams> {
    let a_inv = a.inverse_matrix();
    let m = h.matrix();
    let b1: Vector3<f64> = a_inv * m.column(0);
    let b2: Vector3<f64> = a_inv * m.column(1);
    let b3: Vector3<f64> = a_inv * m.column(2);
    let n1 = b1.norm();
    if !(n1 > 0.0) || !n1.is_finite() {
        return Err(Error::DegenerateConfiguration("zero first column".into()));
    }
    let mut lambda = 1.0 / n1;
    if (lambda * b3).z <= 0.0 {
        lambda = -lambda;
    }
    let t = b3 * lambda;
    if t.z <= 0.0 {
        return Err(Error::BehindCamera);
    }
    let r1 = b1 * lambda;
    let r2 = b2 * lambda;
    let r3 = r1.cross(&r2);
    let r = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
    Ok(PoseParams::new(axis_angle_from_rotation(&r), t))
}
