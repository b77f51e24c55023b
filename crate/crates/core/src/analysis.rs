//! Diagnostics: homography disparity in the dense single-image and sparse
//! multi-pose regimes, and scaled families of a radial curve.

use rayon::prelude::*;

use crate::curve::RadialCurve;
use crate::error::{Error, Result};
use crate::geometry::{total_disparity, CorrespondenceSet, Point2};
use crate::homography::{estimate_homography, reproject};
use crate::optimize::{minimize_scalar_constrained, ScaleConstraint};
use crate::pipeline::SCALE_BRACKET;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Point with the largest disparity.
    pub argmax: Point2,
}

/// Per-point disparity `|H_d p_w - p_d|` of one correspondence set.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField {
    pub points: Vec<Point2>,
    pub d_tot: Vec<f64>,
    pub stats: DisparityStats,
}

impl DisparityField {
    /// Fits a homography to the whole set and measures its residual field.
    pub fn from_set(set: &CorrespondenceSet) -> Result<DisparityField> {
        let h = estimate_homography(&set.target, &set.image)?;
        let pp = reproject(&h, &set.target)?;
        let d_tot = total_disparity(&pp, &set.image)?;
        let stats = stats(&set.image, &d_tot)?;
        Ok(DisparityField {
            points: set.image.clone(),
            d_tot,
            stats,
        })
    }

    /// Centroid of the `fraction` lowest-disparity points.
    pub fn minimum_location(&self, fraction: f64) -> Point2 {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| self.d_tot[a].total_cmp(&self.d_tot[b]).then(a.cmp(&b)));
        let k = ((fraction * idx.len() as f64) as usize).clamp(1, idx.len());
        let (sx, sy) = idx[..k]
            .iter()
            .fold((0.0, 0.0), |(x, y), &i| (x + self.points[i].x, y + self.points[i].y));
        Point2::new(sx / k as f64, sy / k as f64)
    }
}

fn stats(points: &[Point2], d: &[f64]) -> Result<DisparityStats> {
    if d.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let (mut min, mut max, mut imax, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0, 0.0);
    for (i, &v) in d.iter().enumerate() {
        min = min.min(v);
        if v > max {
            max = v;
            imax = i;
        }
        sum += v;
    }
    Ok(DisparityStats {
        min,
        max,
        mean: sum / d.len() as f64,
        argmax: points[imax],
    })
}

/// Dense single-image field against per-pose sparse fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityStudy {
    pub dense: DisparityField,
    pub sparse: Vec<DisparityField>,
    /// Dense max over the largest sparse max.
    pub contrast: f64,
}

impl DisparityStudy {
    pub fn max_sparse(&self) -> f64 {
        self.sparse.iter().map(|f| f.stats.max).fold(0.0, f64::max)
    }
}

pub fn compare_coverage_regimes(dense: &CorrespondenceSet, sparse: &[CorrespondenceSet]) -> Result<DisparityStudy> {
    let dense = DisparityField::from_set(dense)?;
    let sparse: Vec<DisparityField> = sparse
        .par_iter()
        .map(DisparityField::from_set)
        .collect::<Result<_>>()?;
    let max_sparse = sparse.iter().map(|f| f.stats.max).fold(0.0, f64::max);
    let contrast = if max_sparse > 0.0 {
        dense.stats.max / max_sparse
    } else {
        f64::INFINITY
    };
    Ok(DisparityStudy {
        dense,
        sparse,
        contrast,
    })
}

/// One member `(r_d, S r_u - r_d)` of a scaled family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMember {
    pub scale: f64,
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFamily {
    pub members: Vec<FamilyMember>,
    /// Scale picked by the constraint on the unscaled curve.
    pub tangent_scale: f64,
    /// Member whose scale is closest to `tangent_scale`.
    pub tangent_member: usize,
}

/// Scales the undistorted radii of `curve` by each of `scales` and locates the
/// member selected by `constraint` (the one tangent to `r_u = r_d` at the origin).
pub fn curve_scaling_family(
    curve: &RadialCurve,
    scales: &[f64],
    constraint: ScaleConstraint,
) -> Result<ScalingFamily> {
    if scales.is_empty() {
        return Err(Error::InvalidParameter("no scales given".into()));
    }
    let members = scales
        .iter()
        .map(|&s| FamilyMember {
            scale: s,
            samples: curve.samples.iter().map(|&(rd, ru)| (rd, s * ru - rd)).collect(),
        })
        .collect();
    let (rd, ru): (Vec<f64>, Vec<f64>) = curve.samples.iter().copied().unzip();
    let tangent_scale = minimize_scalar_constrained(&ru, &rd, constraint, SCALE_BRACKET)?;
    let tangent_member = scales
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - tangent_scale).abs().total_cmp(&(b.1 - tangent_scale).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(ScalingFamily {
        members,
        tangent_scale,
        tangent_member,
    })
}
