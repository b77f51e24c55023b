//! Model-free radial distortion curves and pointwise undistortion.

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Sampled map from distorted radius `r_d` to undistorted radius `r_u`, both in px,
/// measured from the center of distortion `cod`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialCurve {
    /// `(r_d, r_u)` pairs, ascending in `r_d`.
    pub samples: Vec<(f64, f64)>,
    pub cod: Point2,
}

impl RadialCurve {
    /// Builds a curve from raw (unsorted, possibly duplicated) samples.
    ///
    /// Samples are stably sorted by `r_d`; equal `r_d` values are merged by
    /// averaging their `r_u`.
    pub fn from_samples(cod: Point2, raw: &[(f64, f64)]) -> RadialCurve {
        let mut sorted = raw.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut samples: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        let mut i = 0;
        while i < sorted.len() {
            let rd = sorted[i].0;
            let mut j = i;
            let mut sum = 0.0;
            while j < sorted.len() && sorted[j].0 == rd {
                sum += sorted[j].1;
                j += 1;
            }
            samples.push((rd, sum / (j - i) as f64));
            i = j;
        }
        RadialCurve { samples, cod }
    }

    /// The identity map `r_u = r_d` sampled at the given radii.
    pub fn identity(cod: Point2, radii: &[f64]) -> RadialCurve {
        let raw: Vec<(f64, f64)> = radii.iter().map(|&r| (r, r)).collect();
        RadialCurve::from_samples(cod, &raw)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_rd(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.0)
    }

    /// First index where `r_d` fails to increase strictly or `r_u` decreases.
    pub fn first_violation(&self) -> Option<usize> {
        self.samples
            .windows(2)
            .position(|w| !(w[1].0 > w[0].0) || w[1].1 < w[0].1)
            .map(|i| i + 1)
    }

    pub fn is_monotone(&self) -> bool {
        self.first_violation().is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::InvalidParameter("radial curve needs at least two samples".into()));
        }
        if self.samples.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidParameter("non-finite curve sample".into()));
        }
        match self.first_violation() {
            Some(index) => Err(Error::NonMonotoneCurve { index }),
            None => Ok(()),
        }
    }

    /// Pool-adjacent-violators fit: the closest nondecreasing `r_u` in least squares.
    pub fn monotone_fit(&self) -> RadialCurve {
        let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(self.samples.len());
        for &(_, ru) in &self.samples {
            blocks.push((ru, 1));
            while blocks.len() > 1 {
                let (m2, n2) = blocks[blocks.len() - 1];
                let (m1, n1) = blocks[blocks.len() - 2];
                if m1 <= m2 {
                    break;
                }
                blocks.pop();
                let n = n1 + n2;
                *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
            }
        }
        let mut fitted = Vec::with_capacity(self.samples.len());
        for (m, n) in blocks {
            fitted.extend(std::iter::repeat_n(m, n));
        }
        RadialCurve {
            samples: self.samples.iter().zip(fitted).map(|(s, ru)| (s.0, ru)).collect(),
            cod: self.cod,
        }
    }

    /// Rescales the undistorted radii.
    pub fn scaled(&self, s: f64) -> RadialCurve {
        RadialCurve {
            samples: self.samples.iter().map(|&(rd, ru)| (rd, s * ru)).collect(),
            cod: self.cod,
        }
    }

    /// Interpolated `r_u` at distorted radius `rd`. The flag is set when `rd`
    /// lies outside the sampled range and the value was extrapolated linearly.
    pub fn undistorted_radius(&self, rd: f64) -> (f64, bool) {
        let s = &self.samples;
        let n = s.len();
        let lerp = |a: (f64, f64), b: (f64, f64), x: f64| a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0);
        if rd > s[n - 1].0 {
            return (lerp(s[n - 2], s[n - 1], rd), true);
        }
        if rd < s[0].0 {
            // toward the center the map is pinned at (0, 0)
            if s[0].0 > 0.0 {
                return (s[0].1 * rd / s[0].0, false);
            }
            return (lerp(s[0], s[1], rd), true);
        }
        let k = s.partition_point(|p| p.0 <= rd);
        if k == 0 {
            return (s[0].1, false);
        }
        if k >= n {
            return (s[n - 1].1, false);
        }
        (lerp(s[k - 1], s[k], rd), false)
    }
}

/// Undistorted point plus a flag for points beyond the sampled radius range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UndistortedPoint {
    pub point: Point2,
    pub extrapolated: bool,
}

/// Moves each point along its ray from the curve's center so its radius maps `r_d -> r_u`.
pub fn undistort_points(pts: &[Point2], curve: &RadialCurve) -> Result<Vec<UndistortedPoint>> {
    curve.validate()?;
    let c = curve.cod;
    Ok(pts
        .iter()
        .map(|p| {
            let (dx, dy) = (p.x - c.x, p.y - c.y);
            let rd = dx.hypot(dy);
            if rd == 0.0 {
                return UndistortedPoint {
                    point: *p,
                    extrapolated: false,
                };
            }
            let (ru, extrapolated) = curve.undistorted_radius(rd);
            let s = ru / rd;
            UndistortedPoint {
                point: Point2::new(c.x + dx * s, c.y + dy * s),
                extrapolated,
            }
        })
        .collect())
}
