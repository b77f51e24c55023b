//! Bounded local minimization.
//!
//! Two deterministic engines: Nelder-Mead with bound reflection for
//! non-smooth scalar objectives, and a projected Levenberg-Marquardt for
//! least-squares problems. Plus the 1-D scale search used to pin the
//! model-free distortion curve to the origin.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::median;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ObjectiveTolerance,
    StepTolerance,
    GradientTolerance,
    MaxIterations,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ObjectiveTolerance => "objective_tolerance",
            Termination::StepTolerance => "step_tolerance",
            Termination::GradientTolerance => "gradient_tolerance",
            Termination::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
}

impl OptimResult {
    /// Indices of parameters sitting on a bound (within a relative 1e-9 of the box width).
    pub fn active_bounds(&self, lower: &[f64], upper: &[f64]) -> Vec<usize> {
        self.x
            .iter()
            .enumerate()
            .filter(|(i, &v)| {
                let w = (upper[*i] - lower[*i]).abs().max(1e-300);
                (v - lower[*i]).abs() <= 1e-9 * w || (upper[*i] - v).abs() <= 1e-9 * w
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// A box-constrained scalar minimization problem.
pub struct BoundedProblem<'a> {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    /// Initial simplex edge per coordinate. Defaults to 5% of |x0| (or 2.5e-4 at zero).
    pub initial_step: Option<Vec<f64>>,
    pub objective: Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>,
    pub max_iter: usize,
    /// Simplex rebuilds allowed after the first local convergence.
    pub max_restarts: usize,
}

impl<'a> BoundedProblem<'a> {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        x0: Vec<f64>,
        objective: impl Fn(&[f64]) -> f64 + Sync + 'a,
    ) -> Self {
        Self {
            lower,
            upper,
            x0,
            initial_step: None,
            objective: Box::new(objective),
            max_iter: DEFAULT_MAX_ITER,
            max_restarts: 20,
        }
    }

    pub fn with_max_restarts(mut self, max_restarts: usize) -> Self {
        self.max_restarts = max_restarts;
        self
    }

    pub fn with_step(mut self, step: Vec<f64>) -> Self {
        self.initial_step = Some(step);
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::InvalidParameter("bound/x0 dimension mismatch".into()));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.x0[i] && self.x0[i] <= self.upper[i]) {
                return Err(Error::InvalidParameter(format!(
                    "x0[{i}] = {} outside [{}, {}]",
                    self.x0[i], self.lower[i], self.upper[i]
                )));
            }
        }
        if let Some(s) = &self.initial_step {
            if s.len() != n {
                return Err(Error::InvalidParameter("initial step dimension".into()));
            }
        }
        Ok(())
    }
}

fn reflect_into(v: f64, lo: f64, hi: f64) -> f64 {
    let mut x = v;
    if x < lo {
        x = lo + (lo - x);
    }
    if x > hi {
        x = hi - (x - hi);
    }
    x.clamp(lo, hi)
}

/// Nelder-Mead with reflection at the bounds and restarts around the incumbent.
///
/// Stops when both the simplex objective spread falls below `tol` relative to
/// the best value and the simplex diameter (in units of the initial step)
/// falls below `tol`, and a restart fails to improve the incumbent.
pub fn minimize(problem: &BoundedProblem<'_>, tol: f64) -> Result<OptimResult> {
    problem.validate()?;
    let n = problem.dim();
    let (lo, hi) = (&problem.lower, &problem.upper);
    let step: Vec<f64> = match &problem.initial_step {
        Some(s) => s.clone(),
        None => problem
            .x0
            .iter()
            .map(|&v| if v != 0.0 { 0.05 * v.abs() } else { 2.5e-4 })
            .collect(),
    };

    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| -> Result<f64> {
        evaluations += 1;
        let f = (problem.objective)(x);
        if f.is_nan() {
            return Err(Error::NonFiniteObjective(x.to_vec()));
        }
        Ok(if f.is_finite() { f } else { f64::INFINITY })
    };

    let f0 = eval(&problem.x0)?;
    if !f0.is_finite() {
        return Err(Error::NonFiniteObjective(problem.x0.clone()));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut best_x = problem.x0.clone();
    let mut best_f = f0;
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;
    let mut restart_scale = 1.0;
    let mut restarts = 0usize;

    'outer: loop {
        // Build the simplex around the incumbent.
        let mut simplex: Vec<Vec<f64>> = vec![best_x.clone()];
        let mut values: Vec<f64> = vec![best_f];
        for i in 0..n {
            let mut v = best_x.clone();
            let s = step[i] * restart_scale;
            let mut cand = v[i] + s;
            if cand > hi[i] {
                cand = v[i] - s;
            }
            v[i] = cand.clamp(lo[i], hi[i]);
            if v[i] == best_x[i] {
                v[i] = if hi[i] > best_x[i] {
                    (best_x[i] + 0.5 * (hi[i] - best_x[i])).min(best_x[i] + s.abs())
                } else {
                    (best_x[i] - 0.5 * (best_x[i] - lo[i])).max(best_x[i] - s.abs())
                };
            }
            values.push(eval(&v)?);
            simplex.push(v);
        }

        let start_best = best_f;
        let mut local_done = false;
        while iterations < problem.max_iter {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            let simplex_sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
            let values_sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            simplex = simplex_sorted;
            values = values_sorted;

            let f_best = values[0];
            let f_worst = values[n];
            let spread = (f_worst - f_best).abs();
            let diameter = simplex[1..]
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[0])
                        .zip(&step)
                        .map(|((a, b), s)| ((a - b) / s).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= tol * f_best.abs().max(1e-300) || diameter <= tol {
                local_done = true;
                termination = if spread <= tol * f_best.abs().max(1e-300) {
                    Termination::ObjectiveTolerance
                } else {
                    Termination::StepTolerance
                };
                break;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let point = |coef: f64| -> Vec<f64> {
                (0..n)
                    .map(|i| {
                        reflect_into(centroid[i] + coef * (simplex[n][i] - centroid[i]), lo[i], hi[i])
                    })
                    .collect()
            };

            let xr = point(-alpha);
            let fr = eval(&xr)?;
            if fr < values[0] {
                let xe = point(-alpha * gamma);
                let fe = eval(&xe)?;
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[n] {
                let xc = point(-alpha * rho);
                let fc = eval(&xc)?;
                (xc, fc)
            } else {
                let xc = point(rho);
                let fc = eval(&xc)?;
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            // shrink towards the best vertex
            for j in 1..=n {
                let v: Vec<f64> = (0..n)
                    .map(|i| simplex[0][i] + sigma * (simplex[j][i] - simplex[0][i]))
                    .collect();
                values[j] = eval(&v)?;
                simplex[j] = v;
            }
        }

        let (ib, _) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        if values[ib] < best_f {
            best_f = values[ib];
            best_x = simplex[ib].clone();
        }
        if !local_done {
            termination = Termination::MaxIterations;
            break 'outer;
        }
        // Restart with a smaller simplex until a restart stops paying off.
        let improved = start_best - best_f > tol * best_f.abs().max(1e-300);
        if (!improved && restart_scale < 1.0) || restarts >= problem.max_restarts {
            break 'outer;
        }
        restarts += 1;
        restart_scale = if improved { (restart_scale * 0.5).max(1e-3) } else { 1e-3 };
    }

    Ok(OptimResult {
        x: best_x,
        f: best_f,
        iterations,
        evaluations,
        converged: termination != Termination::MaxIterations,
        termination,
    })
}

/// A box-constrained nonlinear least-squares problem `min 0.5 * |r(x)|^2`.
pub struct LeastSquaresProblem<'a> {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    pub residuals: Box<dyn Fn(&[f64]) -> DVector<f64> + Sync + 'a>,
    /// Analytic Jacobian; central finite differences are used when absent.
    pub jacobian: Option<Box<dyn Fn(&[f64]) -> DMatrix<f64> + Sync + 'a>>,
    pub max_iter: usize,
}

impl<'a> LeastSquaresProblem<'a> {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        x0: Vec<f64>,
        residuals: impl Fn(&[f64]) -> DVector<f64> + Sync + 'a,
    ) -> Self {
        Self {
            lower,
            upper,
            x0,
            residuals: Box::new(residuals),
            jacobian: None,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> DMatrix<f64> + Sync + 'a) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    fn jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => finite_difference_jacobian(&*self.residuals, x),
        }
    }
}

/// Central-difference Jacobian with a relative step.
pub fn finite_difference_jacobian(
    residuals: &dyn Fn(&[f64]) -> DVector<f64>,
    x: &[f64],
) -> DMatrix<f64> {
    let m = residuals(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let rp = residuals(&xp);
        xp[j] = x[j] - h;
        let rm = residuals(&xp);
        xp[j] = x[j];
        jac.set_column(j, &((rp - rm) / (2.0 * h)));
    }
    jac
}

/// Levenberg-Marquardt with Marquardt scaling and projection onto the box.
pub fn least_squares(problem: &LeastSquaresProblem<'_>, tol: f64) -> Result<OptimResult> {
    let n = problem.x0.len();
    let (lo, hi) = (&problem.lower, &problem.upper);
    if lo.len() != n || hi.len() != n {
        return Err(Error::InvalidParameter("bound/x0 dimension mismatch".into()));
    }
    let mut x: Vec<f64> = problem
        .x0
        .iter()
        .enumerate()
        .map(|(i, v)| v.clamp(lo[i], hi[i]))
        .collect();
    let mut r = (problem.residuals)(&x);
    let mut cost = 0.5 * r.norm_squared();
    let mut evaluations = 1usize;
    if !cost.is_finite() {
        return Err(Error::NonFiniteObjective(x));
    }

    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;
    let mut jac = problem.jacobian_at(&x);

    while iterations < problem.max_iter {
        iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let g = jac.tr_mul(&r);
        if g.amax() <= 1e-16 * (1.0 + cost) || cost == 0.0 {
            termination = Termination::GradientTolerance;
            break;
        }
        let diag: DVector<f64> = jtj.diagonal().map(|d| d.max(1e-30));

        let mut accepted = false;
        for _ in 0..60 {
            let mut lhs = jtj.clone();
            for i in 0..n {
                lhs[(i, i)] += lambda * diag[i];
            }
            let delta = match lhs.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match lhs.lu().solve(&(-&g)) {
                    Some(d) => d,
                    None => {
                        lambda *= nu;
                        nu *= 2.0;
                        continue;
                    }
                },
            };
            let x_new: Vec<f64> = (0..n).map(|i| (x[i] + delta[i]).clamp(lo[i], hi[i])).collect();
            let step: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
            let r_new = (problem.residuals)(&x_new);
            evaluations += 1;
            let cost_new = 0.5 * r_new.norm_squared();
            let step_norm = step
                .iter()
                .zip(&x)
                .map(|(s, v)| (s / (v.abs() + tol)).abs())
                .fold(0.0, f64::max);

            if cost_new.is_finite() && cost_new < cost {
                // gain ratio against the linear model
                let s = DVector::from_vec(step.clone());
                let predicted = -(g.dot(&s) + 0.5 * s.dot(&(&jtj * &s)));
                let rho = if predicted > 0.0 { (cost - cost_new) / predicted } else { 0.0 };
                let rel_decrease = (cost - cost_new) / cost.max(1e-300);
                x = x_new;
                r = r_new;
                cost = cost_new;
                lambda *= (1.0_f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                lambda = lambda.max(1e-15);
                nu = 2.0;
                accepted = true;
                if rel_decrease < tol || step_norm < tol {
                    termination = if rel_decrease < tol {
                        Termination::ObjectiveTolerance
                    } else {
                        Termination::StepTolerance
                    };
                }
                break;
            }
            if step_norm < tol {
                termination = Termination::StepTolerance;
                break;
            }
            lambda *= nu;
            nu *= 2.0;
        }
        if termination != Termination::MaxIterations {
            break;
        }
        if !accepted {
            termination = Termination::StepTolerance;
            break;
        }
        jac = problem.jacobian_at(&x);
    }

    Ok(OptimResult {
        x,
        f: cost,
        iterations,
        evaluations,
        converged: termination != Termination::MaxIterations,
        termination,
    })
}

/// Constraint used to select the scale `S` of an undistorted radius curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleConstraint {
    /// `S * u_i - d_i >= -epsilon` for every sample.
    Epsilon(f64),
    /// `median(S * u_i - d_i) = 0` over the first `n_prime` samples (closest to the origin).
    Median { n_prime: usize },
}

/// Minimizes `O(S) = sum (S u_i - d_i)^2` over `S` in `bracket` under `constraint`.
///
/// `undistorted` and `distorted` must be ordered by increasing distorted radius
/// for the median variant, which only looks at the leading `n_prime` samples.
pub fn minimize_scalar_constrained(
    undistorted: &[f64],
    distorted: &[f64],
    constraint: ScaleConstraint,
    bracket: (f64, f64),
) -> Result<f64> {
    if undistorted.len() != distorted.len() {
        return Err(Error::LengthMismatch {
            left: undistorted.len(),
            right: distorted.len(),
        });
    }
    let (lo, hi) = bracket;
    if !(lo < hi) || undistorted.is_empty() {
        return Err(Error::InfeasibleBracket { lo, hi });
    }
    match constraint {
        ScaleConstraint::Epsilon(eps) => {
            // O is a convex parabola; the constraint is a lower bound on S.
            let (mut suu, mut sud) = (0.0, 0.0);
            let mut s_min = f64::NEG_INFINITY;
            for (&u, &d) in undistorted.iter().zip(distorted) {
                suu += u * u;
                sud += u * d;
                if u > 0.0 {
                    s_min = s_min.max((d - eps) / u);
                } else if d - eps > 0.0 {
                    // S * 0 - d >= -eps cannot be met for any S
                    return Err(Error::InfeasibleBracket { lo, hi });
                }
            }
            if s_min > hi {
                return Err(Error::InfeasibleBracket { lo, hi });
            }
            let s_free = if suu > 0.0 { sud / suu } else { lo };
            Ok(s_free.max(s_min).clamp(lo, hi))
        }
        ScaleConstraint::Median { n_prime } => {
            let k = n_prime.min(undistorted.len()).max(1);
            let (u, d) = (&undistorted[..k], &distorted[..k]);
            let g = |s: f64| -> f64 {
                let v: Vec<f64> = u.iter().zip(d).map(|(u, d)| s * u - d).collect();
                median(&v).unwrap_or(0.0)
            };
            let (mut a, mut b) = (lo, hi);
            let (ga, gb) = (g(a), g(b));
            if ga == 0.0 {
                return Ok(a);
            }
            if gb == 0.0 {
                return Ok(b);
            }
            if ga.signum() == gb.signum() {
                return Err(Error::NoRoot { lo, hi });
            }
            // g is nondecreasing in S
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let gm = g(m);
                if gm == 0.0 {
                    return Ok(m);
                }
                if gm < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            Ok(0.5 * (a + b))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_1d() {
        let p = BoundedProblem::new(vec![0.0], vec![10.0], vec![0.0], |x| (x[0] - 3.0).powi(2))
            .with_step(vec![1.0]);
        let r = minimize(&p, 1e-12).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-5, "{:?}", r);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock_2d() {
        let p = BoundedProblem::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![-1.2, 1.0], |x| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        })
        .with_step(vec![0.1, 0.1]);
        let r = minimize(&p, 1e-14).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r);
        assert!(r.f <= 24.2);
    }

    #[test]
    fn respects_bounds() {
        let p = BoundedProblem::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5], |x| {
            (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2)
        });
        let r = minimize(&p, 1e-12).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8 && r.x[1].abs() < 1e-8);
        assert!(r.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(r.active_bounds(&p.lower, &p.upper), vec![0, 1]);
    }

    #[test]
    fn nan_objective_is_an_error() {
        let p = BoundedProblem::new(vec![0.0], vec![1.0], vec![0.5], |_| f64::NAN);
        assert!(matches!(minimize(&p, 1e-10), Err(Error::NonFiniteObjective(_))));
    }

    #[test]
    fn max_iterations_returns_best_so_far() {
        let p = BoundedProblem::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![-1.2, 1.0], |x| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        })
        .with_max_iter(5);
        let r = minimize(&p, 1e-14).unwrap();
        assert!(!r.converged);
        assert_eq!(r.termination, Termination::MaxIterations);
        assert!(r.f <= 24.2);
    }

    #[test]
    fn nelder_mead_is_deterministic() {
        let mk = || {
            BoundedProblem::new(vec![-5.0; 3], vec![5.0; 3], vec![1.0, 2.0, -1.0], |x| {
                (x[0] - 0.3).abs() + (x[1] + x[2]).powi(2) + (x[2] - 1.0).powi(2)
            })
        };
        let a = minimize(&mk(), 1e-12).unwrap();
        let b = minimize(&mk(), 1e-12).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.f.to_bits(), b.f.to_bits());
    }

    #[test]
    fn lm_fits_exponential() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-0.7 * t).exp() + 0.3).collect();
        let p = LeastSquaresProblem::new(
            vec![0.0, 0.0, -1.0],
            vec![10.0, 5.0, 1.0],
            vec![1.0, 0.1, 0.0],
            |x| DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| x[0] * (-x[1] * t).exp() + x[2] - y)),
        );
        let r = least_squares(&p, 1e-12).unwrap();
        assert!((r.x[0] - 2.5).abs() < 1e-7 && (r.x[1] - 0.7).abs() < 1e-7 && (r.x[2] - 0.3).abs() < 1e-7, "{:?}", r);
    }

    #[test]
    fn lm_projects_onto_bounds() {
        let p = LeastSquaresProblem::new(vec![-1.0, 2.0], vec![1.0, 3.0], vec![0.0, 2.5], |x| {
            DVector::from_vec(vec![x[0] - 4.0, x[1]])
        });
        let r = least_squares(&p, 1e-12).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-12 && (r.x[1] - 2.0).abs() < 1e-12, "{:?}", r);
    }

    #[test]
    fn scale_identical_curves_epsilon_zero() {
        let u: Vec<f64> = (1..100).map(|i| i as f64).collect();
        let s = minimize_scalar_constrained(&u, &u, ScaleConstraint::Epsilon(0.0), (0.5, 2.0)).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn scale_median_exact_half() {
        let d: Vec<f64> = (1..300).map(|i| i as f64 * 0.5).collect();
        let u: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        let s = minimize_scalar_constrained(&u, &d, ScaleConstraint::Median { n_prime: 200 }, (0.5, 2.0)).unwrap();
        assert_eq!(s, 0.5);
        let u3: Vec<f64> = d.iter().map(|v| v / 1.25).collect();
        let s = minimize_scalar_constrained(&u3, &d, ScaleConstraint::Median { n_prime: 200 }, (0.5, 2.0)).unwrap();
        assert!((s - 1.25).abs() < 1e-12);
    }

    #[test]
    fn scale_errors() {
        let d = vec![1.0, 2.0, 3.0];
        let u = vec![0.1, 0.2, 0.3];
        assert!(matches!(
            minimize_scalar_constrained(&u, &d, ScaleConstraint::Epsilon(0.0), (0.5, 2.0)),
            Err(Error::InfeasibleBracket { .. })
        ));
        assert!(matches!(
            minimize_scalar_constrained(&u, &d, ScaleConstraint::Median { n_prime: 10 }, (0.5, 2.0)),
            Err(Error::NoRoot { .. })
        ));
    }
}
