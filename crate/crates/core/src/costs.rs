//! Cost functions and the regularity constants the convergence analysis needs.
//!
//! A cost enters the loop only through its values `J(x)`; the analysis,
//! however, needs quantitative regularity around the minimizer `x*`:
//!
//! ```text
//!     gamma1 ||x - x*||^(2 m1) <= J(x) - J*  <= gamma2 ||x - x*||^(2 m1)
//!     kappa1 (J - J*)^(2 - 1/m1) <= ||grad J||^2 <= kappa2 (J - J*)^(2 - 1/m1)
//!     ||hess J|| <= mu (J - J*)^(1 - 1/m1)
//! ```
//!
//! on a ball around `x*`.  [`CostProfile::estimate_constants`] recovers
//! `(m1, gamma, kappa, mu)` from grid samples, and
//! [`CostProfile::verify_constants`] re-checks a given set pointwise, which is
//! how mismatched exponents (e.g. quartic growth tested against a quadratic
//! sandwich) are caught.

use crate::numeric::{gradient_fd, hessian_fd, norm2, spectral_norm_sym};
use crate::{Error, Result};
use std::sync::Arc;

/// Value tolerance when validating `J(x*) = J*`.
pub const TOL_MIN: f64 = 1e-9;
/// Gradient tolerance when validating stationarity at `x*`.
pub const TOL_GRAD: f64 = 1e-6;
/// Grid points inside `||x - x*|| < radius * EXCLUSION_FRACTION` are skipped:
/// the sandwich ratios are 0/0 at the minimizer itself.
pub const EXCLUSION_FRACTION: f64 = 1.0 / 50.0;
/// Admissible growth orders for the fit: J ~ ||x - x*||^(2 m1).
pub const M1_CANDIDATES: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A cost function together with its known minimum.
#[derive(Clone)]
pub struct CostProfile {
    pub dim: usize,
    pub minimizer: Vec<f64>,
    pub min_value: f64,
    pub name: String,
    eval_fn: EvalFn,
    grad_fn: Option<GradFn>,
}

impl std::fmt::Debug for CostProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostProfile")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("minimizer", &self.minimizer)
            .field("min_value", &self.min_value)
            .field("analytic_grad", &self.grad_fn.is_some())
            .finish()
    }
}

/// The regularity constants of a cost around its minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConstants {
    pub m1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub mu: f64,
}

/// One pointwise failure of the sandwich inequalities.
#[derive(Debug, Clone)]
pub struct ConstantViolation {
    pub x: Vec<f64>,
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of [`CostProfile::verify_constants`].
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checked_points: usize,
    pub violations: Vec<ConstantViolation>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl CostProfile {
    /// Wrap a user cost.  `grad` may be omitted, in which case central
    /// differences with step `1e-5 * max(1, ||x||)` are used.
    pub fn new(
        dim: usize,
        name: impl Into<String>,
        eval_fn: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad_fn: Option<GradFn>,
        minimizer: Vec<f64>,
        min_value: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("cost dimension must be positive"));
        }
        if minimizer.len() != dim {
            return Err(Error::config(format!(
                "minimizer has {} coordinates but the cost is {dim}-dimensional",
                minimizer.len()
            )));
        }
        Ok(CostProfile {
            dim,
            minimizer,
            min_value,
            name: name.into(),
            eval_fn: Arc::new(eval_fn),
            grad_fn,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.eval_fn)(x)
    }

    /// `J(x) - J*` — the quantity the generator functions see.
    pub fn shifted(&self, x: &[f64]) -> f64 {
        self.eval(x) - self.min_value
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match &self.grad_fn {
            Some(g) => g(x),
            None => {
                let f = self.eval_fn.clone();
                gradient_fd(move |y| f(y), x)
            }
        }
    }

    /// Finite-difference Hessian (step `1e-4 * max(1, ||x||)`), symmetrized.
    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let f = self.eval_fn.clone();
        hessian_fd(move |y| f(y), x)
    }

    /// Distance to the minimizer.
    pub fn dist_to_min(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x
            .iter()
            .zip(&self.minimizer)
            .map(|(a, b)| a - b)
            .collect();
        norm2(&d)
    }

    /// Check that the declared minimizer is consistent: `J(x*) = J*` within
    /// `1e-9` and `||grad J(x*)|| <= 1e-6`.
    pub fn validate(&self) -> Result<()> {
        let at_min = self.eval(&self.minimizer);
        if (at_min - self.min_value).abs() > TOL_MIN {
            return Err(Error::model(format!(
                "cost `{}` evaluates to {at_min} at its declared minimizer, expected {}",
                self.name, self.min_value
            )));
        }
        let g = norm2(&self.grad(&self.minimizer));
        if g > TOL_GRAD {
            return Err(Error::model(format!(
                "cost `{}` has gradient norm {g:.3e} at its declared minimizer (tolerance {TOL_GRAD:.0e})",
                self.name
            )));
        }
        Ok(())
    }

    /// Check `J(x) > J*` at every grid point outside the exclusion ball.
    /// Returns the offending points, empty on success.
    pub fn check_positive_off_minimum(
        &self,
        radius: f64,
        points_per_axis: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let grid = self.sample_grid(radius, points_per_axis)?;
        Ok(grid
            .into_iter()
            .filter(|x| self.shifted(x) <= 0.0)
            .collect())
    }

    /// Estimate `(m1, gamma1, gamma2, kappa1, kappa2, mu)` from grid samples
    /// on `[x* - radius, x* + radius]^n` minus the exclusion ball.
    ///
    /// The growth order `m1` is fit from the innermost grid shell (log-log
    /// slope of `J - J*` against the distance) and snapped to the nearest
    /// half-integer in `M1_CANDIDATES`; the remaining constants are extremal
    /// ratios over the whole grid.
    pub fn estimate_constants(&self, radius: f64, points_per_axis: usize) -> Result<CostConstants> {
        self.validate()?;
        let grid = self.sample_grid(radius, points_per_axis)?;

        // m1 fit on the inner shell (distance <= radius / 5).
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for x in &grid {
            let d = self.dist_to_min(x);
            if d <= radius / 5.0 {
                let j = self.shifted(x);
                if j <= 0.0 {
                    return Err(Error::model(format!(
                        "cost `{}` is not positive at {x:?} away from the minimizer",
                        self.name
                    )));
                }
                xs.push(d.ln());
                ys.push(j.ln());
            }
        }
        if xs.len() < 2 {
            return Err(Error::config(
                "grid too coarse: no points in the inner shell for the growth-order fit",
            ));
        }
        let slope = least_squares_slope(&xs, &ys);
        let m1_raw = slope / 2.0;
        let m1 = M1_CANDIDATES
            .iter()
            .copied()
            .min_by(|a, b| {
                (a - m1_raw)
                    .abs()
                    .partial_cmp(&(b - m1_raw).abs())
                    .unwrap()
            })
            .unwrap();
        if (m1 - m1_raw).abs() > 0.3 {
            return Err(Error::model(format!(
                "cost `{}` grows like distance^{:.3} near the minimizer, which does not match any supported order {:?}",
                self.name,
                slope,
                M1_CANDIDATES.map(|m| 2.0 * m)
            )));
        }

        let mut gamma1 = f64::INFINITY;
        let mut gamma2 = 0.0_f64;
        let mut kappa1 = f64::INFINITY;
        let mut kappa2 = 0.0_f64;
        let mut mu = 0.0_f64;
        for x in &grid {
            let d = self.dist_to_min(x);
            let j = self.shifted(x);
            if j <= 0.0 {
                return Err(Error::model(format!(
                    "cost `{}` is not positive at {x:?} away from the minimizer",
                    self.name
                )));
            }
            let pow_d = d.powf(2.0 * m1);
            gamma1 = gamma1.min(j / pow_d);
            gamma2 = gamma2.max(j / pow_d);

            let g2 = self.grad(x).iter().map(|c| c * c).sum::<f64>();
            let pow_j = j.powf(2.0 - 1.0 / m1);
            kappa1 = kappa1.min(g2 / pow_j);
            kappa2 = kappa2.max(g2 / pow_j);

            let h = spectral_norm_sym(&self.hessian(x));
            mu = mu.max(h / j.powf(1.0 - 1.0 / m1));
        }
        Ok(CostConstants {
            m1,
            gamma1,
            gamma2,
            kappa1,
            kappa2,
            mu,
        })
    }

    /// Re-check a set of constants pointwise on a fresh grid.  Inequalities
    /// are tested with relative slack `1e-9`, so constants estimated on the
    /// same grid pass despite touching equality at their extremal points.
    pub fn verify_constants(
        &self,
        c: &CostConstants,
        radius: f64,
        points_per_axis: usize,
    ) -> Result<VerifyReport> {
        if !M1_CANDIDATES.contains(&c.m1) {
            return Err(Error::config(format!(
                "m1 = {} is not one of the supported orders {M1_CANDIDATES:?}",
                c.m1
            )));
        }
        let grid = self.sample_grid(radius, points_per_axis)?;
        let slack = |rhs: f64| rhs.abs() * 1e-9 + 1e-12;
        let mut violations = Vec::new();
        let mut push = |x: &[f64], ineq: &str, lhs: f64, rhs: f64| {
            violations.push(ConstantViolation {
                x: x.to_vec(),
                inequality: ineq.to_string(),
                lhs,
                rhs,
            });
        };
        for x in &grid {
            let d = self.dist_to_min(x);
            let j = self.shifted(x);
            let pow_d = d.powf(2.0 * c.m1);
            if c.gamma1 * pow_d > j + slack(j) {
                push(x, "gamma1 ||x-x*||^(2 m1) <= J - J*", c.gamma1 * pow_d, j);
            }
            if j > c.gamma2 * pow_d + slack(c.gamma2 * pow_d) {
                push(x, "J - J* <= gamma2 ||x-x*||^(2 m1)", j, c.gamma2 * pow_d);
            }
            let g2 = self.grad(x).iter().map(|v| v * v).sum::<f64>();
            let pow_j = j.powf(2.0 - 1.0 / c.m1);
            if c.kappa1 * pow_j > g2 + slack(g2) {
                push(
                    x,
                    "kappa1 (J-J*)^(2-1/m1) <= ||grad J||^2",
                    c.kappa1 * pow_j,
                    g2,
                );
            }
            if g2 > c.kappa2 * pow_j + slack(c.kappa2 * pow_j) {
                push(
                    x,
                    "||grad J||^2 <= kappa2 (J-J*)^(2-1/m1)",
                    g2,
                    c.kappa2 * pow_j,
                );
            }
            let h = spectral_norm_sym(&self.hessian(x));
            let rhs = c.mu * j.powf(1.0 - 1.0 / c.m1);
            // FD Hessians carry O(h^2) noise, so this bound gets a slightly
            // wider relative slack than the exact-value sandwiches.
            if h > rhs + rhs.abs() * 1e-6 + 1e-9 {
                push(x, "||hess J|| <= mu (J-J*)^(1-1/m1)", h, rhs);
            }
        }
        Ok(VerifyReport {
            checked_points: grid.len(),
            violations,
        })
    }

    /// Tensor grid over `[x* - radius, x* + radius]^n` minus the exclusion
    /// ball of radius `radius / 50`.
    pub fn sample_grid(&self, radius: f64, points_per_axis: usize) -> Result<Vec<Vec<f64>>> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("grid radius must be positive, got {radius}")));
        }
        if points_per_axis < 2 {
            return Err(Error::config("need at least 2 grid points per axis"));
        }
        if self.dim > 4 {
            return Err(Error::config(format!(
                "tensor grids are limited to 4 dimensions, cost is {}-dimensional",
                self.dim
            )));
        }
        let exclusion = radius * EXCLUSION_FRACTION;
        let axis: Vec<f64> = (0..points_per_axis)
            .map(|i| -radius + 2.0 * radius * i as f64 / (points_per_axis - 1) as f64)
            .collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.dim];
        loop {
            let x: Vec<f64> = idx
                .iter()
                .zip(&self.minimizer)
                .map(|(&i, &c)| c + axis[i])
                .collect();
            if self.dist_to_min(&x) >= exclusion {
                out.push(x);
            }
            // Odometer increment over the tensor grid.
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < points_per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == self.dim {
                    return Ok(out);
                }
            }
        }
    }
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Construct one of the builtin costs.
///
/// * `j1` — `2 (x - c)^2` in one dimension; `params = [c]`, default `c = 1`.
/// * `j2` — `2 (x - c)^4` in one dimension; `params = [c]`, default `c = 1`.
/// * `quadratic_nd` — `||x - c||^2`; `params = [dim, c_1, ..., c_dim]`, the
///   minimizer defaulting to the origin when only the dimension is given.
pub fn builtin_cost(name: &str, params: &[f64]) -> Result<CostProfile> {
    match name {
        "j1" => {
            let c = one_param(name, params, 1.0)?;
            CostProfile::new(
                1,
                "j1",
                move |x: &[f64]| 2.0 * (x[0] - c).powi(2),
                Some(Arc::new(move |x: &[f64]| vec![4.0 * (x[0] - c)])),
                vec![c],
                0.0,
            )
        }
        "j2" => {
            let c = one_param(name, params, 1.0)?;
            CostProfile::new(
                1,
                "j2",
                move |x: &[f64]| 2.0 * (x[0] - c).powi(4),
                Some(Arc::new(move |x: &[f64]| vec![8.0 * (x[0] - c).powi(3)])),
                vec![c],
                0.0,
            )
        }
        "quadratic_nd" => {
            if params.is_empty() {
                return Err(Error::config(
                    "quadratic_nd needs at least the dimension as a parameter",
                ));
            }
            let dim = params[0];
            if dim.fract() != 0.0 || dim < 1.0 || dim > 16.0 {
                return Err(Error::config(format!(
                    "quadratic_nd dimension must be an integer in [1, 16], got {dim}"
                )));
            }
            let dim = dim as usize;
            let center: Vec<f64> = if params.len() == 1 {
                vec![0.0; dim]
            } else if params.len() == dim + 1 {
                params[1..].to_vec()
            } else {
                return Err(Error::config(format!(
                    "quadratic_nd with dimension {dim} takes {dim} minimizer coordinates, got {}",
                    params.len() - 1
                )));
            };
            let c_eval = center.clone();
            let c_grad = center.clone();
            CostProfile::new(
                dim,
                "quadratic_nd",
                move |x: &[f64]| {
                    x.iter()
                        .zip(&c_eval)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                },
                Some(Arc::new(move |x: &[f64]| {
                    x.iter().zip(&c_grad).map(|(a, b)| 2.0 * (a - b)).collect()
                })),
                center,
                0.0,
            )
        }
        other => Err(Error::config(format!(
            "unknown builtin cost `{other}` (available: j1, j2, quadratic_nd)"
        ))),
    }
}

fn one_param(name: &str, params: &[f64], default: f64) -> Result<f64> {
    match params {
        [] => Ok(default),
        [c] => Ok(*c),
        _ => Err(Error::config(format!(
            "builtin cost `{name}` takes at most one parameter, got {}",
            params.len()
        ))),
    }
}

/// Estimate a Lipschitz constant of `grad J` (equivalently, a Hessian norm
/// bound) over the grid box — used when assembling certificate inputs.
pub fn gradient_lipschitz(cost: &CostProfile, radius: f64, points_per_axis: usize) -> Result<f64> {
    let grid = cost.sample_grid(radius, points_per_axis)?;
    let mut l: f64 = 0.0;
    for x in &grid {
        l = l.max(spectral_norm_sym(&cost.hessian(x)));
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn builtin_values_and_gradients() {
        let j1 = builtin_cost("j1", &[]).unwrap();
        assert_eq!(j1.eval(&[1.0]), 0.0);
        assert_eq!(j1.eval(&[0.0]), 2.0);
        assert_eq!(j1.grad(&[0.0])[0], -4.0);

        let j2 = builtin_cost("j2", &[]).unwrap();
        assert_eq!(j2.eval(&[2.0]), 2.0);
        assert_eq!(j2.grad(&[2.0])[0], 8.0);
        assert_eq!(j2.eval(&[1.0]), 0.0);

        let q = builtin_cost("quadratic_nd", &[2.0]).unwrap();
        assert_eq!(q.eval(&[3.0, 4.0]), 25.0);
        assert_eq!(q.grad(&[3.0, 4.0]), vec![6.0, 8.0]);
    }

    #[test]
    fn unknown_builtin_is_config_error() {
        assert!(builtin_cost("rosenbrock", &[]).is_err());
        assert!(builtin_cost("quadratic_nd", &[]).is_err());
        assert!(builtin_cost("quadratic_nd", &[2.5]).is_err());
        assert!(builtin_cost("j1", &[1.0, 2.0]).is_err());
    }

    #[test]
    fn validate_rejects_wrong_minimizer() {
        let bad = CostProfile::new(
            1,
            "shifted",
            |x: &[f64]| 2.0 * (x[0] - 1.0) * (x[0] - 1.0),
            None,
            vec![0.5], // not the true minimizer
            0.0,
        )
        .unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn j1_constants_are_recovered_exactly() {
        let j1 = builtin_cost("j1", &[]).unwrap();
        let c = j1.estimate_constants(1.0, 100).unwrap();
        assert_eq!(c.m1, 1.0);
        assert!((c.gamma1 - 2.0).abs() < 1e-9);
        assert!((c.gamma2 - 2.0).abs() < 1e-9);
        assert!((c.kappa1 - 8.0).abs() < 1e-9);
        assert!((c.kappa2 - 8.0).abs() < 1e-9);
        assert!((c.mu - 4.0).abs() < 1e-5);
    }

    #[test]
    fn j2_constants_match_quartic_growth() {
        let j2 = builtin_cost("j2", &[]).unwrap();
        let c = j2.estimate_constants(1.0, 100).unwrap();
        assert_eq!(c.m1, 2.0);
        assert!((c.gamma1 - 2.0).abs() < 1e-9);
        assert!((c.gamma2 - 2.0).abs() < 1e-9);
        // ||grad||^2 / (J - J*)^(3/2) = 64 d^6 / (2 d^4)^(3/2) = 2^4.5
        let kappa = 2.0_f64.powf(4.5);
        assert!((c.kappa1 - kappa).abs() < 1e-6 * kappa);
        assert!((c.kappa2 - kappa).abs() < 1e-6 * kappa);
        // |hess| / (J - J*)^(1/2) = 24 d^2 / (sqrt(2) d^2) = 12 sqrt(2)
        assert!((c.mu - 12.0 * SQRT2).abs() < 1e-3);
    }

    #[test]
    fn quadratic_nd_constants() {
        let q = builtin_cost("quadratic_nd", &[2.0]).unwrap();
        let c = q.estimate_constants(1.0, 21).unwrap();
        assert_eq!(c.m1, 1.0);
        assert!((c.gamma1 - 1.0).abs() < 1e-9);
        assert!((c.gamma2 - 1.0).abs() < 1e-9);
        assert!((c.kappa1 - 4.0).abs() < 1e-9);
        assert!((c.kappa2 - 4.0).abs() < 1e-9);
        assert!((c.mu - 2.0).abs() < 1e-5);
    }

    #[test]
    fn estimated_constants_verify_cleanly() {
        for name in ["j1", "j2"] {
            let cost = builtin_cost(name, &[]).unwrap();
            let c = cost.estimate_constants(1.0, 60).unwrap();
            let report = cost.verify_constants(&c, 1.0, 60).unwrap();
            assert!(report.passed(), "{name}: {:?}", report.violations.first());
            assert!(report.checked_points > 0);
        }
    }

    #[test]
    fn inflated_lower_bound_is_caught() {
        let j1 = builtin_cost("j1", &[]).unwrap();
        let mut c = j1.estimate_constants(1.0, 60).unwrap();
        c.kappa1 *= 2.0; // now claims a stronger gradient lower bound than holds
        let report = j1.verify_constants(&c, 1.0, 60).unwrap();
        assert!(!report.passed());
        assert!(report
            .violations
            .iter()
            .all(|v| v.inequality.contains("kappa1")));
    }

    #[test]
    fn quartic_fails_quadratic_sandwich() {
        // Constants of the quadratic cost applied to the quartic one: near the
        // minimizer a quartic sits below any quadratic lower bound.
        let j2 = builtin_cost("j2", &[]).unwrap();
        let quadratic = CostConstants {
            m1: 1.0,
            gamma1: 2.0,
            gamma2: 2.0,
            kappa1: 8.0,
            kappa2: 8.0,
            mu: 4.0,
        };
        let report = j2.verify_constants(&quadratic, 1.0, 60).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn positivity_check_passes_for_builtins() {
        for name in ["j1", "j2"] {
            let cost = builtin_cost(name, &[]).unwrap();
            assert!(cost
                .check_positive_off_minimum(1.0, 100)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn fd_gradient_fallback_matches_analytic() {
        let with_grad = builtin_cost("j1", &[]).unwrap();
        let without = CostProfile::new(
            1,
            "j1-fd",
            |x: &[f64]| 2.0 * (x[0] - 1.0) * (x[0] - 1.0),
            None,
            vec![1.0],
            0.0,
        )
        .unwrap();
        for x in [-0.7, 0.3, 1.9] {
            let a = with_grad.grad(&[x])[0];
            let f = without.grad(&[x])[0];
            assert!((a - f).abs() <= 1e-6 * a.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn grid_excludes_the_minimizer_neighborhood() {
        let j1 = builtin_cost("j1", &[]).unwrap();
        let grid = j1.sample_grid(1.0, 101).unwrap();
        // 101 points over [0, 2] includes x = 1 exactly; exclusion removes it.
        assert!(grid.iter().all(|x| (x[0] - 1.0).abs() >= 0.02));
        assert_eq!(grid.len(), 100);
    }
}
