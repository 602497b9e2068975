//! Shared numeric kernels: quadrature, finite differences, and a few small
//! linear-algebra helpers.  Everything here is deterministic — same inputs,
//! same bits — which the trajectory/CSV reproducibility guarantees rely on.

use crate::{Error, Result};

/// Default number of sub-intervals for composite Simpson quadrature.
pub const SIMPSON_STEPS: usize = 8192;
/// Absolute tolerance for adaptive Simpson quadrature.
pub const ADAPTIVE_TOL: f64 = 1e-10;
/// Maximum recursion depth for adaptive Simpson before giving up.
pub const ADAPTIVE_MAX_DEPTH: u32 = 48;
/// Relative step for 5-point scalar derivatives.
pub const FD_SCALAR_STEP: f64 = 1e-5;
/// Relative step for gradient central differences.
pub const FD_GRAD_STEP: f64 = 1e-5;
/// Relative step for Hessian central differences.
pub const FD_HESS_STEP: f64 = 1e-4;

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Composite Simpson on a uniform grid with `steps` sub-intervals
/// (`steps` must be even and positive).
pub fn composite_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> Result<f64> {
    if steps == 0 || steps % 2 != 0 {
        return Err(Error::config(format!(
            "composite Simpson needs a positive even step count, got {steps}"
        )));
    }
    let h = (b - a) / steps as f64;
    let mut acc = f(a) + f(b);
    for j in 1..steps {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + j as f64 * h);
    }
    let value = acc * h / 3.0;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(format!(
            "composite Simpson produced a non-finite value on [{a}, {b}]"
        )))
    }
}

/// Adaptive Simpson with the standard Richardson correction `(s2 - s)/15`.
///
/// `tol` is an absolute tolerance on the whole interval; it is halved on each
/// subdivision.  Exceeding [`ADAPTIVE_MAX_DEPTH`] reports the offending
/// sub-interval instead of silently returning garbage, which is the failure
/// mode near non-integrable singularities.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let s = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_rec(f, a, b, fa, fm, fb, s, tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    s: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let sl = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let sr = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let s2 = sl + sr;
    if !s2.is_finite() {
        return Err(Error::numeric(format!(
            "adaptive Simpson hit non-finite values on [{a}, {b}]"
        )));
    }
    if depth >= ADAPTIVE_MAX_DEPTH {
        return Err(Error::numeric(format!(
            "adaptive Simpson failed to converge on [{a}, {b}] (depth {depth})"
        )));
    }
    if (s2 - s).abs() <= 15.0 * tol {
        return Ok(s2 + (s2 - s) / 15.0);
    }
    let left = adaptive_rec(f, a, m, fa, flm, fm, sl, 0.5 * tol, depth + 1)?;
    let right = adaptive_rec(f, m, b, fm, frm, fb, sr, 0.5 * tol, depth + 1)?;
    Ok(left + right)
}

/// 5-point central-difference derivative with relative step
/// `FD_SCALAR_STEP * max(1, |z|)`.
pub fn derivative_5pt(f: impl Fn(f64) -> f64, z: f64) -> f64 {
    let h = FD_SCALAR_STEP * z.abs().max(1.0);
    (f(z - 2.0 * h) - 8.0 * f(z - h) + 8.0 * f(z + h) - f(z + 2.0 * h)) / (12.0 * h)
}

/// Central-difference gradient with relative step `FD_GRAD_STEP * max(1, ||x||)`.
pub fn gradient_fd(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = FD_GRAD_STEP * norm2(x).max(1.0);
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        work[i] = x[i] + h;
        let fp = f(&work);
        work[i] = x[i] - h;
        let fm = f(&work);
        work[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Central-difference Hessian with relative step `FD_HESS_STEP * max(1, ||x||)`.
/// Returned row-major, symmetrized.
pub fn hessian_fd(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let h = FD_HESS_STEP * norm2(x).max(1.0);
    let f0 = f(x);
    let mut work = x.to_vec();
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        work[i] = x[i] + h;
        let fp = f(&work);
        work[i] = x[i] - h;
        let fm = f(&work);
        work[i] = x[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h * h);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            work[i] = x[i] + h;
            work[j] = x[j] + h;
            let fpp = f(&work);
            work[j] = x[j] - h;
            let fpm = f(&work);
            work[i] = x[i] - h;
            let fmm = f(&work);
            work[j] = x[j] + h;
            let fmp = f(&work);
            work[i] = x[i];
            work[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Spectral norm of a symmetric matrix via power iteration on `H^T H = H^2`.
///
/// Deterministic start vector; for the sizes this crate handles (cost
/// Hessians, a handful of dimensions) convergence is effectively immediate.
pub fn spectral_norm_sym(h: &[Vec<f64>]) -> f64 {
    let n = h.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return h[0][0].abs();
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|c| *c /= nv);
    let mut sigma = 0.0_f64;
    let mul = |m: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    };
    for _ in 0..300 {
        let w = mul(h, &mul(h, &v));
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw.sqrt();
        v = w.iter().map(|c| c / nw).collect();
        if (next - sigma).abs() <= 1e-13 * next.max(1.0) {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Extrapolate `g(h) -> g(0)` from samples at `h0, h0/2, h0/4, ...` using a
/// Neville tableau in `h`.  Used for one-sided limits at removable
/// singularities, where `g` is smooth in `h` but cannot be evaluated at 0.
pub fn limit_extrapolate(g: impl Fn(f64) -> f64, h0: f64, levels: usize) -> Result<f64> {
    let n = levels.max(2);
    let mut hs = Vec::with_capacity(n);
    let mut tab: Vec<f64> = Vec::with_capacity(n);
    let mut h = h0;
    for _ in 0..n {
        hs.push(h);
        let v = g(h);
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "limit extrapolation sampled a non-finite value at step {h}"
            )));
        }
        tab.push(v);
        h *= 0.5;
    }
    // Neville: tab[j] becomes the degree-i interpolant evaluated at h = 0.
    for i in 1..n {
        for j in (i..n).rev() {
            let denom = hs[j - i] - hs[j];
            tab[j] = tab[j] + (tab[j] - tab[j - 1]) * hs[j] / denom;
        }
    }
    Ok(tab[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_cubic_is_exact() {
        // Simpson integrates cubics exactly: int_0^1 x^3 = 1/4.
        let v = composite_simpson(|x| x * x * x, 0.0, 1.0, 2).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn simpson_sine_over_half_period() {
        let v = composite_simpson(f64::sin, 0.0, std::f64::consts::PI, 512).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn simpson_rejects_odd_step_counts() {
        assert!(composite_simpson(|x| x, 0.0, 1.0, 7).is_err());
        assert!(composite_simpson(|x| x, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn adaptive_matches_closed_forms() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, ADAPTIVE_TOL).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-10);
        let v = adaptive_simpson(&|x: f64| 1.0 / x, 1.0, 2.0, ADAPTIVE_TOL).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-10);
    }

    #[test]
    fn adaptive_reports_hard_singularities() {
        // 1/x^2 toward 0 is non-integrable; the recursion must bottom out.
        let err = adaptive_simpson(&|x: f64| 1.0 / (x * x), 1e-300, 1.0, 1e-12);
        assert!(err.is_err());
    }

    #[test]
    fn derivative_5pt_on_sin() {
        let d = derivative_5pt(f64::sin, 0.3);
        assert!((d - 0.3_f64.cos()).abs() < 1e-10);
    }

    #[test]
    fn gradient_and_hessian_of_quadratic() {
        let f = |x: &[f64]| 2.0 * x[0] * x[0] + 3.0 * x[0] * x[1] + x[1] * x[1];
        let g = gradient_fd(f, &[1.0, -2.0]);
        assert!((g[0] - (4.0 - 6.0)).abs() < 1e-8);
        assert!((g[1] - (3.0 - 4.0)).abs() < 1e-8);
        let h = hessian_fd(f, &[1.0, -2.0]);
        assert!((h[0][0] - 4.0).abs() < 1e-5);
        assert!((h[0][1] - 3.0).abs() < 1e-5);
        assert!((h[1][1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn spectral_norm_of_known_matrix() {
        // Eigenvalues of [[2,1],[1,2]] are 1 and 3.
        let m = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        assert!((spectral_norm_sym(&m) - 3.0).abs() < 1e-9);
        // Sign must not matter: [[-5]] has norm 5.
        assert!((spectral_norm_sym(&[vec![-5.0]]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn limit_extrapolation_recovers_sinc_at_zero() {
        let l = limit_extrapolate(|h| h.sin() / h, 0.1, 5).unwrap();
        assert!((l - 1.0).abs() < 1e-10);
    }
}
