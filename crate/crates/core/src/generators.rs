//! Generating vector-field pairs for gradient-seeking loops.
//!
//! A pair is a triple of scalar maps `(F0, F1, F2)` of the shifted cost value
//! `z = J(x) - J*` tied together by the Pfaffian identity
//!
//! ```text
//!     F2(z) F1'(z) - F1(z) F2'(z) = F0(z).
//! ```
//!
//! `F1` and `F2` multiply the two quadrature components of the oscillatory
//! input, and `F0` is the effective gain of the averaged gradient flow.  Given
//! `F1` and a target gain `F0`, every solution of the identity has the form
//!
//! ```text
//!     F2(z) = -F1(z) * Psi1(z),    Psi1(z) = int_{z_ref}^{z} F0(s)/F1(s)^2 ds,
//! ```
//!
//! up to an additive multiple of `F1` (the constant of integration).  The
//! constructor [`from_f1_f0`] evaluates `Psi1` by adaptive quadrature inside
//! one zero-free component of `F1`; at a boundary zero `z*` the finite
//! one-sided limit `F2(z*) = F0(z*)/F1'(z*)` is recovered by extrapolation.
//!
//! Seven closed-form families are built in, including two whose fields vanish
//! at the minimizer together with the cost (`sd17`, `bounded_vanishing`);
//! those carry growth-bound records used by the convergence certificates.

use std::fmt;
use std::sync::Arc;

use crate::costs::{least_squares_slope, CostProfile};
use crate::numeric::{
    adaptive_simpson, derivative_5pt, limit_extrapolate, FD_GRAD_STEP, FD_HESS_STEP,
};
use crate::{Error, Result};

/// Residual tolerance for the Pfaffian identity with analytic derivatives.
pub const TOL_PFAFF_ANALYTIC: f64 = 1e-10;
/// Residual tolerance when derivatives fall back to finite differences.
pub const TOL_PFAFF_FD: f64 = 1e-6;
/// Quadrature tolerance for the antiderivative in [`from_f1_f0`].
pub const TOL_QUAD: f64 = 1e-10;
/// Fallback quadrature tolerance near zeros of `F1`, where the integrand
/// grows like the inverse square of the distance and the primary absolute
/// target falls below roundoff of the large integral.  The evaluated product
/// `-F1 * Psi1` keeps full accuracy: `|F1|` shrinks like that distance.
const TOL_QUAD_RELAXED: f64 = 1e-6;
/// Half-width of the window around `F1`-zeros excluded from residual grids.
pub const SINGULAR_EXCLUSION: f64 = 1e-4;
/// Nodes scanned for sign changes of `F1` when constructing a pair.
const ZERO_SCAN_POINTS: usize = 2000;
/// Bisection refinement tolerance for detected zeros of `F1`.
const ZERO_REFINE_TOL: f64 = 1e-12;
/// Initial stencil offset (fraction of the component span) for one-sided
/// limits of `F2` at a boundary zero of `F1`.
const LIMIT_H0_FRACTION: f64 = 0.05;
/// Extrapolation depth for those one-sided limits.
const LIMIT_LEVELS: usize = 6;
/// Largest admissible gap between the fitted `F0` growth exponent and the
/// nearest half-integer candidate.
const M2_FIT_TOL: f64 = 0.15;
/// A bound ratio whose low-z maximum exceeds its bulk maximum by this factor
/// is treated as divergent (the growth bound fails as `z -> 0`).
const DIVERGENCE_FACTOR: f64 = 4.0;

/// Shared scalar map of the shifted cost value.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Growth-bound record for pairs that vanish at the minimizer:
/// `alpha1 * z^m2 <= F0(z) <= alpha2 * z^m2`, `|F_s(z)| <= m_sup * z^m3`, and
/// `h_sup * z^m4` dominating the second directional-derivative combinations
/// of the composed fields.  `m4` and `h_sup` depend on the cost's growth
/// order, so they stay unset until an estimate against a concrete cost runs.
#[derive(Debug, Clone, PartialEq)]
pub struct A4Bounds {
    pub m2: f64,
    pub m3: f64,
    pub m4: Option<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub m_sup: f64,
    pub h_sup: Option<f64>,
}

/// A generating triple `(F0, F1, F2)` with optional analytic derivatives of
/// `F1` and `F2`.  Immutable after construction; all closures are shared and
/// reentrant, so a pair can be evaluated concurrently.
#[derive(Clone)]
pub struct GeneratorPair {
    pub name: String,
    f0: ScalarFn,
    f1: ScalarFn,
    f2: ScalarFn,
    d1: Option<ScalarFn>,
    d2: Option<ScalarFn>,
    /// Admissible interval of shifted cost values (endpoints may be infinite).
    pub domain: (f64, f64),
    /// Sorted zeros of `F1` that residual grids must stay clear of.  For the
    /// closed-form families only piecewise-definition points are listed: their
    /// identities hold exactly at interior zeros of `F1`.  Constructed pairs
    /// list every zero detected by the sign scan.
    pub singular_points: Vec<f64>,
    /// True when `F1(z), F2(z) -> 0` as `z -> 0+` (fields switch off at the
    /// minimizer together with the cost).
    pub vanishing_at_min: bool,
    pub a4: Option<A4Bounds>,
}

impl fmt::Debug for GeneratorPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorPair")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("singular_points", &self.singular_points)
            .field("vanishing_at_min", &self.vanishing_at_min)
            .field("analytic_derivs", &self.d1.is_some())
            .field("a4", &self.a4)
            .finish()
    }
}

impl GeneratorPair {
    pub fn f0(&self, z: f64) -> f64 {
        (self.f0)(z)
    }

    pub fn f1(&self, z: f64) -> f64 {
        (self.f1)(z)
    }

    pub fn f2(&self, z: f64) -> f64 {
        (self.f2)(z)
    }

    /// `F1'(z)`: analytic closure when available, five-point stencil otherwise.
    pub fn f1_deriv(&self, z: f64) -> f64 {
        match &self.d1 {
            Some(d) => d(z),
            None => {
                let f = self.f1.clone();
                derivative_5pt(move |s| f(s), z)
            }
        }
    }

    /// `F2'(z)`: analytic closure when available, five-point stencil otherwise.
    pub fn f2_deriv(&self, z: f64) -> f64 {
        match &self.d2 {
            Some(d) => d(z),
            None => {
                let f = self.f2.clone();
                derivative_5pt(move |s| f(s), z)
            }
        }
    }

    pub fn has_analytic_derivs(&self) -> bool {
        self.d1.is_some() && self.d2.is_some()
    }

    /// Residual of the defining identity at one point:
    /// `F2(z) F1'(z) - F1(z) F2'(z) - F0(z)`.
    pub fn pfaffian_residual(&self, z: f64) -> f64 {
        self.f2(z) * self.f1_deriv(z) - self.f1(z) * self.f2_deriv(z) - self.f0(z)
    }

    /// Default residual tolerance for this pair's derivative mode.
    pub fn default_pfaff_tol(&self) -> f64 {
        if self.has_analytic_derivs() {
            TOL_PFAFF_ANALYTIC
        } else {
            TOL_PFAFF_FD
        }
    }

    pub fn in_domain(&self, z: f64) -> bool {
        z >= self.domain.0 && z <= self.domain.1
    }

    /// Same averaged gain, shifted second component: `F2 + c * F1`.  The
    /// identity is invariant because the constant of integration enters as a
    /// multiple of `F1`.
    pub fn gauge_shifted(&self, c: f64) -> GeneratorPair {
        let f1 = self.f1.clone();
        let f2 = self.f2.clone();
        let shifted: ScalarFn = Arc::new(move |z| f2(z) + c * f1(z));
        let d2 = match (&self.d1, &self.d2) {
            (Some(d1), Some(d2)) => {
                let (d1, d2) = (d1.clone(), d2.clone());
                Some(Arc::new(move |z| d2(z) + c * d1(z)) as ScalarFn)
            }
            _ => None,
        };
        GeneratorPair {
            name: format!("{}+{:.3}*f1", self.name, c),
            f0: self.f0.clone(),
            f1: self.f1.clone(),
            f2: shifted,
            d1: self.d1.clone(),
            d2,
            domain: self.domain,
            singular_points: self.singular_points.clone(),
            // A shift by c*F1 keeps F2 -> 0 at the minimizer iff F1 does.
            vanishing_at_min: self.vanishing_at_min,
            a4: None,
        }
    }

    /// `F2 + c` with everything else unchanged.  Unlike [`gauge_shifted`]
    /// this deliberately breaks the defining identity — the residual becomes
    /// `c F1'(z)` — making it a fault-injection knob for exercising
    /// verification failure paths.
    ///
    /// [`gauge_shifted`]: GeneratorPair::gauge_shifted
    pub fn with_f2_offset(&self, c: f64) -> GeneratorPair {
        let f2 = self.f2.clone();
        let mut out = self.clone();
        out.name = format!("{}+{c:.3}", self.name);
        out.f2 = Arc::new(move |z| f2(z) + c);
        // d2 is untouched: the shift is constant.
        out.a4 = None;
        out
    }
}

/// Per-grid-point residuals of the Pfaffian identity.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// `(z, residual)` at every evaluated grid point.
    pub residuals: Vec<(f64, f64)>,
    pub max_residual: f64,
    /// Grid points dropped for sitting outside the domain or within
    /// [`SINGULAR_EXCLUSION`] of a listed zero of `F1`.
    pub excluded: usize,
    pub tol: f64,
}

impl ResidualReport {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tol
    }
}

/// Evaluates the identity residual over `z_grid`, skipping points outside the
/// pair's domain or within [`SINGULAR_EXCLUSION`] of a listed `F1`-zero.
pub fn verify_pfaffian(pair: &GeneratorPair, z_grid: &[f64], tol: f64) -> Result<ResidualReport> {
    residual_report(pair, z_grid, tol, false)
}

/// Same as [`verify_pfaffian`] but forces five-point finite differences even
/// when analytic derivatives exist.  Used to cross-check closures that were
/// themselves derived from the identity.
pub fn verify_pfaffian_fd(
    pair: &GeneratorPair,
    z_grid: &[f64],
    tol: f64,
) -> Result<ResidualReport> {
    residual_report(pair, z_grid, tol, true)
}

fn residual_report(
    pair: &GeneratorPair,
    z_grid: &[f64],
    tol: f64,
    force_fd: bool,
) -> Result<ResidualReport> {
    if z_grid.is_empty() {
        return Err(Error::input("residual check requires a non-empty grid"));
    }
    if !(tol > 0.0) {
        return Err(Error::config("residual tolerance must be positive"));
    }
    let mut residuals = Vec::new();
    let mut excluded = 0usize;
    let mut max_residual: f64 = 0.0;
    for &z in z_grid {
        if !pair.in_domain(z)
            || pair
                .singular_points
                .iter()
                .any(|&s| (z - s).abs() < SINGULAR_EXCLUSION)
        {
            excluded += 1;
            continue;
        }
        let r = if force_fd {
            let f1 = pair.f1.clone();
            let f2 = pair.f2.clone();
            let d1 = derivative_5pt(move |s| f1(s), z);
            let d2 = derivative_5pt(move |s| f2(s), z);
            pair.f2(z) * d1 - pair.f1(z) * d2 - pair.f0(z)
        } else {
            pair.pfaffian_residual(z)
        };
        if !r.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite identity residual at z = {z}"
            )));
        }
        max_residual = max_residual.max(r.abs());
        residuals.push((z, r));
    }
    if residuals.is_empty() {
        return Err(Error::input(
            "every grid point was excluded; widen the grid or move it away from F1 zeros",
        ));
    }
    Ok(ResidualReport {
        residuals,
        max_residual,
        excluded,
        tol,
    })
}

/// Closed-form families selectable by name.
///
/// | name                | `F1(z)`              | `F2(z)`                  | `F0(z)`            |
/// |---------------------|----------------------|--------------------------|--------------------|
/// | `classic`           | `z`                  | `1`                      | `1`                |
/// | `exponential`       | `e^z / 2`            | `e^-z`                   | `1`                |
/// | `bounded`           | `sin z`              | `cos z`                  | `1`                |
/// | `power(a,k,r,m)`    | `a z^(r/2m)`         | `-k/(1-r) z^((2-r)/2m)`  | `(ak/m) z^((1-m)/m)` |
/// | `sd17`              | `sqrt(z) sin(ln z)`  | `sqrt(z) cos(ln z)`      | `1`                |
/// | `bounded_vanishing` | `sqrt(p1) sin(p2)`   | `sqrt(p1) cos(p2)`       | `1`                |
/// | `tunable(c1,c2)`    | `c1 z`               | `c2 / c1`                | `c2`               |
///
/// with `p1 = (1 - e^-z)/(1 + e^z)` and `p2 = e^z + 2 ln(e^z - 1)`.  The
/// `power`, `sd17`, and `bounded_vanishing` maps live on `z >= 0` and take the
/// value 0 at `z <= 0`, so the oscillatory field switches off exactly at the
/// minimizer.
pub fn builtin_generator(name: &str, params: &[f64]) -> Result<GeneratorPair> {
    match name.to_ascii_lowercase().as_str() {
        "classic" => {
            expect_params(name, params, 0)?;
            Ok(GeneratorPair {
                name: "classic".into(),
                f0: Arc::new(|_| 1.0),
                f1: Arc::new(|z| z),
                f2: Arc::new(|_| 1.0),
                d1: Some(Arc::new(|_| 1.0)),
                d2: Some(Arc::new(|_| 0.0)),
                domain: (f64::NEG_INFINITY, f64::INFINITY),
                singular_points: vec![0.0],
                vanishing_at_min: false,
                a4: None,
            })
        }
        "exponential" => {
            expect_params(name, params, 0)?;
            Ok(GeneratorPair {
                name: "exponential".into(),
                f0: Arc::new(|_| 1.0),
                f1: Arc::new(|z: f64| 0.5 * z.exp()),
                f2: Arc::new(|z: f64| (-z).exp()),
                d1: Some(Arc::new(|z: f64| 0.5 * z.exp())),
                d2: Some(Arc::new(|z: f64| -(-z).exp())),
                domain: (f64::NEG_INFINITY, f64::INFINITY),
                singular_points: vec![],
                vanishing_at_min: false,
                a4: None,
            })
        }
        "bounded" => {
            expect_params(name, params, 0)?;
            Ok(GeneratorPair {
                name: "bounded".into(),
                f0: Arc::new(|_| 1.0),
                f1: Arc::new(|z: f64| z.sin()),
                f2: Arc::new(|z: f64| z.cos()),
                d1: Some(Arc::new(|z: f64| z.cos())),
                d2: Some(Arc::new(|z: f64| -z.sin())),
                domain: (f64::NEG_INFINITY, f64::INFINITY),
                singular_points: vec![0.0],
                vanishing_at_min: false,
                a4: None,
            })
        }
        "power" => {
            let (alpha, k, r, m) = match params.len() {
                0 => (1.0, 1.0, 0.5, 1.0),
                4 => (params[0], params[1], params[2], params[3]),
                n => {
                    return Err(Error::config(format!(
                        "power takes 4 parameters (alpha, k, r, m) or none for defaults, got {n}"
                    )))
                }
            };
            if !(alpha > 0.0) || !(k > 0.0) {
                return Err(Error::config("power: alpha and k must be positive"));
            }
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config("power: r must lie in [0, 1)"));
            }
            if !(m > 0.0) {
                return Err(Error::config("power: m must be positive"));
            }
            let e1 = r / (2.0 * m);
            let e2 = (2.0 - r) / (2.0 * m);
            let e0 = (1.0 - m) / m;
            let c2 = -k / (1.0 - r);
            let c0 = alpha * k / m;
            Ok(GeneratorPair {
                name: "power".into(),
                f0: Arc::new(move |z: f64| if z > 0.0 { c0 * z.powf(e0) } else { 0.0 }),
                f1: Arc::new(move |z: f64| if z > 0.0 { alpha * z.powf(e1) } else { 0.0 }),
                f2: Arc::new(move |z: f64| if z > 0.0 { c2 * z.powf(e2) } else { 0.0 }),
                d1: Some(Arc::new(move |z: f64| {
                    if z > 0.0 {
                        alpha * e1 * z.powf(e1 - 1.0)
                    } else {
                        0.0
                    }
                })),
                d2: Some(Arc::new(move |z: f64| {
                    if z > 0.0 {
                        c2 * e2 * z.powf(e2 - 1.0)
                    } else {
                        0.0
                    }
                })),
                domain: (0.0, f64::INFINITY),
                singular_points: vec![0.0],
                vanishing_at_min: r > 0.0,
                a4: None,
            })
        }
        "sd17" => {
            expect_params(name, params, 0)?;
            Ok(GeneratorPair {
                name: "sd17".into(),
                f0: Arc::new(|z: f64| if z > 0.0 { 1.0 } else { 0.0 }),
                f1: Arc::new(|z: f64| if z > 0.0 { z.sqrt() * z.ln().sin() } else { 0.0 }),
                f2: Arc::new(|z: f64| if z > 0.0 { z.sqrt() * z.ln().cos() } else { 0.0 }),
                d1: Some(Arc::new(|z: f64| {
                    if z > 0.0 {
                        let t = z.ln();
                        (t.sin() + 2.0 * t.cos()) / (2.0 * z.sqrt())
                    } else {
                        0.0
                    }
                })),
                d2: Some(Arc::new(|z: f64| {
                    if z > 0.0 {
                        let t = z.ln();
                        (t.cos() - 2.0 * t.sin()) / (2.0 * z.sqrt())
                    } else {
                        0.0
                    }
                })),
                domain: (0.0, f64::INFINITY),
                // F1 also vanishes at z = e^(j*pi); the closed form satisfies
                // the identity exactly there, so no exclusion is needed.
                singular_points: vec![0.0],
                vanishing_at_min: true,
                a4: Some(A4Bounds {
                    m2: 0.0,
                    m3: 0.5,
                    m4: None,
                    alpha1: 1.0,
                    alpha2: 1.0,
                    m_sup: 1.0,
                    h_sup: None,
                }),
            })
        }
        "bounded_vanishing" => {
            expect_params(name, params, 0)?;
            let phi1 = |z: f64| -(-z).exp_m1() / (1.0 + z.exp());
            let phi2 = |z: f64| z.exp() + 2.0 * z.exp_m1().ln();
            // phi1 * phi2' = 1 identically, so F0 = 1 on z > 0.
            let phi1d = |z: f64| (2.0 + (-z).exp() - z.exp()) / (1.0 + z.exp()).powi(2);
            let phi2d = |z: f64| z.exp() + 2.0 * z.exp() / z.exp_m1();
            Ok(GeneratorPair {
                name: "bounded_vanishing".into(),
                f0: Arc::new(|z: f64| if z > 0.0 { 1.0 } else { 0.0 }),
                f1: Arc::new(move |z: f64| {
                    if z > 0.0 {
                        phi1(z).sqrt() * phi2(z).sin()
                    } else {
                        0.0
                    }
                }),
                f2: Arc::new(move |z: f64| {
                    if z > 0.0 {
                        phi1(z).sqrt() * phi2(z).cos()
                    } else {
                        0.0
                    }
                }),
                d1: Some(Arc::new(move |z: f64| {
                    if z > 0.0 {
                        let root = phi1(z).sqrt();
                        phi1d(z) * phi2(z).sin() / (2.0 * root) + root * phi2(z).cos() * phi2d(z)
                    } else {
                        0.0
                    }
                })),
                d2: Some(Arc::new(move |z: f64| {
                    if z > 0.0 {
                        let root = phi1(z).sqrt();
                        phi1d(z) * phi2(z).cos() / (2.0 * root) - root * phi2(z).sin() * phi2d(z)
                    } else {
                        0.0
                    }
                })),
                domain: (0.0, f64::INFINITY),
                // Interior F1-zeros (sin(phi2) = 0) satisfy the identity
                // exactly; only the piecewise point needs listing.
                singular_points: vec![0.0],
                vanishing_at_min: true,
                a4: Some(A4Bounds {
                    m2: 0.0,
                    m3: 0.5,
                    m4: None,
                    alpha1: 1.0,
                    alpha2: 1.0,
                    m_sup: std::f64::consts::FRAC_1_SQRT_2,
                    h_sup: None,
                }),
            })
        }
        "tunable" => {
            let (c1, c2) = match params.len() {
                0 => (1.0, 1.0),
                2 => (params[0], params[1]),
                n => {
                    return Err(Error::config(format!(
                        "tunable takes 2 parameters (c1, c2) or none for defaults, got {n}"
                    )))
                }
            };
            if c1 == 0.0 || !c1.is_finite() || !c2.is_finite() {
                return Err(Error::config("tunable: c1 must be finite and non-zero"));
            }
            Ok(GeneratorPair {
                name: "tunable".into(),
                f0: Arc::new(move |_| c2),
                f1: Arc::new(move |z| c1 * z),
                f2: Arc::new(move |_| c2 / c1),
                d1: Some(Arc::new(move |_| c1)),
                d2: Some(Arc::new(|_| 0.0)),
                domain: (f64::NEG_INFINITY, f64::INFINITY),
                singular_points: vec![0.0],
                vanishing_at_min: false,
                a4: None,
            })
        }
        other => Err(Error::config(format!(
            "unknown generator family '{other}'; expected one of {:?}",
            FAMILY_NAMES
        ))),
    }
}

/// Names accepted by [`builtin_generator`].
pub const FAMILY_NAMES: [&str; 7] = [
    "classic",
    "exponential",
    "bounded",
    "power",
    "sd17",
    "bounded_vanishing",
    "tunable",
];

fn expect_params(name: &str, params: &[f64], want: usize) -> Result<()> {
    if params.len() != want {
        return Err(Error::config(format!(
            "{name} takes {want} parameters, got {}",
            params.len()
        )));
    }
    Ok(())
}

/// Builds the pair completing `(f1, f0)` to a solution of the identity:
/// `F2 = -F1 * Psi1` with `Psi1(z) = int_{z_ref}^z f0/f1^2` and `Psi1(z_ref) = 0`.
///
/// The bounded `domain` is scanned for sign changes of `f1`; the returned pair
/// is restricted to the zero-free component containing `z_ref` (one
/// antiderivative branch — continuing across a zero of `F1` would need a new
/// constant of integration per component).  Detected zeros land in
/// `singular_points`; at a component boundary that is such a zero, `F2` takes
/// its finite one-sided limit.  Pass `f1_deriv: None` to fall back to
/// five-point finite differences.
pub fn from_f1_f0(
    f1: ScalarFn,
    f1_deriv: Option<ScalarFn>,
    f0: ScalarFn,
    z_ref: f64,
    domain: (f64, f64),
) -> Result<GeneratorPair> {
    let (a, b) = domain;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::config(format!(
            "constructor domain must be a bounded interval, got [{a}, {b}]"
        )));
    }
    if !(z_ref > a && z_ref < b) {
        return Err(Error::config(format!(
            "z_ref = {z_ref} must lie strictly inside [{a}, {b}]"
        )));
    }
    let zeros = scan_zeros(&f1, a, b);
    if f1(z_ref) == 0.0
        || !f1(z_ref).is_finite()
        || zeros.iter().any(|&z| (z - z_ref).abs() < SINGULAR_EXCLUSION)
    {
        return Err(Error::config(format!(
            "f1(z_ref) = {} at z_ref = {z_ref}; the reference point must avoid zeros of f1",
            f1(z_ref)
        )));
    }
    // Component of z_ref: between the nearest detected zeros (or the domain
    // ends).
    let lo = zeros
        .iter()
        .copied()
        .filter(|&z| z < z_ref)
        .fold(a, f64::max);
    let hi = zeros
        .iter()
        .copied()
        .filter(|&z| z > z_ref)
        .fold(b, f64::min);

    let quad_f1 = f1.clone();
    let quad_f0 = f0.clone();
    let psi = move |z: f64| -> Result<f64> {
        let integrand = |s: f64| quad_f0(s) / (quad_f1(s) * quad_f1(s));
        adaptive_simpson(&integrand, z_ref, z, TOL_QUAD)
            .or_else(|_| adaptive_simpson(&integrand, z_ref, z, TOL_QUAD_RELAXED))
    };

    let d1: ScalarFn = match f1_deriv {
        Some(d) => d,
        None => {
            let f = f1.clone();
            Arc::new(move |z: f64| {
                let f = f.clone();
                derivative_5pt(move |s| f(s), z)
            })
        }
    };

    // One-sided limits of -f1*Psi1 at boundary zeros.  At a simple zero the
    // identity pins the limit to F0(z*)/F1'(z*); a polynomial extrapolation
    // of sampled values cross-checks it (the sampled error carries an
    // h*ln(h) term, so the extrapolation alone stops near 1e-3 accuracy).
    let span = hi - lo;
    let mut boundary_limits: Vec<(f64, f64)> = Vec::new();
    for &(edge, inward) in &[(lo, 1.0), (hi, -1.0)] {
        if zeros.iter().any(|&z| z == edge) {
            let limit = f0(edge) / d1(edge);
            if !limit.is_finite() {
                return Err(Error::numeric(format!(
                    "F1 has a non-simple zero at z = {edge}: F2 has no finite one-sided limit"
                )));
            }
            let psi_ref = &psi;
            let f1_ref = &f1;
            let g = |h: f64| -> f64 {
                let z = edge + inward * h;
                match psi_ref(z) {
                    Ok(v) => -f1_ref(z) * v,
                    Err(_) => f64::NAN,
                }
            };
            let est = limit_extrapolate(g, LIMIT_H0_FRACTION * span, LIMIT_LEVELS)?;
            if !est.is_finite() || (est - limit).abs() > 5e-3 * limit.abs().max(1.0) {
                return Err(Error::numeric(format!(
                    "one-sided limit of F2 at the F1-zero z = {edge} did not converge: \
                     extrapolated {est}, identity value {limit}"
                )));
            }
            boundary_limits.push((edge, limit));
        }
    }

    let f2_f1 = f1.clone();
    let limits = boundary_limits.clone();
    let psi_for_f2 = psi.clone();
    let f2: ScalarFn = Arc::new(move |z: f64| {
        for &(edge, value) in &limits {
            if (z - edge).abs() <= ZERO_REFINE_TOL {
                return value;
            }
        }
        match psi_for_f2(z) {
            Ok(v) => -f2_f1(z) * v,
            Err(_) => f64::NAN,
        }
    });

    // F2' = -f1'*Psi1 - f0/f1 follows by differentiating -f1*Psi1.
    let d2_d1 = d1.clone();
    let d2_f0 = f0.clone();
    let d2_f1 = f1.clone();
    let psi_for_d2 = psi.clone();
    let d2: ScalarFn = Arc::new(move |z: f64| match psi_for_d2(z) {
        Ok(v) => -d2_d1(z) * v - d2_f0(z) / d2_f1(z),
        Err(_) => f64::NAN,
    });

    let vanishing_at_min = lo.abs() < 1e-9
        && zeros.iter().any(|&z| z.abs() < 1e-9)
        && boundary_limits
            .iter()
            .any(|&(edge, v)| edge.abs() < 1e-9 && v.abs() <= 1e-8);

    let pair = GeneratorPair {
        name: "constructed".into(),
        f0,
        f1,
        f2,
        d1: Some(d1),
        d2: Some(d2),
        domain: (lo, hi),
        singular_points: zeros,
        vanishing_at_min,
        a4: None,
    };

    // Self-check with finite differences of the quadrature-backed F2,
    // independent of the analytic F2' (which shares Psi1 with F2 and would
    // cancel exactly).  Stencil values reuse one base integral Psi1(z) plus
    // short-interval increments: differencing four independent full-range
    // quadratures would divide their ~TOL_QUAD errors by the FD step and
    // swamp the residual, while the shared-base errors cancel in the
    // difference.
    let margin = (SINGULAR_EXCLUSION * 2.0).max(0.01 * span);
    let (ga, gb) = (lo + margin, hi - margin);
    let mut max_residual = 0.0_f64;
    for i in 0..=100 {
        let z = ga + (gb - ga) * i as f64 / 100.0;
        let h = crate::numeric::FD_SCALAR_STEP * z.abs().max(1.0);
        let base = match psi(z) {
            Ok(v) => v,
            Err(e) => return Err(e),
        };
        let pf1 = &pair.f1;
        let pf0 = &pair.f0;
        let f2_at = |dz: f64| -> Result<f64> {
            let integrand = |s: f64| pf0(s) / (pf1(s) * pf1(s));
            let inc = adaptive_simpson(&integrand, z, z + dz, TOL_QUAD)?;
            Ok(-pf1(z + dz) * (base + inc))
        };
        let d2_fd = (f2_at(-2.0 * h)? - 8.0 * f2_at(-h)? + 8.0 * f2_at(h)? - f2_at(2.0 * h)?)
            / (12.0 * h);
        let d1_fd = derivative_5pt(|s| pair.f1(s), z);
        let r = pair.f2(z) * d1_fd - pair.f1(z) * d2_fd - pair.f0(z);
        if !r.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite identity residual at z = {z} in the constructed-pair self-check"
            )));
        }
        max_residual = max_residual.max(r.abs());
    }
    if max_residual > TOL_PFAFF_FD {
        return Err(Error::numeric(format!(
            "constructed pair fails the identity self-check: max residual {max_residual:.3e} on [{ga}, {gb}]"
        )));
    }
    Ok(pair)
}

/// Sign-change scan for zeros of `f` on `[a, b]`, refined by bisection.
/// Endpoint nodes count when `f` vanishes there exactly.
fn scan_zeros(f: &ScalarFn, a: f64, b: f64) -> Vec<f64> {
    let n = ZERO_SCAN_POINTS;
    let mut zeros = Vec::new();
    let mut prev_z = a;
    let mut prev_v = f(a);
    if prev_v == 0.0 {
        zeros.push(a);
    }
    for i in 1..=n {
        let z = a + (b - a) * i as f64 / n as f64;
        let v = f(z);
        if v == 0.0 {
            zeros.push(z);
        } else if prev_v != 0.0 && prev_v.signum() != v.signum() {
            let (mut x0, mut x1) = (prev_z, z);
            let mut v0 = prev_v;
            while x1 - x0 > ZERO_REFINE_TOL {
                let m = 0.5 * (x0 + x1);
                let vm = f(m);
                if vm == 0.0 {
                    x0 = m;
                    x1 = m;
                } else if vm.signum() == v0.signum() {
                    x0 = m;
                    v0 = vm;
                } else {
                    x1 = m;
                }
            }
            zeros.push(0.5 * (x0 + x1));
        }
        prev_z = z;
        prev_v = v;
    }
    zeros.sort_by(|p, q| p.partial_cmp(q).unwrap());
    zeros.dedup_by(|p, q| (*p - *q).abs() < 10.0 * ZERO_REFINE_TOL);
    zeros
}

/// One checked growth inequality inside an [`A4Report`].
#[derive(Debug, Clone)]
pub struct A4Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`estimate_a4_bounds`]: fitted exponents and tightest grid
/// constants when the growth bounds hold, per-inequality diagnoses otherwise.
#[derive(Debug, Clone)]
pub struct A4Report {
    pub passed: bool,
    pub bounds: Option<A4Bounds>,
    /// Log-log slope of `F0` against the shifted cost before snapping.
    pub m2_raw: f64,
    pub checks: Vec<A4Check>,
    pub samples: usize,
}

/// Fits the growth-bound record of a pair against a concrete cost on the grid
/// `||x - x*|| <= domain_radius`:
///
/// * `m2` from the log-log slope of `F0(J(x) - J*)`, snapped to the nearest
///   half-integer in `[1/m1 - 1, 3]`;
/// * `m3 = (m2 + 1)/2` and `m4 = 3(1 + m2)/2 - 1/m1`;
/// * `alpha1, alpha2, m_sup, h_sup` as the extremal grid ratios, where
///   `h_sup` dominates every second directional-derivative combination
///   `|d_l[d_j[F_s(Jt)] F_p(Jt)] F_q(Jt)|` of the composed fields
///   (`Jt = J - J*`), estimated by nested central differences.
///
/// Non-vanishing pairs fail: a bound `|F_s| <= m_sup * z^m3` with `m3 > 0`
/// forces the fields to switch off at the minimizer.  A ratio whose low-z
/// maximum dwarfs its bulk maximum is reported as divergent rather than
/// silently truncated by the grid.
pub fn estimate_a4_bounds(
    pair: &GeneratorPair,
    cost: &CostProfile,
    m1: f64,
    domain_radius: f64,
    points_per_axis: usize,
) -> Result<A4Report> {
    if !(m1 >= 1.0) {
        return Err(Error::config(format!(
            "cost growth order m1 must be >= 1, got {m1}"
        )));
    }
    if !(domain_radius > 0.0) {
        return Err(Error::config("domain_radius must be positive"));
    }
    let grid = cost.sample_grid(domain_radius, points_per_axis)?;
    let mut checks = Vec::new();

    // Shifted cost values; A4 ratios are functions of z = J - J*.
    let mut zs = Vec::with_capacity(grid.len());
    for x in &grid {
        let z = cost.shifted(x);
        if !(z > 0.0) {
            return Err(Error::domain(format!(
                "non-positive shifted cost {z:.3e} at grid point {x:?}; growth ratios need J > J* off the minimizer"
            )));
        }
        zs.push(z);
    }

    if !pair.vanishing_at_min {
        let min_fields = zs
            .iter()
            .map(|&z| pair.f1(z).abs() + pair.f2(z).abs())
            .fold(f64::INFINITY, f64::min);
        checks.push(A4Check {
            name: "fields_vanish_at_min".into(),
            passed: false,
            detail: format!(
                "|F1| + |F2| stays >= {min_fields:.3e} on the grid; a bound M*z^m3 with m3 > 0 cannot hold as z -> 0"
            ),
        });
        return Ok(A4Report {
            passed: false,
            bounds: None,
            m2_raw: f64::NAN,
            checks,
            samples: zs.len(),
        });
    }

    // Exponent of the averaged gain: log-log fit of F0 against z.
    let mut ln_z = Vec::with_capacity(zs.len());
    let mut ln_f0 = Vec::with_capacity(zs.len());
    for &z in &zs {
        let v = pair.f0(z);
        if !(v > 0.0) {
            checks.push(A4Check {
                name: "gain_positive".into(),
                passed: false,
                detail: format!("F0({z:.6e}) = {v:.3e} is not positive; no alpha1 > 0 exists"),
            });
            return Ok(A4Report {
                passed: false,
                bounds: None,
                m2_raw: f64::NAN,
                checks,
                samples: zs.len(),
            });
        }
        ln_z.push(z.ln());
        ln_f0.push(v.ln());
    }
    let m2_raw = least_squares_slope(&ln_z, &ln_f0);
    let lo_candidate = 1.0 / m1 - 1.0;
    let mut m2 = (m2_raw * 2.0).round() / 2.0;
    if m2 < lo_candidate {
        m2 = lo_candidate;
    }
    if (m2 - m2_raw).abs() > M2_FIT_TOL || m2 > 3.0 {
        checks.push(A4Check {
            name: "gain_exponent".into(),
            passed: false,
            detail: format!(
                "fitted F0 growth exponent {m2_raw:.4} has no admissible half-integer match in [{lo_candidate}, 3]"
            ),
        });
        return Ok(A4Report {
            passed: false,
            bounds: None,
            m2_raw,
            checks,
            samples: zs.len(),
        });
    }
    checks.push(A4Check {
        name: "gain_exponent".into(),
        passed: true,
        detail: format!("m2 = {m2} (raw fit {m2_raw:.4})"),
    });

    let m3 = (m2 + 1.0) / 2.0;
    let m4 = 1.5 * (1.0 + m2) - 1.0 / m1;

    // Tightest constants as extremal grid ratios.
    let mut alpha1 = f64::INFINITY;
    let mut alpha2: f64 = 0.0;
    for (&z, &lf0) in zs.iter().zip(&ln_f0) {
        let ratio = lf0.exp() / z.powf(m2);
        alpha1 = alpha1.min(ratio);
        alpha2 = alpha2.max(ratio);
    }

    let field_ratio = |z: f64| pair.f1(z).abs().max(pair.f2(z).abs()) / z.powf(m3);
    let (m_sup, m_diverges) = bounded_ratio(&zs, field_ratio);
    checks.push(A4Check {
        name: "field_bound".into(),
        passed: !m_diverges,
        detail: if m_diverges {
            format!("sup |F_s|/z^{m3} grows without bound as z -> 0 (low-z max {m_sup:.3e})")
        } else {
            format!("m_sup = {m_sup:.6}")
        },
    });

    let lie_ratio = |idx: usize| {
        let x = &grid[idx];
        second_lie_max(pair, cost, x) / zs[idx].powf(m4)
    };
    let indices: Vec<usize> = (0..grid.len()).collect();
    let (h_sup, h_diverges) = bounded_ratio_indexed(&indices, &zs, lie_ratio);
    checks.push(A4Check {
        name: "second_derivative_bound".into(),
        passed: !h_diverges,
        detail: if h_diverges {
            format!("second-derivative combinations / z^{m4} grow without bound as z -> 0 (low-z max {h_sup:.3e})")
        } else {
            format!("h_sup = {h_sup:.6}")
        },
    });

    let passed = checks.iter().all(|c| c.passed);
    let bounds = passed.then_some(A4Bounds {
        m2,
        m3,
        m4: Some(m4),
        alpha1,
        alpha2,
        m_sup,
        h_sup: Some(h_sup),
    });
    Ok(A4Report {
        passed,
        bounds,
        m2_raw,
        checks,
        samples: zs.len(),
    })
}

/// Maximum over `s, p, q` of `|d_l[d_j[F_s(Jt)] * F_p(Jt)](x)| * |F_q(Jt(x))|`
/// maximised over coordinate directions `j, l` — the magnitude of one second
/// directional-derivative combination of the composed fields at `x`.
fn second_lie_max(pair: &GeneratorPair, cost: &CostProfile, x: &[f64]) -> f64 {
    let n = x.len();
    let fs: [&ScalarFn; 2] = [&pair.f1, &pair.f2];
    let mut worst: f64 = 0.0;
    for s in 0..2 {
        for p in 0..2 {
            // Directional derivative d_j of F_s(Jt), times F_p(Jt), as a
            // function of x: differentiated again below.
            for j in 0..n {
                let inner = |y: &[f64]| -> f64 {
                    let hj = FD_GRAD_STEP * y[j].abs().max(1.0);
                    let mut yp = y.to_vec();
                    let mut ym = y.to_vec();
                    yp[j] += hj;
                    ym[j] -= hj;
                    let d = (fs[s](cost.shifted(&yp)) - fs[s](cost.shifted(&ym))) / (2.0 * hj);
                    d * fs[p](cost.shifted(y))
                };
                for l in 0..n {
                    let hl = FD_HESS_STEP * x[l].abs().max(1.0);
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[l] += hl;
                    xm[l] -= hl;
                    let outer = (inner(&xp) - inner(&xm)) / (2.0 * hl);
                    for fq in &fs {
                        let v = (outer * fq(cost.shifted(x))).abs();
                        worst = worst.max(v);
                    }
                }
            }
        }
    }
    worst
}

/// Grid maximum of `ratio(z)` plus a divergence flag: the ratio is divergent
/// when its maximum over the lowest decile of `z` exceeds the maximum over
/// the rest by [`DIVERGENCE_FACTOR`].
fn bounded_ratio(zs: &[f64], ratio: impl Fn(f64) -> f64) -> (f64, bool) {
    let indices: Vec<usize> = (0..zs.len()).collect();
    bounded_ratio_indexed(&indices, zs, |i| ratio(zs[i]))
}

fn bounded_ratio_indexed(
    indices: &[usize],
    zs: &[f64],
    ratio: impl Fn(usize) -> f64,
) -> (f64, bool) {
    let mut order: Vec<usize> = indices.to_vec();
    order.sort_by(|&i, &j| zs[i].partial_cmp(&zs[j]).unwrap());
    let cut = (order.len() / 10).max(1);
    let mut low: f64 = 0.0;
    let mut bulk: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let r = ratio(i);
        if rank < cut {
            low = low.max(r);
        } else {
            bulk = bulk.max(r);
        }
    }
    (low.max(bulk), low > DIVERGENCE_FACTOR * bulk)
}
