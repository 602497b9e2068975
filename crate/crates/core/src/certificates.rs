//! Quantitative stability certificates for the seeking loop.
//!
//! The averaged system contracts the shifted cost `Jt = J - J*` once per
//! dither period: `Jt(x(eps)) <= Jt(x0) (1 - eps lambda/m1 Jt^mt(x0))^m1`
//! with `mt = 1 + m2 - 1/m1`.  Iterating that inequality and converting cost
//! decay into distance decay through the growth sandwich of A2 gives an
//! explicit envelope
//!
//! `||x(t) - x*|| <= sigma (g2/g1)^{1/(2 m1)} ||x0 - x*|| phi_mt(lambda (t - eps)) + rho`
//!
//! where `phi_mt` is exponential for `mt = 0` and algebraic for `mt > 0`, and
//! `sigma >= 1` absorbs the intra-period excursion.  Everything here is
//! arithmetic on constants estimated elsewhere: short-horizon growth and
//! remainder bounds ([`lemma3_bound`], [`lemma4_remainder_bound`]), the
//! one-period descent estimate ([`lemma5_descent`]), the admissible-period
//! threshold chain ([`epsilon_certificate`]), and trajectory checks that
//! compare each bound against simulation output sample by sample
//! ([`check_descent`], [`check_envelope`]).

use std::fmt;

use crate::costs::CostConstants;
use crate::dithers;
use crate::dynamics::{EsSystem, Trajectory};
use crate::numeric::{gradient_fd, norm2, FD_GRAD_STEP, FD_HESS_STEP};
use crate::{Error, Result};

/// Safety factor applied to grid-estimated suprema before they enter the
/// certificate chain; the certificate records both raw and inflated values.
pub const SAFETY_INFLATION: f64 = 1.05;
/// Absolute part of the dominance-check slack.
pub const SLACK_ABS: f64 = 1e-9;
/// Relative part of the dominance-check slack, scaled by the bound side.
pub const SLACK_REL: f64 = 1e-6;

/// Tolerance added to the bound side of every dominance check: absorbs RK4
/// and quadrature error without masking genuine violations.
pub fn slack_tol(bound: f64) -> f64 {
    SLACK_ABS + SLACK_REL * bound.abs()
}

/// Decay profile: `e^{-s/2}` when `m_tilde = 0`, otherwise the algebraic
/// branch `(1 + m_tilde s j0^{m_tilde})^{-1/(2 m1 m_tilde)}`.
///
/// `j0` is the initial shifted cost; it only enters the algebraic branch.
pub fn phi(m_tilde: f64, j0: f64, m1: f64, s: f64) -> Result<f64> {
    if !(s >= 0.0) || m_tilde < 0.0 {
        return Err(Error::domain(format!(
            "phi needs s >= 0 and m_tilde >= 0, got s = {s}, m_tilde = {m_tilde}"
        )));
    }
    if m_tilde == 0.0 {
        return Ok((-s / 2.0).exp());
    }
    if !(m1 > 0.0) || !(j0 >= 0.0) {
        return Err(Error::domain(format!(
            "phi with m_tilde > 0 needs m1 > 0 and j0 >= 0, got m1 = {m1}, j0 = {j0}"
        )));
    }
    let base = 1.0 + m_tilde * s * j0.powf(m_tilde);
    if !(base > 0.0) {
        return Err(Error::domain(format!(
            "phi base 1 + m_tilde*s*j0^m_tilde = {base} is not positive"
        )));
    }
    Ok(base.powf(-1.0 / (2.0 * m1 * m_tilde)))
}

/// Inputs of the inter-sample correction factor `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaInputs {
    /// Field magnitude constant M on the verification ball.
    pub m_sup: f64,
    /// Field Lipschitz constant L.
    pub lipschitz: f64,
    /// Radius of the admissible initial ball.
    pub delta: f64,
    /// Peak summed dither magnitude `nu` (scales like `eps^{-1/2}`).
    pub nu: f64,
    /// Dither period.
    pub eps: f64,
}

/// Explicit decay envelope for `||x(t) - x*||`.
#[derive(Debug, Clone, Copy)]
pub struct DecayEnvelope {
    /// Shape exponent `1 + m2 - 1/m1` (`1 - 1/m1` for floored gains).
    pub m_tilde: f64,
    /// Certified contraction rate.
    pub lambda: f64,
    /// Residual offset; 0 for vanishing gains, the practical-ball radius
    /// otherwise.
    pub rho: f64,
    pub m1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `||x0 - x*||`.
    pub x0_dist: f64,
    /// Initial shifted cost `Jt(x0)`.
    pub j0: f64,
    pub sigma: SigmaInputs,
}

impl DecayEnvelope {
    /// Checks the parameter ranges the evaluation formulas assume.
    pub fn validate(&self) -> Result<()> {
        for (name, v, lo) in [
            ("m_tilde", self.m_tilde, 0.0),
            ("rho", self.rho, 0.0),
            ("x0_dist", self.x0_dist, 0.0),
            ("j0", self.j0, 0.0),
        ] {
            if !(v >= lo) || !v.is_finite() {
                return Err(Error::config(format!("envelope {name} must be >= {lo}, got {v}")));
            }
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("m1", self.m1),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("sigma.lipschitz", self.sigma.lipschitz),
            ("sigma.eps", self.sigma.eps),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("envelope {name} must be positive, got {v}")));
            }
        }
        if self.sigma.m_sup < 0.0 || self.sigma.nu < 0.0 || self.sigma.delta < 0.0 {
            return Err(Error::config("envelope sigma inputs must be non-negative"));
        }
        Ok(())
    }

    /// `1 + (M/L)(g2/g1)^{mt/2} delta^{m1 mt} (e^{nu L eps} - 1)`; always
    /// >= 1, and -> 1 as `eps -> 0` (`nu` itself shrinks like `eps^{-1/2}`,
    /// so `nu L eps -> 0`).
    pub fn sigma_bound(&self) -> f64 {
        let s = &self.sigma;
        1.0 + s.m_sup / s.lipschitz
            * (self.gamma2 / self.gamma1).powf(self.m_tilde / 2.0)
            * s.delta.powf(self.m1 * self.m_tilde)
            * ((s.nu * s.lipschitz * s.eps).exp() - 1.0)
    }
}

/// Envelope value at time `t`:
/// `sigma_bound (g2/g1)^{1/(2 m1)} x0_dist phi_mt(lambda max(t - eps, 0)) + rho`.
///
/// Out-of-range shape parameters (see [`DecayEnvelope::validate`]) make the
/// result NaN, which every downstream check treats as a violation.
pub fn envelope_eval(env: &DecayEnvelope, t: f64) -> f64 {
    let s = env.lambda * (t - env.sigma.eps).max(0.0);
    let shape = phi(env.m_tilde, env.j0, env.m1, s).unwrap_or(f64::NAN);
    env.sigma_bound() * (env.gamma2 / env.gamma1).powf(1.0 / (2.0 * env.m1)) * env.x0_dist * shape
        + env.rho
}

/// Short-horizon excursion bound
/// `(m_bound ||x0 - x*||^m / lipschitz) (e^{nu lipschitz t} - 1)`
/// on `||x(t) - x(0)||` for solutions driven by fields of magnitude
/// `m_bound ||x - x*||^m` under total dither magnitude `nu`.
pub fn lemma3_bound(m_bound: f64, lipschitz: f64, m: f64, nu: f64, t: f64, x0_dist: f64) -> f64 {
    debug_assert!(lipschitz > 0.0 && t >= 0.0);
    m_bound * x0_dist.powf(m) / lipschitz * ((nu * lipschitz * t).exp() - 1.0)
}

/// Bound on the third-order remainder of the one-period Volterra expansion:
/// `(t nu)^3 ||x0 - x*||^varpi C` with
/// `C = 2^{varpi-1} h_bound (1 + c1 (nu t ||x0 - x*||^{m-1})^varpi)` and
/// `c1 = 6 (m_bound (e^lipschitz - 1))^varpi / (lipschitz (varpi+1)(varpi+2)(varpi+3))`.
///
/// `h_bound` caps the iterated directional derivatives of the fields with
/// weight `||x - x*||^varpi`, `m_bound`/`m` cap the field magnitudes as in
/// [`lemma3_bound`].  Requires `nu * t <= 1` and `varpi` either 0 or >= 1.
pub fn lemma4_remainder_bound(
    h_bound: f64,
    varpi: f64,
    m_bound: f64,
    lipschitz: f64,
    m: f64,
    nu: f64,
    t: f64,
    x0_dist: f64,
) -> Result<f64> {
    if nu * t > 1.0 {
        return Err(Error::precondition(format!(
            "remainder bound needs nu*t <= 1, got nu*t = {:.6}",
            nu * t
        )));
    }
    if varpi < 0.0 || (varpi > 0.0 && varpi < 1.0) {
        return Err(Error::precondition(format!(
            "remainder weight exponent must be 0 or >= 1, got {varpi}"
        )));
    }
    if x0_dist == 0.0 {
        // The equilibrium trajectory is constant; its expansion is exact.
        return Ok(0.0);
    }
    let c1 = 6.0 * (m_bound * (lipschitz.exp() - 1.0)).powf(varpi)
        / (lipschitz * (varpi + 1.0) * (varpi + 2.0) * (varpi + 3.0));
    let c = 2f64.powf(varpi - 1.0)
        * h_bound
        * (1.0 + c1 * (nu * t * x0_dist.powf(m - 1.0)).powf(varpi));
    Ok((t * nu).powi(3) * x0_dist.powf(varpi) * c)
}

/// Comparison constants entering the one-period descent estimate.
#[derive(Debug, Clone, Copy)]
pub struct DescentConstants {
    /// Lower gain comparison constant (the uniform floor for non-vanishing
    /// gains).
    pub alpha1: f64,
    /// Upper gain comparison constant.
    pub alpha2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub mu: f64,
    pub m1: f64,
    /// Measured `||r_eps|| / (eps Jt(x0)^{m_tilde + 1/(2 m1)})`.
    pub remainder_ratio: f64,
}

/// One-period descent estimate
/// `j0 (1 - eps k1/m1 j0^mt + eps^2 k2/(2 m1^2) j0^{2 mt})^{m1}` with
/// `k1 = alpha1 kappa1 - sqrt(kappa2) remainder_ratio` and
/// `k2 = ((m1-1) kappa2 + mu m1)(alpha2 sqrt(kappa2) + remainder_ratio)^2`.
pub fn lemma5_descent(j0: f64, eps: f64, k: &DescentConstants, m_tilde: f64) -> f64 {
    let k1 = k.alpha1 * k.kappa1 - k.kappa2.sqrt() * k.remainder_ratio;
    let k2 = ((k.m1 - 1.0) * k.kappa2 + k.mu * k.m1)
        * (k.alpha2 * k.kappa2.sqrt() + k.remainder_ratio).powi(2);
    let jm = j0.powf(m_tilde);
    j0 * (1.0 - eps * k1 / k.m1 * jm + eps * eps * k2 / (2.0 * k.m1 * k.m1) * jm * jm)
        .powf(k.m1)
}

/// Which growth regime the scenario's gain maps satisfy.
#[derive(Debug, Clone, Copy)]
pub enum GainRegime {
    /// Gains vanish at the minimum inside power-law envelopes
    /// `alpha1 z^{m2} <= F0(z) <= alpha2 z^{m2}`; `m_sup`/`h_sup` are the
    /// correspondingly weighted suprema.
    Vanishing { m2: f64, alpha1: f64, alpha2: f64 },
    /// The averaged gain stays above a positive floor `alpha`; decay is
    /// certified down to a residual ball only.  `rho0`/`rho_min` pick the
    /// inner shells where the expansion stays valid.
    Floored { alpha: f64, rho: f64, rho0: f64, rho_min: f64 },
}

/// Raw (uninflated) scenario constants feeding [`epsilon_certificate`].
#[derive(Debug, Clone)]
pub struct ScenarioConstants {
    /// Field Lipschitz estimate on the verification ball.
    pub lipschitz: f64,
    /// Plain supremum of |F_s(Jt)| over the verification ball.
    pub m_f: f64,
    /// Growth constant M: weighted by `Jt^{m3}` for vanishing gains, plain
    /// supremum for floored gains.
    pub m_sup: f64,
    /// Second-order derivative constant H: weighted by `Jt^{m4}` for
    /// vanishing gains, plain supremum for floored gains.
    pub h_sup: f64,
    /// Dither frequency multipliers, one per axis.
    pub k_list: Vec<u32>,
    /// Radius of the domain where the standing assumptions hold
    /// (`f64::INFINITY` allowed).
    pub delta_cap: f64,
    /// Radius of the certified initial ball.
    pub delta: f64,
    /// Working radius, strictly between `(gamma2/gamma1)^{1/(2 m1)} delta`
    /// and `delta_cap`.
    pub delta0: f64,
    /// Target decay-rate cap.
    pub lambda_bar: f64,
    pub cost: CostConstants,
    pub regime: GainRegime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateBranch {
    Vanishing,
    Floored,
}

/// The admissible-period thresholds with every intermediate recorded in
/// order of computation.
#[derive(Debug, Clone)]
pub struct EpsilonCertificate {
    pub branch: CertificateBranch,
    /// Existence threshold from the domain margin (INFINITY when the domain
    /// is the whole space).
    pub eps0: f64,
    /// Dither-magnitude threshold `nu_coeff^{-2}`, making `nu eps <= 1`.
    pub eps1: f64,
    /// `min(eps0, eps1, c0^{-m_tilde})`.
    pub eps2: f64,
    /// Descent threshold `((alpha1 kappa1 - lambda_bar)/(c0^{mt/2} lambda1))^2`.
    pub eps4: f64,
    /// Certified period: every `eps <= eps_bar` satisfies all thresholds.
    pub eps_bar: f64,
    pub nu_coeff: f64,
    /// Domain margin `delta_cap - delta0`.
    pub d: f64,
    /// Level-set cap `gamma1 delta0^{2 m1}`.
    pub c0: f64,
    pub delta0: f64,
    pub m_tilde: f64,
    /// Remainder constant (`Omega` or `Omega_tilde`).
    pub omega: f64,
    /// Descent-perturbation constant (`lambda1` or `lambda1_tilde`).
    pub lambda1: f64,
    /// Every intermediate as `(name, value)`, in order of computation.
    pub entries: Vec<(&'static str, f64)>,
}

impl EpsilonCertificate {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }

    /// Flat machine-comparable form: one `name=value` line per intermediate.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v:.16e}\n"));
        }
        out
    }
}

impl fmt::Display for EpsilonCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let branch = match self.branch {
            CertificateBranch::Vanishing => "vanishing-gain",
            CertificateBranch::Floored => "floored-gain",
        };
        writeln!(f, "epsilon certificate ({branch} branch)")?;
        for (k, v) in &self.entries {
            writeln!(f, "  {k:<12} = {v:.6e}")?;
        }
        write!(f, "certified dither period: eps <= {:.6e}", self.eps_bar)
    }
}

/// Computes the full threshold chain for the scenario constants.
///
/// Grid-estimated suprema (`lipschitz`, `m_f`, `m_sup`, `h_sup`) are inflated
/// by [`SAFETY_INFLATION`] before use; raw and inflated values are both
/// recorded.  Hypothesis violations produce precondition errors naming the
/// failed inequality.
pub fn epsilon_certificate(sc: &ScenarioConstants) -> Result<EpsilonCertificate> {
    let cc = &sc.cost;
    let m1 = cc.m1;
    for (name, v) in [
        ("lipschitz", sc.lipschitz),
        ("m_f", sc.m_f),
        ("m_sup", sc.m_sup),
        ("h_sup", sc.h_sup),
        ("gamma1", cc.gamma1),
        ("gamma2", cc.gamma2),
        ("kappa1", cc.kappa1),
        ("kappa2", cc.kappa2),
        ("mu", cc.mu),
        ("delta", sc.delta),
        ("delta0", sc.delta0),
        ("lambda_bar", sc.lambda_bar),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::config(format!(
                "certificate input {name} must be positive and finite, got {v}"
            )));
        }
    }
    if !(m1 >= 1.0) {
        return Err(Error::config(format!("cost order m1 must be >= 1, got {m1}")));
    }
    if !(sc.delta_cap > 0.0) {
        return Err(Error::config(format!(
            "domain radius must be positive, got {}",
            sc.delta_cap
        )));
    }

    let root = 1.0 / (2.0 * m1);
    let delta_limit = (cc.gamma1 / cc.gamma2).powf(root) * sc.delta_cap;
    if !(sc.delta < delta_limit) {
        return Err(Error::precondition(format!(
            "failed hypothesis delta < (gamma1/gamma2)^(1/(2 m1)) Delta: {} >= {delta_limit}",
            sc.delta
        )));
    }
    let delta0_lo = (cc.gamma2 / cc.gamma1).powf(root) * sc.delta;
    if !(sc.delta0 > delta0_lo && sc.delta0 < sc.delta_cap) {
        return Err(Error::precondition(format!(
            "failed hypothesis (gamma2/gamma1)^(1/(2 m1)) delta < delta0 < Delta: delta0 = {} outside ({delta0_lo}, {})",
            sc.delta0, sc.delta_cap
        )));
    }
    let (alpha_low, m2) = match sc.regime {
        GainRegime::Vanishing { m2, alpha1, .. } => (alpha1, m2),
        GainRegime::Floored { alpha, .. } => (alpha, 0.0),
    };
    if !(sc.lambda_bar < alpha_low * cc.kappa1) {
        return Err(Error::precondition(format!(
            "failed hypothesis lambda_bar < alpha1 kappa1: {} >= {}",
            sc.lambda_bar,
            alpha_low * cc.kappa1
        )));
    }
    let m_tilde = 1.0 + m2 - 1.0 / m1;
    if m_tilde < 0.0 {
        return Err(Error::precondition(format!(
            "failed hypothesis m2 >= 1/m1 - 1: m_tilde = {m_tilde} is negative"
        )));
    }
    if let GainRegime::Floored { rho, rho0, rho_min, .. } = sc.regime {
        if !(0.0 < rho_min && rho_min < rho0 && rho0 < rho && rho < sc.delta) {
            return Err(Error::precondition(format!(
                "failed hypothesis 0 < rho_min < rho0 < rho < delta: got {rho_min}, {rho0}, {rho}, {}",
                sc.delta
            )));
        }
    }

    let l = sc.lipschitz * SAFETY_INFLATION;
    let m_f = sc.m_f * SAFETY_INFLATION;
    let m_sup = sc.m_sup * SAFETY_INFLATION;
    let h_sup = sc.h_sup * SAFETY_INFLATION;
    let nu_coeff = dithers::nu_coefficient(&sc.k_list)?;

    let mut entries: Vec<(&'static str, f64)> = vec![
        ("L_raw", sc.lipschitz),
        ("L", l),
        ("M_F_raw", sc.m_f),
        ("M_F", m_f),
        ("M_raw", sc.m_sup),
        ("M", m_sup),
        ("H_raw", sc.h_sup),
        ("H", h_sup),
        ("nu_coeff", nu_coeff),
        ("delta", sc.delta),
        ("delta0", sc.delta0),
        ("Delta", sc.delta_cap),
        ("lambda_bar", sc.lambda_bar),
    ];

    let (d, eps0) = if sc.delta_cap.is_finite() {
        let d = sc.delta_cap - sc.delta0;
        (d, ((l * d / m_f + 1.0).ln() / (nu_coeff * l)).powi(2))
    } else {
        // Unbounded domain: solutions cannot leave it, so the existence
        // threshold is vacuous.
        (f64::INFINITY, f64::INFINITY)
    };
    let eps1 = nu_coeff.powi(2).recip();
    let c0 = cc.gamma1 * sc.delta0.powf(2.0 * m1);
    let eps2 = eps0.min(eps1).min(c0.powf(-m_tilde));
    entries.extend([
        ("d", d),
        ("c0", c0),
        ("m_tilde", m_tilde),
        ("eps0", eps0),
        ("eps1", eps1),
        ("eps2", eps2),
    ]);

    let (branch, omega, lambda1, eps4, eps_cons) = match sc.regime {
        GainRegime::Vanishing { m2, alpha1, alpha2 } => {
            let m3 = (m2 + 1.0) / 2.0;
            let m4 = 1.5 * (1.0 + m2) - 1.0 / m1;
            let varpi = 2.0 * m1 * m4;
            let m_growth = m_sup * cc.gamma1.powf(m3);
            let h_growth = h_sup * cc.gamma1.powf(m4);
            let c1 = 6.0 * (m_growth * (l.exp() - 1.0)).powf(varpi)
                / (l * (varpi + 1.0) * (varpi + 2.0) * (varpi + 3.0));
            let c_bound = cc.gamma1.powf(-m4 / (2.0 * m1))
                * 2f64.powf(varpi - 2.0)
                * h_growth
                * (1.0 + c1 * cc.gamma1.powf(root - m3) * nu_coeff.powf(varpi));
            let omega = nu_coeff.powi(3) * cc.gamma1.powf(-m4) * c_bound;
            let lambda1 = omega * cc.kappa2.sqrt()
                + ((m1 - 1.0) * cc.kappa2 + cc.mu * m1) / (2.0 * m1)
                    * (alpha2 * cc.kappa2.sqrt() + omega).powi(2);
            let eps4 =
                ((alpha1 * cc.kappa1 - sc.lambda_bar) / (c0.powf(m_tilde / 2.0) * lambda1)).powi(2);
            entries.extend([
                ("m2", m2),
                ("m3", m3),
                ("m4", m4),
                ("varpi", varpi),
                ("alpha1", alpha1),
                ("alpha2", alpha2),
                ("M_growth", m_growth),
                ("H_growth", h_growth),
                ("c1", c1),
                ("C", c_bound),
                ("Omega", omega),
                ("lambda1", lambda1),
            ]);
            (CertificateBranch::Vanishing, omega, lambda1, eps4, eps2)
        }
        GainRegime::Floored { alpha, rho, rho0, rho_min } => {
            let d_tilde = (rho - rho0).min(rho0 - rho_min);
            let eps0_tilde = ((l * d_tilde / m_sup + 1.0).ln() / (nu_coeff * l)).powi(2);
            let eps_cons = eps0_tilde.min(eps1).min(eps2);
            let omega = h_sup * nu_coeff.powi(3);
            let shell = cc.gamma1.powf(root - 1.0) * rho0.powf(1.0 - 2.0 * m1);
            // The perturbation constant depends on the running eps through a
            // sqrt(eps) term; substituting the consolidated upper threshold
            // keeps the bound valid for every admissible eps.
            let lambda1 = cc.kappa2.sqrt() * omega * shell
                + ((m1 - 1.0) * cc.kappa2 + cc.mu * m1)
                    * (alpha * cc.kappa2.sqrt() + eps_cons.sqrt() * omega * shell).powi(2);
            let eps4 =
                ((alpha * cc.kappa1 - sc.lambda_bar) / (c0.powf(m_tilde / 2.0) * lambda1)).powi(2);
            entries.extend([
                ("alpha", alpha),
                ("rho", rho),
                ("rho0", rho0),
                ("rho_min", rho_min),
                ("d_tilde", d_tilde),
                ("eps0_tilde", eps0_tilde),
                ("eps_cons", eps_cons),
                ("Omega_tilde", omega),
                ("lambda1_tilde", lambda1),
            ]);
            (CertificateBranch::Floored, omega, lambda1, eps4, eps_cons)
        }
    };

    let mut eps_bar = eps_cons.min(eps4).min(m1 / (sc.lambda_bar * c0.powf(m_tilde)));
    if m_tilde > 0.0 {
        eps_bar = eps_bar.min((sc.lambda_bar * m_tilde * c0.powf(m_tilde)).recip());
    }
    entries.push(("eps4", eps4));
    entries.push(("eps_bar", eps_bar));
    if !(eps_bar > 0.0) || !eps_bar.is_finite() {
        return Err(Error::numeric(format!(
            "certificate chain collapsed to eps_bar = {eps_bar}"
        )));
    }
    Ok(EpsilonCertificate {
        branch,
        eps0,
        eps1,
        eps2,
        eps4,
        eps_bar,
        nu_coeff,
        d,
        c0,
        delta0: sc.delta0,
        m_tilde,
        omega,
        lambda1,
        entries,
    })
}

/// One failed sample of a dominance check.
#[derive(Debug, Clone, Copy)]
pub struct Violation {
    pub t: f64,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
}

impl Violation {
    /// How far past bound + slack the measurement landed.
    pub fn excess(&self) -> f64 {
        self.measured - self.bound - self.slack
    }
}

/// Outcome of a trajectory check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_excess(&self) -> f64 {
        self.violations.iter().map(Violation::excess).fold(0.0, f64::max)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            write!(f, "pass ({} samples checked)", self.checked)
        } else {
            let worst = self
                .violations
                .iter()
                .max_by(|a, b| a.excess().total_cmp(&b.excess()))
                .expect("non-empty violations");
            write!(
                f,
                "FAIL: {} of {} samples violate the bound; worst at t = {:.6}: measured {:.6e} > bound {:.6e} + slack {:.1e}",
                self.violations.len(),
                self.checked,
                worst.t,
                worst.measured,
                worst.bound,
                worst.slack
            )
        }
    }
}

/// Checks the per-period contraction
/// `Jt((n+1) eps) <= Jt(n eps) (1 - eps lambda/m1 Jt^mt(n eps))^{m1} + slack`
/// on every consecutive pair of eps-multiples in the trajectory.
///
/// The trajectory must carry cost samples at `t = 0, eps, 2 eps, ...`
/// (other intermediate samples are ignored).
pub fn check_descent(
    traj: &Trajectory,
    eps: f64,
    lambda: f64,
    m1: f64,
    m_tilde: f64,
    j_star: f64,
) -> Result<CheckReport> {
    if !(eps > 0.0) || !(lambda > 0.0) || !(m1 >= 1.0) || m_tilde < 0.0 {
        return Err(Error::config(format!(
            "descent check needs eps > 0, lambda > 0, m1 >= 1, m_tilde >= 0; got {eps}, {lambda}, {m1}, {m_tilde}"
        )));
    }
    if traj.cost_values.len() != traj.times.len() {
        return Err(Error::input(
            "trajectory carries no cost samples; run it through the seeking-loop simulator",
        ));
    }
    let mut nodes: Vec<(i64, f64)> = Vec::new();
    for (&t, &j) in traj.times.iter().zip(&traj.cost_values) {
        let ratio = t / eps;
        let n = ratio.round();
        if (ratio - n).abs() <= 1e-9 * ratio.abs().max(1.0) {
            nodes.push((n as i64, j - j_star));
        }
    }
    if nodes.len() < 2 {
        return Err(Error::input(format!(
            "trajectory is not aligned to the eps-grid: found {} samples at multiples of eps = {eps}, need at least 2",
            nodes.len()
        )));
    }
    for w in nodes.windows(2) {
        if w[1].0 != w[0].0 + 1 {
            return Err(Error::input(format!(
                "trajectory skips the eps-grid between n = {} and n = {}",
                w[0].0, w[1].0
            )));
        }
    }
    let mut violations = Vec::new();
    for w in nodes.windows(2) {
        let (n0, j0) = w[0];
        let j1 = w[1].1;
        let bound = j0 * (1.0 - eps * lambda / m1 * j0.powf(m_tilde)).powf(m1);
        let slack = slack_tol(bound);
        if !bound.is_finite() || j1 > bound + slack {
            violations.push(Violation {
                t: (n0 + 1) as f64 * eps,
                measured: j1,
                bound,
                slack,
            });
        }
    }
    Ok(CheckReport {
        checked: nodes.len() - 1,
        violations,
    })
}

/// Checks `||x(t) - x*|| <= envelope_eval(env, t) + slack` at every sample.
pub fn check_envelope(traj: &Trajectory, env: &DecayEnvelope, x_star: &[f64]) -> Result<CheckReport> {
    if traj.times.is_empty() {
        return Err(Error::input("cannot check an empty trajectory"));
    }
    if traj.states[0].len() != x_star.len() {
        return Err(Error::input(format!(
            "state dimension {} does not match x* dimension {}",
            traj.states[0].len(),
            x_star.len()
        )));
    }
    let mut violations = Vec::new();
    for (&t, x) in traj.times.iter().zip(&traj.states) {
        let diff: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| a - b).collect();
        let measured = norm2(&diff);
        let bound = envelope_eval(env, t);
        let slack = slack_tol(bound);
        if !bound.is_finite() || measured > bound + slack {
            violations.push(Violation {
                t,
                measured,
                bound,
                slack,
            });
        }
    }
    Ok(CheckReport {
        checked: traj.times.len(),
        violations,
    })
}

/// Raw grid suprema of the shaped fields on the verification ball around the
/// minimizer: magnitude, Lipschitz constant, and the largest unweighted
/// second-order directional-derivative combination.
#[derive(Debug, Clone, Copy)]
pub struct FieldConstants {
    pub m_f: f64,
    pub lipschitz: f64,
    pub h_plain: f64,
    pub samples: usize,
}

/// Estimates [`FieldConstants`] by maximizing over a tensor grid restricted
/// to the ball of radius `delta0` (values are raw; [`epsilon_certificate`]
/// applies the safety inflation).
pub fn estimate_field_constants(
    sys: &EsSystem,
    delta0: f64,
    points_per_axis: usize,
) -> Result<FieldConstants> {
    let grid: Vec<Vec<f64>> = sys
        .cost
        .sample_grid(delta0, points_per_axis)?
        .into_iter()
        .filter(|x| sys.cost.dist_to_min(x) <= delta0 * (1.0 + 1e-12))
        .collect();
    if grid.is_empty() {
        return Err(Error::numeric("verification ball contains no grid points"));
    }
    let n = sys.axes.len();
    let mut m_f: f64 = 0.0;
    let mut lipschitz: f64 = 0.0;
    let mut h_plain: f64 = 0.0;
    for x in &grid {
        for i in 0..n {
            for s in 0..2 {
                m_f = m_f.max(axis_field(sys, s, i, x).abs());
                let grad = gradient_fd(|y| axis_field(sys, s, i, y), x);
                lipschitz = lipschitz.max(norm2(&grad));
            }
        }
        h_plain = h_plain.max(second_lie_plain(sys, x));
    }
    if !(m_f.is_finite() && lipschitz.is_finite() && h_plain.is_finite()) {
        return Err(Error::numeric(
            "field-constant estimation produced non-finite values",
        ));
    }
    Ok(FieldConstants {
        m_f,
        lipschitz,
        h_plain,
        samples: grid.len(),
    })
}

/// Component `s` (0 for the first shaped map, 1 for the second) of axis `i`,
/// evaluated through the shifted cost at `y`.
fn axis_field(sys: &EsSystem, s: usize, i: usize, y: &[f64]) -> f64 {
    let z = sys.cost.shifted(y);
    let gen = &sys.axes[i].gen;
    if s == 0 {
        gen.f1(z)
    } else {
        gen.f2(z)
    }
}

/// Maximum over axis/component choices of
/// `|d_l[d_j[F_s(Jt) e_i] . F_p(Jt) e_j] . F_q(Jt) e_l|` at `x`: the largest
/// iterated directional derivative entering the remainder bound.
fn second_lie_plain(sys: &EsSystem, x: &[f64]) -> f64 {
    let n = x.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for s in 0..2 {
            for j in 0..n {
                for p in 0..2 {
                    let inner = |y: &[f64]| -> f64 {
                        let hj = FD_GRAD_STEP * y[j].abs().max(1.0);
                        let mut yp = y.to_vec();
                        let mut ym = y.to_vec();
                        yp[j] += hj;
                        ym[j] -= hj;
                        let d = (axis_field(sys, s, i, &yp) - axis_field(sys, s, i, &ym))
                            / (2.0 * hj);
                        d * axis_field(sys, p, j, y)
                    };
                    for l in 0..n {
                        let hl = FD_HESS_STEP * x[l].abs().max(1.0);
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[l] += hl;
                        xm[l] -= hl;
                        let outer = (inner(&xp) - inner(&xm)) / (2.0 * hl);
                        for q in 0..2 {
                            worst = worst.max((outer * axis_field(sys, q, l, x)).abs());
                        }
                    }
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::builtin_cost;
    use crate::dithers::DitherPair;
    use crate::dynamics::{simulate_es, simulate_lie, EsAxis};
    use crate::generators::builtin_generator;

    fn j1_system(eps: f64) -> EsSystem {
        let cost = builtin_cost("j1", &[]).unwrap();
        let gen = builtin_generator("classic", &[]).unwrap();
        let dither = DitherPair::new(1, eps).unwrap();
        EsSystem::new(cost, vec![EsAxis { gen, dither }]).unwrap()
    }

    fn flat_envelope() -> DecayEnvelope {
        DecayEnvelope {
            m_tilde: 0.0,
            lambda: 1.0,
            rho: 0.0,
            m1: 1.0,
            gamma1: 2.0,
            gamma2: 2.0,
            x0_dist: 1.0,
            j0: 2.0,
            sigma: SigmaInputs {
                m_sup: 0.0,
                lipschitz: 3.0,
                delta: 1.0,
                nu: 50.0,
                eps: 0.01,
            },
        }
    }

    #[test]
    fn phi_closed_form_values() {
        assert_eq!(phi(0.0, 0.0, 1.0, 0.0).unwrap(), 1.0);
        assert!((phi(0.0, 0.0, 1.0, 2.0 * 2f64.ln()).unwrap() - 0.5).abs() < 1e-15);
        let v = phi(1.0, 2.0, 2.0, 1.0).unwrap();
        assert!((v - 3f64.powf(-0.25)).abs() < 1e-15, "phi = {v}");
    }

    #[test]
    fn phi_rejects_out_of_range_arguments() {
        assert!(phi(0.0, 0.0, 1.0, -0.1).is_err());
        assert!(phi(-0.5, 0.0, 1.0, 1.0).is_err());
        assert!(phi(1.0, -2.0, 1.0, 1.0).is_err());
        assert!(phi(1.0, 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn phi_strictly_decreasing_on_both_branches() {
        for &mt in &[0.0, 0.5, 1.0] {
            let mut prev = phi(mt, 2.0, 1.0, 0.0).unwrap();
            assert_eq!(prev, 1.0);
            for step in 1..=40 {
                let v = phi(mt, 2.0, 1.0, step as f64 * 0.25).unwrap();
                assert!(v < prev, "phi_{mt} not decreasing at step {step}");
                prev = v;
            }
        }
    }

    #[test]
    fn envelope_at_eps_is_the_amplitude() {
        let mut env = flat_envelope();
        env.sigma.m_sup = 3.0;
        let expect = env.sigma_bound() * env.x0_dist;
        let got = envelope_eval(&env, env.sigma.eps);
        assert!((got - expect).abs() < 1e-12, "envelope {got} vs {expect}");
        assert!(env.sigma_bound() >= 1.0);
    }

    #[test]
    fn envelope_degenerates_to_exponential() {
        // m_sup = 0 kills the intra-period correction: sigma_bound = 1.
        let mut env = flat_envelope();
        env.rho = 0.3;
        for &t in &[0.01, 0.5, 2.0, 7.0] {
            let expect = (-(t - 0.01) * env.lambda / 2.0).exp() + 0.3;
            assert!((envelope_eval(&env, t) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_quadratic_case_regression() {
        let env = DecayEnvelope {
            m_tilde: 0.0,
            lambda: 1.0,
            rho: 0.05,
            m1: 1.0,
            gamma1: 2.0,
            gamma2: 2.0,
            x0_dist: 1.0,
            j0: 2.0,
            sigma: SigmaInputs {
                m_sup: 3.0,
                lipschitz: 3.0,
                delta: 1.0,
                nu: 2.0 * (2.0 * std::f64::consts::PI / 0.01).sqrt(),
                eps: 0.01,
            },
        };
        env.validate().unwrap();
        let v = envelope_eval(&env, 10.0);
        assert!((v - 0.08046968466038402).abs() < 1e-12, "envelope(10) = {v}");
    }

    #[test]
    fn envelope_non_increasing_past_first_period() {
        let mut env = flat_envelope();
        env.sigma.m_sup = 2.0;
        env.rho = 0.02;
        let mut prev = envelope_eval(&env, env.sigma.eps);
        for i in 1..=100 {
            let v = envelope_eval(&env, env.sigma.eps + i as f64 * 0.1);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn excursion_bound_closed_forms() {
        assert_eq!(lemma3_bound(2.0, 1.5, 1.0, 3.0, 0.0, 0.7), 0.0);
        let v = lemma3_bound(1.0, 1.0, 0.0, 1.0, 2f64.ln(), 5.0);
        assert!((v - 1.0).abs() < 1e-15, "bound = {v}");
    }

    #[test]
    fn remainder_bound_closed_forms() {
        assert_eq!(
            lemma4_remainder_bound(3.0, 2.0, 1.0, 1.0, 2.0, 1.0, 0.0, 0.5).unwrap(),
            0.0
        );
        // Weight exponent 0: C = h/2 (1 + 1/L) independent of the magnitude
        // constants.
        let v = lemma4_remainder_bound(2.0, 0.0, 123.0, 2.0, 9.0, 1.0, 1.0, 3.0).unwrap();
        assert!((v - 1.5).abs() < 1e-15, "bound = {v}");
    }

    #[test]
    fn remainder_bound_preconditions() {
        let err = lemma4_remainder_bound(1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 0.6, 1.0).unwrap_err();
        assert!(err.to_string().contains("nu*t"), "{err}");
        assert!(lemma4_remainder_bound(1.0, 0.5, 1.0, 1.0, 0.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn descent_estimate_direct_substitution() {
        let k = DescentConstants {
            alpha1: 1.0,
            alpha2: 1.0,
            kappa1: 1.0,
            kappa2: 4.0,
            mu: 3.0,
            m1: 1.0,
            remainder_ratio: 0.0,
        };
        // k1 = 1, k2 = 3 * (1*2)^2 = 12: J0 (1 - 0.1 + 0.005*12).
        let v = lemma5_descent(5.0, 0.1, &k, 0.0);
        assert!((v - 5.0 * 0.96).abs() < 1e-12, "descent = {v}");
        let tiny = lemma5_descent(5.0, 1e-12, &k, 0.0);
        assert!((tiny - 5.0).abs() < 1e-9);
    }

    #[test]
    fn bounds_dominate_one_period_simulation() {
        // Quadratic cost, linear-gain loop, one full dither period.
        let eps = 0.025;
        let sys = j1_system(eps);
        let x0 = [0.0];
        let traj = simulate_es(&sys, &x0, eps, None, 1).unwrap();
        let fc = estimate_field_constants(&sys, 1.5, 41).unwrap();
        assert!((fc.m_f - 4.5).abs() < 1e-6, "m_f = {}", fc.m_f);
        assert!((fc.lipschitz - 6.0).abs() < 1e-3, "L = {}", fc.lipschitz);
        assert!(
            (fc.h_plain - 243.0).abs() < 1.0,
            "h_plain = {}",
            fc.h_plain
        );

        let l = fc.lipschitz * SAFETY_INFLATION;
        let m_f = fc.m_f * SAFETY_INFLATION;
        let h = fc.h_plain * SAFETY_INFLATION;
        let nu = crate::dithers::nu(&[sys.axes[0].dither]).unwrap();

        // Short-horizon excursion bound dominates sample-wise.
        for (&t, x) in traj.times.iter().zip(&traj.states).skip(1) {
            let measured = (x[0] - x0[0]).abs();
            let bound = lemma3_bound(m_f, l, 0.0, nu, t, 1.0);
            assert!(
                measured <= bound + slack_tol(bound),
                "excursion {measured:.3e} > bound {bound:.3e} at t = {t}"
            );
        }

        // Volterra remainder at t = eps: x(eps) = x0 - eps J'(x0) F0 + R.
        let x_eps = traj.final_state()[0];
        let drift = -sys.cost.grad(&x0)[0] * sys.axes[0].gen.f0(sys.cost.shifted(&x0));
        let remainder = (x_eps - x0[0] - eps * drift).abs();
        let r_bound = lemma4_remainder_bound(h, 0.0, m_f, l, 0.0, nu, eps, 1.0).unwrap();
        assert!(
            remainder <= r_bound + slack_tol(r_bound),
            "remainder {remainder:.3e} > bound {r_bound:.3e}"
        );

        // One-period descent with the measured remainder ratio.
        let j0: f64 = 2.0;
        let k = DescentConstants {
            alpha1: 1.0,
            alpha2: 1.0,
            kappa1: 8.0,
            kappa2: 8.0,
            mu: 4.0,
            m1: 1.0,
            remainder_ratio: remainder / (eps * j0.sqrt()),
        };
        let descent = lemma5_descent(j0, eps, &k, 0.0);
        let j_eps = traj.cost_values.last().unwrap();
        assert!(
            *j_eps <= descent + slack_tol(descent),
            "J(eps) = {j_eps:.6} > descent bound {descent:.6}"
        );
    }

    fn vanishing_inputs() -> ScenarioConstants {
        ScenarioConstants {
            lipschitz: 3.3,
            m_f: 2.0,
            m_sup: 1.0,
            h_sup: 24.5,
            k_list: vec![1],
            delta_cap: f64::INFINITY,
            delta: 1.0,
            delta0: 1.5,
            lambda_bar: 4.0,
            cost: CostConstants {
                m1: 1.0,
                gamma1: 2.0,
                gamma2: 2.0,
                kappa1: 8.0,
                kappa2: 8.0,
                mu: 4.0,
            },
            regime: GainRegime::Vanishing {
                m2: 0.0,
                alpha1: 1.0,
                alpha2: 1.0,
            },
        }
    }

    #[test]
    fn certificate_vanishing_chain_regression() {
        let cert = epsilon_certificate(&vanishing_inputs()).unwrap();
        assert_eq!(cert.branch, CertificateBranch::Vanishing);
        assert!(cert.eps0.is_infinite());
        assert!((cert.eps1 - 1.0 / (8.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert_eq!(cert.eps2, cert.eps1);
        assert!((cert.omega - 24036.384790108048).abs() < 1e-6, "Omega = {}", cert.omega);
        assert!(
            (cert.lambda1 - 1155835529.369881).abs() < 1.0,
            "lambda1 = {}",
            cert.lambda1
        );
        let expect = 1.1976444391252137e-17;
        assert!(
            ((cert.eps_bar - expect) / expect).abs() < 1e-12,
            "eps_bar = {:e}",
            cert.eps_bar
        );
        assert_eq!(cert.eps_bar, cert.eps4);
        for eps in [cert.eps0, cert.eps1, cert.eps2, cert.eps4] {
            assert!(cert.eps_bar <= eps);
        }
    }

    #[test]
    fn certificate_floored_chain_regression() {
        let sc = ScenarioConstants {
            lipschitz: 6.0,
            m_f: 4.5,
            m_sup: 4.5,
            h_sup: 243.0,
            regime: GainRegime::Floored {
                alpha: 1.0,
                rho: 0.5,
                rho0: 0.25,
                rho_min: 0.125,
            },
            ..vanishing_inputs()
        };
        let cert = epsilon_certificate(&sc).unwrap();
        assert_eq!(cert.branch, CertificateBranch::Floored);
        assert_eq!(cert.get("d_tilde"), Some(0.125));
        let e0t = cert.get("eps0_tilde").unwrap();
        assert!((e0t - 2.3821545270854782e-05).abs() < 1e-17, "eps0_tilde = {e0t:e}");
        assert!((cert.omega - 32148.103821208595).abs() < 1e-6);
        assert!((cert.lambda1 - 1055085.4193083372).abs() < 1e-4);
        let expect = 1.4372911118098644e-11;
        assert!(
            ((cert.eps_bar - expect) / expect).abs() < 1e-12,
            "eps_bar = {:e}",
            cert.eps_bar
        );
    }

    #[test]
    fn certificate_preconditions_name_the_inequality() {
        let mut sc = vanishing_inputs();
        sc.lambda_bar = 9.0; // >= alpha1 kappa1 = 8
        let err = epsilon_certificate(&sc).unwrap_err();
        assert!(err.to_string().contains("lambda_bar < alpha1 kappa1"), "{err}");

        let mut sc = vanishing_inputs();
        sc.delta0 = 0.9; // below (gamma2/gamma1)^(1/2) * delta = 1
        let err = epsilon_certificate(&sc).unwrap_err();
        assert!(err.to_string().contains("delta0"), "{err}");

        let mut sc = vanishing_inputs();
        sc.delta_cap = 1.2;
        sc.delta = 1.3;
        let err = epsilon_certificate(&sc).unwrap_err();
        assert!(err.to_string().contains("delta <"), "{err}");

        let mut sc = vanishing_inputs();
        sc.regime = GainRegime::Floored {
            alpha: 1.0,
            rho: 0.25,
            rho0: 0.5,
            rho_min: 0.1,
        };
        let err = epsilon_certificate(&sc).unwrap_err();
        assert!(err.to_string().contains("rho"), "{err}");
    }

    #[test]
    fn certificate_grows_as_the_working_radius_shrinks() {
        let mut tight = vanishing_inputs();
        tight.delta0 = 1.2;
        let a = epsilon_certificate(&tight).unwrap();
        let b = epsilon_certificate(&vanishing_inputs()).unwrap();
        assert!(a.eps_bar >= b.eps_bar);
    }

    #[test]
    fn certificate_serialization_round_trips() {
        let cert = epsilon_certificate(&vanishing_inputs()).unwrap();
        let text = cert.to_key_values();
        let mut seen = 0;
        for line in text.lines() {
            let (k, v) = line.split_once('=').expect("name=value line");
            let parsed: f64 = v.parse().expect("parseable value");
            if k == "eps_bar" {
                assert_eq!(parsed, cert.eps_bar);
                seen += 1;
            }
            if k == "Omega" {
                assert_eq!(parsed, cert.omega);
                seen += 1;
            }
        }
        assert_eq!(seen, 2);
        let display = cert.to_string();
        assert!(display.contains("vanishing-gain"));
        assert!(display.contains("eps_bar"));
    }

    #[test]
    fn descent_check_constant_at_minimum_passes() {
        let traj = Trajectory {
            times: vec![0.0, 0.1, 0.2],
            states: vec![vec![1.0]; 3],
            cost_values: vec![0.0; 3],
            controls: vec![],
        };
        let report = check_descent(&traj, 0.1, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(report.passed());
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn descent_check_on_averaged_flow() {
        // The averaged quadratic loop contracts at rate 8; any certified
        // lambda below that passes, and a certified rate that holds keeps
        // holding for smaller lambda.
        let sys = j1_system(0.01);
        let traj = simulate_lie(&sys, &[0.0], 0.2, sys.default_step(), 400).unwrap();
        for lambda in [7.2, 3.0, 0.5] {
            let report = check_descent(&traj, 0.01, lambda, 1.0, 0.0, 0.0).unwrap();
            assert!(report.passed(), "lambda = {lambda}: {report}");
        }
    }

    #[test]
    fn descent_check_flags_overclaimed_rate() {
        let sys = j1_system(0.01);
        let traj = simulate_es(&sys, &[0.0], 0.1, None, 400).unwrap();
        let report = check_descent(&traj, 0.01, 20.0, 1.0, 0.0, 0.0).unwrap();
        assert!(!report.passed());
        assert!(report.max_excess() > 0.1, "max excess {}", report.max_excess());
        assert!(report.to_string().contains("FAIL"));
    }

    #[test]
    fn descent_check_requires_grid_alignment() {
        let sys = j1_system(0.01);
        let traj = simulate_es(&sys, &[0.0], 0.1, None, 400).unwrap();
        let err = check_descent(&traj, 0.0137, 1.0, 1.0, 0.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("eps-grid"), "{err}");
    }

    #[test]
    fn envelope_check_passes_and_fails_by_rate() {
        // Synthetic decay toward x* = 1 at rate 1/2 matches the m_tilde = 0
        // envelope with lambda = 1 and is beaten by lambda = 3.
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let states: Vec<Vec<f64>> = times.iter().map(|t| vec![1.0 - (-t / 2.0).exp()]).collect();
        let traj = Trajectory {
            times,
            states,
            cost_values: vec![],
            controls: vec![],
        };
        let env = flat_envelope();
        let ok = check_envelope(&traj, &env, &[1.0]).unwrap();
        assert!(ok.passed(), "{ok}");

        let mut fast = env;
        fast.lambda = 3.0;
        let bad = check_envelope(&traj, &fast, &[1.0]).unwrap();
        assert!(!bad.passed());
        // At t = 0 both sides equal x0_dist; the overclaimed rate only bites
        // once the claimed curve dips below the true one.
        assert!(bad.violations.iter().all(|v| v.t > 0.0));
        assert!(bad.max_excess() > 0.1);
    }

    #[test]
    fn envelope_check_validates_inputs() {
        let traj = Trajectory {
            times: vec![],
            states: vec![],
            cost_values: vec![],
            controls: vec![],
        };
        assert!(check_envelope(&traj, &flat_envelope(), &[1.0]).is_err());
        let traj = Trajectory {
            times: vec![0.0],
            states: vec![vec![1.0]],
            cost_values: vec![],
            controls: vec![],
        };
        assert!(check_envelope(&traj, &flat_envelope(), &[1.0, 2.0]).is_err());
    }
}
