//! Sinusoidal dither pairs and their averaging coefficients.
//!
//! Each control axis gets the pair
//!
//! ```text
//!     u1(t) = 2 sqrt(pi k / eps) cos(2 pi k t / eps)
//!     u2(t) = 2 sqrt(pi k / eps) sin(2 pi k t / eps)
//! ```
//!
//! with integer frequency index `k` and common period `eps`.  The averaged
//! (slow time scale) dynamics of the closed loop depends on the pair only
//! through the coefficients
//!
//! ```text
//!     beta[i][j] = (1/T) int_0^T u_i(s) int_0^s u_j(r) dr ds ,
//! ```
//!
//! and the amplitude normalization above is chosen so that `beta[2][1] = 1`
//! for every `(k, eps)` — the averaged system is then exactly the
//! `F0`-weighted gradient flow with no extra gain.  Pairs with distinct `k`
//! on different axes decouple: all of their cross coefficients vanish.
//!
//! [`nu`] aggregates the amplitudes into the constant that the remainder and
//! certificate estimates use: `nu = 2 sqrt(2 pi / eps) * sum_i sqrt(k_i)`,
//! which dominates `sum_i (|u1_i| + |u2_i|)` for all `t`.

use crate::{Error, Result};

/// Default sub-interval count for the averaging-coefficient quadrature.
pub const BETA_STEPS: usize = 8192;
/// Relative tolerance for the zero-mean check inside [`beta_matrix`].
pub const ZERO_MEAN_TOL: f64 = 1e-10;

/// One axis' dither pair: frequency index `k`, common period `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherPair {
    pub k: u32,
    pub eps: f64,
}

impl DitherPair {
    pub fn new(k: u32, eps: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("dither frequency index k must be >= 1"));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::config(format!(
                "dither period eps must be positive and finite, got {eps}"
            )));
        }
        Ok(DitherPair { k, eps })
    }

    /// Common amplitude of both components: `2 sqrt(pi k / eps)`.
    pub fn amplitude(&self) -> f64 {
        2.0 * (std::f64::consts::PI * self.k as f64 / self.eps).sqrt()
    }

    /// Period of this pair's oscillation, `eps / k`.
    pub fn sub_period(&self) -> f64 {
        self.eps / self.k as f64
    }

    /// Evaluate `(u1, u2)` at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let a = self.amplitude();
        let phase = 2.0 * std::f64::consts::PI * self.k as f64 * t / self.eps;
        (a * phase.cos(), a * phase.sin())
    }

    /// The averaging coefficient `beta[2][1]` of this pair, which the chosen
    /// amplitude normalization makes exactly 1 (see [`beta_matrix`] for the
    /// quadrature that verifies this).
    pub fn beta21(&self) -> f64 {
        1.0
    }
}

/// Matrix of averaging coefficients for an ordered list of signals.
#[derive(Debug, Clone)]
pub struct BetaMatrix {
    pub entries: Vec<Vec<f64>>,
    pub period: f64,
    pub steps: usize,
}

impl BetaMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }
}

/// Compute all coefficients `beta[i][j]` for `T`-periodic zero-mean signals.
///
/// The running antiderivative of each signal is accumulated with per-interval
/// Simpson (midpoint evaluations), and the outer integral uses composite
/// Simpson over the same nodes; both stages are O(h^4).  Signals whose mean
/// over the period is not zero (relative to their amplitude) are rejected:
/// the coefficients are only meaningful for zero-mean dithers.
pub fn beta_matrix(
    signals: &[&dyn Fn(f64) -> f64],
    period: f64,
    steps: usize,
) -> Result<BetaMatrix> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::config(format!(
            "signal period must be positive and finite, got {period}"
        )));
    }
    if steps < 2 || steps % 2 != 0 {
        return Err(Error::config(format!(
            "beta quadrature needs a positive even step count, got {steps}"
        )));
    }
    let n = signals.len();
    let h = period / steps as f64;

    let mut vals = vec![vec![0.0; steps + 1]; n];
    let mut mids = vec![vec![0.0; steps]; n];
    for (s, sig) in signals.iter().enumerate() {
        for j in 0..=steps {
            vals[s][j] = sig(j as f64 * h);
        }
        for j in 0..steps {
            mids[s][j] = sig((j as f64 + 0.5) * h);
        }
    }

    let mut anti = vec![vec![0.0; steps + 1]; n];
    for s in 0..n {
        for j in 0..steps {
            anti[s][j + 1] =
                anti[s][j] + h / 6.0 * (vals[s][j] + 4.0 * mids[s][j] + vals[s][j + 1]);
        }
    }

    for s in 0..n {
        let sup = vals[s]
            .iter()
            .chain(&mids[s])
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let mean = anti[s][steps] / period;
        if mean.abs() > ZERO_MEAN_TOL * sup.max(1.0) {
            return Err(Error::model(format!(
                "signal {s} is not zero-mean over its period (mean = {mean:.3e}, amplitude = {sup:.3e})"
            )));
        }
    }

    let mut entries = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            // Composite Simpson over the nodes of u_i(theta) * U_j(theta).
            let g = |idx: usize| vals[i][idx] * anti[j][idx];
            let mut acc = g(0) + g(steps);
            for m in 1..steps {
                acc += if m % 2 == 1 { 4.0 * g(m) } else { 2.0 * g(m) };
            }
            let integral = acc * h / 3.0;
            if !integral.is_finite() {
                return Err(Error::numeric(format!(
                    "beta quadrature produced a non-finite value for entry ({i}, {j})"
                )));
            }
            entries[i][j] = integral / period;
        }
    }
    Ok(BetaMatrix {
        entries,
        period,
        steps,
    })
}

/// Coefficients for a set of dither pairs, signals ordered
/// `[u1_1, u2_1, u1_2, u2_2, ...]`, integrated over the common period `eps`.
pub fn beta_for_pairs(pairs: &[DitherPair], steps: usize) -> Result<BetaMatrix> {
    let eps = common_eps(pairs)?;
    let closures: Vec<Box<dyn Fn(f64) -> f64>> = pairs
        .iter()
        .flat_map(|p| {
            let p1 = *p;
            let p2 = *p;
            let u1: Box<dyn Fn(f64) -> f64> = Box::new(move |t| p1.eval(t).0);
            let u2: Box<dyn Fn(f64) -> f64> = Box::new(move |t| p2.eval(t).1);
            [u1, u2]
        })
        .collect();
    let refs: Vec<&dyn Fn(f64) -> f64> = closures.iter().map(|b| b.as_ref()).collect();
    beta_matrix(&refs, eps, steps)
}

/// Aggregate amplitude constant `nu = 2 sqrt(2 pi / eps) * sum_i sqrt(k_i)`.
pub fn nu(pairs: &[DitherPair]) -> Result<f64> {
    let eps = common_eps(pairs)?;
    let sum_sqrt_k: f64 = pairs.iter().map(|p| (p.k as f64).sqrt()).sum();
    Ok(2.0 * (2.0 * std::f64::consts::PI / eps).sqrt() * sum_sqrt_k)
}

/// The `eps`-independent part of `nu`: `2 sqrt(2 pi) * sum_i sqrt(k_i)`,
/// so that `nu = nu_coefficient / sqrt(eps)`.  The certificate thresholds are
/// phrased in terms of this coefficient.
pub fn nu_coefficient(k_list: &[u32]) -> Result<f64> {
    if k_list.is_empty() {
        return Err(Error::config("need at least one dither frequency index"));
    }
    if k_list.iter().any(|&k| k == 0) {
        return Err(Error::config("dither frequency indices must be >= 1"));
    }
    let sum_sqrt_k: f64 = k_list.iter().map(|&k| (k as f64).sqrt()).sum();
    Ok(2.0 * (2.0 * std::f64::consts::PI).sqrt() * sum_sqrt_k)
}

fn common_eps(pairs: &[DitherPair]) -> Result<f64> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::config("need at least one dither pair"))?;
    for p in pairs {
        if p.eps != first.eps {
            return Err(Error::config(format!(
                "all dither pairs must share the same eps, found {} and {}",
                first.eps, p.eps
            )));
        }
    }
    Ok(first.eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn eval_at_reference_times() {
        let p = DitherPair::new(1, 0.1).unwrap();
        let amp = 2.0 * (10.0 * PI).sqrt();
        let (u1, u2) = p.eval(0.0);
        assert!((u1 - amp).abs() < 1e-12);
        assert!(u2.abs() < 1e-12);

        // Half a period: cos flips sign, sin returns to ~0.
        let (u1, u2) = p.eval(0.05);
        assert!((u1 + amp).abs() < 1e-9);
        assert!(u2.abs() < 1e-9 * amp);

        // k = 2, eps = 1 at t = 1/8: phase is pi/2.
        let p = DitherPair::new(2, 1.0).unwrap();
        let (u1, u2) = p.eval(0.125);
        assert!(u1.abs() < 1e-12);
        assert!((u2 - 2.0 * (2.0 * PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constructor_rejects_bad_parameters() {
        assert!(DitherPair::new(0, 0.1).is_err());
        assert!(DitherPair::new(1, 0.0).is_err());
        assert!(DitherPair::new(1, -1.0).is_err());
        assert!(DitherPair::new(1, f64::INFINITY).is_err());
    }

    #[test]
    fn nu_reference_values() {
        let sqrt_2pi = (2.0 * PI).sqrt();
        let p = |k, eps| DitherPair::new(k, eps).unwrap();
        assert!((nu(&[p(1, 1.0)]).unwrap() - 2.0 * sqrt_2pi).abs() < 1e-12);
        assert!((nu(&[p(1, 0.01)]).unwrap() - 20.0 * sqrt_2pi).abs() < 1e-12);
        // k = {1, 4}: sum of square roots is 3.
        assert!((nu(&[p(1, 1.0), p(4, 1.0)]).unwrap() - 6.0 * sqrt_2pi).abs() < 1e-12);
    }

    #[test]
    fn nu_requires_common_eps() {
        let pairs = [
            DitherPair::new(1, 0.1).unwrap(),
            DitherPair::new(2, 0.2).unwrap(),
        ];
        assert!(nu(&pairs).is_err());
        assert!(beta_for_pairs(&pairs, 64).is_err());
    }

    #[test]
    fn nu_dominates_summed_amplitudes() {
        let pairs = [
            DitherPair::new(1, 0.05).unwrap(),
            DitherPair::new(3, 0.05).unwrap(),
        ];
        let nu = nu(&pairs).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..5000 {
            let t = 0.05 * i as f64 / 5000.0;
            let total: f64 = pairs
                .iter()
                .map(|p| {
                    let (u1, u2) = p.eval(t);
                    u1.abs() + u2.abs()
                })
                .sum();
            sup = sup.max(total);
        }
        assert!(nu >= sup - 1e-9, "nu = {nu}, sampled sup = {sup}");
    }

    #[test]
    fn beta_of_one_pair_is_normalized() {
        let pair = DitherPair::new(1, 0.1).unwrap();
        let b = beta_for_pairs(&[pair], BETA_STEPS).unwrap();
        assert!((b.entry(1, 0) - 1.0).abs() < 1e-9, "beta21 = {}", b.entry(1, 0));
        assert!((b.entry(0, 1) + 1.0).abs() < 1e-9, "beta12 = {}", b.entry(0, 1));
        assert!(b.entry(0, 0).abs() < 1e-9);
        assert!(b.entry(1, 1).abs() < 1e-9);
        assert_eq!(pair.beta21(), 1.0);
    }

    #[test]
    fn beta_normalization_holds_for_other_k_and_eps() {
        for (k, eps) in [(2, 0.1), (3, 1.0), (5, 0.37)] {
            let b = beta_for_pairs(&[DitherPair::new(k, eps).unwrap()], BETA_STEPS).unwrap();
            assert!((b.entry(1, 0) - 1.0).abs() < 1e-9, "k={k} eps={eps}");
        }
    }

    #[test]
    fn distinct_frequencies_decouple() {
        let pairs = [
            DitherPair::new(1, 0.1).unwrap(),
            DitherPair::new(2, 0.1).unwrap(),
        ];
        let b = beta_for_pairs(&pairs, BETA_STEPS).unwrap();
        for i in 0..2 {
            for j in 2..4 {
                assert!(b.entry(i, j).abs() < 1e-9, "entry ({i},{j}) = {}", b.entry(i, j));
                assert!(b.entry(j, i).abs() < 1e-9, "entry ({j},{i}) = {}", b.entry(j, i));
            }
        }
        assert!((b.entry(1, 0) - 1.0).abs() < 1e-9);
        assert!((b.entry(3, 2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unnormalized_pair_gives_half() {
        // sqrt(omega) (cos(omega t), sin(omega t)) has beta21 = 1/2 — the
        // classical gain of the plain sinusoidal pair.
        let omega = 20.0 * PI;
        let u1 = move |t: f64| omega.sqrt() * (omega * t).cos();
        let u2 = move |t: f64| omega.sqrt() * (omega * t).sin();
        let b = beta_matrix(&[&u1, &u2], 2.0 * PI / omega, BETA_STEPS).unwrap();
        assert!((b.entry(1, 0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn beta_is_antisymmetric_for_zero_mean_signals() {
        let pairs = [
            DitherPair::new(1, 0.2).unwrap(),
            DitherPair::new(4, 0.2).unwrap(),
        ];
        let b = beta_for_pairs(&pairs, BETA_STEPS).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (b.entry(i, j) + b.entry(j, i)).abs() < 1e-9,
                    "({i},{j}): {} vs {}",
                    b.entry(i, j),
                    b.entry(j, i)
                );
            }
        }
    }

    #[test]
    fn beta_rejects_biased_signals() {
        let biased = |t: f64| 1.0 + (2.0 * PI * t).cos();
        let ok = |t: f64| (2.0 * PI * t).sin();
        let err = beta_matrix(&[&biased, &ok], 1.0, 256);
        assert!(matches!(err, Err(Error::Model(_))));
    }

    #[test]
    fn beta_quadrature_is_converged_at_default_steps() {
        let pairs = [
            DitherPair::new(1, 0.1).unwrap(),
            DitherPair::new(2, 0.1).unwrap(),
        ];
        let coarse = beta_for_pairs(&pairs, BETA_STEPS / 2).unwrap();
        let fine = beta_for_pairs(&pairs, BETA_STEPS).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((coarse.entry(i, j) - fine.entry(i, j)).abs() < 1e-10);
            }
        }
    }
}
