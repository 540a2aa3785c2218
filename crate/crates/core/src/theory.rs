//! Theoretical quantities behind the tail results: contraction moments,
//! roots of the moment equations `E[g^alpha] = 1`, the closed-form
//! expectations of the logistic example, and the Wasserstein bound.
//!
//! Roots are found on a fixed Monte Carlo sample (common random numbers), so
//! `h(alpha) = log mean(g^alpha)` is a deterministic convex function with
//! `h(0) = 0` and `h'(0) = mean(log g)`. When the log-moment is negative and
//! some `g > 1`, `h` has exactly one positive root.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LogRegModel;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stats;

/// Upper end of the exponent search.
pub const EXPONENT_CAP: f64 = 100.0;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Samples per parallel Monte Carlo chunk; each chunk has its own stream.
const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionStats {
    /// Estimate of `E g` (e.g. `E||I - eta A||`).
    pub delta: f64,
    /// Estimate of `E log g`.
    pub log_moment: f64,
    pub mc_samples: usize,
    pub std_err_delta: f64,
    pub std_err_log: f64,
}

impl ContractionStats {
    pub fn from_values(g: &[f64]) -> Self {
        let logs: Vec<f64> = g.iter().map(|v| v.ln()).collect();
        let finite_logs = logs.iter().all(|v| v.is_finite());
        Self {
            delta: stats::mean(g),
            log_moment: stats::mean(&logs),
            mc_samples: g.len(),
            std_err_delta: stats::std_err(g),
            std_err_log: if finite_logs { stats::std_err(&logs) } else { f64::NAN },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub exponent: f64,
    /// `h(exponent)`.
    pub residual: f64,
    pub bracket: (f64, f64),
    pub mc_samples: usize,
}

/// Draws `mc` values with `draw`, in parallel chunks whose streams are
/// derived from `rng`. The result does not depend on the thread count.
pub fn mc_values<F>(mc: usize, rng: RngStream, draw: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let chunks = mc.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng.derive(c as u64).rng();
            let len = MC_CHUNK.min(mc - c * MC_CHUNK);
            (0..len).map(|_| draw(&mut r)).collect::<Vec<_>>()
        })
        .collect()
}

/// Spectral norm of `I - eta A` for symmetric `A` (row-major `d x d`).
pub fn spectral_norm_i_minus(eta: f64, a: &[f64], d: usize) -> f64 {
    if d == 1 {
        return (1.0 - eta * a[0]).abs();
    }
    let m = DMatrix::from_fn(d, d, |r, c| {
        let id = if r == c { 1.0 } else { 0.0 };
        id - eta * a[r * d + c]
    });
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// One draw of `||I - eta A||` with `A = (1/b) sum a a^T`, `a ~ N(0, sigma^2 I_d)`.
pub fn contraction_draw<R: Rng + ?Sized>(eta: f64, sigma: f64, b: usize, d: usize, rng: &mut R) -> f64 {
    if d == 1 {
        let mut s = 0.0;
        for _ in 0..b {
            let z: f64 = StandardNormal.sample(rng);
            s += z * z;
        }
        return (1.0 - eta * sigma * sigma * s / b as f64).abs();
    }
    let mut a = vec![0.0; d * d];
    let mut v = vec![0.0; d];
    for _ in 0..b {
        for x in v.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x = sigma * z;
        }
        for r in 0..d {
            for c in 0..d {
                a[r * d + c] += v[r] * v[c] / b as f64;
            }
        }
    }
    spectral_norm_i_minus(eta, &a, d)
}

/// The common random-number sample of `||I - eta A||`.
pub fn contraction_sample(eta: f64, sigma: f64, b: usize, d: usize, mc: usize, rng: RngStream) -> Result<Vec<f64>> {
    if !(eta > 0.0 && sigma > 0.0) || b == 0 || d == 0 {
        return Err(Error::invalid("eta, sigma, b and d must be positive"));
    }
    Ok(mc_values(mc, rng, |r| contraction_draw(eta, sigma, b, d, r)))
}

pub fn contraction_stats_quadratic(
    eta: f64,
    sigma: f64,
    b: usize,
    d: usize,
    mc: usize,
    rng: RngStream,
) -> Result<ContractionStats> {
    if mc < 100 {
        return Err(Error::invalid(format!("need at least 100 Monte Carlo samples, got {mc}")));
    }
    Ok(ContractionStats::from_values(&contraction_sample(eta, sigma, b, d, mc, rng)?))
}

/// `log mean(g^alpha)`, evaluated stably through the log-sum-exp of
/// `alpha log g`. Zero values contribute nothing to the sum.
pub fn log_moment_fn(log_g: &[f64], alpha: f64) -> f64 {
    let max = log_g
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let shift = alpha * max;
    let s: f64 = log_g
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| (alpha * v - shift).exp())
        .sum();
    shift + s.ln() - (log_g.len() as f64).ln()
}

/// Positive root of `log mean(g^alpha) = 0` over a fixed sample by bracket
/// doubling (capped at [`EXPONENT_CAP`]) and bisection to `|h| <= tol`.
pub fn solve_exponent_from_values(g: &[f64], tol: f64) -> Result<ExponentEstimate> {
    if g.is_empty() {
        return Err(Error::EmptyInput("no Monte Carlo values".into()));
    }
    if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("moment-equation values must be finite and non-negative"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let log_g: Vec<f64> = g.iter().map(|v| v.ln()).collect();
    let mean_log = log_g.iter().sum::<f64>() / g.len() as f64;
    if !(mean_log < 0.0) {
        return Err(Error::NotContractive {
            what: "mean log g",
            value: mean_log,
        });
    }
    if !g.iter().any(|&v| v > 1.0) {
        return Err(Error::NoRoot { cap: EXPONENT_CAP });
    }
    let h = |a: f64| log_moment_fn(&log_g, a);

    let mut lo = 0.0;
    let mut hi = 1.0f64.min(EXPONENT_CAP);
    while h(hi) < 0.0 {
        if hi >= EXPONENT_CAP {
            return Err(Error::NoRoot { cap: EXPONENT_CAP });
        }
        lo = hi;
        hi = (2.0 * hi).min(EXPONENT_CAP);
    }
    let mut mid = 0.5 * (lo + hi);
    let mut hm = h(mid);
    for _ in 0..400 {
        if hm.abs() <= tol || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if hm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        hm = h(mid);
    }
    Ok(ExponentEstimate {
        exponent: mid,
        residual: hm,
        bracket: (lo, hi),
        mc_samples: g.len(),
    })
}

/// Root of `E||I - eta A||^alpha = 1` on a common random-number sample.
pub fn solve_alpha_quadratic(
    eta: f64,
    sigma: f64,
    b: usize,
    d: usize,
    mc: usize,
    tol: f64,
    rng: RngStream,
) -> Result<ExponentEstimate> {
    let g = contraction_sample(eta, sigma, b, d, mc, rng)?;
    let stats = ContractionStats::from_values(&g);
    if !(stats.log_moment < 0.0) {
        return Err(Error::NotContractive {
            what: "E log||I - eta A||",
            value: stats.log_moment,
        });
    }
    solve_exponent_from_values(&g, tol)
}

/// Root of `E[g^alpha] = 1` for an arbitrary non-negative sampler; the
/// `mc` values are drawn once and reused for every `alpha`.
pub fn solve_exponent_general<F>(sampler: F, mc: usize, tol: f64, rng: RngStream) -> Result<ExponentEstimate>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let g = mc_values(mc, rng, sampler);
    solve_exponent_from_values(&g, tol)
}

/// `r(z) = |1 - gamma lambda|`.
pub fn logreg_r(_a: f64, lambda: f64, gamma: f64) -> f64 {
    (1.0 - gamma * lambda).abs()
}

/// `R(z) = max(|1 - gamma lambda|, |1 - gamma lambda - gamma a^2 / 4|)`.
#[allow(non_snake_case)]
pub fn logreg_R(a: f64, lambda: f64, gamma: f64) -> f64 {
    let base = 1.0 - gamma * lambda;
    base.abs().max((base - gamma * a * a / 4.0).abs())
}

/// `|1 - gamma lambda - gamma a^2 / 4|`, the curvature-extreme factor whose
/// mean the second closed form targets.
pub fn logreg_curvature_factor(a: f64, lambda: f64, gamma: f64) -> f64 {
    (1.0 - gamma * lambda - gamma * a * a / 4.0).abs()
}

fn check_gamma_mu(gamma: f64, mu: f64) -> Result<()> {
    if gamma > 0.0 && mu > 0.0 && gamma.is_finite() && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma and mu must be positive, got {gamma}, {mu}")))
    }
}

/// `E|1 - gamma lambda|` for `lambda ~ Exp(rate mu)`:
/// `(2 gamma e^{-mu/gamma} - gamma) / mu + 1`.
pub fn expected_r_closed_form(gamma: f64, mu: f64) -> Result<f64> {
    check_gamma_mu(gamma, mu)?;
    Ok((2.0 * gamma * (-mu / gamma).exp() - gamma) / mu + 1.0)
}

/// `2 sqrt(2) gamma / (mu sqrt(2 - sigma2 mu)) e^{-mu/gamma} - gamma (1/mu + sigma2/4) + 1`.
///
/// Integrates the `1 - gamma a^2/4 >= 0` branch over all of `a`; since the
/// dropped branch is dominated by it, the value bounds
/// `E|1 - gamma lambda - gamma a^2/4|` from above. Requires `sigma2 mu < 2`.
#[allow(non_snake_case)]
pub fn expected_R_closed_form(gamma: f64, mu: f64, sigma2: f64) -> Result<f64> {
    check_gamma_mu(gamma, mu)?;
    if !(sigma2 > 0.0) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    let s = sigma2 * mu;
    if s >= 2.0 {
        return Err(Error::StabilityViolation(s));
    }
    Ok(2.0 * std::f64::consts::SQRT_2 * gamma / (mu * (2.0 - s).sqrt()) * (-mu / gamma).exp()
        - gamma * (1.0 / mu + sigma2 / 4.0)
        + 1.0)
}

/// Which logistic contraction factor a sampler draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogRegFactor {
    /// `r(z)`
    Lower,
    /// `R(z)`
    Upper,
    /// `|1 - gamma lambda - gamma a^2/4|`
    Curvature,
}

/// Draws the chosen factor at a fresh `(a, lambda)` from the model.
pub fn logreg_factor_draw<R: Rng + ?Sized>(model: &LogRegModel, gamma: f64, factor: LogRegFactor, rng: &mut R) -> f64 {
    let (a, _, lambda) = model.draw_triple(rng);
    match factor {
        LogRegFactor::Lower => logreg_r(a, lambda, gamma),
        LogRegFactor::Upper => logreg_R(a, lambda, gamma),
        LogRegFactor::Curvature => logreg_curvature_factor(a, lambda, gamma),
    }
}

/// `c0 * eta * W / (1 - delta)`. For the strongly convex form, fold the
/// Lipschitz constant into `transport_distance`.
pub fn w1_bound_rhs(c0: f64, eta: f64, delta: f64, transport_distance: f64) -> Result<f64> {
    if !(delta < 1.0) {
        return Err(Error::NotContractive {
            what: "delta",
            value: delta,
        });
    }
    if !(c0 > 0.0 && eta >= 0.0 && transport_distance >= 0.0) {
        return Err(Error::invalid("c0 must be positive; eta and the distance non-negative"));
    }
    Ok(c0 * eta * transport_distance / (1.0 - delta))
}
