//! Tail-index estimation and tail diagnostics for chain ensembles.
//!
//! The estimator is the block log-moment estimator: with `m = k1 * k2`
//! values `X_i` split into `k1` consecutive blocks of `k2` and block sums
//! `Y_j`,
//!
//! ```text
//! 1 / alpha_hat = (mean_j log|Y_j| - mean_i log|X_i|) / log k2
//! ```
//!
//! Symmetric stable laws satisfy `Y ~ k2^(1/alpha) X` in distribution, which
//! is what makes the log-difference identify `alpha`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sample::EmpiricalSample1D;
use crate::sgd::ChainEnsemble;
use crate::stats::{self, LineFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailIndexEstimate {
    pub alpha_hat: f64,
    pub k1: usize,
    pub k2: usize,
    pub m_used: usize,
}

/// Drops diverged chains, centres every coordinate on its ensemble mean and
/// pools all coordinates of all chains into one sorted sample.
pub fn pool_and_center(ensemble: &ChainEnsemble) -> Result<EmpiricalSample1D> {
    let rows: Vec<&[f64]> = ensemble.stable_rows().collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("every chain in the ensemble diverged".into()));
    }
    let d = ensemble.d;
    let mut means = vec![0.0; d];
    for r in &rows {
        for (m, v) in means.iter_mut().zip(*r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= rows.len() as f64);
    let pooled = rows
        .iter()
        .flat_map(|r| r.iter().zip(&means).map(|(v, m)| v - m))
        .collect();
    EmpiricalSample1D::new(pooled)
}

/// `k1 = k2 = floor(sqrt(m))`.
pub fn default_blocks(m: usize) -> (usize, usize) {
    let k = (m as f64).sqrt().floor() as usize;
    (k, k)
}

/// Block estimator on the first `k1 * k2` entries of a random permutation
/// of `sample`. Zero entries (and zero block sums) are left out of their
/// log-means.
pub fn estimate_alpha<R: Rng + ?Sized>(
    sample: &EmpiricalSample1D,
    k1: usize,
    k2: usize,
    rng: &mut R,
) -> Result<TailIndexEstimate> {
    if k1 == 0 || k2 < 2 {
        return Err(Error::invalid(format!("need k1 >= 1 and k2 >= 2, got k1={k1}, k2={k2}")));
    }
    let m = k1
        .checked_mul(k2)
        .ok_or_else(|| Error::invalid("k1 * k2 overflows"))?;
    if sample.len() < m {
        return Err(Error::invalid(format!(
            "sample has {} entries, the block layout needs {m}",
            sample.len()
        )));
    }
    let mut values = sample.values().to_vec();
    let (chosen, _) = values.partial_shuffle(rng, m);
    block_estimate(chosen, k1, k2)
}

/// Same estimator without the permutation, on `values` in the given order.
pub fn block_estimate(values: &[f64], k1: usize, k2: usize) -> Result<TailIndexEstimate> {
    let m = k1 * k2;
    let values = &values[..m];
    let (sum_x, n_x) = log_abs_sum(values.iter().copied());
    let (sum_y, n_y) = log_abs_sum(values.chunks_exact(k2).map(|c| c.iter().sum::<f64>()));
    if n_x == 0 || n_y == 0 {
        return Err(Error::DegenerateSample("all sample values are zero".into()));
    }
    let inv_alpha = (sum_y / n_y as f64 - sum_x / n_x as f64) / (k2 as f64).ln();
    let alpha_hat = 1.0 / inv_alpha;
    if !(alpha_hat.is_finite() && alpha_hat > 0.0) {
        return Err(Error::DegenerateSample(format!(
            "block log-moment difference {inv_alpha} gives no positive tail index"
        )));
    }
    Ok(TailIndexEstimate {
        alpha_hat,
        k1,
        k2,
        m_used: m,
    })
}

fn log_abs_sum(values: impl Iterator<Item = f64>) -> (f64, usize) {
    values
        .filter(|v| *v != 0.0)
        .fold((0.0, 0), |(s, n), v| (s + v.abs().ln(), n + 1))
}

/// Estimator with the default square block layout.
pub fn estimate_alpha_default<R: Rng + ?Sized>(sample: &EmpiricalSample1D, rng: &mut R) -> Result<TailIndexEstimate> {
    let (k1, k2) = default_blocks(sample.len());
    estimate_alpha(sample, k1, k2, rng)
}

/// Empirical `P(X > t)` at each grid point.
pub fn tail_ccdf(sample: &EmpiricalSample1D, t_grid: &[f64]) -> Vec<(f64, f64)> {
    let m = sample.len() as f64;
    t_grid
        .iter()
        .map(|&t| {
            let at_or_below = sample.values().partition_point(|&v| v <= t);
            (t, (sample.len() - at_or_below) as f64 / m)
        })
        .collect()
}

/// Least-squares line through the log-log empirical CCDF of the largest
/// `upper_fraction` of the positive values. The slope estimates `-alpha`.
pub fn ccdf_tail_slope(sample: &EmpiricalSample1D, upper_fraction: f64) -> Option<LineFit> {
    let v = sample.values();
    let m = v.len();
    let k = ((m as f64) * upper_fraction).floor() as usize;
    if k < 3 {
        return None;
    }
    let mut xs = Vec::with_capacity(k);
    let mut ys = Vec::with_capacity(k);
    // Order statistic m-j (0-based) has j values strictly above it.
    for j in 1..k {
        let x = v[m - 1 - j];
        if x > 0.0 {
            xs.push(x.ln());
            ys.push((j as f64 / m as f64).ln());
        }
    }
    stats::fit_line(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostics {
    pub ccdf_points: Vec<(f64, f64)>,
    /// `(theoretical Gaussian quantile, sample quantile)`.
    pub qq_points: Vec<(f64, f64)>,
    /// `(log bin centre, log count)` over non-empty logarithmic bins.
    pub loglog_hist: Vec<(f64, f64)>,
}

impl TailDiagnostics {
    /// Three CSV sections (`# ccdf`, `# qq`, `# loglog`), each with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# ccdf\nt,probability")?;
        for (t, p) in &self.ccdf_points {
            writeln!(w, "{t},{p}")?;
        }
        writeln!(w, "# qq\ntheoretical,sample")?;
        for (a, b) in &self.qq_points {
            writeln!(w, "{a},{b}")?;
        }
        writeln!(w, "# loglog\nlog_center,log_count")?;
        for (a, b) in &self.loglog_hist {
            writeln!(w, "{a},{b}")?;
        }
        Ok(())
    }
}

/// Maximum number of QQ points emitted.
const QQ_LEVELS: usize = 199;

/// QQ points of `sample` against the moment-matched Gaussian.
pub fn gaussian_qq(sample: &EmpiricalSample1D) -> Result<Vec<(f64, f64)>> {
    let mean = sample.mean();
    let sd = stats::std_dev(sample.values());
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::DegenerateSample(e.to_string()))?;
    let levels = QQ_LEVELS.min(sample.len());
    Ok((0..levels)
        .map(|j| {
            let p = (j as f64 + 0.5) / levels as f64;
            (normal.inverse_cdf(p), sample.quantile(p))
        })
        .collect())
}

/// Logarithmically spaced edges between `lo > 0` and `hi`.
fn log_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..=bins)
        .map(|i| {
            if i == bins {
                hi
            } else {
                (a + (b - a) * i as f64 / bins as f64).exp()
            }
        })
        .collect()
}

/// Non-empty logarithmic histogram bins of the positive values.
pub fn loglog_histogram(values: &EmpiricalSample1D, bins: usize) -> Result<Vec<(f64, f64)>> {
    let positive: Vec<f64> = values.values().iter().copied().filter(|v| *v > 0.0).collect();
    let (Some(&lo), Some(&hi)) = (positive.first(), positive.last()) else {
        return Err(Error::DegenerateSample("no positive values".into()));
    };
    if !(hi > lo) {
        return Err(Error::DegenerateSample("all positive values coincide".into()));
    }
    let edges = log_edges(lo, hi, bins);
    let mut counts = vec![0usize; bins];
    for v in positive {
        let i = edges[1..].partition_point(|&e| e < v).min(bins - 1);
        counts[i] += 1;
    }
    Ok(counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| ((edges[i] * edges[i + 1]).sqrt().ln(), (c as f64).ln()))
        .collect())
}

/// CCDF, Gaussian QQ and log-log histogram for an ensemble. QQ uses the
/// pooled centred coordinates; CCDF and histogram use the chain norms.
pub fn tail_diagnostics(ensemble: &ChainEnsemble, bins: usize) -> Result<TailDiagnostics> {
    if bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    let stable = ensemble.chains() - ensemble.diverged_count();
    if stable < 10 {
        return Err(Error::invalid(format!("need at least 10 non-diverged chains, have {stable}")));
    }
    let pooled = pool_and_center(ensemble)?;
    let qq_points = gaussian_qq(&pooled)?;
    let norms = ensemble.norm_sample()?;
    let loglog_hist = loglog_histogram(&norms, bins)?;
    let lo = norms.values().iter().copied().find(|v| *v > 0.0).unwrap_or(0.0);
    let grid = log_edges(lo, norms.max(), bins);
    Ok(TailDiagnostics {
        ccdf_points: tail_ccdf(&norms, &grid),
        qq_points,
        loglog_hist,
    })
}
