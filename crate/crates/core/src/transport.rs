//! Wasserstein distances between uniform empirical measures.
//!
//! One-dimensional distances are exact: sorted matching for equal sizes, a
//! quantile-function integral for unequal sizes, and an independent CDF
//! integral for `p = 1`. Multivariate `W_p` between equal-size point clouds
//! is solved exactly as an assignment problem, with exhaustive permutation
//! search as a brute-force reference for tiny instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::EmpiricalSample1D;
use crate::stats;

/// Largest cloud size for [`w1_exhaustive`].
pub const EXHAUSTIVE_CAP: usize = 10;
/// Largest cloud size for the assignment solver.
pub const ASSIGNMENT_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SortedMatching,
    QuantileIntegral,
    CdfIntegral,
    Assignment,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    pub distance: f64,
    pub p: f64,
    pub method: Method,
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("p must be a finite value >= 1, got {p}")))
    }
}

/// `W_p` between two empirical measures on the line.
pub fn wp_empirical_1d(x: &EmpiricalSample1D, y: &EmpiricalSample1D, p: f64) -> Result<TransportResult> {
    check_p(p)?;
    let (xs, ys) = (x.values(), y.values());
    if xs.len() == ys.len() {
        let m = xs.len() as f64;
        let s: f64 = xs.iter().zip(ys).map(|(a, b)| (a - b).abs().powf(p)).sum();
        return Ok(TransportResult {
            distance: (s / m).powf(1.0 / p),
            p,
            method: Method::SortedMatching,
        });
    }
    // Quantile functions are step functions with jumps at i/m and j/k; walk
    // the merged jump grid in units of 1/(m k) to keep breakpoints exact.
    let (m, k) = (xs.len() as u128, ys.len() as u128);
    let total = (m * k) as f64;
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0u128);
    let mut acc = 0.0;
    while i < xs.len() && j < ys.len() {
        let nx = (i as u128 + 1) * k;
        let ny = (j as u128 + 1) * m;
        let next = nx.min(ny);
        acc += (next - pos) as f64 / total * (xs[i] - ys[j]).abs().powf(p);
        pos = next;
        if nx == next {
            i += 1;
        }
        if ny == next {
            j += 1;
        }
    }
    Ok(TransportResult {
        distance: acc.powf(1.0 / p),
        p,
        method: Method::QuantileIntegral,
    })
}

/// `W_1` as `int |F_x - F_y|` over the union of breakpoints.
pub fn w1_cdf_integral(x: &EmpiricalSample1D, y: &EmpiricalSample1D) -> TransportResult {
    let (xs, ys) = (x.values(), y.values());
    let (m, k) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut acc = 0.0;
    let mut t = xs[0].min(ys[0]);
    while i < xs.len() || j < ys.len() {
        let nx = xs.get(i).copied().unwrap_or(f64::INFINITY);
        let ny = ys.get(j).copied().unwrap_or(f64::INFINITY);
        let next = nx.min(ny);
        acc += (i as f64 / m - j as f64 / k).abs() * (next - t);
        t = next;
        while i < xs.len() && xs[i] == t {
            i += 1;
        }
        while j < ys.len() && ys[j] == t {
            j += 1;
        }
    }
    TransportResult {
        distance: acc,
        p: 1.0,
        method: Method::CdfIntegral,
    }
}

fn check_clouds(x: &[Vec<f64>], y: &[Vec<f64>], cap: usize) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(format!(
            "point clouds must be non-empty and of equal size, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() > cap {
        return Err(Error::invalid(format!("cloud size {} exceeds the cap {cap}", x.len())));
    }
    let d = x[0].len();
    if x.iter().chain(y).any(|r| r.len() != d) {
        return Err(Error::invalid("all points must share one dimension"));
    }
    Ok(d)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

fn cost_matrix(x: &[Vec<f64>], y: &[Vec<f64>], p: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| y.iter().map(|b| euclid(a, b).powf(p)).collect())
        .collect()
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials, `O(m^3)`). Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut owner = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let cur = cost[r - 1][c - 1] - u[r] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for c in 1..=n {
        assignment[owner[c] - 1] = c - 1;
    }
    assignment
}

/// Exact `W_p` between two equal-size uniform point clouds, via assignment.
pub fn wp_assignment(x: &[Vec<f64>], y: &[Vec<f64>], p: f64) -> Result<TransportResult> {
    check_p(p)?;
    check_clouds(x, y, ASSIGNMENT_CAP)?;
    let cost = cost_matrix(x, y, p);
    let assignment = hungarian(&cost);
    let total: f64 = assignment.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    Ok(TransportResult {
        distance: (total / x.len() as f64).powf(1.0 / p),
        p,
        method: Method::Assignment,
    })
}

/// Exact `W_1` between equal-size point clouds (`m <= 200`).
pub fn w1_assignment_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<TransportResult> {
    wp_assignment(x, y, 1.0)
}

/// `W_1` by trying every permutation (`m <= 10`).
pub fn w1_exhaustive(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<TransportResult> {
    check_clouds(x, y, EXHAUSTIVE_CAP)?;
    let cost = cost_matrix(x, y, 1.0);
    let m = x.len();
    let mut perm: Vec<usize> = (0..m).collect();
    let eval = |perm: &[usize]| perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>();
    let mut best = eval(&perm);
    // Heap's algorithm, iterative form.
    let mut counters = vec![0usize; m];
    let mut i = 1;
    while i < m {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            best = best.min(eval(&perm));
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok(TransportResult {
        distance: best / m as f64,
        p: 1.0,
        method: Method::Exhaustive,
    })
}

/// Sorted Euclidean norms of the points.
pub fn norm_project(points: &[Vec<f64>]) -> Result<EmpiricalSample1D> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to project".into()));
    }
    EmpiricalSample1D::new(points.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `(log n, log distance)`.
    pub points: Vec<(f64, f64)>,
}

impl RateFit {
    /// `{"grid": [...], "distances": [...], "slope", "intercept", "r2"}`.
    pub fn to_json(&self) -> serde_json::Value {
        let grid: Vec<u64> = self.points.iter().map(|p| p.0.exp().round() as u64).collect();
        let distances: Vec<f64> = self.points.iter().map(|p| p.1.exp()).collect();
        serde_json::json!({
            "grid": grid,
            "distances": distances,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
        })
    }
}

/// Least-squares slope of `log distance` against `log n`.
pub fn fit_rate(n_grid: &[usize], distances: &[f64]) -> Result<RateFit> {
    if n_grid.len() != distances.len() || n_grid.len() < 3 {
        return Err(Error::invalid("need at least three (n, distance) pairs"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::invalid("n grid must be positive and strictly increasing"));
    }
    if let Some(bad) = distances.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::invalid(format!("distances must be positive, got {bad}")));
    }
    let xs: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let fit = stats::fit_line(&xs, &ys).expect("distinct grid points");
    Ok(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        points: xs.into_iter().zip(ys).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> EmpiricalSample1D {
        EmpiricalSample1D::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_samples_have_zero_distance() {
        let x = s(&[0.3, -1.0, 2.0]);
        assert_eq!(wp_empirical_1d(&x, &x, 1.0).unwrap().distance, 0.0);
        assert_eq!(wp_empirical_1d(&x, &x, 2.5).unwrap().distance, 0.0);
        assert_eq!(w1_cdf_integral(&x, &x).distance, 0.0);
    }

    #[test]
    fn single_atom_translation() {
        assert_eq!(wp_empirical_1d(&s(&[0.0]), &s(&[1.0]), 1.0).unwrap().distance, 1.0);
        assert_eq!(w1_cdf_integral(&s(&[0.0]), &s(&[1.0])).distance, 1.0);
    }

    #[test]
    fn sorted_matching_pairs() {
        let r = wp_empirical_1d(&s(&[0.0, 2.0]), &s(&[1.0, 3.0]), 1.0).unwrap();
        assert_eq!(r.distance, 1.0);
        assert_eq!(r.method, Method::SortedMatching);
    }

    #[test]
    fn unequal_sizes_quantile_integral() {
        // Quantile of {0, 1} vs {0, 0.5, 1}: |0-0| on [0,1/3], |0-0.5| on
        // [1/3,1/2], |1-0.5| on [1/2,2/3], 0 after. W1 = 1/6 * 0.5 * 2.
        let r = wp_empirical_1d(&s(&[0.0, 1.0]), &s(&[0.0, 0.5, 1.0]), 1.0).unwrap();
        assert!((r.distance - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.method, Method::QuantileIntegral);
        let c = w1_cdf_integral(&s(&[0.0, 1.0]), &s(&[0.0, 0.5, 1.0]));
        assert!((c.distance - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn p_below_one_rejected() {
        assert!(wp_empirical_1d(&s(&[0.0]), &s(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn vertical_translation_in_plane() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let y = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!((w1_assignment_oracle(&x, &y).unwrap().distance - 1.0).abs() < 1e-15);
        assert!((w1_exhaustive(&x, &y).unwrap().distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn permuted_rows_are_free() {
        let x = vec![vec![0.0, 1.0, 2.0], vec![3.0, -1.0, 0.5], vec![1.0, 1.0, 1.0]];
        let y = vec![x[2].clone(), x[0].clone(), x[1].clone()];
        assert_eq!(w1_assignment_oracle(&x, &y).unwrap().distance, 0.0);
    }

    #[test]
    fn cloud_argument_errors() {
        let x = vec![vec![0.0]];
        let y = vec![vec![0.0], vec![1.0]];
        assert!(w1_assignment_oracle(&x, &y).is_err());
        let big: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64]).collect();
        assert!(w1_exhaustive(&big, &big).is_err());
        let huge: Vec<Vec<f64>> = (0..201).map(|i| vec![i as f64]).collect();
        assert!(w1_assignment_oracle(&huge, &huge).is_err());
    }

    #[test]
    fn hungarian_small_known() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn norm_projection() {
        assert_eq!(norm_project(&[vec![3.0, 4.0]]).unwrap().values(), &[5.0]);
        assert!(norm_project(&vec![vec![0.0; 3]; 4]).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_power_law_rate() {
        let grid = [100, 1000, 10_000, 100_000];
        let d: Vec<f64> = grid.iter().map(|&n| 3.0 * (n as f64).powf(-0.5)).collect();
        let f = fit_rate(&grid, &d).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-9);
        assert!(f.r2 >= 1.0 - 1e-9);
        let js = f.to_json();
        assert_eq!(js["grid"], serde_json::json!([100, 1000, 10_000, 100_000]));
        assert!((js["distances"][0].as_f64().unwrap() - 0.3).abs() < 1e-12);
        let flat = fit_rate(&grid, &[0.2; 4]).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!(fit_rate(&grid[..2], &d[..2]).is_err());
        assert!(fit_rate(&grid, &[0.1, 0.0, 0.1, 0.1]).is_err());
    }
}
