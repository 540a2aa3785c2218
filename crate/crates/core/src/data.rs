//! Seeded generation of regression datasets, minibatch draws and symmetric
//! stable samples.
//!
//! Linear regression data follows the Gaussian model
//! `x_true ~ N(0, sigma_x^2 I)`, `a_i ~ N(0, sigma^2 I)`,
//! `q_i | a_i ~ N(a_i^T x_true, sigma_y^2)`. Logistic data draws
//! `a ~ N(0, sigma2)`, a rate-`mu` exponential regulariser `lambda`, and a
//! label `y ~ Bernoulli(sigmoid(a * x_gen))`.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sample::EmpiricalSample1D;

/// Default cap on the number of subsets [`enumerate_minibatch_pairs`] will
/// materialise.
pub const DEFAULT_ENUMERATION_CAP: usize = 100_000;

/// One data point as seen by a loss. `target` is `q` for regression and the
/// 0/1 label for logistic data; `lambda` is zero for regression data.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub features: &'a [f64],
    pub target: f64,
    pub lambda: f64,
}

/// A finite dataset indexed `0..len()`.
pub trait Dataset: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn point(&self, i: usize) -> Point<'_>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A law that can be sampled for fresh (online) data points.
pub trait PointGenerator: Sync {
    fn dim(&self) -> usize;

    /// Writes the features into `features` and returns `(target, lambda)`.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, features: &mut [f64]) -> (f64, f64);
}

fn normal<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    scale * z
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be non-negative and finite, got {v}")))
    }
}

/// Gaussian linear-regression law with a fixed ground-truth parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegModel {
    pub x_true: Vec<f64>,
    pub sigma: f64,
    pub sigma_y: f64,
}

impl LinRegModel {
    pub fn new(x_true: Vec<f64>, sigma: f64, sigma_y: f64) -> Result<Self> {
        if x_true.is_empty() {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        check_positive("sigma", sigma)?;
        check_nonnegative("sigma_y", sigma_y)?;
        Ok(Self {
            x_true,
            sigma,
            sigma_y,
        })
    }

    /// Draws `x_true ~ N(0, sigma_x^2 I_d)` and wraps it in a model.
    pub fn with_random_truth<R: Rng + ?Sized>(
        d: usize,
        sigma: f64,
        sigma_x: f64,
        sigma_y: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_nonnegative("sigma_x", sigma_x)?;
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let x_true = (0..d).map(|_| normal(rng, sigma_x)).collect();
        Self::new(x_true, sigma, sigma_y)
    }
}

impl PointGenerator for LinRegModel {
    fn dim(&self) -> usize {
        self.x_true.len()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, features: &mut [f64]) -> (f64, f64) {
        let mut mean = 0.0;
        for (f, x) in features.iter_mut().zip(&self.x_true) {
            *f = normal(rng, self.sigma);
            mean += *f * x;
        }
        (mean + normal(rng, self.sigma_y), 0.0)
    }
}

/// Synthetic linear-regression dataset. Features are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegDataset {
    pub x_true: Vec<f64>,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub sigma: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl LinRegDataset {
    /// Builds a dataset from explicit rows, e.g. for hand-checked examples.
    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        if rows.is_empty() || rows.len() != targets.len() {
            return Err(Error::invalid("need at least one row and one target per row"));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows must share a positive dimension"));
        }
        let features: Vec<f64> = rows.iter().flatten().copied().collect();
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset entries must be finite"));
        }
        Ok(Self {
            x_true: vec![0.0; d],
            features,
            targets,
            sigma: 1.0,
            sigma_x: 0.0,
            sigma_y: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn d(&self) -> usize {
        self.x_true.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.features[i * d..(i + 1) * d]
    }

    /// The generating law with this dataset's ground truth.
    pub fn model(&self) -> LinRegModel {
        LinRegModel {
            x_true: self.x_true.clone(),
            sigma: self.sigma,
            sigma_y: self.sigma_y,
        }
    }

    /// Header `f0..f{d-1},target`, one row per data point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.d())
            .map(|j| format!("f{j}"))
            .chain(std::iter::once("target".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut cells: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            cells.push(self.targets[i].to_string());
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

impl Dataset for LinRegDataset {
    fn len(&self) -> usize {
        self.n()
    }

    fn dim(&self) -> usize {
        self.d()
    }

    fn point(&self, i: usize) -> Point<'_> {
        Point {
            features: self.row(i),
            target: self.targets[i],
            lambda: 0.0,
        }
    }
}

/// Draws a linear-regression dataset: the ground truth first, then each row's
/// features followed by its target.
///
/// `sigma` must be positive; `sigma_x` and `sigma_y` may be zero, which pins
/// the ground truth at the origin or makes the targets noiseless.
pub fn gen_linreg_dataset(
    d: usize,
    n: usize,
    sigma: f64,
    sigma_x: f64,
    sigma_y: f64,
    rng: RngStream,
) -> Result<LinRegDataset> {
    if d == 0 || n == 0 {
        return Err(Error::invalid(format!("d and n must be positive, got d={d}, n={n}")));
    }
    let mut rng = rng.rng();
    let model = LinRegModel::with_random_truth(d, sigma, sigma_x, sigma_y, &mut rng)?;
    Ok(sample_linreg_dataset(&model, n, sigma_x, &mut rng))
}

/// Draws `n` rows from a fixed model.
pub fn sample_linreg_dataset<R: Rng + ?Sized>(
    model: &LinRegModel,
    n: usize,
    sigma_x: f64,
    rng: &mut R,
) -> LinRegDataset {
    let d = model.dim();
    let mut features = vec![0.0; n * d];
    let mut targets = Vec::with_capacity(n);
    for row in features.chunks_exact_mut(d) {
        targets.push(model.draw(rng, row).0);
    }
    LinRegDataset {
        x_true: model.x_true.clone(),
        features,
        targets,
        sigma: model.sigma,
        sigma_x,
        sigma_y: model.sigma_y,
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// One-dimensional logistic law with exponential regularisation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub sigma2: f64,
    /// Rate of the exponential law of `lambda` (mean `1 / mu_rate`).
    pub mu_rate: f64,
    pub x_gen: f64,
}

impl LogRegModel {
    pub fn new(sigma2: f64, mu_rate: f64, x_gen: f64) -> Result<Self> {
        check_positive("sigma2", sigma2)?;
        check_positive("mu", mu_rate)?;
        if !x_gen.is_finite() {
            return Err(Error::invalid("x_gen must be finite"));
        }
        Ok(Self {
            sigma2,
            mu_rate,
            x_gen,
        })
    }

    /// Returns `(a, y, lambda)`.
    pub fn draw_triple<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64, f64) {
        let a = normal(rng, self.sigma2.sqrt());
        let lambda = Exp::new(self.mu_rate).expect("validated rate").sample(rng);
        let y = if rng.random::<f64>() < sigmoid(a * self.x_gen) {
            1.0
        } else {
            0.0
        };
        (a, y, lambda)
    }
}

impl PointGenerator for LogRegModel {
    fn dim(&self) -> usize {
        1
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, features: &mut [f64]) -> (f64, f64) {
        let (a, y, lambda) = self.draw_triple(rng);
        features[0] = a;
        (y, lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegDataset {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub sigma2: f64,
    pub mu_rate: f64,
    pub x_gen: f64,
}

impl LogRegDataset {
    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn model(&self) -> LogRegModel {
        LogRegModel {
            sigma2: self.sigma2,
            mu_rate: self.mu_rate,
            x_gen: self.x_gen,
        }
    }

    /// Header `f0,label,lambda`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "f0,label,lambda")?;
        for i in 0..self.n() {
            writeln!(w, "{},{},{}", self.features[i], self.labels[i], self.lambdas[i])?;
        }
        Ok(())
    }
}

impl Dataset for LogRegDataset {
    fn len(&self) -> usize {
        self.n()
    }

    fn dim(&self) -> usize {
        1
    }

    fn point(&self, i: usize) -> Point<'_> {
        Point {
            features: std::slice::from_ref(&self.features[i]),
            target: self.labels[i],
            lambda: self.lambdas[i],
        }
    }
}

pub fn gen_logreg_dataset(
    n: usize,
    sigma2: f64,
    mu_rate: f64,
    x_gen: f64,
    rng: RngStream,
) -> Result<LogRegDataset> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let model = LogRegModel::new(sigma2, mu_rate, x_gen)?;
    Ok(sample_logreg_dataset(&model, n, &mut rng.rng()))
}

pub fn sample_logreg_dataset<R: Rng + ?Sized>(model: &LogRegModel, n: usize, rng: &mut R) -> LogRegDataset {
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, y, l) = model.draw_triple(rng);
        features.push(a);
        labels.push(y);
        lambdas.push(l);
    }
    LogRegDataset {
        features,
        labels,
        lambdas,
        sigma2: model.sigma2,
        mu_rate: model.mu_rate,
        x_gen: model.x_gen,
    }
}

/// Minibatch averages `A = (1/b) sum a_j a_j^T` and `b = (1/b) sum a_j q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchPair {
    pub d: usize,
    /// Row-major `d x d`.
    pub a_mat: Vec<f64>,
    pub b_vec: Vec<f64>,
    pub indices: Vec<usize>,
}

impl MinibatchPair {
    /// Assembles the pair for the given rows of `data`.
    pub fn from_indices<D: Dataset + ?Sized>(data: &D, indices: Vec<usize>) -> Self {
        let d = data.dim();
        let mut pair = Self {
            d,
            a_mat: vec![0.0; d * d],
            b_vec: vec![0.0; d],
            indices: Vec::new(),
        };
        pair.accumulate(indices.iter().map(|&i| data.point(i)));
        pair.indices = indices;
        pair
    }

    /// Assembles the pair from explicit feature rows and targets.
    pub fn from_points<'a>(d: usize, points: impl IntoIterator<Item = Point<'a>>) -> Self {
        let mut pair = Self {
            d,
            a_mat: vec![0.0; d * d],
            b_vec: vec![0.0; d],
            indices: Vec::new(),
        };
        pair.accumulate(points);
        pair
    }

    /// Re-assembles `self` in place from new points, keeping its buffers.
    pub fn from_points_reusing<'a>(mut self, points: impl IntoIterator<Item = Point<'a>>) -> Self {
        self.accumulate(points);
        self
    }

    fn accumulate<'a>(&mut self, points: impl IntoIterator<Item = Point<'a>>) {
        let d = self.d;
        self.a_mat.iter_mut().for_each(|v| *v = 0.0);
        self.b_vec.iter_mut().for_each(|v| *v = 0.0);
        let mut count = 0usize;
        for p in points {
            let a = p.features;
            for r in 0..d {
                for c in r..d {
                    self.a_mat[r * d + c] += a[r] * a[c];
                }
                self.b_vec[r] += a[r] * p.target;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        for r in 0..d {
            for c in r..d {
                let v = self.a_mat[r * d + c] * inv;
                self.a_mat[r * d + c] = v;
                self.a_mat[c * d + r] = v;
            }
            self.b_vec[r] *= inv;
        }
    }

    pub fn a(&self, r: usize, c: usize) -> f64 {
        self.a_mat[r * self.d + c]
    }
}

/// Draws `b` distinct row indices uniformly and assembles their pair.
pub fn sample_minibatch_pair<D: Dataset + ?Sized, R: Rng + ?Sized>(
    data: &D,
    b: usize,
    rng: &mut R,
) -> Result<MinibatchPair> {
    let n = data.len();
    if b == 0 || b > n {
        return Err(Error::invalid(format!("batch size b={b} must lie in 1..={n}")));
    }
    let indices = sample_indices(n, b, rng);
    Ok(MinibatchPair::from_indices(data, indices))
}

/// `b` distinct indices from `0..n`, uniformly without replacement, in
/// ascending order.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Vec<usize> {
    if b == n {
        return (0..n).collect();
    }
    let mut idx = index::sample(rng, n, b).into_vec();
    idx.sort_unstable();
    idx
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Every size-`b` subset of the rows, in lexicographic order of indices.
pub fn enumerate_minibatch_pairs<D: Dataset + ?Sized>(
    data: &D,
    b: usize,
    cap: usize,
) -> Result<Vec<MinibatchPair>> {
    let n = data.len();
    if b == 0 || b > n {
        return Err(Error::invalid(format!("batch size b={b} must lie in 1..={n}")));
    }
    let count = binomial(n, b);
    if count > cap as u128 {
        return Err(Error::Capacity { n, b, count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut subset: Vec<usize> = (0..b).collect();
    loop {
        out.push(MinibatchPair::from_indices(data, subset.clone()));
        // Advance to the next combination.
        let mut i = b;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if subset[i] < n - b + i {
                break;
            }
        }
        subset[i] += 1;
        for j in i + 1..b {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// One symmetric standard `alpha`-stable draw (characteristic function
/// `exp(-|t|^alpha)`) by the Chambers-Mallows-Stuck transform.
pub fn stable_draw<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.sample(Open01);
        let v = PI * (u - 0.5);
        let x = if alpha == 1.0 {
            v.tan()
        } else {
            let w: f64 = rng.sample(Exp1);
            (alpha * v).sin() / v.cos().powf(1.0 / alpha)
                * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
        };
        if x.is_finite() {
            return x;
        }
    }
}

/// `m` i.i.d. symmetric standard `alpha`-stable draws, sorted.
pub fn sample_stable(alpha: f64, m: usize, rng: RngStream) -> Result<EmpiricalSample1D> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if m == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    let mut rng = rng.rng();
    let values = (0..m).map(|_| stable_draw(alpha, &mut rng)).collect();
    EmpiricalSample1D::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn linreg_regeneration_is_bit_identical() {
        let a = gen_linreg_dataset(1, 3, 1.0, 3.0, 3.0, RngStream::new(11, 0)).unwrap();
        let b = gen_linreg_dataset(1, 3, 1.0, 3.0, 3.0, RngStream::new(11, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 3);
        assert_eq!(a.d(), 1);
    }

    #[test]
    fn zero_prior_variance_pins_truth() {
        let ds = gen_linreg_dataset(2, 1000, 1.0, 0.0, 1.0, RngStream::new(5, 0)).unwrap();
        assert_eq!(ds.x_true, vec![0.0, 0.0]);
        // Targets are pure noise: their correlation with each feature is small.
        let m = stats::mean(&ds.targets);
        assert!(m.abs() < 4.0 / (1000f64).sqrt());
    }

    #[test]
    fn feature_variance_matches_sigma() {
        let ds = gen_linreg_dataset(1, 100_000, 2.0, 1.0, 1.0, RngStream::new(3, 0)).unwrap();
        let v = stats::variance(&ds.features);
        // Var of the sample variance of a Gaussian is 2 sigma^4 / (n-1).
        let se = (2.0 * 16.0 / 99_999.0f64).sqrt();
        assert!((v - 4.0).abs() < 3.0 * se, "variance {v}");
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(gen_linreg_dataset(0, 3, 1.0, 1.0, 1.0, RngStream::new(0, 0)).is_err());
        assert!(gen_linreg_dataset(1, 0, 1.0, 1.0, 1.0, RngStream::new(0, 0)).is_err());
        assert!(gen_linreg_dataset(1, 3, 0.0, 1.0, 1.0, RngStream::new(0, 0)).is_err());
        assert!(gen_linreg_dataset(1, 3, 1.0, -1.0, 1.0, RngStream::new(0, 0)).is_err());
        assert!(gen_logreg_dataset(3, 0.0, 1.0, 0.0, RngStream::new(0, 0)).is_err());
        assert!(gen_logreg_dataset(3, 1.0, -1.0, 0.0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn exponential_rate_parameterisation() {
        let ds = gen_logreg_dataset(100_000, 1.0, 0.1, 1.0, RngStream::new(9, 0)).unwrap();
        let m = stats::mean(&ds.lambdas);
        // Exponential with mean 10 has standard deviation 10.
        assert!((m - 10.0).abs() < 3.0 * 10.0 / (100_000f64).sqrt(), "mean {m}");
        let p = ds.lambdas.iter().filter(|&&l| l > 10.0).count() as f64 / 1e5;
        let e1 = (-1.0f64).exp();
        assert!((p - e1).abs() < 3.0 * (e1 * (1.0 - e1) / 1e5).sqrt(), "survival {p}");
        assert!(ds.lambdas.iter().all(|&l| l >= 0.0));
        assert!(ds.labels.iter().all(|&y| y == 0.0 || y == 1.0));
    }

    #[test]
    fn fair_labels_at_zero_parameter() {
        let ds = gen_logreg_dataset(100, 1.0, 5.0, 0.0, RngStream::new(21, 0)).unwrap();
        let ones = ds.labels.iter().filter(|&&y| y == 1.0).count();
        // Binomial(100, 1/2) 99% interval is [37, 63].
        assert!((37..=63).contains(&ones), "ones {ones}");
    }

    #[test]
    fn single_row_minibatch() {
        let ds = LinRegDataset::from_rows(&[vec![2.0]], vec![3.0]).unwrap();
        let mut rng = RngStream::new(0, 0).rng();
        let p = sample_minibatch_pair(&ds, 1, &mut rng).unwrap();
        assert_eq!(p.a_mat, vec![4.0]);
        assert_eq!(p.b_vec, vec![6.0]);
        assert_eq!(p.indices, vec![0]);
        assert!(sample_minibatch_pair(&ds, 2, &mut rng).is_err());
    }

    #[test]
    fn minibatch_subsets_uniform() {
        let ds = gen_linreg_dataset(1, 4, 1.0, 1.0, 1.0, RngStream::new(1, 0)).unwrap();
        let mut rng = RngStream::new(2, 0).rng();
        let mut counts = std::collections::BTreeMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            let p = sample_minibatch_pair(&ds, 2, &mut rng).unwrap();
            *counts.entry(p.indices).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square 99% quantile with 5 degrees of freedom.
        assert!(chi2 < 15.086, "chi2 {chi2}");
    }

    #[test]
    fn minibatch_row_marginals() {
        let (n, b, draws) = (5usize, 2usize, 50_000usize);
        let ds = gen_linreg_dataset(1, n, 1.0, 1.0, 1.0, RngStream::new(6, 0)).unwrap();
        let mut rng = RngStream::new(7, 0).rng();
        let mut hits = vec![0usize; n];
        for _ in 0..draws {
            for i in sample_minibatch_pair(&ds, b, &mut rng).unwrap().indices {
                hits[i] += 1;
            }
        }
        let p = b as f64 / n as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - draws as f64 * p).abs() < 2.576 * sd * 1.5, "hits {h}");
        }
    }

    #[test]
    fn enumeration_counts_and_order() {
        let ds = gen_linreg_dataset(2, 4, 1.0, 1.0, 1.0, RngStream::new(1, 0)).unwrap();
        let pairs = enumerate_minibatch_pairs(&ds, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        let idx: Vec<Vec<usize>> = pairs.iter().map(|p| p.indices.clone()).collect();
        assert_eq!(
            idx,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
    }

    #[test]
    fn full_subset_equals_full_average() {
        let ds = gen_linreg_dataset(2, 3, 1.0, 1.0, 1.0, RngStream::new(4, 0)).unwrap();
        let pairs = enumerate_minibatch_pairs(&ds, 3, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(pairs.len(), 1);
        let full = MinibatchPair::from_indices(&ds, vec![0, 1, 2]);
        assert_eq!(pairs[0], full);
    }

    #[test]
    fn subset_average_identity() {
        let ds = gen_linreg_dataset(1, 5, 1.0, 1.0, 1.0, RngStream::new(8, 0)).unwrap();
        let pairs = enumerate_minibatch_pairs(&ds, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(pairs.len(), 10);
        let mean_a = pairs.iter().map(|p| p.a_mat[0]).sum::<f64>() / 10.0;
        let direct = ds.features.iter().map(|a| a * a).sum::<f64>() / 5.0;
        assert!((mean_a - direct).abs() < 1e-12);
    }

    #[test]
    fn enumeration_cap_enforced() {
        let ds = gen_linreg_dataset(1, 30, 1.0, 1.0, 1.0, RngStream::new(1, 0)).unwrap();
        match enumerate_minibatch_pairs(&ds, 15, DEFAULT_ENUMERATION_CAP) {
            Err(Error::Capacity { count, .. }) => assert_eq!(count, 155_117_520),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(30, 15), 155_117_520);
        assert_eq!(binomial(200, 100), u128::MAX);
    }

    #[test]
    fn stable_alpha_two_is_gaussian_variance_two() {
        let s = sample_stable(2.0, 1_000_000, RngStream::new(17, 0)).unwrap();
        let v = stats::variance(s.values());
        // Var of the sample variance: (mu4 - sigma^4) / m = (3*4 - 4) / m.
        let se = (8.0 / 1e6f64).sqrt();
        assert!((v - 2.0).abs() < 3.0 * se, "variance {v}");
    }

    #[test]
    fn stable_alpha_one_is_cauchy() {
        let s = sample_stable(1.0, 1_000_000, RngStream::new(19, 0)).unwrap();
        let med = s.quantile(0.5);
        // Asymptotic sd of the median: 1 / (2 f(0) sqrt(m)) with f(0) = 1/pi.
        let se = std::f64::consts::PI / 2.0 / 1000.0;
        assert!(med.abs() < 3.0 * se, "median {med}");
        let iqr = s.quantile(0.75) - s.quantile(0.25);
        assert!((iqr - 2.0).abs() < 0.04, "iqr {iqr}");
    }

    #[test]
    fn stable_small_sample_is_sorted_and_finite() {
        let s = sample_stable(1.5, 10, RngStream::new(1, 0)).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.values().windows(2).all(|w| w[0] <= w[1]));
        assert!(s.values().iter().all(|v| v.is_finite()));
        assert!(sample_stable(0.0, 10, RngStream::new(1, 0)).is_err());
        assert!(sample_stable(2.5, 10, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn csv_layout() {
        let ds = LinRegDataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.5]], vec![0.5, -1.0]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "f0,f1,target\n1,2,0.5\n3,4.5,-1\n");
        let lg = gen_logreg_dataset(2, 1.0, 1.0, 0.0, RngStream::new(0, 0)).unwrap();
        let mut buf = Vec::new();
        lg.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("f0,label,lambda\n"));
    }
}
