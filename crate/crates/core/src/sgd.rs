//! Online and offline SGD chains, and ensembles of independent chains whose
//! final iterates stand in for stationary distributions.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_indices, Dataset, MinibatchPair, Point, PointGenerator};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sample::EmpiricalSample1D;

pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub eta: f64,
    pub b: usize,
    pub mode: Mode,
    /// Dataset size; required in offline mode.
    pub n: Option<usize>,
    pub iterations: usize,
    pub burn_in: usize,
    pub divergence_guard: f64,
}

impl SgdConfig {
    pub fn online(eta: f64, b: usize, iterations: usize) -> Self {
        Self {
            eta,
            b,
            mode: Mode::Online,
            n: None,
            iterations,
            burn_in: DEFAULT_BURN_IN.min(iterations.saturating_sub(1)),
            divergence_guard: DEFAULT_DIVERGENCE_GUARD,
        }
    }

    pub fn offline(eta: f64, b: usize, n: usize, iterations: usize) -> Self {
        Self {
            mode: Mode::Offline,
            n: Some(n),
            ..Self::online(eta, b, iterations)
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("step size must be finite and >= 0, got {}", self.eta)));
        }
        if self.b == 0 || self.iterations == 0 {
            return Err(Error::invalid("batch size and iteration count must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::invalid("divergence guard must be positive"));
        }
        match (self.mode, self.n) {
            (Mode::Offline, None) => Err(Error::invalid("offline mode needs a dataset size n")),
            (Mode::Offline, Some(n)) if self.b > n => {
                Err(Error::invalid(format!("batch size b={} exceeds n={n}", self.b)))
            }
            _ => Ok(()),
        }
    }
}

/// Where a chain gets its data from.
#[derive(Debug)]
pub enum Source<'a, G, D> {
    /// Fresh draws from the law at every step.
    Online(&'a G),
    /// Minibatches resampled from a fixed dataset at every step.
    Offline(&'a D),
}

impl<G, D> Clone for Source<'_, G, D> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<G, D> Copy for Source<'_, G, D> {}

impl<G: PointGenerator, D: Dataset> Source<'_, G, D> {
    fn dim(&self) -> usize {
        match self {
            Source::Online(g) => g.dim(),
            Source::Offline(d) => d.dim(),
        }
    }

    fn check(&self, config: &SgdConfig) -> Result<()> {
        config.validate()?;
        match (self, config.mode) {
            (Source::Online(_), Mode::Online) => Ok(()),
            (Source::Offline(data), Mode::Offline) => {
                if Some(data.len()) != config.n {
                    return Err(Error::invalid(format!(
                        "config n={:?} does not match dataset size {}",
                        config.n,
                        data.len()
                    )));
                }
                Ok(())
            }
            (Source::Online(_), Mode::Offline) => Err(Error::invalid("offline mode needs a dataset")),
            (Source::Offline(_), Mode::Online) => Err(Error::invalid("online mode needs a generator")),
        }
    }
}

/// Draws a minibatch into reusable buffers, either fresh or by index.
struct BatchDrawer<'a, G, D> {
    source: Source<'a, G, D>,
    b: usize,
    d: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    lambdas: Vec<f64>,
    indices: Vec<usize>,
}

impl<'a, G: PointGenerator, D: Dataset> BatchDrawer<'a, G, D> {
    fn new(source: Source<'a, G, D>, b: usize) -> Self {
        let d = source.dim();
        Self {
            source,
            b,
            d,
            features: vec![0.0; b * d],
            targets: vec![0.0; b],
            lambdas: vec![0.0; b],
            indices: Vec::new(),
        }
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self.source {
            Source::Online(g) => {
                for j in 0..self.b {
                    let row = &mut self.features[j * self.d..(j + 1) * self.d];
                    let (t, l) = g.draw(rng, row);
                    self.targets[j] = t;
                    self.lambdas[j] = l;
                }
            }
            Source::Offline(data) => self.indices = sample_indices(data.len(), self.b, rng),
        }
    }

    fn points(&self) -> Vec<Point<'_>> {
        match self.source {
            Source::Online(_) => (0..self.b)
                .map(|j| Point {
                    features: &self.features[j * self.d..(j + 1) * self.d],
                    target: self.targets[j],
                    lambda: self.lambdas[j],
                })
                .collect(),
            Source::Offline(data) => self.indices.iter().map(|&i| data.point(i)).collect(),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn escaped(x: &[f64], guard: f64) -> bool {
    let nrm = norm(x);
    !nrm.is_finite() || nrm > guard
}

/// One step of the affine recursion, `(I - eta A) x + eta b`.
pub fn step_quadratic(x: &[f64], pair: &MinibatchPair, eta: f64) -> Result<Vec<f64>> {
    if x.len() != pair.d || pair.b_vec.len() != pair.d || pair.a_mat.len() != pair.d * pair.d {
        return Err(Error::invalid(format!(
            "dimension mismatch: x has {}, pair has {}",
            x.len(),
            pair.d
        )));
    }
    let mut out = vec![0.0; x.len()];
    step_quadratic_into(x, pair, eta, &mut out);
    Ok(out)
}

fn step_quadratic_into(x: &[f64], pair: &MinibatchPair, eta: f64, out: &mut [f64]) {
    let d = pair.d;
    for r in 0..d {
        let row = &pair.a_mat[r * d..(r + 1) * d];
        let ax: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        out[r] = x[r] - eta * (ax - pair.b_vec[r]);
    }
}

/// Final iterate of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutcome {
    pub x: Vec<f64>,
    /// The iterate escaped the divergence guard (or became non-finite); `x`
    /// holds the iterate at which the chain halted.
    pub diverged: bool,
}

/// Runs the quadratic recursion through explicit minibatch matrices.
///
/// `observe(k, x_k)` is called for `k = 0..=iterations` until the chain halts.
pub fn run_chain_quadratic_observed<G, D, R, F>(
    config: &SgdConfig,
    source: Source<'_, G, D>,
    x0: &[f64],
    rng: &mut R,
    mut observe: F,
) -> Result<ChainOutcome>
where
    G: PointGenerator,
    D: Dataset,
    R: Rng + ?Sized,
    F: FnMut(usize, &[f64]),
{
    source.check(config)?;
    let d = source.dim();
    if x0.len() != d {
        return Err(Error::invalid(format!("x0 has length {}, expected {d}", x0.len())));
    }
    let mut drawer = BatchDrawer::new(source, config.b);
    let mut pair = MinibatchPair {
        d,
        a_mat: vec![0.0; d * d],
        b_vec: vec![0.0; d],
        indices: Vec::new(),
    };
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    observe(0, &x);
    for k in 1..=config.iterations {
        drawer.draw(rng);
        pair = MinibatchPair::from_points_reusing(pair, drawer.points());
        step_quadratic_into(&x, &pair, config.eta, &mut next);
        std::mem::swap(&mut x, &mut next);
        if escaped(&x, config.divergence_guard) {
            return Ok(ChainOutcome { x, diverged: true });
        }
        observe(k, &x);
    }
    Ok(ChainOutcome { x, diverged: false })
}

pub fn run_chain_quadratic<G, D, R>(
    config: &SgdConfig,
    source: Source<'_, G, D>,
    x0: &[f64],
    rng: &mut R,
) -> Result<ChainOutcome>
where
    G: PointGenerator,
    D: Dataset,
    R: Rng + ?Sized,
{
    run_chain_quadratic_observed(config, source, x0, rng, |_, _| {})
}

/// A differentiable per-sample loss `f(x, z)`.
pub trait LossModel: Sync {
    fn name(&self) -> String;
    fn value(&self, x: &[f64], z: Point<'_>) -> f64;
    /// Writes `grad_x f(x, z)` into `out`.
    fn gradient(&self, x: &[f64], z: Point<'_>, out: &mut [f64]);
}

/// `f(x, (a, q)) = (a^T x - q)^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticLoss;

impl LossModel for QuadraticLoss {
    fn name(&self) -> String {
        "quadratic".into()
    }

    fn value(&self, x: &[f64], z: Point<'_>) -> f64 {
        let r = dot(z.features, x) - z.target;
        0.5 * r * r
    }

    fn gradient(&self, x: &[f64], z: Point<'_>, out: &mut [f64]) {
        let r = dot(z.features, x) - z.target;
        for (o, a) in out.iter_mut().zip(z.features) {
            *o = a * r;
        }
    }
}

/// Cross-entropy of a logistic model plus `lambda |x|^2 / 2`, with the
/// label in `target` and the per-sample regulariser in `lambda`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticLoss;

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
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

impl LossModel for LogisticLoss {
    fn name(&self) -> String {
        "logistic_l2".into()
    }

    fn value(&self, x: &[f64], z: Point<'_>) -> f64 {
        let t = dot(z.features, x);
        softplus(t) - z.target * t + 0.5 * z.lambda * dot(x, x)
    }

    fn gradient(&self, x: &[f64], z: Point<'_>, out: &mut [f64]) {
        let s = sigmoid(dot(z.features, x)) - z.target;
        for ((o, a), xi) in out.iter_mut().zip(z.features).zip(x) {
            *o = s * a + z.lambda * xi;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain SGD `x <- x - eta * mean_j grad f(x, z_j)` for any loss.
pub fn run_chain_general_observed<L, G, D, R, F>(
    loss: &L,
    config: &SgdConfig,
    source: Source<'_, G, D>,
    x0: &[f64],
    rng: &mut R,
    mut observe: F,
) -> Result<ChainOutcome>
where
    L: LossModel + ?Sized,
    G: PointGenerator,
    D: Dataset,
    R: Rng + ?Sized,
    F: FnMut(usize, &[f64]),
{
    source.check(config)?;
    let d = source.dim();
    if x0.len() != d {
        return Err(Error::invalid(format!("x0 has length {}, expected {d}", x0.len())));
    }
    let mut drawer = BatchDrawer::new(source, config.b);
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let inv_b = 1.0 / config.b as f64;
    observe(0, &x);
    for k in 1..=config.iterations {
        drawer.draw(rng);
        acc.iter_mut().for_each(|v| *v = 0.0);
        for z in drawer.points() {
            loss.gradient(&x, z, &mut grad);
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += g;
            }
        }
        if acc.iter().any(|g| !g.is_finite()) {
            return Ok(ChainOutcome { x, diverged: true });
        }
        for (xi, g) in x.iter_mut().zip(&acc) {
            *xi -= config.eta * g * inv_b;
        }
        if escaped(&x, config.divergence_guard) {
            return Ok(ChainOutcome { x, diverged: true });
        }
        observe(k, &x);
    }
    Ok(ChainOutcome { x, diverged: false })
}

pub fn run_chain_general<L, G, D, R>(
    loss: &L,
    config: &SgdConfig,
    source: Source<'_, G, D>,
    x0: &[f64],
    rng: &mut R,
) -> Result<ChainOutcome>
where
    L: LossModel + ?Sized,
    G: PointGenerator,
    D: Dataset,
    R: Rng + ?Sized,
{
    run_chain_general_observed(loss, config, source, x0, rng, |_, _| {})
}

/// Starting point of each chain in an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    Fixed(Vec<f64>),
    /// `x0 ~ N(0, sigma_x^2 I_d)`, drawn from the chain's own stream.
    Prior { sigma_x: f64 },
}

impl Init {
    pub fn resolve<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Init::Zero => Ok(vec![0.0; d]),
            Init::Fixed(v) if v.len() == d => Ok(v.clone()),
            Init::Fixed(v) => Err(Error::invalid(format!("x0 has length {}, expected {d}", v.len()))),
            Init::Prior { sigma_x } => {
                let dist = rand_distr::Normal::new(0.0, *sigma_x)
                    .map_err(|e| Error::invalid(format!("prior scale: {e}")))?;
                Ok((0..d).map(|_| rand_distr::Distribution::sample(&dist, rng)).collect())
            }
        }
    }
}

/// Final iterates of independent chains, one row per chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEnsemble {
    pub d: usize,
    /// Row-major `chains x d`.
    pub iterates: Vec<f64>,
    pub diverged: Vec<bool>,
    pub config: SgdConfig,
    pub base_seed: u64,
}

impl ChainEnsemble {
    pub fn from_rows(rows: Vec<ChainOutcome>, d: usize, config: SgdConfig, base_seed: u64) -> Self {
        let mut iterates = Vec::with_capacity(rows.len() * d);
        let mut diverged = Vec::with_capacity(rows.len());
        for r in rows {
            iterates.extend_from_slice(&r.x);
            diverged.push(r.diverged);
        }
        Self {
            d,
            iterates,
            diverged,
            config,
            base_seed,
        }
    }

    pub fn chains(&self) -> usize {
        self.diverged.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.iterates[i * self.d..(i + 1) * self.d]
    }

    /// Rows of chains that stayed within the guard.
    pub fn stable_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.chains()).filter(|&i| !self.diverged[i]).map(|i| self.row(i))
    }

    pub fn diverged_count(&self) -> usize {
        self.diverged.iter().filter(|&&f| f).count()
    }

    /// Euclidean norms of the non-diverged rows.
    pub fn norms(&self) -> Vec<f64> {
        self.stable_rows().map(norm).collect()
    }

    pub fn norm_sample(&self) -> Result<EmpiricalSample1D> {
        EmpiricalSample1D::new(self.norms())
    }

    /// Non-diverged rows of a one-dimensional ensemble as a sample.
    pub fn scalar_sample(&self) -> Result<EmpiricalSample1D> {
        if self.d != 1 {
            return Err(Error::invalid(format!("expected d=1, ensemble has d={}", self.d)));
        }
        EmpiricalSample1D::new(self.stable_rows().map(|r| r[0]).collect())
    }

    /// Columns `x0..x{d-1},diverged`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        header.push("diverged".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.chains() {
            let mut cells: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            cells.push(self.diverged[i].to_string());
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Runs `chains` independent chains; chain `i` receives stream
/// `(base_seed, i)`. Rows come back in chain order whatever the thread count.
pub fn run_ensemble<F>(chains: usize, base_seed: u64, run: F) -> Result<Vec<ChainOutcome>>
where
    F: Fn(usize, RngStream) -> Result<ChainOutcome> + Sync,
{
    if chains == 0 {
        return Err(Error::invalid("chain count must be positive"));
    }
    (0..chains)
        .into_par_iter()
        .map(|i| run(i, RngStream::new(base_seed, i as u64)))
        .collect()
}

/// Ensemble of quadratic chains. Each chain draws its start from `init`
/// using its own stream, then runs the recursion on the same stream.
pub fn ensemble_quadratic<G, D>(
    config: &SgdConfig,
    source: Source<'_, G, D>,
    init: &Init,
    chains: usize,
    base_seed: u64,
) -> Result<ChainEnsemble>
where
    G: PointGenerator,
    D: Dataset,
{
    source.check(config)?;
    let d = source.dim();
    let rows = run_ensemble(chains, base_seed, |_, stream| {
        let mut rng = stream.rng();
        let x0 = init.resolve(d, &mut rng)?;
        run_chain_quadratic(config, source, &x0, &mut rng)
    })?;
    Ok(ChainEnsemble::from_rows(rows, d, config.clone(), base_seed))
}

pub fn ensemble_general<L, G, D>(
    loss: &L,
    config: &SgdConfig,
    source: Source<'_, G, D>,
    init: &Init,
    chains: usize,
    base_seed: u64,
) -> Result<ChainEnsemble>
where
    L: LossModel + ?Sized,
    G: PointGenerator,
    D: Dataset,
{
    source.check(config)?;
    let d = source.dim();
    let rows = run_ensemble(chains, base_seed, |_, stream| {
        let mut rng = stream.rng();
        let x0 = init.resolve(d, &mut rng)?;
        run_chain_general(loss, config, source, &x0, &mut rng)
    })?;
    Ok(ChainEnsemble::from_rows(rows, d, config.clone(), base_seed))
}

/// `(1/n) sum_i f(x, z_i)`.
pub fn empirical_risk<D, L>(data: &D, loss: &L, x: &[f64]) -> Result<f64>
where
    D: Dataset + ?Sized,
    L: LossModel + ?Sized,
{
    if data.is_empty() {
        return Err(Error::EmptyInput("empirical risk of an empty dataset".into()));
    }
    let total: f64 = (0..data.len()).map(|i| loss.value(x, data.point(i))).sum();
    Ok(total / data.len() as f64)
}

/// Norms of the minibatch gradient noise at `x`: the distance between the
/// full-data gradient and `draws` independent size-`b` minibatch gradients.
pub fn gradient_noise_norms<D, L, R>(
    data: &D,
    loss: &L,
    x: &[f64],
    b: usize,
    draws: usize,
    rng: &mut R,
) -> Result<EmpiricalSample1D>
where
    D: Dataset + ?Sized,
    L: LossModel + ?Sized,
    R: Rng + ?Sized,
{
    let n = data.len();
    if b == 0 || b > n {
        return Err(Error::invalid(format!("batch size b={b} must lie in 1..={n}")));
    }
    let d = data.dim();
    let mut grads = vec![0.0; n * d];
    for (i, g) in grads.chunks_exact_mut(d).enumerate() {
        loss.gradient(x, data.point(i), g);
    }
    let mut full = vec![0.0; d];
    for g in grads.chunks_exact(d) {
        for (f, v) in full.iter_mut().zip(g) {
            *f += v / n as f64;
        }
    }
    let mut out = Vec::with_capacity(draws);
    let mut batch = vec![0.0; d];
    for _ in 0..draws {
        if b == n {
            // The full batch reproduces the full gradient.
            out.push(0.0);
            continue;
        }
        batch.iter_mut().for_each(|v| *v = 0.0);
        for i in sample_indices(n, b, rng) {
            for (s, v) in batch.iter_mut().zip(&grads[i * d..(i + 1) * d]) {
                *s += v / b as f64;
            }
        }
        let diff: f64 = full.iter().zip(&batch).map(|(f, s)| (f - s) * (f - s)).sum();
        out.push(diff.sqrt());
    }
    EmpiricalSample1D::new(out)
}
