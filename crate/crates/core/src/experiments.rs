//! Declarative scenario suites that emit plot-ready tables.
//!
//! Every random quantity in a scenario is drawn from a stream keyed by the
//! parameters of its grid cell (never by the cell's position in the grid), so
//! reordering a grid reorders rows without changing their values, and a
//! replay with the same base seed reproduces every table bit for bit.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_linreg_dataset, sample_logreg_dataset, LinRegModel, LogRegModel, MinibatchPair, Dataset, PointGenerator};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sample::EmpiricalSample1D;
use crate::sgd::{
    ensemble_general, ensemble_quadratic, run_chain_quadratic_observed, ChainEnsemble, Init, LogisticLoss, SgdConfig,
    Source,
};
use crate::stats;
use crate::tail::{
    ccdf_tail_slope, default_blocks, estimate_alpha, pool_and_center, tail_ccdf, tail_diagnostics,
};
use crate::theory::{
    contraction_stats_quadratic, expected_R_closed_form, expected_r_closed_form, logreg_factor_draw, mc_values,
    solve_exponent_general, w1_bound_rhs, LogRegFactor, DEFAULT_TOL,
};
use crate::transport::{wp_assignment, wp_empirical_1d, ASSIGNMENT_CAP};
use crate::data::sample_stable;

/// Ensembles with fewer surviving chains than this are flagged.
pub const MIN_STABLE_CHAINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Histograms,
    TailSuite,
    TheorySuite,
    StronglyConvexSuite,
    EstimatorCalibration,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Histograms => "histograms",
            Scenario::TailSuite => "tail_suite",
            Scenario::TheorySuite => "theory_suite",
            Scenario::StronglyConvexSuite => "strongly_convex_suite",
            Scenario::EstimatorCalibration => "estimator_calibration",
        }
    }

    /// Tables the scenario always emits, in output order.
    pub fn tables(self) -> &'static [&'static str] {
        match self {
            Scenario::Histograms => &["summary", "histogram"],
            Scenario::TailSuite => &["online", "offline", "offline_runs", "difference", "diagnostics"],
            Scenario::TheorySuite => &["sandwich", "sandwich_slopes", "thm4", "ergodicity", "ergodicity_fit"],
            Scenario::StronglyConvexSuite => &["closed_forms", "exponents", "tails", "w1_norms"],
            Scenario::EstimatorCalibration => &["calibration"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zero,
    /// `x0 ~ N(0, sigma_x^2 I_d)`.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: Scenario,
    pub d: usize,
    pub sigma: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub eta: Vec<f64>,
    pub b: Vec<usize>,
    pub n: Vec<usize>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub x_gen: f64,
    pub chains: usize,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Independent replicates (datasets, ground truths and ensembles).
    pub seeds: usize,
    /// Falls back to the run file's global seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    pub init: InitKind,
    pub bins: usize,
    pub mc: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<usize>,
    pub alpha: Vec<f64>,
    pub m: Vec<usize>,
    pub trials: usize,
    /// Distance of the ergodicity probe's start from the ground truth.
    pub probe_offset: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            scenario: Scenario::TailSuite,
            d: 1,
            sigma: 1.0,
            sigma_x: 3.0,
            sigma_y: 3.0,
            eta: vec![0.002, 0.004, 0.008],
            b: vec![1, 4],
            n: vec![50, 200, 500],
            gamma: vec![0.1],
            mu: vec![0.1],
            sigma2: vec![1.0],
            x_gen: 1.0,
            chains: 400,
            iterations: 2000,
            burn_in: None,
            seeds: 3,
            base_seed: None,
            init: InitKind::Zero,
            bins: 30,
            mc: 100_000,
            k1: None,
            k2: None,
            alpha: vec![1.2, 1.5, 1.8],
            m: vec![10_000],
            trials: 20,
            probe_offset: 10.0,
        }
    }
}

fn nonempty<T>(what: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(Error::invalid(format!("grid `{what}` is empty")))
    } else {
        Ok(())
    }
}

fn all_positive(what: &str, v: &[f64]) -> Result<()> {
    nonempty(what, v)?;
    match v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        Some(x) => Err(Error::invalid(format!("grid `{what}` must be positive, found {x}"))),
        None => Ok(()),
    }
}

impl ExperimentSpec {
    pub fn seed(&self) -> u64 {
        self.base_seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let quadratic = matches!(
            self.scenario,
            Scenario::Histograms | Scenario::TailSuite | Scenario::TheorySuite
        );
        if quadratic {
            nonempty("eta", &self.eta)?;
            if let Some(e) = self.eta.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
                return Err(Error::invalid(format!("grid `eta` must be >= 0, found {e}")));
            }
            nonempty("b", &self.b)?;
            nonempty("n", &self.n)?;
            if self.d == 0 {
                return Err(Error::invalid("d must be positive"));
            }
            if !(self.sigma > 0.0) || !(self.sigma_x >= 0.0) || !(self.sigma_y >= 0.0) {
                return Err(Error::invalid("sigma must be positive and sigma_x, sigma_y non-negative"));
            }
            let min_n = *self.n.iter().min().unwrap();
            let max_b = *self.b.iter().max().unwrap();
            if self.b.contains(&0) || min_n < max_b {
                return Err(Error::invalid(format!(
                    "every batch size must lie in 1..=n; b grid max {max_b}, n grid min {min_n}"
                )));
            }
        }
        if self.scenario == Scenario::StronglyConvexSuite {
            all_positive("gamma", &self.gamma)?;
            all_positive("mu", &self.mu)?;
            all_positive("sigma2", &self.sigma2)?;
            nonempty("n", &self.n)?;
            if self.n.contains(&0) {
                return Err(Error::invalid("grid `n` must be positive"));
            }
            if self.b.iter().any(|&b| b != 1) {
                return Err(Error::invalid("the strongly convex suite runs with b = 1 only"));
            }
        }
        if self.scenario == Scenario::TheorySuite && self.d != 1 {
            return Err(Error::invalid(format!("the theory suite runs in d = 1, got d = {}", self.d)));
        }
        if self.scenario == Scenario::EstimatorCalibration {
            nonempty("alpha", &self.alpha)?;
            if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a <= 2.0)) {
                return Err(Error::invalid(format!("stable index must lie in (0, 2], found {a}")));
            }
            nonempty("m", &self.m)?;
            if self.trials < 2 {
                return Err(Error::invalid("calibration needs at least two trials"));
            }
            for &m in &self.m {
                let (d1, d2) = default_blocks(m);
                let (k1, k2) = (self.k1.unwrap_or(d1), self.k2.unwrap_or(d2));
                if k1 == 0 || k2 < 2 || k1.saturating_mul(k2) > m {
                    return Err(Error::invalid(format!("block layout {k1}x{k2} does not fit m = {m}")));
                }
            }
        } else {
            if self.chains < 2 || self.iterations == 0 || self.seeds == 0 {
                return Err(Error::invalid("chains >= 2, iterations >= 1 and seeds >= 1 are required"));
            }
            if let Some(bi) = self.burn_in {
                if bi >= self.iterations {
                    return Err(Error::invalid("burn_in must be below iterations"));
                }
            }
        }
        if self.scenario == Scenario::Histograms && self.bins == 0 {
            return Err(Error::invalid("bins must be positive"));
        }
        if matches!(self.scenario, Scenario::TheorySuite | Scenario::StronglyConvexSuite) && self.mc < 100 {
            return Err(Error::invalid("mc must be at least 100"));
        }
        Ok(())
    }

    fn sgd_config(&self, eta: f64, b: usize, n: Option<usize>) -> SgdConfig {
        let c = match n {
            None => SgdConfig::online(eta, b, self.iterations),
            Some(n) => SgdConfig::offline(eta, b, n, self.iterations),
        };
        match self.burn_in {
            Some(bi) => c.with_burn_in(bi),
            None => c,
        }
    }

    fn init(&self) -> Init {
        match self.init {
            InitKind::Zero => Init::Zero,
            InitKind::Prior => Init::Prior { sigma_x: self.sigma_x },
        }
    }
}

/// A typed table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }
}

/// Shortest round-trip form; exponent notation outside `[1e-5, 1e16)`.
fn write_float(f: &mut fmt::Formatter<'_>, x: f64) -> fmt::Result {
    let a = x.abs();
    if x.is_finite() && a != 0.0 && !(1e-5..1e16).contains(&a) {
        write!(f, "{x:e}")
    } else {
        write!(f, "{x}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write_float(f, *x),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Text(s) if s.contains([',', '"', '\n']) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}
impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}
impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.into())
    }
}
impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column values; non-numeric cells become NaN.
    pub fn f64_column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.col(name)?;
        Some(self.rows.iter().map(|r| r[j].as_f64().unwrap_or(f64::NAN)).collect())
    }

    /// Header row, then one line per row; LF endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub tables: Vec<Table>,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
struct ManifestTable<'a> {
    name: &'a str,
    file: String,
    columns: &'a [String],
    rows: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a ExperimentSpec,
    seed: u64,
    overrides: &'a [String],
    tables: Vec<ManifestTable<'a>>,
}

impl ExperimentResult {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `<out>/<spec name>/<table>.csv` and `manifest.json`. The
    /// manifest leaves out wall-clock time so reruns are byte-identical.
    pub fn write_dir(&self, out: &Path, overrides: &[String]) -> Result<PathBuf> {
        let dir = out.join(&self.spec.name);
        fs::create_dir_all(&dir)?;
        for t in &self.tables {
            let f = fs::File::create(dir.join(format!("{}.csv", t.name)))?;
            t.write_csv(std::io::BufWriter::new(f))?;
        }
        let manifest = Manifest {
            spec: &self.spec,
            seed: self.seed,
            overrides,
            tables: self
                .tables
                .iter()
                .map(|t| ManifestTable {
                    name: &t.name,
                    file: format!("{}.csv", t.name),
                    columns: &t.columns,
                    rows: t.rows.len(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)?;
        Ok(dir)
    }
}

/// Runs the scenario named by `spec`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let start = Instant::now();
    let tables = match spec.scenario {
        Scenario::Histograms => exp_histograms(spec),
        Scenario::TailSuite => exp_tail_suite(spec),
        Scenario::TheorySuite => exp_theory_suite(spec),
        Scenario::StronglyConvexSuite => exp_strongly_convex_suite(spec),
        Scenario::EstimatorCalibration => exp_estimator_calibration(spec),
    }
    .map_err(|e| e.in_cell(format!("spec `{}`", spec.name)))?;
    Ok(ExperimentResult {
        spec: spec.clone(),
        tables,
        seed: spec.seed(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

fn check_scenario(spec: &ExperimentSpec, want: Scenario) -> Result<()> {
    if spec.scenario != want {
        return Err(Error::invalid(format!(
            "spec `{}` has scenario {}, expected {}",
            spec.name,
            spec.scenario.name(),
            want.name()
        )));
    }
    spec.validate()
}

// Stream labels; each random ingredient of a cell gets its own.
const TAG_TRUTH: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_CHAINS: u64 = 3;
const TAG_ESTIMATE: u64 = 4;
const TAG_PAIRS: u64 = 5;
const TAG_CONTRACTION: u64 = 6;
const TAG_PROBE: u64 = 7;
const TAG_FACTOR: u64 = 8;
const TAG_STABLE: u64 = 9;
/// Stands in for `n` in online cells.
const ONLINE: u64 = u64::MAX;

/// Seed for the cell identified by `parts`, derived from the base seed.
pub fn cell_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(RngStream::new(base, 0), |s, &p| s.derive(p)).seed
}

fn n_key(n: Option<usize>) -> u64 {
    n.map_or(ONLINE, |n| n as u64)
}

fn cell_label(eta: f64, b: usize, n: Option<usize>, rep: usize) -> String {
    match n {
        Some(n) => format!("cell eta={eta} b={b} n={n} seed={rep}"),
        None => format!("cell eta={eta} b={b} online seed={rep}"),
    }
}

fn n_value(n: Option<usize>) -> Value {
    n.map_or(Value::Float(f64::INFINITY), |n| Value::Float(n as f64))
}

/// Errors that mark a cell as flagged instead of aborting the run.
fn flaggable(e: &Error) -> bool {
    matches!(
        e.root(),
        Error::EmptyInput(_)
            | Error::DegenerateSample(_)
            | Error::NotContractive { .. }
            | Error::NoRoot { .. }
            | Error::StabilityViolation(_)
    )
}

fn flag_text(e: &Error) -> String {
    e.root().to_string()
}

/// Splits a cell result into its value (or NaN) and a flag string, passing
/// fatal errors through.
fn soften(r: Result<f64>) -> Result<(f64, String)> {
    match r {
        Ok(v) => Ok((v, String::new())),
        Err(e) if flaggable(&e) => Ok((f64::NAN, flag_text(&e))),
        Err(e) => Err(e),
    }
}

fn truth_model(spec: &ExperimentSpec, rep: usize) -> Result<LinRegModel> {
    let mut rng = RngStream::new(cell_seed(spec.seed(), &[TAG_TRUTH, rep as u64]), 0).rng();
    LinRegModel::with_random_truth(spec.d, spec.sigma, spec.sigma_x, spec.sigma_y, &mut rng)
}

fn linreg_dataset(spec: &ExperimentSpec, model: &LinRegModel, rep: usize, n: usize) -> crate::data::LinRegDataset {
    let mut rng = RngStream::new(cell_seed(spec.seed(), &[TAG_DATA, rep as u64, n as u64]), 0).rng();
    sample_linreg_dataset(model, n, spec.sigma_x, &mut rng)
}

/// Quadratic ensemble for one cell; `n = None` runs online.
fn linreg_ensemble(
    spec: &ExperimentSpec,
    model: &LinRegModel,
    rep: usize,
    eta: f64,
    b: usize,
    n: Option<usize>,
) -> Result<ChainEnsemble> {
    let config = spec.sgd_config(eta, b, n);
    let seed = cell_seed(spec.seed(), &[TAG_CHAINS, rep as u64, eta.to_bits(), b as u64, n_key(n)]);
    match n {
        None => ensemble_quadratic::<_, crate::data::LinRegDataset>(
            &config,
            Source::Online(model),
            &spec.init(),
            spec.chains,
            seed,
        ),
        Some(n) => {
            let data = linreg_dataset(spec, model, rep, n);
            ensemble_quadratic::<LinRegModel, _>(&config, Source::Offline(&data), &spec.init(), spec.chains, seed)
        }
    }
}

fn ensure_stable(ens: &ChainEnsemble) -> Result<()> {
    let stable = ens.chains() - ens.diverged_count();
    if stable < MIN_STABLE_CHAINS {
        return Err(Error::DegenerateSample(format!(
            "only {stable} of {} chains stayed finite",
            ens.chains()
        )));
    }
    Ok(())
}

/// Block tail-index estimate on the pooled, centred ensemble.
pub fn ensemble_alpha(ens: &ChainEnsemble, k1: Option<usize>, k2: Option<usize>, seed: u64) -> Result<f64> {
    ensure_stable(ens)?;
    let pooled = pool_and_center(ens)?;
    let (d1, d2) = default_blocks(pooled.len());
    let mut rng = RngStream::new(seed, 0).rng();
    Ok(estimate_alpha(&pooled, k1.unwrap_or(d1), k2.unwrap_or(d2), &mut rng)?.alpha_hat)
}

// ---------------------------------------------------------------------------
// histograms

struct HistCell {
    eta: f64,
    b: usize,
    n: usize,
    rep: usize,
}

/// Final-iterate norm histograms of offline SGD per `n`, with the count and
/// size of norms beyond `mean + 2 std`.
pub fn exp_histograms(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    check_scenario(spec, Scenario::Histograms)?;
    let mut cells = Vec::new();
    for rep in 0..spec.seeds {
        for &eta in &spec.eta {
            for &b in &spec.b {
                for &n in &spec.n {
                    cells.push(HistCell { eta, b, n, rep });
                }
            }
        }
    }
    let outs: Vec<(Vec<Value>, Vec<Vec<Value>>)> = cells
        .par_iter()
        .map(|c| {
            let model = truth_model(spec, c.rep)?;
            let ens = linreg_ensemble(spec, &model, c.rep, c.eta, c.b, Some(c.n))
                .map_err(|e| e.in_cell(cell_label(c.eta, c.b, Some(c.n), c.rep)))?;
            Ok(histogram_rows(spec, c, &ens))
        })
        .collect::<Result<_>>()?;
    let mut summary = Table::new(
        "summary",
        &[
            "eta", "b", "n", "seed", "chains", "diverged", "mean", "std", "threshold", "outliers", "max_norm",
            "mean_excess", "flag",
        ],
    );
    let mut hist = Table::new("histogram", &["eta", "b", "n", "seed", "bin", "lo", "hi", "count"]);
    for (s, h) in outs {
        summary.push(s);
        for r in h {
            hist.push(r);
        }
    }
    Ok(vec![summary, hist])
}

fn histogram_rows(spec: &ExperimentSpec, c: &HistCell, ens: &ChainEnsemble) -> (Vec<Value>, Vec<Vec<Value>>) {
    let norms = ens.norms();
    let key = |mut rest: Vec<Value>| {
        let mut row = vec![c.eta.into(), c.b.into(), c.n.into(), c.rep.into()];
        row.append(&mut rest);
        row
    };
    if norms.is_empty() {
        let summary = key(vec![
            ens.chains().into(),
            ens.diverged_count().into(),
            f64::NAN.into(),
            f64::NAN.into(),
            f64::NAN.into(),
            0usize.into(),
            f64::NAN.into(),
            f64::NAN.into(),
            "every chain diverged".into(),
        ]);
        let rows = (0..spec.bins)
            .map(|j| key(vec![j.into(), f64::NAN.into(), f64::NAN.into(), 0usize.into()]))
            .collect();
        return (summary, rows);
    }
    let mean = stats::mean(&norms);
    let std = if norms.len() > 1 { stats::std_dev(&norms) } else { 0.0 };
    let threshold = mean + 2.0 * std;
    let excess: Vec<f64> = norms.iter().filter(|&&v| v > threshold).map(|v| v - threshold).collect();
    let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let summary = key(vec![
        ens.chains().into(),
        ens.diverged_count().into(),
        mean.into(),
        std.into(),
        threshold.into(),
        excess.len().into(),
        max.into(),
        (if excess.is_empty() { 0.0 } else { stats::mean(&excess) }).into(),
        "".into(),
    ]);
    let width = (max - min) / spec.bins as f64;
    let mut counts = vec![0usize; spec.bins];
    for &v in &norms {
        let j = if width > 0.0 { ((v - min) / width) as usize } else { 0 };
        counts[j.min(spec.bins - 1)] += 1;
    }
    let rows = counts
        .iter()
        .enumerate()
        .map(|(j, &cnt)| {
            let lo = min + width * j as f64;
            let hi = if j + 1 == spec.bins { max } else { min + width * (j + 1) as f64 };
            key(vec![j.into(), lo.into(), hi.into(), cnt.into()])
        })
        .collect();
    (summary, rows)
}

// ---------------------------------------------------------------------------
// tail suite

#[derive(Clone, Copy)]
struct TailCell {
    eta: f64,
    b: usize,
    n: Option<usize>,
    rep: usize,
}

struct TailOut {
    alpha: f64,
    chains: usize,
    diverged: usize,
    flag: String,
    diagnostics: Vec<Vec<Value>>,
}

/// Online baselines and offline tail indices over the `(eta, b, n)` grid.
pub fn exp_tail_suite(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    check_scenario(spec, Scenario::TailSuite)?;
    let mut cells = Vec::new();
    for &eta in &spec.eta {
        for &b in &spec.b {
            for rep in 0..spec.seeds {
                cells.push(TailCell { eta, b, n: None, rep });
                for &n in &spec.n {
                    cells.push(TailCell { eta, b, n: Some(n), rep });
                }
            }
        }
    }
    let outs: Vec<TailOut> = cells
        .par_iter()
        .map(|c| tail_cell(spec, c).map_err(|e| e.in_cell(cell_label(c.eta, c.b, c.n, c.rep))))
        .collect::<Result<_>>()?;
    let lookup = |eta: f64, b: usize, n: Option<usize>, rep: usize| -> &TailOut {
        let i = cells
            .iter()
            .position(|c| c.eta.to_bits() == eta.to_bits() && c.b == b && c.n == n && c.rep == rep)
            .expect("cell exists");
        &outs[i]
    };

    let mut online = Table::new("online", &["eta", "b", "seed", "chains", "diverged", "alpha_hat", "flag"]);
    let mut runs = Table::new(
        "offline_runs",
        &["eta", "b", "n", "seed", "chains", "diverged", "alpha_hat", "online_alpha_hat", "abs_diff", "flag"],
    );
    let mut offline = Table::new(
        "offline",
        &["eta", "b", "n", "replicates", "alpha_min", "alpha_median", "alpha_max"],
    );
    let mut diff = Table::new(
        "difference",
        &["eta", "b", "n", "replicates", "median_abs_diff", "min_abs_diff", "max_abs_diff"],
    );
    let mut diag = Table::new("diagnostics", &["eta", "b", "n", "seed", "kind", "x", "y"]);
    for c in cells.iter().zip(&outs) {
        for r in &c.1.diagnostics {
            diag.push(r.clone());
        }
    }
    for &eta in &spec.eta {
        for &b in &spec.b {
            let mut baseline = Vec::new();
            for rep in 0..spec.seeds {
                let o = lookup(eta, b, None, rep);
                online.push(vec![
                    eta.into(),
                    b.into(),
                    rep.into(),
                    o.chains.into(),
                    o.diverged.into(),
                    o.alpha.into(),
                    o.flag.clone().into(),
                ]);
                baseline.push(o.alpha);
            }
            // Online compared with itself: the n = infinity sentinel.
            let self_diff: Vec<f64> = baseline.iter().filter(|a| a.is_finite()).map(|a| (a - a).abs()).collect();
            push_spread(&mut diff, eta, b, None, &self_diff);
            for &n in &spec.n {
                let mut alphas = Vec::new();
                let mut diffs = Vec::new();
                for rep in 0..spec.seeds {
                    let o = lookup(eta, b, Some(n), rep);
                    let d = (o.alpha - baseline[rep]).abs();
                    runs.push(vec![
                        eta.into(),
                        b.into(),
                        n.into(),
                        rep.into(),
                        o.chains.into(),
                        o.diverged.into(),
                        o.alpha.into(),
                        baseline[rep].into(),
                        d.into(),
                        o.flag.clone().into(),
                    ]);
                    if o.alpha.is_finite() {
                        alphas.push(o.alpha);
                    }
                    if d.is_finite() {
                        diffs.push(d);
                    }
                }
                push_spread(&mut offline, eta, b, Some(n), &alphas);
                push_spread(&mut diff, eta, b, Some(n), &diffs);
            }
        }
    }
    Ok(vec![online, offline, runs, diff, diag])
}

/// Appends `(eta, b, n, count, min|median, median|min, max)` depending on the
/// table's column order.
fn push_spread(t: &mut Table, eta: f64, b: usize, n: Option<usize>, v: &[f64]) {
    let (min, med, max) = if v.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            v.iter().cloned().fold(f64::INFINITY, f64::min),
            stats::median(v),
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let stats = if t.columns[4].starts_with("median") {
        [med, min, max]
    } else {
        [min, med, max]
    };
    t.push(vec![
        eta.into(),
        b.into(),
        n_value(n),
        v.len().into(),
        stats[0].into(),
        stats[1].into(),
        stats[2].into(),
    ]);
}

fn tail_cell(spec: &ExperimentSpec, c: &TailCell) -> Result<TailOut> {
    let model = truth_model(spec, c.rep)?;
    let ens = linreg_ensemble(spec, &model, c.rep, c.eta, c.b, c.n)?;
    let est_seed = cell_seed(
        spec.seed(),
        &[TAG_ESTIMATE, c.rep as u64, c.eta.to_bits(), c.b as u64, n_key(c.n)],
    );
    let (alpha, flag) = soften(ensemble_alpha(&ens, spec.k1, spec.k2, est_seed))?;
    let mut diagnostics = Vec::new();
    if c.rep == 0 {
        if let Ok(dg) = tail_diagnostics(&ens, spec.bins.max(1)) {
            let mut emit = |kind: &str, pts: &[(f64, f64)]| {
                for &(x, y) in pts {
                    diagnostics.push(vec![
                        c.eta.into(),
                        c.b.into(),
                        n_value(c.n),
                        c.rep.into(),
                        kind.into(),
                        x.into(),
                        y.into(),
                    ]);
                }
            };
            emit("ccdf", &dg.ccdf_points);
            emit("qq", &dg.qq_points);
            emit("loglog", &dg.loglog_hist);
        }
    }
    Ok(TailOut {
        alpha,
        chains: ens.chains(),
        diverged: ens.diverged_count(),
        flag,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// theory suite

/// Quantile levels of the online norm law at which the sandwich is checked.
const SANDWICH_LEVELS: [f64; 7] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];
/// Fraction of the largest order statistics used for CCDF slopes.
const UPPER_DECILE: f64 = 0.1;
/// Points on the ergodicity probe's time grid.
const PROBE_POINTS: usize = 16;

/// Minibatch pairs flattened to `(A entries, b entries)`.
fn pair_vectors(pairs: impl Iterator<Item = MinibatchPair>) -> Vec<Vec<f64>> {
    pairs
        .map(|p| {
            let mut v = p.a_mat;
            v.extend_from_slice(&p.b_vec);
            v
        })
        .collect()
}

/// Two-sample `W_2` between minibatch-pair laws of the dataset and of fresh
/// data. With `b = 1` and `n` within the assignment cap the dataset side is
/// the exact empirical measure.
fn pair_law_distance(
    model: &LinRegModel,
    data: &crate::data::LinRegDataset,
    b: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = RngStream::new(seed, 0).rng();
    let n = data.len();
    let exact = b == 1 && n <= ASSIGNMENT_CAP;
    let m = if exact { n } else { ASSIGNMENT_CAP.min(n) };
    let d = model.dim();
    let sampled: Vec<MinibatchPair> = if exact {
        (0..n).map(|i| MinibatchPair::from_indices(data, vec![i])).collect()
    } else {
        (0..m)
            .map(|_| crate::data::sample_minibatch_pair(data, b, &mut rng))
            .collect::<Result<_>>()?
    };
    let mut feats = vec![0.0; d * b];
    let mut fresh = Vec::with_capacity(m);
    for _ in 0..m {
        let mut targets = Vec::with_capacity(b);
        for row in feats.chunks_exact_mut(d) {
            targets.push(model.draw(&mut rng, row).0);
        }
        let pts = feats.chunks_exact(d).zip(&targets).map(|(f, &t)| crate::data::Point {
            features: f,
            target: t,
            lambda: 0.0,
        });
        fresh.push(MinibatchPair::from_points(d, pts));
    }
    let x = pair_vectors(sampled.into_iter());
    let y = pair_vectors(fresh.into_iter());
    Ok(wp_assignment(&x, &y, 2.0)?.distance)
}

struct TheoryCell {
    eta: f64,
    b: usize,
    n: usize,
    rep: usize,
}

/// Tail sandwich, Wasserstein bound and geometric-ergodicity checks in d = 1.
pub fn exp_theory_suite(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    check_scenario(spec, Scenario::TheorySuite)?;
    // Online references, one per (eta, b, rep).
    let mut ref_keys = Vec::new();
    for &eta in &spec.eta {
        for &b in &spec.b {
            for rep in 0..spec.seeds {
                ref_keys.push((eta, b, rep));
            }
        }
    }
    let refs: Vec<(LinRegModel, ChainEnsemble)> = ref_keys
        .par_iter()
        .map(|&(eta, b, rep)| {
            let model = truth_model(spec, rep)?;
            let ens = linreg_ensemble(spec, &model, rep, eta, b, None)?;
            Ok((model, ens))
        })
        .collect::<Result<_>>()?;
    let reference = |eta: f64, b: usize, rep: usize| {
        let i = ref_keys
            .iter()
            .position(|&(e, bb, r)| e.to_bits() == eta.to_bits() && bb == b && r == rep)
            .expect("reference exists");
        &refs[i]
    };
    // Contraction moments, one per (eta, b).
    let mut deltas = Vec::new();
    for &eta in &spec.eta {
        for &b in &spec.b {
            let seed = cell_seed(spec.seed(), &[TAG_CONTRACTION, eta.to_bits(), b as u64]);
            let delta = if eta > 0.0 {
                contraction_stats_quadratic(eta, spec.sigma, b, 1, spec.mc, RngStream::new(seed, 0))?.delta
            } else {
                1.0
            };
            deltas.push(((eta, b), delta));
        }
    }
    let delta_of = |eta: f64, b: usize| {
        deltas
            .iter()
            .find(|((e, bb), _)| e.to_bits() == eta.to_bits() && *bb == b)
            .expect("delta exists")
            .1
    };

    let mut cells = Vec::new();
    for &eta in &spec.eta {
        for &b in &spec.b {
            for &n in &spec.n {
                for rep in 0..spec.seeds {
                    cells.push(TheoryCell { eta, b, n, rep });
                }
            }
        }
    }
    type CellRows = (Vec<Vec<Value>>, Vec<Value>, Vec<Value>);
    let outs: Vec<CellRows> = cells
        .par_iter()
        .map(|c| {
            let (model, online) = reference(c.eta, c.b, c.rep);
            theory_cell(spec, c, model, online, delta_of(c.eta, c.b))
                .map_err(|e| e.in_cell(cell_label(c.eta, c.b, Some(c.n), c.rep)))
        })
        .collect::<Result<_>>()?;
    let mut sandwich = Table::new(
        "sandwich",
        &["eta", "b", "n", "seed", "t", "ccdf_offline", "lower", "upper", "inside", "flag"],
    );
    let mut slopes = Table::new(
        "sandwich_slopes",
        &["eta", "b", "n", "seed", "online_slope", "offline_slope", "abs_gap", "w1_norms", "flag"],
    );
    let mut thm4 = Table::new(
        "thm4",
        &["eta", "b", "n", "seed", "lhs", "c0", "delta", "wp", "rhs", "holds", "flag"],
    );
    for (rows, s, t) in outs {
        for r in rows {
            sandwich.push(r);
        }
        slopes.push(s);
        thm4.push(t);
    }

    let mut ergo = Table::new("ergodicity", &["eta", "b", "k", "w1"]);
    let mut ergo_fit = Table::new("ergodicity_fit", &["eta", "b", "points", "slope", "intercept", "r2", "flag"]);
    let probes: Vec<(f64, usize)> = spec.eta.iter().flat_map(|&e| spec.b.iter().map(move |&b| (e, b))).collect();
    let probe_out: Vec<(Vec<(usize, f64)>, Option<stats::LineFit>)> = probes
        .par_iter()
        .map(|&(eta, b)| {
            let (model, online) = reference(eta, b, 0);
            ergodicity_probe(spec, model, online, eta, b)
        })
        .collect::<Result<_>>()?;
    for (&(eta, b), (curve, fit)) in probes.iter().zip(probe_out) {
        for &(k, w) in &curve {
            ergo.push(vec![eta.into(), b.into(), k.into(), w.into()]);
        }
        let used = curve.iter().filter(|(_, w)| *w > 0.0).count();
        match fit {
            Some(f) => ergo_fit.push(vec![
                eta.into(),
                b.into(),
                used.into(),
                f.slope.into(),
                f.intercept.into(),
                f.r2.into(),
                "".into(),
            ]),
            None => ergo_fit.push(vec![
                eta.into(),
                b.into(),
                used.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                "fewer than two positive distances".into(),
            ]),
        }
    }
    Ok(vec![sandwich, slopes, thm4, ergo, ergo_fit])
}

fn theory_cell(
    spec: &ExperimentSpec,
    c: &TheoryCell,
    model: &LinRegModel,
    online: &ChainEnsemble,
    delta: f64,
) -> Result<(Vec<Vec<Value>>, Vec<Value>, Vec<Value>)> {
    let key = || vec![Value::from(c.eta), c.b.into(), c.n.into(), c.rep.into()];
    let with = |mut rest: Vec<Value>| {
        let mut row = key();
        row.append(&mut rest);
        row
    };
    let data = linreg_dataset(spec, model, c.rep, c.n);
    let seed = cell_seed(spec.seed(), &[TAG_CHAINS, c.rep as u64, c.eta.to_bits(), c.b as u64, c.n as u64]);
    let config = spec.sgd_config(c.eta, c.b, Some(c.n));
    let offline =
        ensemble_quadratic::<LinRegModel, _>(&config, Source::Offline(&data), &spec.init(), spec.chains, seed)?;

    let samples = ensure_stable(online)
        .and_then(|_| ensure_stable(&offline))
        .and_then(|_| Ok((online.scalar_sample()?, offline.scalar_sample()?, online.norm_sample()?, offline.norm_sample()?)));
    let (on_x, off_x, on_norm, off_norm) = match samples {
        Ok(s) => s,
        Err(e) if flaggable(&e) => {
            let f = flag_text(&e);
            let nan = || Value::Float(f64::NAN);
            let sw = vec![with(vec![nan(), nan(), nan(), nan(), false.into(), f.clone().into()])];
            let sl = with(vec![nan(), nan(), nan(), nan(), f.clone().into()]);
            let t4 = with(vec![nan(), nan(), delta.into(), nan(), nan(), false.into(), f.into()]);
            return Ok((sw, sl, t4));
        }
        Err(e) => return Err(e),
    };

    // (a) sandwich: power-law envelope fitted to the online norm tail.
    let w1_norms = wp_empirical_1d(&on_norm, &off_norm, 1.0)?.distance;
    let on_fit = ccdf_tail_slope(&on_norm, UPPER_DECILE);
    let off_fit = ccdf_tail_slope(&off_norm, UPPER_DECILE);
    let mut sandwich = Vec::new();
    let slope_row;
    match (on_fit, off_fit) {
        (Some(on), Some(off)) => {
            let alpha = -on.slope;
            let cst = on.intercept.exp();
            let grid: Vec<f64> = SANDWICH_LEVELS.iter().map(|&q| on_norm.quantile(q)).collect();
            for (t, p) in tail_ccdf(&off_norm, &grid) {
                let (lower, upper) = if t > 0.0 {
                    let env = cst / t.powf(alpha);
                    (env / 2f64.powf(alpha) - w1_norms / t, 2f64.powf(alpha) * env + 2.0 * w1_norms / t)
                } else {
                    (f64::NEG_INFINITY, f64::INFINITY)
                };
                sandwich.push(with(vec![
                    t.into(),
                    p.into(),
                    lower.into(),
                    upper.into(),
                    (lower <= p && p <= upper).into(),
                    "".into(),
                ]));
            }
            slope_row = with(vec![
                on.slope.into(),
                off.slope.into(),
                (off.slope - on.slope).abs().into(),
                w1_norms.into(),
                "".into(),
            ]);
        }
        _ => {
            let f = "too few positive tail points for a slope fit";
            let nan = || Value::Float(f64::NAN);
            sandwich.push(with(vec![nan(), nan(), nan(), nan(), false.into(), f.into()]));
            slope_row = with(vec![nan(), nan(), nan(), w1_norms.into(), f.into()]);
        }
    }

    // (b) Wasserstein bound with p = q = 2.
    let lhs = wp_empirical_1d(&on_x, &off_x, 1.0)?.distance;
    let rms = (off_x.values().iter().map(|v| v * v).sum::<f64>() / off_x.len() as f64).sqrt();
    let c0 = rms + 1.0;
    let pair_seed = cell_seed(spec.seed(), &[TAG_PAIRS, c.rep as u64, c.b as u64, c.n as u64]);
    let wp = pair_law_distance(model, &data, c.b, pair_seed)?;
    let thm4 = match w1_bound_rhs(c0, c.eta, delta, wp) {
        Ok(rhs) => with(vec![
            lhs.into(),
            c0.into(),
            delta.into(),
            wp.into(),
            rhs.into(),
            (lhs <= rhs).into(),
            "".into(),
        ]),
        Err(e) if flaggable(&e) => with(vec![
            lhs.into(),
            c0.into(),
            delta.into(),
            wp.into(),
            f64::NAN.into(),
            false.into(),
            flag_text(&e).into(),
        ]),
        Err(e) => return Err(e),
    };
    Ok((sandwich, slope_row, thm4))
}

/// `W_1(law of X_k, reference)` along a time grid for online chains started
/// `probe_offset` away from the ground truth, plus a fit of `log W_1` on `k`.
fn ergodicity_probe(
    spec: &ExperimentSpec,
    model: &LinRegModel,
    reference: &ChainEnsemble,
    eta: f64,
    b: usize,
) -> Result<(Vec<(usize, f64)>, Option<stats::LineFit>)> {
    let target = match reference.scalar_sample() {
        Ok(s) => s,
        Err(e) if flaggable(&e) => return Ok((Vec::new(), None)),
        Err(e) => return Err(e),
    };
    let horizon = if eta > 0.0 {
        ((3.0 / eta).ceil() as usize).min(spec.iterations)
    } else {
        spec.iterations
    };
    let mut ks: Vec<usize> = (0..PROBE_POINTS).map(|j| j * horizon / (PROBE_POINTS - 1)).collect();
    ks.dedup();
    let config = SgdConfig::online(eta, b, horizon.max(1));
    let x0 = vec![model.x_true[0] + spec.probe_offset];
    let seed = cell_seed(spec.seed(), &[TAG_PROBE, eta.to_bits(), b as u64]);
    let traces: Vec<Vec<f64>> = (0..spec.chains)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64).rng();
            let mut trace = vec![f64::NAN; ks.len()];
            run_chain_quadratic_observed::<_, crate::data::LinRegDataset, _, _>(
                &config,
                Source::Online(model),
                &x0,
                &mut rng,
                |k, x| {
                    if let Ok(j) = ks.binary_search(&k) {
                        trace[j] = x[0];
                    }
                },
            )?;
            Ok(trace)
        })
        .collect::<Result<_>>()?;
    let mut curve = Vec::new();
    for (j, &k) in ks.iter().enumerate() {
        let vals: Vec<f64> = traces.iter().map(|t| t[j]).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            continue;
        }
        let law = EmpiricalSample1D::new(vals)?;
        curve.push((k, wp_empirical_1d(&law, &target, 1.0)?.distance));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|&(k, w)| (k as f64, w.ln()))
        .unzip();
    Ok((curve, stats::fit_line(&xs, &ys)))
}

// ---------------------------------------------------------------------------
// strongly convex suite

#[derive(Clone, Copy)]
struct LogCell {
    gamma: f64,
    mu: f64,
    sigma2: f64,
}

impl LogCell {
    fn bits(&self) -> [u64; 3] {
        [self.gamma.to_bits(), self.mu.to_bits(), self.sigma2.to_bits()]
    }

    fn masked(&self) -> bool {
        self.sigma2 * self.mu >= 2.0
    }

    fn key(&self) -> Vec<Value> {
        vec![self.gamma.into(), self.mu.into(), self.sigma2.into()]
    }
}

/// Closed forms, exponent roots, tails and norm-law distances for the
/// one-dimensional regularised logistic model.
pub fn exp_strongly_convex_suite(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    check_scenario(spec, Scenario::StronglyConvexSuite)?;
    let mut grid = Vec::new();
    for &gamma in &spec.gamma {
        for &mu in &spec.mu {
            for &sigma2 in &spec.sigma2 {
                grid.push(LogCell { gamma, mu, sigma2 });
            }
        }
    }
    let base = spec.seed();
    let with = |c: &LogCell, mut rest: Vec<Value>| {
        let mut row = c.key();
        row.append(&mut rest);
        row
    };

    let mut closed = Table::new(
        "closed_forms",
        &[
            "gamma", "mu", "sigma2", "masked", "er_closed", "er_mc", "er_se", "eR_closed", "curv_mc", "curv_se",
            "eR_mc", "eR_se",
        ],
    );
    let mut expo = Table::new(
        "exponents",
        &["gamma", "mu", "sigma2", "masked", "alpha", "alpha_residual", "beta", "beta_residual", "flag"],
    );
    for c in &grid {
        let model = LogRegModel::new(c.sigma2, c.mu, spec.x_gen)?;
        let [g, m, s] = c.bits();
        let stream = |factor: u64| RngStream::new(cell_seed(base, &[TAG_FACTOR, g, m, s, factor]), 0);
        let draw = |f: LogRegFactor| move |r: &mut rand_chacha::ChaCha8Rng| logreg_factor_draw(&model, c.gamma, f, r);
        let lower = mc_values(spec.mc, stream(0), draw(LogRegFactor::Lower));
        let upper = mc_values(spec.mc, stream(1), draw(LogRegFactor::Upper));
        // The closed form for the upper factor integrates this quantity.
        let curv = mc_values(spec.mc, stream(4), draw(LogRegFactor::Curvature));
        let er = expected_r_closed_form(c.gamma, c.mu)?;
        let (e_r_big, _) = soften(expected_R_closed_form(c.gamma, c.mu, c.sigma2))?;
        closed.push(with(
            c,
            vec![
                c.masked().into(),
                er.into(),
                stats::mean(&lower).into(),
                stats::std_err(&lower).into(),
                e_r_big.into(),
                stats::mean(&curv).into(),
                stats::std_err(&curv).into(),
                stats::mean(&upper).into(),
                stats::std_err(&upper).into(),
            ],
        ));
        if c.masked() {
            let nan = || Value::Float(f64::NAN);
            expo.push(with(c, vec![true.into(), nan(), nan(), nan(), nan(), "masked: sigma2 * mu >= 2".into()]));
            continue;
        }
        let root = |f: LogRegFactor, label: u64| {
            solve_exponent_general(
                |r: &mut rand_chacha::ChaCha8Rng| logreg_factor_draw(&model, c.gamma, f, r),
                spec.mc,
                DEFAULT_TOL,
                stream(label),
            )
        };
        let mut flags = Vec::new();
        let mut pick = |r: Result<crate::theory::ExponentEstimate>| -> Result<(f64, f64)> {
            match r {
                Ok(e) => Ok((e.exponent, e.residual)),
                Err(e) if flaggable(&e) => {
                    flags.push(flag_text(&e));
                    Ok((f64::NAN, f64::NAN))
                }
                Err(e) => Err(e),
            }
        };
        let (alpha, ar) = pick(root(LogRegFactor::Lower, 2))?;
        let (beta, br) = pick(root(LogRegFactor::Upper, 3))?;
        expo.push(with(
            c,
            vec![
                false.into(),
                alpha.into(),
                ar.into(),
                beta.into(),
                br.into(),
                flags.join("; ").into(),
            ],
        ));
    }

    // Ensembles: online (n = None) and offline per n, per replicate.
    let mut jobs = Vec::new();
    for (ci, c) in grid.iter().enumerate() {
        if c.masked() {
            continue;
        }
        for rep in 0..spec.seeds {
            jobs.push((ci, rep, None));
            for &n in &spec.n {
                jobs.push((ci, rep, Some(n)));
            }
        }
    }
    let ens: Vec<ChainEnsemble> = jobs
        .par_iter()
        .map(|&(ci, rep, n)| {
            let c = &grid[ci];
            let model = LogRegModel::new(c.sigma2, c.mu, spec.x_gen)?;
            let [g, m, s] = c.bits();
            let config = spec.sgd_config(c.gamma, 1, n);
            let seed = cell_seed(base, &[TAG_CHAINS, g, m, s, rep as u64, n_key(n)]);
            match n {
                None => ensemble_general::<_, _, crate::data::LogRegDataset>(
                    &LogisticLoss,
                    &config,
                    Source::Online(&model),
                    &Init::Zero,
                    spec.chains,
                    seed,
                ),
                Some(n) => {
                    let mut rng = RngStream::new(cell_seed(base, &[TAG_DATA, g, m, s, rep as u64, n as u64]), 0).rng();
                    let data = sample_logreg_dataset(&model, n, &mut rng);
                    ensemble_general::<_, LogRegModel, _>(
                        &LogisticLoss,
                        &config,
                        Source::Offline(&data),
                        &Init::Zero,
                        spec.chains,
                        seed,
                    )
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut tails = Table::new(
        "tails",
        &["gamma", "mu", "sigma2", "n", "seed", "chains", "diverged", "alpha_hat", "flag"],
    );
    let mut w1 = Table::new("w1_norms", &["gamma", "mu", "sigma2", "n", "seed", "w1", "flag"]);
    for (ci, c) in grid.iter().enumerate() {
        if c.masked() {
            let nan = || Value::Float(f64::NAN);
            let f = || Value::from("masked: sigma2 * mu >= 2");
            tails.push(with(c, vec![nan(), nan(), 0usize.into(), 0usize.into(), nan(), f()]));
            w1.push(with(c, vec![nan(), nan(), nan(), f()]));
            continue;
        }
        let [g, m, s] = c.bits();
        for rep in 0..spec.seeds {
            let find = |n: Option<usize>| {
                let j = jobs.iter().position(|&(i, r, nn)| i == ci && r == rep && nn == n).expect("job exists");
                &ens[j]
            };
            let online = find(None);
            for n in std::iter::once(None).chain(spec.n.iter().map(|&n| Some(n))) {
                let e = find(n);
                let est = cell_seed(base, &[TAG_ESTIMATE, g, m, s, rep as u64, n_key(n)]);
                let (alpha, flag) = soften(ensemble_alpha(e, spec.k1, spec.k2, est))?;
                tails.push(with(
                    c,
                    vec![
                        n_value(n),
                        rep.into(),
                        e.chains().into(),
                        e.diverged_count().into(),
                        alpha.into(),
                        flag.into(),
                    ],
                ));
                if n.is_some() {
                    let dist = ensure_stable(online)
                        .and_then(|_| ensure_stable(e))
                        .and_then(|_| Ok(wp_empirical_1d(&online.norm_sample()?, &e.norm_sample()?, 1.0)?.distance));
                    let (v, flag) = soften(dist)?;
                    w1.push(with(c, vec![n_value(n), rep.into(), v.into(), flag.into()]));
                }
            }
        }
    }
    Ok(vec![closed, expo, tails, w1])
}

// ---------------------------------------------------------------------------
// estimator calibration

/// Mean and spread of the block estimator on exact symmetric stable samples.
pub fn exp_estimator_calibration(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    check_scenario(spec, Scenario::EstimatorCalibration)?;
    let mut t = Table::new(
        "calibration",
        &["alpha", "m", "k1", "k2", "trials", "mean_alpha_hat", "std_alpha_hat", "bias", "flagged"],
    );
    for &alpha in &spec.alpha {
        for &m in &spec.m {
            let (d1, d2) = default_blocks(m);
            let (k1, k2) = (spec.k1.unwrap_or(d1), spec.k2.unwrap_or(d2));
            let est: Vec<(f64, String)> = (0..spec.trials)
                .into_par_iter()
                .map(|trial| {
                    let seed = cell_seed(spec.seed(), &[TAG_STABLE, alpha.to_bits(), m as u64, trial as u64]);
                    let stream = RngStream::new(seed, 0);
                    let sample = sample_stable(alpha, m, stream)?;
                    let mut rng = stream.derive(TAG_ESTIMATE).rng();
                    soften(estimate_alpha(&sample, k1, k2, &mut rng).map(|e| e.alpha_hat))
                })
                .collect::<Result<_>>()?;
            let ok: Vec<f64> = est.iter().map(|e| e.0).filter(|v| v.is_finite()).collect();
            let (mean, std) = if ok.len() >= 2 {
                (stats::mean(&ok), stats::std_dev(&ok))
            } else {
                (f64::NAN, f64::NAN)
            };
            t.push(vec![
                alpha.into(),
                m.into(),
                k1.into(),
                k2.into(),
                spec.trials.into(),
                mean.into(),
                std.into(),
                (mean - alpha).into(),
                (spec.trials - ok.len()).into(),
            ]);
        }
    }
    Ok(vec![t])
}

// ---------------------------------------------------------------------------
// presets

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub specs: Vec<ExperimentSpec>,
}

/// Named presets, in a fixed order.
pub fn presets() -> Vec<Preset> {
    let d = ExperimentSpec::default;
    vec![
        Preset {
            name: "desk_default",
            description: "every scenario at desk scale (a few minutes on a laptop)",
            specs: vec![
                ExperimentSpec {
                    name: "histograms".into(),
                    scenario: Scenario::Histograms,
                    d: 10,
                    eta: vec![0.01],
                    b: vec![1],
                    n: vec![50, 200, 500],
                    chains: 200,
                    iterations: 1000,
                    seeds: 2,
                    init: InitKind::Prior,
                    ..d()
                },
                ExperimentSpec {
                    name: "tail_suite".into(),
                    scenario: Scenario::TailSuite,
                    chains: 400,
                    iterations: 2000,
                    seeds: 3,
                    bins: 20,
                    ..d()
                },
                ExperimentSpec {
                    name: "theory_suite".into(),
                    scenario: Scenario::TheorySuite,
                    eta: vec![0.005],
                    b: vec![1],
                    n: vec![50, 200],
                    chains: 400,
                    iterations: 2000,
                    seeds: 3,
                    mc: 20_000,
                    ..d()
                },
                ExperimentSpec {
                    name: "strongly_convex_suite".into(),
                    scenario: Scenario::StronglyConvexSuite,
                    gamma: vec![0.1],
                    mu: vec![0.1],
                    sigma2: vec![1.0, 25.0],
                    b: vec![1],
                    n: vec![50, 500],
                    chains: 400,
                    iterations: 1000,
                    seeds: 2,
                    mc: 50_000,
                    ..d()
                },
                ExperimentSpec {
                    name: "calibration".into(),
                    scenario: Scenario::EstimatorCalibration,
                    alpha: vec![1.2, 1.5, 1.8, 2.0],
                    m: vec![10_000],
                    trials: 20,
                    ..d()
                },
            ],
        },
        Preset {
            name: "paper_grid_4_1",
            description: "full d=100 grid over eta, b and n with 1600 chains per cell (overnight)",
            specs: vec![ExperimentSpec {
                name: "paper_grid_4_1".into(),
                scenario: Scenario::TailSuite,
                d: 100,
                eta: (1..=10).map(|i| i as f64 / 1000.0).collect(),
                b: vec![1, 5, 10, 15, 20],
                n: vec![20, 50, 100, 200, 300, 400, 500],
                chains: 1600,
                iterations: 1000,
                seeds: 10,
                init: InitKind::Prior,
                ..d()
            }],
        },
        Preset {
            name: "appendix_f",
            description: "one-dimensional regularised logistic regression: closed forms, roots, tails",
            specs: vec![ExperimentSpec {
                name: "appendix_f".into(),
                scenario: Scenario::StronglyConvexSuite,
                gamma: vec![0.05, 0.1, 0.2],
                mu: vec![0.1, 0.5],
                sigma2: vec![1.0, 3.0, 5.0],
                b: vec![1],
                n: vec![50, 200, 500],
                chains: 1000,
                iterations: 2000,
                seeds: 10,
                mc: 1_000_000,
                ..d()
            }],
        },
        Preset {
            name: "calibration",
            description: "block tail-index estimator on exact stable samples, m up to 10^6",
            specs: vec![ExperimentSpec {
                name: "calibration".into(),
                scenario: Scenario::EstimatorCalibration,
                alpha: vec![1.2, 1.5, 1.8, 2.0],
                m: vec![1_000_000],
                k1: Some(100),
                k2: Some(100),
                trials: 20,
                ..d()
            }],
        },
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_tail() -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            scenario: Scenario::TailSuite,
            eta: vec![0.01],
            b: vec![1],
            n: vec![20, 40],
            chains: 120,
            iterations: 300,
            seeds: 2,
            base_seed: Some(5),
            ..Default::default()
        }
    }

    #[test]
    fn value_formatting() {
        assert_eq!(Value::Float(0.1).to_string(), "0.1");
        assert_eq!(Value::Float(f64::INFINITY).to_string(), "inf");
        assert_eq!(Value::Float(2.0).to_string(), "2");
        assert_eq!(Value::Float(6.25e-11).to_string(), "6.25e-11");
        assert_eq!(Value::Float(-3e20).to_string(), "-3e20");
        for x in [6.150813192107307e-11, 0.1 + 0.2, 1e300, -7.5e-6] {
            assert_eq!(Value::Float(x).to_string().parse::<f64>().unwrap(), x);
        }
        assert_eq!(Value::Int(-3).to_string(), "-3");
        assert_eq!(Value::from("a,b").to_string(), "\"a,b\"");
        assert_eq!(Value::from("say \"x\", y").to_string(), "\"say \"\"x\"\", y\"");
    }

    #[test]
    fn table_csv_layout() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![1usize.into(), 0.5.into()]);
        assert_eq!(t.to_csv_string(), "a,b\n1,0.5\n");
        assert_eq!(t.f64_column("b").unwrap(), vec![0.5]);
    }

    #[test]
    fn validation_catches_bad_grids() {
        let mut s = small_tail();
        s.eta.clear();
        assert!(s.validate().is_err());
        let mut s = small_tail();
        s.b = vec![50];
        assert!(s.validate().is_err());
        let s = ExperimentSpec {
            scenario: Scenario::TheorySuite,
            d: 2,
            ..small_tail()
        };
        assert!(s.validate().is_err());
        assert!(exp_histograms(&small_tail()).is_err());
    }

    #[test]
    fn cell_seeds_depend_on_parts_only() {
        assert_eq!(cell_seed(1, &[2, 3]), cell_seed(1, &[2, 3]));
        assert_ne!(cell_seed(1, &[2, 3]), cell_seed(1, &[3, 2]));
        assert_ne!(cell_seed(1, &[2]), cell_seed(2, &[2]));
    }

    #[test]
    fn tail_suite_tables_and_sentinel() {
        let r = run_experiment(&small_tail()).unwrap();
        for name in Scenario::TailSuite.tables() {
            assert!(!r.table(name).unwrap().rows.is_empty(), "{name}");
        }
        let diff = r.table("difference").unwrap();
        let n = diff.f64_column("n").unwrap();
        let med = diff.f64_column("median_abs_diff").unwrap();
        let i = n.iter().position(|v| v.is_infinite()).unwrap();
        assert_eq!(med[i], 0.0);
        assert_eq!(diff.rows.len(), 3);
    }

    #[test]
    fn grid_order_does_not_change_values() {
        let a = run_experiment(&small_tail()).unwrap();
        let mut s = small_tail();
        s.n.reverse();
        let b = run_experiment(&s).unwrap();
        let rows_a = &a.table("offline_runs").unwrap().rows;
        let rows_b = &b.table("offline_runs").unwrap().rows;
        assert_eq!(rows_a.len(), rows_b.len());
        for r in rows_a {
            assert!(rows_b.contains(r));
        }
    }

    #[test]
    fn histogram_zero_step_has_no_outliers() {
        let s = ExperimentSpec {
            name: "h".into(),
            scenario: Scenario::Histograms,
            d: 3,
            eta: vec![0.0],
            b: vec![1],
            n: vec![10],
            chains: 100,
            iterations: 10,
            seeds: 1,
            bins: 7,
            ..Default::default()
        };
        let r = run_experiment(&s).unwrap();
        let sum = r.table("summary").unwrap();
        assert_eq!(sum.f64_column("outliers").unwrap(), vec![0.0]);
        assert_eq!(sum.f64_column("mean").unwrap(), vec![0.0]);
        assert_eq!(r.table("histogram").unwrap().rows.len(), 7);
    }

    #[test]
    fn calibration_rows() {
        let s = ExperimentSpec {
            name: "c".into(),
            scenario: Scenario::EstimatorCalibration,
            alpha: vec![1.5],
            m: vec![10_000],
            trials: 5,
            ..Default::default()
        };
        let t = run_experiment(&s).unwrap().tables.remove(0);
        assert_eq!(t.rows.len(), 1);
        assert!(t.f64_column("bias").unwrap()[0].abs() < 0.3);
    }

    #[test]
    fn presets_are_valid_and_ordered() {
        let names: Vec<_> = presets().iter().map(|p| p.name).collect();
        assert_eq!(names, ["desk_default", "paper_grid_4_1", "appendix_f", "calibration"]);
        for p in presets() {
            for s in &p.specs {
                s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
            }
        }
    }
}
