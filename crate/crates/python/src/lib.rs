//! Python bindings for the `htsgd` core crate.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use htsgd_core::data;
use htsgd_core::experiments::{self, Value};
use htsgd_core::runfile::RunFile;
use htsgd_core::sgd::{self, Init, SgdConfig, Source};
use htsgd_core::{tail, theory, transport, EmpiricalSample1D, Error, RngStream};

fn py_err(e: Error) -> PyErr {
    match e.root() {
        Error::Io(_) | Error::Json(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sample(values: Vec<f64>) -> PyResult<EmpiricalSample1D> {
    EmpiricalSample1D::new(values).map_err(py_err)
}

#[pyclass(frozen, get_all, module = "htsgd")]
struct TailIndexEstimate {
    alpha_hat: f64,
    k1: usize,
    k2: usize,
    m_used: usize,
}

#[pymethods]
impl TailIndexEstimate {
    fn __repr__(&self) -> String {
        format!(
            "TailIndexEstimate(alpha_hat={}, k1={}, k2={}, m_used={})",
            self.alpha_hat, self.k1, self.k2, self.m_used
        )
    }
}

#[pyclass(frozen, get_all, module = "htsgd")]
struct ExponentEstimate {
    exponent: f64,
    residual: f64,
    bracket: (f64, f64),
    mc_samples: usize,
}

#[pymethods]
impl ExponentEstimate {
    fn __repr__(&self) -> String {
        format!("ExponentEstimate(exponent={}, residual={:e})", self.exponent, self.residual)
    }
}

#[pyclass(frozen, get_all, module = "htsgd")]
struct RateFit {
    slope: f64,
    intercept: f64,
    r2: f64,
    points: Vec<(f64, f64)>,
}

#[pymethods]
impl RateFit {
    fn __repr__(&self) -> String {
        format!("RateFit(slope={}, intercept={}, r2={})", self.slope, self.intercept, self.r2)
    }
}

/// Final iterates of an SGD ensemble.
#[pyclass(frozen, get_all, module = "htsgd")]
struct Ensemble {
    iterates: Vec<Vec<f64>>,
    diverged: Vec<bool>,
}

#[pymethods]
impl Ensemble {
    fn norms(&self) -> Vec<f64> {
        self.iterates
            .iter()
            .zip(&self.diverged)
            .filter(|(_, d)| !**d)
            .map(|(r, _)| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Block tail-index estimate on the pooled, centred iterates.
    #[pyo3(signature = (seed=0, k1=None, k2=None))]
    fn tail_index(&self, seed: u64, k1: Option<usize>, k2: Option<usize>) -> PyResult<f64> {
        let rows: Vec<sgd::ChainOutcome> = self
            .iterates
            .iter()
            .zip(&self.diverged)
            .map(|(x, &d)| sgd::ChainOutcome { x: x.clone(), diverged: d })
            .collect();
        let d = self.iterates.first().map_or(0, |r| r.len());
        let ens = sgd::ChainEnsemble::from_rows(rows, d, SgdConfig::online(0.0, 1, 1), 0);
        experiments::ensemble_alpha(&ens, k1, k2, seed).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.iterates.len()
    }
}

/// `(x_true, features, targets)` of a synthetic linear-regression dataset.
#[pyfunction]
#[pyo3(signature = (d, n, sigma=1.0, sigma_x=3.0, sigma_y=3.0, seed=0))]
fn gen_linreg_dataset(
    d: usize,
    n: usize,
    sigma: f64,
    sigma_x: f64,
    sigma_y: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let ds = data::gen_linreg_dataset(d, n, sigma, sigma_x, sigma_y, RngStream::new(seed, 0)).map_err(py_err)?;
    let rows = (0..ds.n()).map(|i| ds.row(i).to_vec()).collect();
    Ok((ds.x_true.clone(), rows, ds.targets.clone()))
}

/// Runs `chains` independent linear-regression SGD chains. Offline when `n`
/// is given (one dataset of size `n`), online otherwise.
#[pyfunction]
#[pyo3(signature = (eta, b, iterations, chains, seed=0, d=1, n=None, sigma=1.0, sigma_x=3.0, sigma_y=3.0, init="zero"))]
#[allow(clippy::too_many_arguments)]
fn run_linreg_ensemble(
    py: Python<'_>,
    eta: f64,
    b: usize,
    iterations: usize,
    chains: usize,
    seed: u64,
    d: usize,
    n: Option<usize>,
    sigma: f64,
    sigma_x: f64,
    sigma_y: f64,
    init: &str,
) -> PyResult<Ensemble> {
    let init = match init {
        "zero" => Init::Zero,
        "prior" => Init::Prior { sigma_x },
        other => return Err(PyValueError::new_err(format!("init must be 'zero' or 'prior', got {other:?}"))),
    };
    let ens = py.detach(|| -> Result<_, Error> {
        let mut rng = RngStream::new(seed, 0).derive(1).rng();
        let model = data::LinRegModel::with_random_truth(d, sigma, sigma_x, sigma_y, &mut rng)?;
        match n {
            None => sgd::ensemble_quadratic::<_, data::LinRegDataset>(
                &SgdConfig::online(eta, b, iterations),
                Source::Online(&model),
                &init,
                chains,
                seed,
            ),
            Some(n) => {
                let ds = data::sample_linreg_dataset(&model, n, sigma_x, &mut rng);
                sgd::ensemble_quadratic::<data::LinRegModel, _>(
                    &SgdConfig::offline(eta, b, n, iterations),
                    Source::Offline(&ds),
                    &init,
                    chains,
                    seed,
                )
            }
        }
    });
    let ens = ens.map_err(py_err)?;
    Ok(Ensemble {
        iterates: (0..ens.chains()).map(|i| ens.row(i).to_vec()).collect(),
        diverged: ens.diverged.clone(),
    })
}

/// Exact symmetric alpha-stable draws.
#[pyfunction]
#[pyo3(signature = (alpha, m, seed=0))]
fn sample_stable(py: Python<'_>, alpha: f64, m: usize, seed: u64) -> PyResult<Vec<f64>> {
    py.detach(|| data::sample_stable(alpha, m, RngStream::new(seed, 0)))
        .map(|s| s.into_values())
        .map_err(py_err)
}

/// Block tail-index estimator; blocks default to `floor(sqrt(m))`.
#[pyfunction]
#[pyo3(signature = (values, k1=None, k2=None, seed=0))]
fn estimate_alpha(values: Vec<f64>, k1: Option<usize>, k2: Option<usize>, seed: u64) -> PyResult<TailIndexEstimate> {
    let s = sample(values)?;
    let (d1, d2) = tail::default_blocks(s.len());
    let mut rng = RngStream::new(seed, 0).rng();
    let e = tail::estimate_alpha(&s, k1.unwrap_or(d1), k2.unwrap_or(d2), &mut rng).map_err(py_err)?;
    Ok(TailIndexEstimate {
        alpha_hat: e.alpha_hat,
        k1: e.k1,
        k2: e.k2,
        m_used: e.m_used,
    })
}

/// Root of `E ||I - eta A||^alpha = 1` for linear-regression SGD.
#[pyfunction]
#[pyo3(signature = (eta, b, d=1, sigma=1.0, mc=100_000, seed=0, tol=theory::DEFAULT_TOL))]
fn solve_alpha_quadratic(
    py: Python<'_>,
    eta: f64,
    b: usize,
    d: usize,
    sigma: f64,
    mc: usize,
    seed: u64,
    tol: f64,
) -> PyResult<ExponentEstimate> {
    let e = py
        .detach(|| theory::solve_alpha_quadratic(eta, sigma, b, d, mc, tol, RngStream::new(seed, 0)))
        .map_err(py_err)?;
    Ok(ExponentEstimate {
        exponent: e.exponent,
        residual: e.residual,
        bracket: e.bracket,
        mc_samples: e.mc_samples,
    })
}

#[pyfunction]
fn expected_r_closed_form(gamma: f64, mu: f64) -> PyResult<f64> {
    theory::expected_r_closed_form(gamma, mu).map_err(py_err)
}

#[pyfunction(name = "expected_R_closed_form")]
fn expected_upper_closed_form(gamma: f64, mu: f64, sigma2: f64) -> PyResult<f64> {
    theory::expected_R_closed_form(gamma, mu, sigma2).map_err(py_err)
}

#[pyfunction]
fn w1_bound_rhs(c0: f64, eta: f64, delta: f64, transport_distance: f64) -> PyResult<f64> {
    theory::w1_bound_rhs(c0, eta, delta, transport_distance).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x, y, p=1.0))]
fn wp_empirical_1d(x: Vec<f64>, y: Vec<f64>, p: f64) -> PyResult<f64> {
    Ok(transport::wp_empirical_1d(&sample(x)?, &sample(y)?, p).map_err(py_err)?.distance)
}

#[pyfunction]
fn w1_cdf_integral(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    Ok(transport::w1_cdf_integral(&sample(x)?, &sample(y)?).distance)
}

/// Exact `W_1` between equal-size point clouds (rows are points).
#[pyfunction]
fn w1_assignment(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(transport::w1_assignment_oracle(&x, &y).map_err(py_err)?.distance)
}

#[pyfunction]
fn norm_project(points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    transport::norm_project(&points).map(|s| s.into_values()).map_err(py_err)
}

#[pyfunction]
fn fit_rate(n_grid: Vec<usize>, distances: Vec<f64>) -> PyResult<RateFit> {
    let f = transport::fit_rate(&n_grid, &distances).map_err(py_err)?;
    Ok(RateFit {
        slope: f.slope,
        intercept: f.intercept,
        r2: f.r2,
        points: f.points,
    })
}

/// `[(name, description)]` of the built-in presets.
#[pyfunction]
fn presets() -> Vec<(&'static str, &'static str)> {
    experiments::presets().iter().map(|p| (p.name, p.description)).collect()
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Int(i) => i.into_pyobject(py)?.into_any(),
        Value::Float(f) => f.into_pyobject(py)?.into_any(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Text(s) => s.into_pyobject(py)?.into_any(),
    })
}

/// Runs every spec of a TOML run file and returns
/// `{spec name: {table name: {"columns": [...], "rows": [[...], ...]}}}`.
#[pyfunction]
#[pyo3(signature = (text, overrides=Vec::new()))]
fn run_toml<'py>(py: Python<'py>, text: &str, overrides: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let mut rf = RunFile::parse(text).map_err(py_err)?;
    rf.apply_overrides(&overrides).map_err(py_err)?;
    let specs = rf.resolved_specs();
    let results = py
        .detach(|| specs.iter().map(experiments::run_experiment).collect::<Result<Vec<_>, _>>())
        .map_err(py_err)?;
    let out = PyDict::new(py);
    for r in results {
        let tables = PyDict::new(py);
        for t in &r.tables {
            let entry = PyDict::new(py);
            entry.set_item("columns", &t.columns)?;
            let rows = t
                .rows
                .iter()
                .map(|row| row.iter().map(|v| value_to_py(py, v)).collect::<PyResult<Vec<_>>>())
                .collect::<PyResult<Vec<_>>>()?;
            entry.set_item("rows", rows)?;
            tables.set_item(&t.name, entry)?;
        }
        out.set_item(&r.spec.name, tables)?;
    }
    Ok(out)
}

#[pymodule]
fn htsgd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TailIndexEstimate>()?;
    m.add_class::<ExponentEstimate>()?;
    m.add_class::<RateFit>()?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(gen_linreg_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_linreg_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(sample_stable, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(solve_alpha_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(expected_r_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(expected_upper_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(w1_bound_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(wp_empirical_1d, m)?)?;
    m.add_function(wrap_pyfunction!(w1_cdf_integral, m)?)?;
    m.add_function(wrap_pyfunction!(w1_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(norm_project, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_toml, m)?)?;
    Ok(())
}
