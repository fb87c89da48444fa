//! Python bindings. Vectors cross the boundary as lists of floats; reports
//! and configs cross as JSON text.

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use implicit_em::diagnostics::{self, ObjectiveTag};
use implicit_em::harness::commands::{run_compare_em, run_train, LoadedConfig};
use implicit_em::harness::io::{to_report_json, trace_from_csv, trace_to_csv};
use implicit_em::harness::verify::{run_verify, VerifyOptions};
use implicit_em::objectives::{self, CorrentropyConfig, DistanceVector, Label};
use implicit_em::{numeric, regimes, Error};

create_exception!(implicit_em, ConfigError, PyValueError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } => ConfigError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Inconsistent(_) => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn dv(d: Vec<f64>) -> PyResult<DistanceVector> {
    DistanceVector::new(d).map_err(py_err)
}

fn kernel(s: f64) -> PyResult<CorrentropyConfig> {
    CorrentropyConfig::new(s).map_err(py_err)
}

#[pyclass(frozen, get_all, module = "implicit_em")]
struct SoftAssignment {
    log_p: Vec<f64>,
    log_z: f64,
    r: Vec<f64>,
}

#[pymethods]
impl SoftAssignment {
    fn argmax(&self) -> usize {
        objectives::argmax(&self.r)
    }

    fn __repr__(&self) -> String {
        format!("SoftAssignment(r={:?}, log_z={})", self.r, self.log_z)
    }
}

#[pyfunction]
fn log_sum_exp(values: Vec<f64>) -> PyResult<f64> {
    numeric::log_sum_exp(&values).map_err(py_err)
}

#[pyfunction]
fn soft_assign(d: Vec<f64>) -> PyResult<SoftAssignment> {
    let a = objectives::soft_assign(&dv(d)?).map_err(py_err)?;
    Ok(SoftAssignment {
        log_p: a.log_p,
        log_z: a.log_z,
        r: a.r,
    })
}

#[pyfunction]
fn lse_value(d: Vec<f64>) -> PyResult<f64> {
    objectives::lse_value(&dv(d)?).map_err(py_err)
}

#[pyfunction]
fn lse_gradient(d: Vec<f64>) -> PyResult<Vec<f64>> {
    objectives::lse_gradient(&dv(d)?).map_err(py_err)
}

#[pyfunction]
fn nll_value(d: Vec<f64>) -> PyResult<f64> {
    objectives::nll_value(&dv(d)?).map_err(py_err)
}

#[pyfunction]
fn nll_gradient(d: Vec<f64>) -> PyResult<Vec<f64>> {
    objectives::nll_gradient(&dv(d)?).map_err(py_err)
}

#[pyfunction]
fn cross_entropy_value(d: Vec<f64>, y: usize) -> PyResult<f64> {
    objectives::cross_entropy_value(&dv(d)?, Label(y)).map_err(py_err)
}

/// `r − onehot(y)`: the gradient with respect to the logits `−d`.
#[pyfunction]
fn cross_entropy_gradient(d: Vec<f64>, y: usize) -> PyResult<Vec<f64>> {
    objectives::cross_entropy_gradient(&dv(d)?, Label(y)).map_err(py_err)
}

/// `onehot(y) − r`: the gradient with respect to `d`.
#[pyfunction]
fn cross_entropy_distance_gradient(d: Vec<f64>, y: usize) -> PyResult<Vec<f64>> {
    objectives::cross_entropy_distance_gradient(&dv(d)?, Label(y)).map_err(py_err)
}

#[pyfunction]
fn correntropy_value(d: Vec<f64>, sigma: f64) -> PyResult<f64> {
    Ok(objectives::correntropy_value(&dv(d)?, kernel(sigma)?))
}

#[pyfunction]
fn correntropy_gradient(d: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
    Ok(objectives::correntropy_gradient(&dv(d)?, kernel(sigma)?))
}

/// `tag` is one of `"lse"`, `"nll"`, `"cross_entropy"`.
#[pyfunction]
#[pyo3(signature = (grad, tag, label=None))]
fn responsibilities_from_gradient(grad: Vec<f64>, tag: &str, label: Option<usize>) -> PyResult<Vec<f64>> {
    let tag = match tag {
        "lse" => ObjectiveTag::Lse,
        "nll" => ObjectiveTag::Nll,
        "cross_entropy" => ObjectiveTag::CrossEntropy,
        other => return Err(PyValueError::new_err(format!("unknown objective tag `{other}`"))),
    };
    diagnostics::responsibilities_from_gradient(&grad, tag, label.map(Label)).map_err(py_err)
}

#[pyfunction]
fn specialization_entropy(r: Vec<f64>) -> PyResult<f64> {
    diagnostics::specialization_entropy(&r).map_err(py_err)
}

#[pyfunction]
fn collapse_score(assignments: Vec<Vec<f64>>) -> PyResult<f64> {
    diagnostics::collapse_score(&assignments).map_err(py_err)
}

#[pyfunction]
fn em_step(inputs: Vec<Vec<f64>>, means: Vec<Vec<f64>>, sigma2: f64) -> PyResult<Vec<Vec<f64>>> {
    regimes::em_step(&inputs, &means, sigma2).map_err(py_err)
}

/// Returns `(means, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (inputs, init, sigma2, tol=1e-13, max_iters=100_000))]
fn run_em(
    inputs: Vec<Vec<f64>>,
    init: Vec<Vec<f64>>,
    sigma2: f64,
    tol: f64,
    max_iters: usize,
) -> PyResult<(Vec<Vec<f64>>, usize, bool)> {
    let run = regimes::run_em(&inputs, &init, sigma2, tol, max_iters).map_err(py_err)?;
    Ok((run.means, run.iterations, run.converged))
}

#[pyfunction]
fn mixture_nll(inputs: Vec<Vec<f64>>, means: Vec<Vec<f64>>, sigma2: f64) -> PyResult<f64> {
    regimes::mixture_nll(&inputs, &means, sigma2).map_err(py_err)
}

#[pyfunction]
fn mixture_gradient_norm(inputs: Vec<Vec<f64>>, means: Vec<Vec<f64>>, sigma2: f64) -> PyResult<f64> {
    regimes::mixture_gradient_norm(&inputs, &means, sigma2).map_err(py_err)
}

/// Run the identity suite; returns `(passed, lines)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn verify(seed: u64) -> PyResult<(bool, Vec<String>)> {
    let report = run_verify(VerifyOptions {
        seed,
        inject_fault: false,
    })
    .map_err(py_err)?;
    Ok((report.passed(), report.checks.iter().map(ToString::to_string).collect()))
}

/// Train from a JSON config without touching the disk. Returns
/// `(report_json, trace_csv, params_json)`.
#[pyfunction]
fn train(py: Python<'_>, config_json: &str) -> PyResult<(String, String, String)> {
    let loaded = LoadedConfig::from_json(config_json).map_err(py_err)?;
    let outcome = py.detach(|| run_train(&loaded)).map_err(py_err)?;
    Ok((
        to_report_json(&outcome.report).map_err(py_err)?,
        trace_to_csv(&outcome.trace),
        to_report_json(&outcome.params).map_err(py_err)?,
    ))
}

#[pyfunction]
fn compare_em(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let loaded = LoadedConfig::from_json(config_json).map_err(py_err)?;
    let report = py.detach(|| run_compare_em(&loaded)).map_err(py_err)?;
    to_report_json(&report).map_err(py_err)
}

/// Diagnostic report JSON for trace CSV text.
#[pyfunction]
fn diagnose(trace_csv: &str) -> PyResult<String> {
    let trace = trace_from_csv(trace_csv).map_err(py_err)?;
    let report = diagnostics::diagnostic_report(&trace).map_err(py_err)?;
    to_report_json(&report).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "implicit_em")]
fn implicit_em_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add_class::<SoftAssignment>()?;
    m.add_function(wrap_pyfunction!(log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(soft_assign, m)?)?;
    m.add_function(wrap_pyfunction!(lse_value, m)?)?;
    m.add_function(wrap_pyfunction!(lse_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(nll_value, m)?)?;
    m.add_function(wrap_pyfunction!(nll_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_value, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_distance_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(correntropy_value, m)?)?;
    m.add_function(wrap_pyfunction!(correntropy_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(responsibilities_from_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(specialization_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(collapse_score, m)?)?;
    m.add_function(wrap_pyfunction!(em_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_em, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_nll, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_gradient_norm, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compare_em, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    Ok(())
}
