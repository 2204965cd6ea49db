//! Python bindings: configs, simulations, verification and the analytic
//! front predictions.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use frontlab_core::config::ExperimentConfig;
use frontlab_core::experiments::{run_simulate, run_verify, simulate as simulate_run};
use frontlab_core::front::{self, GrowthFit};
use frontlab_core::tailprofiles::{build_profile, normalize_kernel, Family, Kernel as CoreKernel};
use frontlab_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(msg) => PyValueError::new_err(msg),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn toml_value(v: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(toml::Value::Boolean(b));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(toml::Value::Integer(i));
    }
    if let Ok(x) = v.extract::<f64>() {
        return Ok(toml::Value::Float(x));
    }
    if let Ok(items) = v.extract::<Vec<Bound<'_, PyAny>>>() {
        return items.iter().map(toml_value).collect::<PyResult<Vec<_>>>().map(toml::Value::Array);
    }
    Err(PyValueError::new_err(format!("unsupported parameter value {v}")))
}

/// Family from its kebab-case name and keyword parameters, as in a config's
/// `[kernel]` table.
fn family_from(name: &str, params: Option<&Bound<'_, PyDict>>) -> PyResult<Family> {
    let mut table = toml::Table::new();
    table.insert("family".into(), toml::Value::String(name.into()));
    if let Some(params) = params {
        for (k, v) in params.iter() {
            table.insert(k.extract::<String>()?, toml_value(&v)?);
        }
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| PyValueError::new_err(format!("family {name}: {}", e.message())))
}

fn load(path: &Path) -> PyResult<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(to_py)
}

fn fit_dict<'py>(py: Python<'py>, fit: &GrowthFit) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("law", fit.law.name())?;
    d.set_item("points", fit.points)?;
    let cands = PyList::empty(py);
    for c in &fit.candidates {
        let cd = PyDict::new(py);
        cd.set_item("law", c.law.name())?;
        cd.set_item("intercept", c.intercept)?;
        cd.set_item("slope", c.slope)?;
        cd.set_item("residual", c.residual)?;
        cands.append(cd)?;
    }
    d.set_item("candidates", cands)?;
    Ok(d)
}

/// Normalized dispersal kernel `a(x) = b(|x|)/Z`.
#[pyclass(name = "Kernel", module = "frontlab", frozen)]
struct Kernel {
    inner: CoreKernel,
}

#[pymethods]
impl Kernel {
    #[new]
    #[pyo3(signature = (family, dim = 1, **params))]
    fn new(family: &str, dim: u32, params: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let profile = build_profile(family_from(family, params)?).map_err(to_py)?;
        let inner = normalize_kernel(&profile, dim).map_err(to_py)?;
        Ok(Kernel { inner })
    }

    #[getter]
    fn dim(&self) -> u32 {
        self.inner.dim()
    }

    #[getter]
    fn normalizer(&self) -> f64 {
        self.inner.normalizer()
    }

    /// `a(x)` at a point given as one coordinate per dimension.
    fn __call__(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.inner.dim() as usize {
            return Err(PyValueError::new_err(format!("expected {} coordinates", self.inner.dim())));
        }
        Ok(self.inner.eval(&x))
    }

    fn radial(&self, r: f64) -> f64 {
        self.inner.eval_radial(r)
    }

    /// Linear spreading speed, or `None` for heavy kernels.
    fn spread_speed(&self, kappa: f64, m: f64) -> Option<f64> {
        front::linear_spread_speed(&self.inner, kappa, m)
    }

    fn __repr__(&self) -> String {
        format!("Kernel({}, dim={})", self.inner.profile().family().name(), self.inner.dim())
    }
}

/// Lower real branch `W₋₁(ν)` for `ν ∈ [−1/e, 0)`.
#[pyfunction]
fn lambert_w_minus1(nu: f64) -> PyResult<f64> {
    front::lambert_w_minus1(nu).map_err(to_py)
}

/// Predicted front radius `η(t)` for a profile family.
#[pyfunction]
#[pyo3(signature = (family, beta, t, **params))]
fn predicted_eta(family: &str, beta: f64, t: f64, params: Option<&Bound<'_, PyDict>>) -> PyResult<f64> {
    let profile = build_profile(family_from(family, params)?).map_err(to_py)?;
    front::predicted_eta(&profile, beta, t).map_err(to_py)
}

/// Fits the growth laws to a front trace.
#[pyfunction]
fn classify_growth<'py>(py: Python<'py>, times: Vec<f64>, positions: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let fit = front::classify_growth(&times, &positions).map_err(to_py)?;
    fit_dict(py, &fit)
}

/// Parses and validates a config file; returns it re-serialized.
#[pyfunction]
fn load_config(path: PathBuf) -> PyResult<String> {
    load(&path)?.to_toml_string().map_err(to_py)
}

/// Runs a config. With `out`, artifacts are written as by the CLI.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn simulate<'py>(py: Python<'py>, config: PathBuf, out: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load(&config)?;
    let res = py
        .detach(|| match &out {
            Some(dir) => run_simulate(&cfg, dir),
            None => simulate_run(&cfg, &cfg.kernel, None),
        })
        .map_err(to_py)?;
    let trace = res.trajectory.front_trace();
    let d = PyDict::new(py);
    d.set_item("times", trace.times.clone())?;
    d.set_item("levels", trace.levels.clone())?;
    d.set_item("positions", trace.positions.clone())?;
    d.set_item("expansions", res.expansions)?;
    let fits = PyList::empty(py);
    for (_, fit) in &res.fits {
        match fit {
            Ok(f) => fits.append(fit_dict(py, f)?)?,
            Err(_) => fits.append(py.None())?,
        }
    }
    d.set_item("fits", fits)?;
    Ok(d)
}

/// Runs the configured verification suites; one dict per row.
#[pyfunction]
fn verify<'py>(py: Python<'py>, config: PathBuf, out: PathBuf) -> PyResult<Bound<'py, PyList>> {
    let cfg = load(&config)?;
    let rows = py.detach(|| run_verify(&cfg, &out)).map_err(to_py)?;
    let list = PyList::empty(py);
    for r in rows {
        let d = PyDict::new(py);
        d.set_item("suite", r.suite)?;
        d.set_item("parameters", r.parameters)?;
        d.set_item("measured", r.measured)?;
        d.set_item("tolerance", r.tolerance)?;
        d.set_item("passed", r.passed)?;
        list.append(d)?;
    }
    Ok(list)
}

#[pymodule]
fn frontlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_function(wrap_pyfunction!(lambert_w_minus1, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_eta, m)?)?;
    m.add_function(wrap_pyfunction!(classify_growth, m)?)?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
