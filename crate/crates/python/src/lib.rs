//! Python bindings: parameters, control laws, integration, and the stability
//! checks. Structured results (reports, diagnostics, scans) are returned as
//! plain dicts decoded from their JSON form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

use sit_core::analysis::{self, GridSpec, LyapunovSpec, ReportOptions};
use sit_core::control::{self, LawKind};
use sit_core::integrator::{self, IntegratorConfig, Method};
use sit_core::model;
use sit_core::run::{self, InitialCondition, RunConfig};
use sit_core::{ControlLaw, ModelParams, SitState};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn state_from(values: [f64; 5]) -> SitState {
    SitState::from_array(values)
}

fn parse_kind(kind: &str) -> PyResult<LawKind> {
    match kind {
        "emms" => Ok(LawKind::Emms),
        "em" => Ok(LawKind::Em),
        other => Err(value_error(format!("law kind must be 'emms' or 'em', got {other:?}"))),
    }
}

#[pyclass(name = "ModelParams", module = "sit_control", frozen, skip_from_py_object)]
struct PyParams {
    inner: ModelParams,
}

#[pymethods]
#[allow(non_snake_case, clippy::too_many_arguments)]
impl PyParams {
    #[new]
    #[pyo3(signature = (beta_E=8.0, nu_E=0.05, delta_E=0.03, delta_F=0.04, delta_M=0.1, delta_s=0.12, nu=0.49, K=50_000.0, gamma=1.0))]
    fn new(
        beta_E: f64,
        nu_E: f64,
        delta_E: f64,
        delta_F: f64,
        delta_M: f64,
        delta_s: f64,
        nu: f64,
        K: f64,
        gamma: f64,
    ) -> PyResult<Self> {
        let inner =
            ModelParams::new(beta_E, nu_E, delta_E, delta_F, delta_M, delta_s, nu, K, gamma).map_err(value_error)?;
        Ok(PyParams { inner })
    }

    #[staticmethod]
    fn table1() -> Self {
        PyParams {
            inner: ModelParams::table1(),
        }
    }

    /// Reference values with `beta_E = 10` (R = 76.5625).
    #[staticmethod]
    fn high_fecundity() -> Self {
        PyParams {
            inner: ModelParams::high_fecundity(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyParams {
            inner: ModelParams::from_toml_str(text).map_err(value_error)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn with_gamma(&self, gamma: f64) -> PyResult<Self> {
        Ok(PyParams {
            inner: self.inner.with_gamma(gamma).map_err(value_error)?,
        })
    }

    #[getter]
    fn beta_E(&self) -> f64 {
        self.inner.beta_e
    }
    #[getter]
    fn nu_E(&self) -> f64 {
        self.inner.nu_e
    }
    #[getter]
    fn delta_E(&self) -> f64 {
        self.inner.delta_e
    }
    #[getter]
    fn delta_F(&self) -> f64 {
        self.inner.delta_f
    }
    #[getter]
    fn delta_M(&self) -> f64 {
        self.inner.delta_m
    }
    #[getter]
    fn delta_s(&self) -> f64 {
        self.inner.delta_s
    }
    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu
    }
    #[getter]
    fn K(&self) -> f64 {
        self.inner.k
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    fn offspring_number(&self) -> f64 {
        self.inner.offspring_number()
    }

    fn delta_hat(&self) -> f64 {
        self.inner.delta_hat()
    }

    fn gain_threshold(&self) -> f64 {
        self.inner.gain_threshold()
    }

    fn h(&self, p: f64) -> f64 {
        self.inner.h(p)
    }

    /// `{"R", "e_star", "x_e_star", "delta_hat"}`.
    fn derived<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.derived())
    }

    fn persistence_state(&self) -> [f64; 5] {
        self.inner.derived().persistence_state().to_array()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "ControlLaw", module = "sit_control", frozen, skip_from_py_object)]
struct PyLaw {
    inner: ControlLaw,
}

#[pymethods]
impl PyLaw {
    #[staticmethod]
    fn zero() -> Self {
        PyLaw {
            inner: ControlLaw::Zero,
        }
    }

    #[staticmethod]
    fn constant(rate: f64) -> PyResult<Self> {
        Self::checked(ControlLaw::Constant { rate })
    }

    #[staticmethod]
    fn emms(psi: f64) -> PyResult<Self> {
        Self::checked(ControlLaw::Emms { psi })
    }

    #[staticmethod]
    fn em(alpha: f64, sigma: f64) -> PyResult<Self> {
        Self::checked(ControlLaw::Em { alpha, sigma })
    }

    /// EMMs with `psi = 2R`.
    #[staticmethod]
    fn fig1(params: &PyParams) -> Self {
        PyLaw {
            inner: ControlLaw::fig1(&params.inner),
        }
    }

    /// EM with `sigma = 2R`, `alpha = 4R delta_hat`.
    #[staticmethod]
    fn fig2(params: &PyParams) -> Self {
        PyLaw {
            inner: ControlLaw::fig2(&params.inner),
        }
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    /// `(kind, gain)` for feedback laws, `None` otherwise.
    #[getter]
    fn gain(&self) -> Option<(&'static str, f64)> {
        self.inner.gain().map(|(k, g)| {
            let k = match k {
                LawKind::Emms => "emms",
                LawKind::Em => "em",
            };
            (k, g)
        })
    }

    fn evaluate(&self, params: &PyParams, state: [f64; 5]) -> f64 {
        self.inner.evaluate(&params.inner, &state_from(state))
    }

    fn diagnostics<'py>(&self, py: Python<'py>, params: &PyParams) -> PyResult<Bound<'py, PyAny>> {
        let d = control::law_diagnostics(&self.inner, &params.inner).map_err(value_error)?;
        to_py(py, &d)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

impl PyLaw {
    fn checked(inner: ControlLaw) -> PyResult<Self> {
        inner.validate().map_err(value_error)?;
        Ok(PyLaw { inner })
    }
}

#[pyclass(name = "Trajectory", module = "sit_control", frozen, skip_from_py_object)]
struct PyTrajectory {
    inner: integrator::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    /// Rows `[E, F, M, Fs, Ms]`.
    #[getter]
    fn states(&self) -> Vec<[f64; 5]> {
        self.inner.states.iter().map(|s| s.to_array()).collect()
    }

    #[getter]
    fn controls(&self) -> Vec<f64> {
        self.inner.controls.clone()
    }

    #[getter]
    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.events)
    }

    #[getter]
    fn extinction_time(&self) -> Option<f64> {
        self.inner.extinction_time()
    }

    #[getter]
    fn k_crossing_time(&self) -> Option<f64> {
        self.inner.k_crossing_time()
    }

    #[getter]
    fn max_clamp(&self) -> f64 {
        self.inner.max_clamp
    }

    #[getter]
    fn final_state(&self) -> Option<[f64; 5]> {
        self.inner.final_state().map(|s| s.to_array())
    }

    fn interpolate(&self, params: &PyParams, law: &PyLaw, t: f64) -> PyResult<[f64; 5]> {
        if self.inner.is_empty() {
            return Err(value_error("empty trajectory"));
        }
        Ok(self.inner.interpolate(&params.inner, &law.inner, t).to_array())
    }

    fn to_csv(&self) -> String {
        run::trajectory_csv(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(samples={}, t_end={:?}, extinction_time={:?})",
            self.inner.len(),
            self.inner.final_time(),
            self.inner.extinction_time()
        )
    }
}

fn initial_state(params: &ModelParams, x0: &Bound<'_, PyAny>) -> PyResult<SitState> {
    let ic = if let Ok(s) = x0.cast::<PyString>() {
        match s.to_str()? {
            "persistence" => InitialCondition::Persistence,
            other => return Err(value_error(format!("unknown initial condition {other:?}"))),
        }
    } else {
        InitialCondition::State(state_from(x0.extract::<[f64; 5]>()?))
    };
    ic.resolve(params).map_err(value_error)
}

/// Closed-loop vector field at `state` with release rate `u`.
#[pyfunction]
fn vector_field(params: &PyParams, state: [f64; 5], u: f64) -> [f64; 5] {
    model::controlled_vector_field(&params.inner, &state_from(state), u).to_array()
}

#[pyfunction]
#[pyo3(signature = (params, law, x0=None, *, method="rk45", t_max=12_000.0, dt_init=0.01, rel_tol=1e-8, abs_tol=1e-10, record_stride=1.0, stop_on_extinction=false))]
#[allow(clippy::too_many_arguments)]
fn integrate(
    py: Python<'_>,
    params: &PyParams,
    law: &PyLaw,
    x0: Option<Bound<'_, PyAny>>,
    method: &str,
    t_max: f64,
    dt_init: f64,
    rel_tol: f64,
    abs_tol: f64,
    record_stride: f64,
    stop_on_extinction: bool,
) -> PyResult<PyTrajectory> {
    let method = match method {
        "rk4" => Method::Rk4,
        "rk45" => Method::Rk45,
        other => return Err(value_error(format!("method must be 'rk4' or 'rk45', got {other:?}"))),
    };
    let cfg = IntegratorConfig {
        method,
        dt_init,
        rel_tol,
        abs_tol,
        t_max,
        stop_on_extinction,
        record_stride,
    };
    let x0 = match x0 {
        Some(x) => initial_state(&params.inner, &x)?,
        None => InitialCondition::Persistence.resolve(&params.inner).map_err(value_error)?,
    };
    let (p, l) = (params.inner, law.inner);
    let traj = py
        .detach(move || integrator::integrate(&p, &l, &x0, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyTrajectory { inner: traj })
}

/// `{"c_a", "c_bound", "terms", ...}` for a feedback gain.
#[pyfunction]
fn predicted_rates<'py>(py: Python<'py>, params: &PyParams, gain: f64, kind: &str) -> PyResult<Bound<'py, PyAny>> {
    let r = analysis::predicted_rates(&params.inner, gain, parse_kind(kind)?).map_err(value_error)?;
    to_py(py, &r)
}

/// `V(E, F, M)` for the given gain.
#[pyfunction]
fn lyapunov_value(params: &PyParams, gain: f64, z: [f64; 3]) -> PyResult<f64> {
    let spec = LyapunovSpec::new(&params.inner, gain).map_err(value_error)?;
    Ok(spec.value(z))
}

#[pyfunction]
fn stability_report<'py>(
    py: Python<'py>,
    trajectory: &PyTrajectory,
    params: &PyParams,
    law: &PyLaw,
) -> PyResult<Bound<'py, PyAny>> {
    let r = analysis::stability_report(&trajectory.inner, &params.inner, &law.inner, &ReportOptions::default())
        .map_err(value_error)?;
    to_py(py, &r)
}

/// `M_s(t)` from the closed-form EMMs solution, with `E` read off the trajectory.
#[pyfunction]
fn closed_form_ms(params: &PyParams, psi: f64, trajectory: &PyTrajectory, t: f64) -> PyResult<f64> {
    let traj = &trajectory.inner;
    let x0 = traj.initial_state().ok_or_else(|| value_error("empty trajectory"))?;
    let law = ControlLaw::Emms { psi };
    control::closed_form_ms_emms(&params.inner, psi, &x0, |s| traj.interpolate(&params.inner, &law, s).e, t)
        .map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (params, law, points_per_axis=20))]
fn scan_equilibria<'py>(
    py: Python<'py>,
    params: &PyParams,
    law: &PyLaw,
    points_per_axis: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = GridSpec {
        points_per_axis,
        ..GridSpec::default()
    };
    let (p, l) = (params.inner, law.inner);
    let scan = py.detach(move || analysis::scan_equilibria(&p, &l, &grid));
    to_py(py, &scan)
}

/// Runs a named configuration (`fig1`, `fig2`, `persistence`) and returns
/// `(trajectory, report)`.
#[pyfunction]
fn run_preset<'py>(py: Python<'py>, name: &str) -> PyResult<(PyTrajectory, Bound<'py, PyAny>)> {
    let cfg: RunConfig = RunConfig::preset(name).ok_or_else(|| value_error(format!("unknown preset {name:?}")))?;
    let out = py
        .detach(move || run::execute(&cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let report = to_py(py, &out.report)?;
    Ok((PyTrajectory { inner: out.trajectory }, report))
}

#[pymodule]
fn sit_control(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyLaw>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(vector_field, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_rates, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_value, m)?)?;
    m.add_function(wrap_pyfunction!(stability_report, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_ms, m)?)?;
    m.add_function(wrap_pyfunction!(scan_equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    Ok(())
}
