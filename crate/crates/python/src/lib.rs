//! Python bindings for `occulimits`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::{json, Value};

use occulimits::analysis::{self, BoundsOptions};
use occulimits::dp::{self, Plan};
use occulimits::measures;
use occulimits::model::{self, FiniteModel as Inner};
use occulimits::programs;
use occulimits::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Lp(_) | Error::Infeasible(_) | Error::Unbounded(_) | Error::Analysis(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// A finite controlled stochastic recursion.
#[pyclass(name = "FiniteModel", module = "occulimits_py", frozen)]
struct FiniteModel {
    inner: Inner,
}

impl FiniteModel {
    fn state(&self, y0: usize) -> PyResult<usize> {
        if y0 < self.inner.num_states() {
            Ok(y0)
        } else {
            Err(PyValueError::new_err(format!(
                "state index {y0} out of range ({} states)",
                self.inner.num_states()
            )))
        }
    }
}

#[pymethods]
impl FiniteModel {
    #[staticmethod]
    fn example1(y0: f64) -> PyResult<Self> {
        Ok(Self {
            inner: model::example1_model(y0).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn example1_family(levels: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: model::example1_family(&levels).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (m, control_step=None))]
    fn example2(m: u32, control_step: Option<f64>) -> PyResult<Self> {
        let step = control_step.unwrap_or_else(|| 2f64.powi(-(m.min(64) as i32)));
        Ok(Self {
            inner: model::example2_model(m, step).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn constant(n: usize, c: f64) -> PyResult<Self> {
        Ok(Self {
            inner: model::constant_cost_model(n, c).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::parse_model(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_model(path).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        model::model_to_json(&self.inner)
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_pairs(&self) -> usize {
        self.inner.num_pairs()
    }

    #[getter]
    fn initial_state(&self) -> Option<usize> {
        self.inner.initial_state()
    }

    /// State coordinates, one list per state.
    fn states(&self) -> Vec<Vec<f64>> {
        self.inner
            .states()
            .iter()
            .map(|s| s.coords.clone())
            .collect()
    }

    #[pyo3(signature = (coords, tol=1e-9))]
    fn find_state(&self, coords: Vec<f64>, tol: f64) -> Option<usize> {
        self.inner.find_state(&coords, tol)
    }

    /// `v_T(y)` for every state.
    fn v(&self, horizon: usize) -> PyResult<Vec<f64>> {
        let fh = dp::finite_horizon_values(&self.inner, horizon).map_err(py_err)?;
        Ok(fh.v(horizon).values.clone())
    }

    /// `h_ε(y)` for every state.
    #[pyo3(signature = (eps, tol=dp::DEFAULT_VI_TOL))]
    fn h(&self, eps: f64, tol: f64) -> PyResult<Vec<f64>> {
        Ok(dp::discounted_values(&self.inner, eps, tol)
            .map_err(py_err)?
            .0
            .values)
    }

    /// `k*`, the minimum over stationary measures.
    fn k_star(&self) -> PyResult<f64> {
        Ok(programs::stationary_lp(&self.inner)
            .map_err(py_err)?
            .optimal_value)
    }

    /// `k*(ε, y0)` over the discounted stationary set.
    fn k_star_discounted(&self, eps: f64, y0: usize) -> PyResult<f64> {
        let y0 = self.state(y0)?;
        Ok(programs::discounted_stationary_lp(&self.inner, eps, y0)
            .map_err(py_err)?
            .optimal_value)
    }

    /// Augmented program at `y0`: values, optimal measures and dual certificate.
    fn augmented<'py>(&self, py: Python<'py>, y0: usize) -> PyResult<Bound<'py, PyAny>> {
        let y0 = self.state(y0)?;
        let r = programs::augmented_lp(&self.inner, y0, None).map_err(py_err)?;
        to_py(py, &r.to_json(&self.inner))
    }

    #[pyo3(signature = (y0, ts, epss, vi_tol=dp::DEFAULT_VI_TOL, limit_slack=None))]
    fn bounds<'py>(
        &self,
        py: Python<'py>,
        y0: usize,
        ts: Vec<usize>,
        epss: Vec<f64>,
        vi_tol: f64,
        limit_slack: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let y0 = self.state(y0)?;
        let opts = BoundsOptions {
            vi_tol,
            limit_slack,
        };
        let r = py
            .detach(|| analysis::bounds_report(&self.inner, y0, &ts, &epss, opts))
            .map_err(py_err)?;
        to_py(py, &r.to_json())
    }

    #[pyo3(signature = (ts, epss, vi_tol=dp::DEFAULT_VI_TOL))]
    fn ergodic<'py>(
        &self,
        py: Python<'py>,
        ts: Vec<usize>,
        epss: Vec<f64>,
        vi_tol: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let t = py
            .detach(|| analysis::ergodic_table(&self.inner, &ts, &epss, vi_tol))
            .map_err(py_err)?;
        to_py(py, &t.to_json(&self.inner))
    }

    /// Greedy feedback from the augmented dual with its optimality verdict
    /// and periodic-regime detection.
    #[pyo3(signature = (y0, t0=1, t_max=200, tol=1e-8))]
    fn policy<'py>(
        &self,
        py: Python<'py>,
        y0: usize,
        t0: usize,
        t_max: usize,
        tol: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let y0 = self.state(y0)?;
        let m = &self.inner;
        let aug = programs::augmented_lp(m, y0, None).map_err(py_err)?;
        let dual = aug.dual.expect("augmented program returns a certificate");
        let plan = dp::greedy_feedback_from_eta(m, &dual.eta).map_err(py_err)?;
        let v = analysis::verify_long_run_optimality(m, &plan, &dual, y0, t0, t_max, tol)
            .map_err(py_err)?;
        let prg = measures::prg_detect(m, &plan, y0, t_max, 1e-10).map_err(py_err)?;
        let Plan::StationaryDeterministic(sel) = &plan else {
            unreachable!("greedy plans are stationary and deterministic")
        };
        let out = json!({
            "controls": sel,
            "mu": dual.mu,
            "certified": v.certified,
            "cost_residual": v.cost_residual,
            "psi_residual": v.psi_residual,
            "prg": prg.map(|p| json!({"T0": p.t0, "period": p.period})),
        });
        to_py(py, &out)
    }

    /// Average cost over `T` stages of the stationary deterministic plan
    /// given as one control slot per state.
    fn evaluate(&self, controls: Vec<usize>, y0: usize, horizon: usize) -> PyResult<f64> {
        let y0 = self.state(y0)?;
        dp::evaluate_plan_average(
            &self.inner,
            &Plan::StationaryDeterministic(controls),
            y0,
            horizon,
        )
        .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "FiniteModel(states={}, pairs={}, noise_atoms={})",
            self.inner.num_states(),
            self.inner.num_pairs(),
            self.inner.noise().len()
        )
    }
}

/// Abel-to-Cesàro window for the sequence that repeats `g`.
#[pyfunction]
fn abel_window(g: Vec<f64>, m_bound: f64, eps: f64, delta: f64) -> PyResult<(usize, f64, f64)> {
    if g.is_empty() {
        return Err(PyValueError::new_err("sequence must be nonempty"));
    }
    let n = g.len();
    let w = analysis::abel_window(|t| g[t % n], m_bound, eps, delta).map_err(py_err)?;
    Ok((w.t, w.sigma, w.average))
}

#[pyfunction]
fn cesaro_window(g: Vec<f64>, horizon: usize, delta: f64) -> PyResult<usize> {
    analysis::cesaro_window(&g, horizon, delta).map_err(py_err)
}

#[pymodule]
fn occulimits_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FiniteModel>()?;
    m.add_function(wrap_pyfunction!(abel_window, m)?)?;
    m.add_function(wrap_pyfunction!(cesaro_window, m)?)?;
    Ok(())
}
