//! Python bindings for the tuner, the wrapper and the experiment harness.

use std::sync::Mutex;

use mechanic_core::harness::{self, RunRecord};
use mechanic_core::theory;
use mechanic_core::{
    AdamWHyper, BaseOptConfig, BaseOptimizer, DeltaMode, ExperimentConfig, InequalitySample,
    LionHyper, PeakTracking, TunerParams, TunerState,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: mechanic_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_peak(peak: &str) -> PyResult<PeakTracking> {
    match peak {
        "signed" => Ok(PeakTracking::Signed),
        "magnitude" => Ok(PeakTracking::Magnitude),
        other => Err(PyValueError::new_err(format!(
            "peak must be 'signed' or 'magnitude', got '{other}'"
        ))),
    }
}

fn parse_base(name: &str) -> PyResult<BaseOptConfig> {
    match name {
        "sgd" => Ok(BaseOptConfig::Sgd),
        "momentum" => Ok(BaseOptConfig::Momentum { beta: 0.9 }),
        "adamw" => Ok(BaseOptConfig::AdamW(AdamWHyper::default())),
        "lion" => Ok(BaseOptConfig::Lion(LionHyper::default())),
        other => Err(PyValueError::new_err(format!(
            "unknown base optimizer '{other}' (expected sgd, momentum, adamw or lion)"
        ))),
    }
}

fn tuner_params(
    betas: Option<Vec<f64>>,
    lambda: f64,
    s_init: f64,
    epsilon: f64,
    peak: &str,
) -> PyResult<TunerParams> {
    let mut p = TunerParams {
        lambda,
        s_init,
        epsilon,
        peak: parse_peak(peak)?,
        ..TunerParams::default()
    };
    if let Some(b) = betas {
        p.betas = b;
    }
    p.validate().map_err(err)?;
    Ok(p)
}

/// Practical multi-β tuner driven by scalar feedback.
#[pyclass]
struct Tuner {
    params: TunerParams,
    state: TunerState,
}

#[pymethods]
impl Tuner {
    #[new]
    #[pyo3(signature = (betas=None, s_init=1e-8, epsilon=1e-8, peak="signed"))]
    fn new(betas: Option<Vec<f64>>, s_init: f64, epsilon: f64, peak: &str) -> PyResult<Self> {
        let params = tuner_params(betas, 0.0, s_init, epsilon, peak)?;
        let state = TunerState::new(&params).map_err(err)?;
        Ok(Self { params, state })
    }

    /// Feeds one `h` and returns the summed scale.
    fn step(&mut self, h: f64) -> PyResult<f64> {
        self.state.step(h, &self.params).map_err(err)?;
        Ok(self.state.scale())
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.state.scale()
    }

    #[getter]
    fn scales(&self) -> Vec<f64> {
        self.state.s.clone()
    }

    #[getter]
    fn wealth(&self) -> Vec<f64> {
        self.state.wealth(&self.params)
    }

    #[getter]
    fn t(&self) -> u64 {
        self.state.t
    }
}

/// A base optimizer wrapped by the scale tuner.
#[pyclass]
struct Mechanic {
    inner: mechanic_core::Mechanic,
    base: Mutex<Box<dyn BaseOptimizer>>,
    lr: f64,
}

#[pymethods]
impl Mechanic {
    #[new]
    #[pyo3(signature = (
        x1, base="sgd", lr=0.1, betas=None, lam=0.01, s_init=1e-8, epsilon=1e-8,
        peak="signed", delta_mode="stored"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        x1: Vec<f64>,
        base: &str,
        lr: f64,
        betas: Option<Vec<f64>>,
        lam: f64,
        s_init: f64,
        epsilon: f64,
        peak: &str,
        delta_mode: &str,
    ) -> PyResult<Self> {
        let params = tuner_params(betas, lam, s_init, epsilon, peak)?;
        let mode = match delta_mode {
            "stored" => DeltaMode::Stored,
            "recovered" => DeltaMode::Recovered,
            other => {
                return Err(PyValueError::new_err(format!(
                    "delta_mode must be 'stored' or 'recovered', got '{other}'"
                )))
            }
        };
        let base = parse_base(base)?.build(x1.len());
        let inner = mechanic_core::Mechanic::new(&x1, params)
            .map_err(err)?
            .with_mode(mode);
        Ok(Self {
            inner,
            base: Mutex::new(base),
            lr,
        })
    }

    /// Takes the iterate and its gradient, returns the next iterate.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        x: Vec<f64>,
        g: Vec<f64>,
    ) -> PyResult<(Vec<f64>, Bound<'py, PyDict>)> {
        let mut x = x;
        let u = self
            .base
            .lock()
            .map_err(|_| PyRuntimeError::new_err("base optimizer lock poisoned"))?
            .update(&g, self.lr, &x)
            .map_err(err)?;
        let info = self.inner.step(&mut x, &g, &u).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("h", info.h)?;
        d.set_item("scale_before", info.scale_before)?;
        d.set_item("scale_after", info.scale_after)?;
        d.set_item("skipped", info.skipped)?;
        Ok((x, d))
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale()
    }

    #[getter]
    fn x_ref(&self) -> Vec<f64> {
        self.inner.x_ref().to_vec()
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.steps()
    }
}

#[pyfunction]
#[pyo3(signature = (delta, g, x, s_sum, lam=0.0))]
fn compute_h(delta: Vec<f64>, g: Vec<f64>, x: Vec<f64>, s_sum: f64, lam: f64) -> PyResult<f64> {
    mechanic_core::compute_h(&delta, &g, &x, s_sum, lam).map_err(err)
}

#[pyfunction]
fn a_fn(x: f64) -> f64 {
    theory::a_fn(x)
}

#[pyfunction]
#[pyo3(signature = (a, b, m, x, tol=None))]
fn technical_inequality_holds(a: f64, b: f64, m: f64, x: f64, tol: Option<f64>) -> PyResult<bool> {
    let s = InequalitySample::new(a, b, m, x).map_err(err)?;
    theory::technical_inequality_holds(&s, tol).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (trace, s_ref, c=10.0, w0=1.0))]
fn regret_bound_margin(trace: Vec<f64>, s_ref: f64, c: f64, w0: f64) -> PyResult<f64> {
    let r = theory::regret_bound_margin(&trace, s_ref, c, w0, Default::default()).map_err(err)?;
    Ok(r.margin)
}

fn record_dict<'py>(py: Python<'py>, rec: &RunRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("initial_loss", rec.initial_loss)?;
    d.set_item("final_loss", rec.final_loss)?;
    d.set_item("steps_run", rec.steps_run)?;
    d.set_item("skipped_steps", rec.skipped_steps)?;
    d.set_item("diverged", rec.diverged.is_some())?;
    d.set_item("final_s_sum", rec.final_s_sum())?;
    d.set_item("loss_curve", rec.loss_curve())?;
    d.set_item("s_sum_curve", rec.s_sum_curve())?;
    d.set_item("final_params", rec.final_params.clone())?;
    Ok(d)
}

/// Runs one experiment described by config text.
#[pyfunction]
#[pyo3(signature = (config, overrides=Vec::new()))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::parse_named("<python>", config, &overrides).map_err(err)?;
    let rec = py
        .detach(|| harness::run_experiment_lenient(&cfg))
        .map_err(err)?;
    record_dict(py, &rec)
}

/// `(eta, final_loss, diverged)`.
type SweepRow = (f64, f64, bool);

/// Learning-rate sweep; returns the winning η and one row per grid point.
#[pyfunction]
fn sweep(py: Python<'_>, config: &str, grid: Vec<f64>) -> PyResult<(f64, Vec<SweepRow>)> {
    let cfg = ExperimentConfig::parse_str(config).map_err(err)?;
    let res = py.detach(|| harness::lr_sweep(&cfg, &grid)).map_err(err)?;
    let rows = res
        .entries
        .iter()
        .map(|e| (e.eta, e.record.final_loss, e.diverged()))
        .collect();
    Ok((res.entries[res.best].eta, rows))
}

/// Loads a libsvm file as `(features, labels, dim)` with dense row-major features.
#[pyfunction]
#[pyo3(signature = (path, dim=None))]
fn load_libsvm(path: &str, dim: Option<usize>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, usize)> {
    let ds = mechanic_core::load_libsvm(path, dim).map_err(err)?;
    let rows = (0..ds.len()).map(|i| ds.row(i).to_dense(ds.dim)).collect();
    Ok((rows, ds.labels.clone(), ds.dim))
}

#[pymodule]
fn mechanic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tuner>()?;
    m.add_class::<Mechanic>()?;
    m.add_function(wrap_pyfunction!(compute_h, m)?)?;
    m.add_function(wrap_pyfunction!(a_fn, m)?)?;
    m.add_function(wrap_pyfunction!(technical_inequality_holds, m)?)?;
    m.add_function(wrap_pyfunction!(regret_bound_margin, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(load_libsvm, m)?)?;
    Ok(())
}
