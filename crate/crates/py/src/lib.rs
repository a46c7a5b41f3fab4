//! Python bindings: scenario loading, simulation runs, trace access, and the
//! small algebraic helpers that are handy for plotting and notebook work.
//!
//! Build with `cargo build -p etcoord-py --release` and import the resulting
//! `libetcoord_py.so` as `etcoord_py` (see `python/smoke_test.py`).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use etcoord::analysis;
use etcoord::coordination::EstimatorSample;
use etcoord::error::Error;
use etcoord::graph::{self, QMatrix};
use etcoord::scenario::ScenarioConfig;
use etcoord::trace::{summarize, TraceLog};
use etcoord::vehicle::BezierTrajectory;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Numeric { .. } | Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Row-orthonormal disagreement projection matrix for `n` agents, as a list
/// of rows.
#[pyfunction]
fn q_matrix(n: usize) -> PyResult<Vec<Vec<f64>>> {
    let q = QMatrix::new(n).map_err(to_py_err)?;
    let m = q.matrix();
    Ok((0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect())
}

/// `max(x) - min(x)`.
#[pyfunction]
fn diameter(x: Vec<f64>) -> PyResult<f64> {
    graph::diameter(&x).map_err(to_py_err)
}

/// `(delta_prime, k, lambda)` of the exponential consensus envelope.
#[pyfunction]
fn consensus_rate_constants(
    a: f64,
    b: f64,
    delta: f64,
    window: f64,
    n: usize,
) -> PyResult<(f64, f64, f64)> {
    let r = graph::consensus_rate_constants(a, b, delta, window, n).map_err(to_py_err)?;
    Ok((r.delta_prime, r.k, r.lambda))
}

/// Trigger threshold `c1 + c2·exp(-decay_rate·t)`.
#[pyfunction]
fn threshold(t: f64, c1: f64, c2: f64, decay_rate: f64) -> f64 {
    etcoord::coordination::TriggerConfig { c1, c2, decay_rate }.threshold(t)
}

/// Closed-form predictor `(gamma_hat, gamma_hat_dot)` at time `t` from a
/// sample `(t_event, gamma, gamma_dot)`.
#[pyfunction]
fn estimator_propagate(
    t_event: f64,
    gamma: f64,
    gamma_dot: f64,
    b: f64,
    gamma_dot_d: f64,
    t: f64,
) -> PyResult<(f64, f64)> {
    let sample = EstimatorSample { t_event, gamma, gamma_dot };
    etcoord::coordination::estimator_propagate(&sample, b, gamma_dot_d, t).map_err(to_py_err)
}

/// Point on a Bezier trajectory at virtual time `gamma`.
#[pyfunction]
fn bezier_position(control_points: Vec<[f64; 3]>, t_f: f64, gamma: f64) -> PyResult<[f64; 3]> {
    let traj = BezierTrajectory::new(control_points.iter().map(|&p| p.into()).collect(), t_f)
        .map_err(to_py_err)?;
    Ok(traj.position(gamma).into())
}

/// Derivative of a Bezier trajectory with respect to virtual time.
#[pyfunction]
fn bezier_velocity(control_points: Vec<[f64; 3]>, t_f: f64, gamma: f64) -> PyResult<[f64; 3]> {
    let traj = BezierTrajectory::new(control_points.iter().map(|&p| p.into()).collect(), t_f)
        .map_err(to_py_err)?;
    Ok(traj.velocity(gamma).into())
}

/// A validated scenario, ready to run.
#[pyclass]
struct Scenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl Scenario {
    /// Parses and validates a scenario from a JSON string.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg = ScenarioConfig::from_json_str(text).map_err(to_py_err)?;
        cfg.validate().map_err(to_py_err)?;
        Ok(Self { inner: cfg })
    }

    /// Loads a scenario file, applying `key=value` overrides.
    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: &str, overrides: Vec<String>) -> PyResult<Self> {
        let (cfg, _warnings) =
            ScenarioConfig::load(std::path::Path::new(path), &overrides).map_err(to_py_err)?;
        Ok(Self { inner: cfg })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Validation warnings (empty when everything is in the green).
    fn warnings(&self) -> PyResult<Vec<String>> {
        self.inner.validate().map_err(to_py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn t_f(&self) -> f64 {
        self.inner.mission_t_f()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.t_end
    }

    /// The theoretical constants and the inter-event lower bound, as JSON.
    fn theoretical_bounds(&self) -> PyResult<String> {
        let cfg = &self.inner;
        let bounds = analysis::iss_bound_constants(
            &cfg.gains,
            cfg.n,
            cfg.qos.window_s,
            cfg.qos.delta,
            1.0,
            None,
        )
        .map_err(to_py_err)?;
        let q = QMatrix::new(cfg.n).map_err(to_py_err)?;
        let gdd0 = cfg.gamma_dot_d_at(0.0);
        let xi0 = {
            let xi1 = q.project(&cfg.initial.gamma).map_err(to_py_err)?.norm_squared();
            let xi2: f64 = cfg
                .initial
                .gamma_dot
                .iter()
                .map(|gd| (gd - gdd0) * (gd - gdd0))
                .sum();
            (xi1 + xi2).sqrt()
        };
        let interevent = analysis::min_interevent_bound(
            &cfg.gains,
            &cfg.trigger,
            cfg.n,
            cfg.pf.rho,
            xi0,
            cfg.gamma_ddot_d_max(),
            &bounds,
        );
        let doc = serde_json::json!({
            "constants": bounds,
            "interevent_bound": interevent,
        });
        Ok(doc.to_string())
    }

    /// Runs the scenario and returns the trace.
    fn run(&self) -> PyResult<Trace> {
        let trace = etcoord::sim::run_scenario(&self.inner).map_err(to_py_err)?;
        Ok(Trace { cfg: self.inner.clone(), inner: trace })
    }
}

/// A finished run: sampled series, events, and the summary report.
#[pyclass]
struct Trace {
    cfg: ScenarioConfig,
    inner: TraceLog,
}

#[pymethods]
impl Trace {
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    /// Virtual-time series of a 1-indexed agent.
    fn gamma(&self, agent: usize) -> PyResult<Vec<f64>> {
        self.series(agent, &self.inner.gamma)
    }

    fn gamma_dot(&self, agent: usize) -> PyResult<Vec<f64>> {
        self.series(agent, &self.inner.gamma_dot)
    }

    fn gamma_ddot(&self, agent: usize) -> PyResult<Vec<f64>> {
        self.series(agent, &self.inner.gamma_ddot)
    }

    /// Reference rate `γ̇_d` at each sample.
    fn gamma_dot_d(&self) -> Vec<f64> {
        self.inner.gamma_dot_d.clone()
    }

    fn est_error(&self, agent: usize) -> PyResult<Vec<f64>> {
        self.series(agent, &self.inner.est_error)
    }

    fn pf_error_norm(&self, agent: usize) -> PyResult<Vec<f64>> {
        self.series(agent, &self.inner.pf_error_norm)
    }

    /// Tracking error vectors `p − p_d(γ)` of a 1-indexed agent.
    fn pf_error(&self, agent: usize) -> PyResult<Vec<[f64; 3]>> {
        if agent < 1 || agent > self.inner.n {
            return Err(PyValueError::new_err(format!("agent {agent} out of range")));
        }
        Ok(self.inner.pf_error[agent - 1].clone())
    }

    fn xi_norm(&self) -> Vec<f64> {
        self.inner.xi_norm.clone()
    }

    fn arrival_times(&self) -> Vec<Option<f64>> {
        self.inner.arrival_times.clone()
    }

    fn events_per_agent(&self) -> Vec<usize> {
        self.inner.events_per_agent()
    }

    /// Event timestamps of a 1-indexed agent.
    fn event_times(&self, agent: usize) -> PyResult<Vec<f64>> {
        if agent < 1 || agent > self.inner.n {
            return Err(PyValueError::new_err(format!("agent {agent} out of range")));
        }
        Ok(self.inner.event_times(agent))
    }

    fn min_interevent_gap(&self) -> Option<f64> {
        self.inner.min_interevent_gap()
    }

    /// Full event log as a JSON array.
    fn events_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.events).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Stable-keyed run report (same content as the CLI's summary.json).
    fn summary_json(&self) -> PyResult<String> {
        let summary = summarize(&self.cfg, &self.inner);
        serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// SHA-256 of every numeric series; equal configs give equal hashes.
    fn hash(&self) -> String {
        self.inner.hash()
    }
}

impl Trace {
    fn series(&self, agent: usize, source: &[Vec<f64>]) -> PyResult<Vec<f64>> {
        if agent < 1 || agent > self.inner.n {
            return Err(PyValueError::new_err(format!("agent {agent} out of range")));
        }
        Ok(source[agent - 1].clone())
    }
}

#[pymodule]
fn etcoord_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(q_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(diameter, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_rate_constants, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(estimator_propagate, m)?)?;
    m.add_function(wrap_pyfunction!(bezier_position, m)?)?;
    m.add_function(wrap_pyfunction!(bezier_velocity, m)?)?;
    m.add_class::<Scenario>()?;
    m.add_class::<Trace>()?;
    Ok(())
}
