//! Python bindings: objectives, likelihood points, training runs and the
//! verification battery.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use prefdyn::config::ConfigMap;
use prefdyn::losses::{self, LimitClass};
use prefdyn::oracle::{self, VerifyOptions};
use prefdyn::trainer::{self, RewardLog};
use prefdyn::world::{self, ToySpace};
use prefdyn::{LikelihoodPoint, MetricsLog, RewardPoint, Scenario, TrainConfig, TrainError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::InvalidConfig(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Policy and reference likelihoods of one preference pair.
#[pyclass(name = "Point", frozen)]
struct PyPoint(LikelihoodPoint);

#[pymethods]
impl PyPoint {
    #[new]
    #[pyo3(signature = (pi_plus, pi_minus, pi0_plus = 0.5, pi0_minus = 0.5))]
    fn new(pi_plus: f64, pi_minus: f64, pi0_plus: f64, pi0_minus: f64) -> PyResult<Self> {
        LikelihoodPoint::new(pi_plus, pi_minus, pi0_plus, pi0_minus)
            .map(PyPoint)
            .map_err(value_err)
    }

    #[getter]
    fn pi_plus(&self) -> f64 {
        self.0.pi_plus()
    }

    #[getter]
    fn pi_minus(&self) -> f64 {
        self.0.pi_minus()
    }

    #[getter]
    fn pi0_plus(&self) -> f64 {
        self.0.pi0_plus()
    }

    #[getter]
    fn pi0_minus(&self) -> f64 {
        self.0.pi0_minus()
    }

    fn __repr__(&self) -> String {
        format!(
            "Point({}, {}, {}, {})",
            self.0.pi_plus(),
            self.0.pi_minus(),
            self.0.pi0_plus(),
            self.0.pi0_minus()
        )
    }
}

#[pyclass(name = "Objective", frozen)]
struct PyObjective(prefdyn::Objective);

#[pymethods]
impl PyObjective {
    #[staticmethod]
    #[pyo3(signature = (beta = 0.1))]
    fn dpo(beta: f64) -> PyResult<Self> {
        Self::checked(prefdyn::Objective::Dpo { beta })
    }

    #[staticmethod]
    #[pyo3(signature = (beta_plus = 0.1, beta_minus = 0.05))]
    fn flex_dpo(beta_plus: f64, beta_minus: f64) -> PyResult<Self> {
        Self::checked(prefdyn::Objective::FlexDpo {
            beta_plus,
            beta_minus,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (beta = 0.1, gamma = 0.1))]
    fn sft_dpo(beta: f64, gamma: f64) -> PyResult<Self> {
        Self::checked(prefdyn::Objective::SftDpo { beta, gamma })
    }

    #[staticmethod]
    #[pyo3(signature = (eta = 0.1))]
    fn ipo(eta: f64) -> PyResult<Self> {
        Self::checked(prefdyn::Objective::Ipo { eta })
    }

    #[staticmethod]
    #[pyo3(signature = (delta = 1.0, eta = 0.1))]
    fn slic(delta: f64, eta: f64) -> PyResult<Self> {
        Self::checked(prefdyn::Objective::Slic { delta, eta })
    }

    #[staticmethod]
    #[pyo3(signature = (beta = 2.0, margin = 0.5, len_plus = 1, len_minus = 1))]
    fn simpo(beta: f64, margin: f64, len_plus: u32, len_minus: u32) -> PyResult<Self> {
        Self::checked(prefdyn::Objective::SimPo {
            beta,
            margin,
            len_plus,
            len_minus,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn loss(&self, point: &PyPoint) -> PyResult<f64> {
        self.0.loss(&point.0).map_err(value_err)
    }

    /// `(d_plus, d_minus)`: derivatives of the loss in π+ and π−.
    fn grad(&self, point: &PyPoint) -> PyResult<(f64, f64)> {
        self.0
            .grad(&point.0)
            .map(|g| (g.d_plus, g.d_minus))
            .map_err(value_err)
    }

    /// Worst relative gap between the analytic gradient and central differences.
    fn finite_diff_error(&self, point: &PyPoint) -> PyResult<f64> {
        oracle::finite_diff(&self.0, &point.0, None)
            .map(|r| r.max_rel_err())
            .map_err(value_err)
    }

    /// Sweeps π− from 1e-1 to 1e-12 and returns the final-decade slopes and limit classes.
    #[pyo3(signature = (pi_plus = 0.5))]
    fn limit_sweep<'py>(&self, py: Python<'py>, pi_plus: f64) -> PyResult<Bound<'py, PyDict>> {
        let r =
            oracle::limit_sweep(&self.0, pi_plus, oracle::POINTS_PER_DECADE).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("slope_plus", r.slope_plus)?;
        d.set_item("slope_minus", r.slope_minus)?;
        d.set_item("class_plus", class_label(&r.class_plus))?;
        d.set_item("class_minus", class_label(&r.class_minus))?;
        d.set_item("pi_minus", r.grid)?;
        d.set_item("abs_d_plus", r.abs_d_plus)?;
        d.set_item("abs_d_minus", r.abs_d_minus)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Objective({:?})", self.0)
    }
}

impl PyObjective {
    fn checked(o: prefdyn::Objective) -> PyResult<Self> {
        o.validate().map_err(value_err)?;
        Ok(PyObjective(o))
    }
}

fn class_label(c: &LimitClass) -> String {
    match c {
        LimitClass::Constant(v) => format!("constant({v})"),
        other => other.label().to_string(),
    }
}

#[pyfunction]
fn rm_loss(r_plus: f64, r_minus: f64) -> f64 {
    losses::rm_loss(&RewardPoint::new(r_plus, r_minus))
}

#[pyfunction]
fn rm_grad(r_plus: f64, r_minus: f64) -> (f64, f64) {
    let g = losses::rm_grad(&RewardPoint::new(r_plus, r_minus));
    (g.d_plus, g.d_minus)
}

/// Initial target table for scenario 1 to 4, one row per prompt.
#[pyfunction]
fn init_targets(scenario: usize) -> PyResult<Vec<Vec<f64>>> {
    let sc = Scenario::parse(&scenario.to_string())
        .ok_or_else(|| value_err(format!("no scenario {scenario}")))?;
    Ok(world::init_targets(&ToySpace::standard(), sc))
}

/// A finished policy-training run.
#[pyclass(name = "Metrics", frozen)]
struct PyMetrics(MetricsLog);

#[pymethods]
impl PyMetrics {
    fn csv(&self) -> String {
        self.0.to_csv()
    }

    fn accuracy_csv(&self) -> String {
        self.0.accuracy_csv()
    }

    #[getter]
    fn epochs(&self) -> Vec<usize> {
        self.0.rows.iter().map(|r| r.epoch).collect()
    }

    /// Column by CSV header name, plus `implicit_accuracy`.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let idx = match name {
            "implicit_accuracy" => {
                return Ok(self.0.rows.iter().map(|r| r.implicit_accuracy).collect())
            }
            _ => trainer::METRICS_HEADER
                .split(',')
                .skip(1)
                .position(|h| h == name),
        };
        let idx = idx.ok_or_else(|| value_err(format!("no column {name:?}")))?;
        Ok(self.0.rows.iter().map(|r| r.csv_fields()[idx]).collect())
    }

    fn initial<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = &self.0.initial;
        let d = PyDict::new(py);
        d.set_item("avg_chosen", r.avg_chosen)?;
        d.set_item("avg_rejected", r.avg_rejected)?;
        d.set_item("avg_unseen", r.avg_unseen)?;
        d.set_item("implicit_accuracy", r.implicit_accuracy)?;
        Ok(d)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.0.summary();
        let d = PyDict::new(py);
        d.set_item("initial_avg_chosen", s.initial_avg_chosen)?;
        d.set_item("peak_avg_chosen", s.peak_avg_chosen)?;
        d.set_item("peak_epoch", s.peak_epoch)?;
        d.set_item("final_avg_chosen", s.final_avg_chosen)?;
        d.set_item("final_avg_rejected", s.final_avg_rejected)?;
        d.set_item("final_avg_unseen", s.final_avg_unseen)?;
        d.set_item("decline_epoch", s.decline_epoch)?;
        Ok(d)
    }

    /// Normalisation and mass-transfer residuals over the run.
    fn mass_accounting<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = oracle::check_mass_accounting(&self.0).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("normalization_residual", r.max_normalization_residual)?;
        d.set_item("transfer_residual", r.max_accounting_residual)?;
        d.set_item("ok", r.accounting_ok)?;
        Ok(d)
    }

    fn pairs(&self) -> Vec<(usize, usize, usize)> {
        self.0
            .pairs
            .iter()
            .map(|p| (p.prompt, p.chosen, p.rejected))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.0.rows.len()
    }
}

#[pyclass(name = "RewardMetrics", frozen)]
struct PyRewardMetrics(RewardLog);

#[pymethods]
impl PyRewardMetrics {
    fn csv(&self) -> String {
        self.0.to_csv()
    }

    fn accuracies(&self) -> Vec<f64> {
        self.0.accuracies()
    }

    fn grad_means(&self) -> Vec<(f64, f64)> {
        self.0
            .rows
            .iter()
            .map(|r| (r.grad_plus_mean, r.grad_minus_mean))
            .collect()
    }

    fn pairs(&self) -> Vec<(usize, usize, usize)> {
        self.0
            .pairs
            .iter()
            .map(|p| (p.prompt, p.chosen, p.rejected))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.0.rows.len()
    }
}

fn config_from(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let mut map = ConfigMap::new();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            map.set(&key, v.str()?.to_string()).map_err(value_err)?;
        }
    }
    map.train_config().map_err(value_err)
}

/// Trains a policy. Keyword arguments use the config-file key names, e.g.
/// `train(scenario=1, objective="dpo", beta=0.1, epochs=500, seed=0)`.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn train(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<PyMetrics> {
    let cfg = config_from(kwargs)?;
    trainer::run_dpo_training(&cfg)
        .map(|o| PyMetrics(o.log))
        .map_err(train_err)
}

/// Trains the reward model on the pair stream a policy run with the same seed uses.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn train_reward_model(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<PyRewardMetrics> {
    let cfg = TrainConfig {
        objective: prefdyn::Objective::Rm,
        ..config_from(kwargs)?
    };
    trainer::run_rm_training(&cfg)
        .map(|o| PyRewardMetrics(o.log))
        .map_err(train_err)
}

/// Runs the verification battery; returns `(name, passed, detail)` per check.
#[pyfunction]
#[pyo3(signature = (only = None, points = 1000, seed = 0))]
fn verify(only: Option<String>, points: usize, seed: u64) -> PyResult<Vec<(String, bool, String)>> {
    if let Some(name) = &only {
        if !oracle::CHECK_NAMES.contains(&name.as_str()) {
            return Err(value_err(format!("unknown check {name:?}")));
        }
    }
    let results = oracle::run_battery(&VerifyOptions {
        only,
        points,
        seed,
        sabotage: None,
    });
    Ok(results
        .into_iter()
        .map(|r| (r.name.to_string(), r.passed, r.detail))
        .collect())
}

#[pymodule]
fn prefdyn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPoint>()?;
    m.add_class::<PyObjective>()?;
    m.add_class::<PyMetrics>()?;
    m.add_class::<PyRewardMetrics>()?;
    m.add_function(wrap_pyfunction!(rm_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rm_grad, m)?)?;
    m.add_function(wrap_pyfunction!(init_targets, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(train_reward_model, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("METRICS_HEADER", trainer::METRICS_HEADER)?;
    Ok(())
}
