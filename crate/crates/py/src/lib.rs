//! Python bindings: `import curloop`.
//!
//! Vectors cross the boundary as lists of floats and reports as dicts.

use curloop::dynamics::{self, LoopOptions, SampleMode};
use curloop::gaussian::{analytic_dj_dlambda, BetaSchedule, BlockCouplingSpec};
use curloop::rewards::{self, HueBand, ImageTensor, PixelRange};
use curloop::sensitivity;
use curloop::stats::{self, FiniteSampleProtocol};
use curloop::{Error, RegularityConstants as CoreConstants, RunSeed, UpdateSchedule};
use nalgebra::DVector;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Regularity constants of the convergence theory.
#[pyclass(name = "RegularityConstants", from_py_object)]
#[derive(Clone)]
struct PyConstants(CoreConstants);

#[pymethods]
impl PyConstants {
    #[new]
    #[pyo3(signature = (gamma_theta=1.0, gamma_phi=1.0, l_theta=1.0, l_phi=1.0, eps_theta=0.0, eps_phi=0.0, lipschitz_l=1.0, data_bound_b=1.0, curation_k=1))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        gamma_theta: f64,
        gamma_phi: f64,
        l_theta: f64,
        l_phi: f64,
        eps_theta: f64,
        eps_phi: f64,
        lipschitz_l: f64,
        data_bound_b: f64,
        curation_k: u32,
    ) -> PyResult<Self> {
        let c = CoreConstants {
            gamma_theta,
            gamma_phi,
            l_theta,
            l_phi,
            eps_theta,
            eps_phi,
            lipschitz_l,
            data_bound_b,
            curation_k,
        };
        c.validate().map_err(to_py)?;
        Ok(PyConstants(c))
    }

    fn kappa(&self) -> f64 {
        sensitivity::compute_kappa(&self.0)
    }

    /// `(τ, 1 − τ)`.
    fn tau(&self) -> PyResult<(f64, f64)> {
        let t = sensitivity::compute_tau(&self.0).map_err(to_py)?;
        Ok((t.tau, t.min_real_fraction))
    }

    fn margins(&self) -> PyResult<(f64, f64)> {
        sensitivity::margin_constants(&self.0).map_err(to_py)
    }

    fn deviation_bound(&self, lambda_real: f64) -> PyResult<(f64, f64)> {
        let b = sensitivity::deviation_bound(&self.0, lambda_real).map_err(to_py)?;
        Ok((b.theta, b.phi))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Linear-Gaussian two-model system.
#[pyclass(name = "GaussianSystem", frozen)]
struct PySystem(curloop::GaussianSystem);

#[pymethods]
impl PySystem {
    /// The 24-dimensional block-rotation system at coupling scale `t`.
    #[staticmethod]
    #[pyo3(signature = (t, lambda_cur=0.4, beta_schedule="interleaved"))]
    fn reference(t: f64, lambda_cur: f64, beta_schedule: &str) -> PyResult<Self> {
        let sched: BetaSchedule = parse("beta schedule", beta_schedule)?;
        curloop::GaussianSystem::from_blocks(BlockCouplingSpec::with_schedule(t, sched), lambda_cur)
            .map(PySystem)
            .map_err(to_py)
    }

    /// The two-dimensional text/image example.
    #[staticmethod]
    #[pyo3(signature = (lambda_cur=0.0))]
    fn example_text_image(lambda_cur: f64) -> PyResult<Self> {
        curloop::GaussianSystem::example_text_image(lambda_cur).map(PySystem).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn lambda_cur(&self) -> f64 {
        self.0.lambda_cur()
    }

    #[getter]
    fn coupling_norm(&self) -> f64 {
        curloop::linalg::spectral_norm(&self.0.phi_from_theta)
    }

    fn with_curation(&self, lambda_cur: f64) -> PyResult<Self> {
        self.0.with_curation(lambda_cur).map(PySystem).map_err(to_py)
    }

    fn with_real_fraction(&self, lambda_real: f64) -> PyResult<Self> {
        self.0.with_real_fraction(lambda_real).map(PySystem).map_err(to_py)
    }

    /// `(θ*, φ*)`.
    fn fixed_point(&self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let fp = self.0.fixed_point().map_err(to_py)?;
        Ok((vec_of(&fp.theta), vec_of(&fp.phi)))
    }

    fn reward_p(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.check(&theta)?;
        Ok(self.0.reward_p(&DVector::from_vec(theta)))
    }

    fn reward_q(&self, phi: Vec<f64>) -> PyResult<f64> {
        self.check(&phi)?;
        Ok(self.0.reward_q(&DVector::from_vec(phi)))
    }

    /// `(∂J_p/∂λ_H^θ, ∂J_q/∂λ_H^θ)` from the closed-form stable point.
    fn dj_dlambda(&self) -> PyResult<(f64, f64)> {
        analytic_dj_dlambda(&self.0).map_err(to_py)
    }

    /// Full sensitivity report as a dict.
    #[pyo3(signature = (constants=None))]
    fn sensitivity_report<'py>(
        &self,
        py: Python<'py>,
        constants: Option<PyConstants>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = sensitivity::sensitivity_report(&self.0, constants.as_ref().map(|c| &c.0)).map_err(to_py)?;
        json_to_py(py, &r)
    }

    /// Runs the loop; `n=None` uses exact expectations.
    #[pyo3(signature = (iterations=100, n=None, seed=0, schedule="synchronous"))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        iterations: usize,
        n: Option<usize>,
        seed: u64,
        schedule: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let sched: UpdateSchedule = parse("schedule", schedule)?;
        let mut opts = LoopOptions::exact(iterations).with_schedule(sched);
        if let Some(n) = n {
            opts.mode = SampleMode::Finite {
                n,
                allocation: dynamics::Allocation::Multinomial,
            };
        }
        let traj = dynamics::run_loop(&self.0, &opts, RunSeed(seed)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("theta", traj.theta.iter().map(vec_of).collect::<Vec<_>>())?;
        d.set_item("phi", traj.phi.iter().map(vec_of).collect::<Vec<_>>())?;
        d.set_item("j_p", &traj.j_p)?;
        d.set_item("j_q", &traj.j_q)?;
        d.set_item("delta_theta", &traj.delta_theta)?;
        d.set_item("delta_phi", &traj.delta_phi)?;
        Ok(d)
    }

    /// Monte Carlo `J_p`, `J_q` and their λ-derivatives with 95% CIs.
    #[pyo3(signature = (n, replicas=200, seed=0, step=0.05))]
    fn finite_sample_estimates<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        replicas: usize,
        seed: u64,
        step: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut proto = FiniteSampleProtocol::new(n);
        proto.replicas = replicas;
        let r = py
            .detach(|| {
                let r = stats::finite_sample_rewards(&self.0, &proto, RunSeed(seed))?;
                let d = stats::finite_sample_derivatives(&self.0, &proto, step, RunSeed(seed))?;
                Ok::<_, Error>(serde_json::json!({
                    "j_p": r.j_p, "j_q": r.j_q, "dJp_dlambda": d.j_p, "dJq_dlambda": d.j_q,
                }))
            })
            .map_err(to_py)?;
        json_to_py(py, &r)
    }

    fn __repr__(&self) -> String {
        format!(
            "GaussianSystem(dim={}, lambda_cur={}, coupling_norm={:.4})",
            self.0.dim(),
            self.0.lambda_cur(),
            self.coupling_norm()
        )
    }
}

impl PySystem {
    fn check(&self, v: &[f64]) -> PyResult<()> {
        if v.len() != self.0.dim() {
            return Err(to_py(Error::Dimension {
                expected: self.0.dim(),
                got: v.len(),
            }));
        }
        Ok(())
    }
}

#[pyfunction]
fn bradley_terry_probabilities(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    dynamics::bradley_terry_probabilities(&rewards).map_err(to_py)
}

/// Index counts of `draws` Bradley-Terry selections.
#[pyfunction]
#[pyo3(signature = (rewards, draws, seed=0))]
fn bradley_terry_counts(rewards: Vec<f64>, draws: usize, seed: u64) -> PyResult<Vec<u64>> {
    let mut rng = RunSeed(seed).rng();
    let mut counts = vec![0u64; rewards.len()];
    for _ in 0..draws {
        counts[dynamics::bradley_terry_select(&rewards, &mut rng).map_err(to_py)?] += 1;
    }
    Ok(counts)
}

#[pyfunction]
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> PyResult<(f64, f64, f64)> {
    rewards::rgb_to_hsv(r, g, b).map_err(to_py)
}

fn image(data: Vec<f64>, height: usize, width: usize, signed: bool) -> PyResult<ImageTensor> {
    let range = if signed { PixelRange::Signed } else { PixelRange::Unit };
    ImageTensor::new(height, width, range, data).map_err(to_py)
}

fn band(name: &str) -> PyResult<HueBand> {
    match name {
        "warm" => Ok(HueBand::warm()),
        "cool" => Ok(HueBand::cool()),
        other => Err(PyValueError::new_err(format!("unknown band {other:?}; expected warm or cool"))),
    }
}

/// Band occupancy of a channel-major `3×H×W` image.
#[pyfunction]
#[pyo3(signature = (data, height, width, band_name, signed=true))]
fn band_score(data: Vec<f64>, height: usize, width: usize, band_name: &str, signed: bool) -> PyResult<f64> {
    Ok(rewards::band_score(&image(data, height, width, signed)?, &band(band_name)?))
}

/// `(r_θ, r_φ)` warm/cool rewards with the default weights.
#[pyfunction]
#[pyo3(signature = (data, height, width, mu0, sigma0, signed=true))]
fn hue_rewards(
    data: Vec<f64>,
    height: usize,
    width: usize,
    mu0: [f64; 3],
    sigma0: [f64; 3],
    signed: bool,
) -> PyResult<(f64, f64)> {
    Ok(rewards::hue_rewards(&image(data, height, width, signed)?, mu0, sigma0))
}

#[pymodule]
#[pyo3(name = "curloop")]
fn curloop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyConstants>()?;
    m.add_function(wrap_pyfunction!(bradley_terry_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(bradley_terry_counts, m)?)?;
    m.add_function(wrap_pyfunction!(rgb_to_hsv, m)?)?;
    m.add_function(wrap_pyfunction!(band_score, m)?)?;
    m.add_function(wrap_pyfunction!(hue_rewards, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
