//! Python bindings: scenario configuration, scheme runs, Monte Carlo tables
//! and direct access to one trial's sum rate and phase gradient.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use simcf_core::assoc::AssociationMatrix;
use simcf_core::driver::{self, SchemeId};
use simcf_core::{grad_sum_rate, scenario, Error, PhaseState, PowerAllocation, SystemModel};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::ConfigParse(_) | Error::InvalidConfig { .. } | Error::DimensionMismatch(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn scheme(token: &str) -> PyResult<SchemeId> {
    token.parse().map_err(to_py)
}

#[pyclass(name = "ScenarioConfig", from_py_object)]
#[derive(Clone, Default)]
struct PyConfig {
    inner: scenario::ScenarioConfig,
}

macro_rules! config_fields {
    ($($field:ident: $ty:ty, $setter:ident;)* { $($rest:item)* }) => {
        #[pymethods]
        impl PyConfig {
            $($rest)*
            $(
                #[getter]
                fn $field(&self) -> $ty {
                    self.inner.$field
                }

                #[setter]
                fn $setter(&mut self, value: $ty) {
                    self.inner.$field = value;
                }
            )*
        }
    };
}

config_fields! {
    num_aps: usize, set_num_aps;
    antennas_per_ap: usize, set_antennas_per_ap;
    num_users: usize, set_num_users;
    num_layers: usize, set_num_layers;
    nx: usize, set_nx;
    ny: usize, set_ny;
    p_max_w: f64, set_p_max_w;
    carrier_freq_hz: f64, set_carrier_freq_hz;
    area_side_m: f64, set_area_side_m;
    ao_max: usize, set_ao_max;
    pga_max: usize, set_pga_max;
    power_max: usize, set_power_max;
    multistart: usize, set_multistart;
    seed: u64, set_seed;
    {
        /// Desk-scale defaults.
        #[new]
        fn new() -> Self {
            Self::default()
        }

        #[staticmethod]
        fn from_json(text: &str) -> PyResult<Self> {
            scenario::ScenarioConfig::from_json(text).map(|inner| Self { inner }).map_err(to_py)
        }

        fn to_json(&self) -> String {
            self.inner.to_json()
        }

        fn validate(&self) -> PyResult<()> {
            self.inner.validate().map_err(to_py)
        }

        #[getter]
        fn atoms_per_layer(&self) -> usize {
            self.inner.atoms_per_layer()
        }

        #[getter]
        fn noise_power_w(&self) -> f64 {
            self.inner.noise_power_w()
        }

        fn __eq__(&self, other: &Self) -> bool {
            self.inner == other.inner
        }

        fn __repr__(&self) -> String {
            let c = &self.inner;
            format!(
                "ScenarioConfig(L={}, U={}, K={}, M={}, N={}, seed={})",
                c.num_aps,
                c.antennas_per_ap,
                c.num_users,
                c.num_layers,
                c.atoms_per_layer(),
                c.seed
            )
        }
    }
}

/// Outcome of one scheme on one trial.
#[pyclass(name = "RunReport", frozen, skip_from_py_object)]
struct PyRunReport {
    inner: driver::RunReport,
}

#[pymethods]
impl PyRunReport {
    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme.token()
    }

    #[getter]
    fn trial(&self) -> u64 {
        self.inner.trial
    }

    #[getter]
    fn sum_rate(&self) -> f64 {
        self.inner.sum_rate()
    }

    /// Per-UE rates, bit/s/Hz.
    #[getter]
    fn rates(&self) -> Vec<f64> {
        self.inner.rate.rate.clone()
    }

    #[getter]
    fn sinr(&self) -> Vec<f64> {
        self.inner.rate.gamma.clone()
    }

    #[getter]
    fn ao_trace(&self) -> Vec<f64> {
        self.inner.ao_trace.clone()
    }

    #[getter]
    fn outer_iters(&self) -> usize {
        self.inner.iterations.outer
    }

    /// Final phases, flattened AP by AP, then layer, then atom.
    #[getter]
    fn phases(&self) -> Vec<f64> {
        self.inner.phases.values().to_vec()
    }

    /// Final per-antenna powers `power[l][u]`, W.
    #[getter]
    fn power(&self) -> Vec<Vec<f64>> {
        self.inner.power.p.clone()
    }

    fn __repr__(&self) -> String {
        format!("RunReport({}, trial={}, sum_rate={:.4})", self.scheme(), self.inner.trial, self.sum_rate())
    }
}

/// Reports of every run plus per-scheme mean and standard deviation.
#[pyclass(name = "MonteCarloTable", frozen, skip_from_py_object)]
struct PyTable {
    inner: driver::MonteCarloTable,
}

#[pymethods]
impl PyTable {
    #[getter]
    fn runs(&self) -> Vec<PyRunReport> {
        self.inner.runs.iter().map(|r| PyRunReport { inner: r.clone() }).collect()
    }

    /// `(trials, mean, std)` of one scheme.
    fn summary(&self, scheme_token: &str) -> PyResult<(usize, f64, f64)> {
        let id = scheme(scheme_token)?;
        self.inner
            .summary(id)
            .map(|s| (s.trials, s.mean, s.std))
            .ok_or_else(|| PyValueError::new_err(format!("scheme `{scheme_token}` was not run")))
    }
}

/// The random draws of one trial, with direct sum-rate and gradient access.
#[pyclass(name = "Trial", frozen, skip_from_py_object)]
struct PyTrial {
    config: scenario::ScenarioConfig,
    inner: driver::Trial,
}

impl PyTrial {
    fn assoc(&self, kind: &str) -> PyResult<AssociationMatrix> {
        let kind = match kind {
            "aga" => driver::AssocKind::Aga,
            "nua" => driver::AssocKind::Nua,
            other => return Err(PyValueError::new_err(format!("association must be `aga` or `nua`, got `{other}`"))),
        };
        self.inner.association(kind).map_err(to_py)
    }

    fn phase_state(&self, phases: Option<Vec<f64>>) -> PyResult<PhaseState> {
        match phases {
            None => Ok(self.inner.initial_phases.clone()),
            Some(v) => {
                let c = &self.config;
                PhaseState::from_values(c.num_aps, c.num_layers, c.atoms_per_layer(), v).map_err(to_py)
            }
        }
    }

    fn power_alloc(&self, power: Option<Vec<Vec<f64>>>) -> PyResult<PowerAllocation> {
        let c = &self.config;
        match power {
            None => Ok(PowerAllocation::equal(c.num_aps, c.antennas_per_ap, c.p_max_w)),
            Some(p) if p.len() == c.num_aps && p.iter().all(|r| r.len() == c.antennas_per_ap) => Ok(PowerAllocation { p }),
            Some(_) => Err(PyValueError::new_err(format!("power must be {}x{}", c.num_aps, c.antennas_per_ap))),
        }
    }
}

#[pymethods]
impl PyTrial {
    #[new]
    fn new(config: &PyConfig, index: u64) -> PyResult<Self> {
        let inner = driver::Trial::prepare(&config.inner, index).map_err(to_py)?;
        Ok(Self { config: config.inner.clone(), inner })
    }

    #[getter]
    fn index(&self) -> u64 {
        self.inner.index
    }

    #[getter]
    fn noise(&self) -> f64 {
        self.inner.noise
    }

    #[getter]
    fn initial_phases(&self) -> Vec<f64> {
        self.inner.initial_phases.values().to_vec()
    }

    /// Association blocks `a[l][u][k]` as 0/1 integers.
    fn association(&self, kind: &str) -> PyResult<Vec<Vec<Vec<u8>>>> {
        let a = self.assoc(kind)?;
        Ok((0..a.num_aps()).map(|l| a.block(l).iter().map(|row| row.iter().map(|&b| b as u8).collect()).collect()).collect())
    }

    /// Sum rate, bit/s/Hz. Phases default to the trial's random start,
    /// power to an equal split.
    #[pyo3(signature = (assoc = "aga", phases = None, power = None))]
    fn sum_rate(&self, assoc: &str, phases: Option<Vec<f64>>, power: Option<Vec<Vec<f64>>>) -> PyResult<f64> {
        let a = self.assoc(assoc)?;
        let model = SystemModel::new(&self.inner.prop, &self.inner.channels, &a, self.inner.noise);
        Ok(model.sum_rate(&self.phase_state(phases)?, &self.power_alloc(power)?))
    }

    /// Gradient of the sum rate with respect to every phase, same layout
    /// as the phase vector.
    #[pyo3(signature = (assoc = "aga", phases = None, power = None))]
    fn gradient(&self, assoc: &str, phases: Option<Vec<f64>>, power: Option<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        let a = self.assoc(assoc)?;
        let model = SystemModel::new(&self.inner.prop, &self.inner.channels, &a, self.inner.noise);
        Ok(grad_sum_rate(&model, &self.phase_state(phases)?, &self.power_alloc(power)?))
    }

    fn run(&self, scheme_token: &str) -> PyResult<PyRunReport> {
        let id = scheme(scheme_token)?;
        driver::run_on_trial(&self.inner, &self.config, id).map(|inner| PyRunReport { inner }).map_err(to_py)
    }
}

#[pyfunction]
fn run_scheme(py: Python<'_>, config: &PyConfig, trial: u64, scheme_token: &str) -> PyResult<PyRunReport> {
    let id = scheme(scheme_token)?;
    let cfg = config.inner.clone();
    py.detach(|| driver::run_scheme(&cfg, trial, id)).map(|inner| PyRunReport { inner }).map_err(to_py)
}

/// Run `schemes` on trials `0..trials`, trials in parallel.
#[pyfunction]
#[pyo3(signature = (config, schemes, trials, first_trial = 0))]
fn monte_carlo(py: Python<'_>, config: &PyConfig, schemes: Vec<String>, trials: u64, first_trial: u64) -> PyResult<PyTable> {
    let ids = schemes.iter().map(|s| scheme(s)).collect::<PyResult<Vec<_>>>()?;
    let cfg = config.inner.clone();
    py.detach(|| driver::monte_carlo(&cfg, &ids, first_trial..first_trial + trials)).map(|inner| PyTable { inner }).map_err(to_py)
}

/// Noise power in W from a density in dBm/Hz and a bandwidth in Hz.
#[pyfunction]
fn noise_power(noise_density_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    scenario::noise_power(noise_density_dbm_hz, bandwidth_hz)
}

/// Large-scale power gain at `distance_m` under `config`.
#[pyfunction]
fn path_loss(distance_m: f64, config: &PyConfig) -> PyResult<f64> {
    scenario::path_loss(distance_m, &config.inner).map_err(to_py)
}

#[pyfunction]
fn scheme_tokens() -> Vec<&'static str> {
    SchemeId::ALL.iter().map(|s| s.token()).collect()
}

#[pymodule]
fn simcf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunReport>()?;
    m.add_class::<PyTable>()?;
    m.add_class::<PyTrial>()?;
    m.add_function(wrap_pyfunction!(run_scheme, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(noise_power, m)?)?;
    m.add_function(wrap_pyfunction!(path_loss, m)?)?;
    m.add_function(wrap_pyfunction!(scheme_tokens, m)?)?;
    Ok(())
}
