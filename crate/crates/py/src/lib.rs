//! Python bindings over the core simulation crate.
//!
//! The module mirrors the Rust surface thinly: qubit states and
//! measurement, a full BB84 exchange, CHSH statistics, formation
//! acquisition, transfer-function algebra, the perturbation sweep, a
//! torque-free rigid-body run, and the scenario runner. Everything that
//! samples takes an explicit seed and reproduces the library's named
//! RNG streams, so results match byte for byte across the two languages.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::Rng;

use qauto_core::bb84::{self, ChannelModel, EveModel, ExchangeConfig};
use qauto_core::control::{self, RationalTF};
use qauto_core::formation::{AgentNetwork, FormationSimConfig, PidGains};
use qauto_core::laplace::{self, EigenSystem, PerturbationProblem};
use qauto_core::qubit::{self, MeasurementBasis};
use qauto_core::rigid_body::{self, BodyState, EulerAngles, PlatformParams, Wrench};
use qauto_core::rng::stream;
use qauto_core::scenario::{run_to_files, ScenarioConfig};
use qauto_core::spdc::{self, BellState, ChshAngles, TwoPhotonState};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_state(name: &str) -> PyResult<BellState> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| {
        PyValueError::new_err(format!(
            "unknown Bell state '{name}': expected phi_plus, phi_minus, psi_plus, or psi_minus"
        ))
    })
}

fn parse_angles(angles: Option<(f64, f64, f64, f64)>, state: BellState) -> ChshAngles {
    match angles {
        Some((a1, a2, b1, b2)) => {
            ChshAngles { a1_deg: a1, a2_deg: a2, b1_deg: b1, b2_deg: b2 }
        }
        None => ChshAngles::for_state(state),
    }
}

fn parse_basis(basis: &str) -> PyResult<MeasurementBasis> {
    match basis {
        "z" | "Z" => Ok(MeasurementBasis::Z),
        "x" | "X" => Ok(MeasurementBasis::X),
        other => match other.parse::<f64>() {
            Ok(angle_deg) if angle_deg.is_finite() => {
                Ok(MeasurementBasis::Linear { angle_deg })
            }
            _ => Err(PyValueError::new_err(format!(
                "basis must be 'z', 'x', or a polarizer angle in degrees, got '{other}'"
            ))),
        },
    }
}

/// A pure single-qubit state (photon polarization / spin-1/2).
#[pyclass(frozen, skip_from_py_object)]
struct Qubit {
    inner: qubit::Qubit,
}

#[pymethods]
impl Qubit {
    /// |+z⟩: horizontal polarization, key bit 0.
    #[staticmethod]
    fn plus_z() -> Self {
        Self { inner: qubit::Qubit::plus_z() }
    }

    /// |−z⟩: vertical polarization, key bit 1.
    #[staticmethod]
    fn minus_z() -> Self {
        Self { inner: qubit::Qubit::minus_z() }
    }

    /// |+x⟩ = (|+z⟩ + |−z⟩)/√2.
    #[staticmethod]
    fn plus_x() -> Self {
        Self { inner: qubit::Qubit::plus_x() }
    }

    /// |−x⟩ = (|+z⟩ − |−z⟩)/√2.
    #[staticmethod]
    fn minus_x() -> Self {
        Self { inner: qubit::Qubit::minus_x() }
    }

    /// Linear polarization at `angle_deg` degrees from horizontal.
    #[staticmethod]
    fn linear(angle_deg: f64) -> Self {
        Self { inner: qubit::Qubit::linear_polarization(angle_deg) }
    }

    /// Born-rule probability of projecting onto `target`.
    fn probability(&self, target: &Qubit) -> f64 {
        self.inner.probability(&target.inner)
    }

    /// Amplitudes on the z basis as ((re, im), (re, im)).
    fn amplitudes(&self) -> ((f64, f64), (f64, f64)) {
        let plus = self.inner.c_plus();
        let minus = self.inner.c_minus();
        ((plus.re, plus.im), (minus.re, minus.im))
    }

    /// Measures `n` fresh copies in `basis` ('z', 'x', or a polarizer
    /// angle in degrees) and returns the outcome bits as `bytes` of
    /// 0/1 values. Deterministic in `seed`.
    fn measure_bits(&self, basis: &str, n: u64, seed: u64) -> PyResult<Vec<u8>> {
        let basis = parse_basis(basis)?;
        let mut rng = stream(seed, "py.measure", 0);
        Ok((0..n).map(|_| qubit::measure(&self.inner, basis, &mut rng).outcome.bit()).collect())
    }

    fn __repr__(&self) -> String {
        let ((ar, ai), (br, bi)) = self.amplitudes();
        format!("Qubit(({ar:+.6}{ai:+.6}j)|+z> + ({br:+.6}{bi:+.6}j)|-z>)")
    }
}

/// Result of one full BB84 exchange.
#[pyclass(frozen, get_all)]
struct ExchangeSummary {
    n_sent: usize,
    n_received: usize,
    n_sifted: usize,
    qber: f64,
    /// "clean" or "compromised" at the configured threshold.
    verdict: String,
    /// Final key bits as `bytes` of 0/1 values.
    alice_key: Vec<u8>,
    /// Final key bits as `bytes` of 0/1 values.
    bob_key: Vec<u8>,
}

#[pymethods]
impl ExchangeSummary {
    fn __repr__(&self) -> String {
        format!(
            "ExchangeSummary(n_sent={}, n_sifted={}, qber={:.4}, verdict='{}')",
            self.n_sent, self.n_sifted, self.qber, self.verdict
        )
    }
}

/// Runs prepare → transmit → measure → sift → error estimation.
#[pyfunction]
#[pyo3(signature = (n_qubits=2048, seed=0, eve_fraction=0.0, transmittance=1.0,
                    detector_efficiency=1.0, sample_fraction=0.2,
                    qber_threshold=bb84::QBER_THRESHOLD))]
#[allow(clippy::too_many_arguments)]
fn bb84_exchange(
    n_qubits: usize,
    seed: u64,
    eve_fraction: f64,
    transmittance: f64,
    detector_efficiency: f64,
    sample_fraction: f64,
    qber_threshold: f64,
) -> PyResult<ExchangeSummary> {
    let config = ExchangeConfig {
        n_qubits,
        channel: ChannelModel {
            transmittance,
            eve: (eve_fraction > 0.0)
                .then_some(EveModel { intercept_fraction: eve_fraction }),
        },
        detector_efficiency,
        sample_fraction,
        qber_threshold,
    };
    let mut rng = stream(seed, "py.bb84", 0);
    let outcome = bb84::run_exchange(&config, &mut rng).map_err(err)?;
    let verdict = serde_json::to_value(outcome.verdict).map_err(err)?;
    Ok(ExchangeSummary {
        n_sent: outcome.n_sent,
        n_received: outcome.n_received,
        n_sifted: outcome.n_sifted,
        qber: outcome.qber,
        verdict: verdict.as_str().unwrap_or("unknown").to_string(),
        alice_key: outcome.alice_key,
        bob_key: outcome.bob_key,
    })
}

/// Sampled CHSH statistic with its standard error.
#[pyclass(frozen, get_all)]
struct ChshSample {
    s: f64,
    sigma_s: f64,
    /// (S − 2) / σ_S.
    significance: f64,
    /// (E, σ_E) at the four settings in order a₁b₁, a₁b₂, a₂b₁, a₂b₂.
    correlations: Vec<(f64, f64)>,
}

#[pymethods]
impl ChshSample {
    fn __repr__(&self) -> String {
        format!(
            "ChshSample(s={:.4}, sigma_s={:.4}, significance={:.1})",
            self.s, self.sigma_s, self.significance
        )
    }
}

/// Analytic CHSH value for a Bell state; defaults to the settings that
/// maximize it for that state.
#[pyfunction]
#[pyo3(signature = (state="phi_plus", angles=None))]
fn chsh_analytic(state: &str, angles: Option<(f64, f64, f64, f64)>) -> PyResult<f64> {
    let bell = parse_state(state)?;
    Ok(spdc::chsh(&TwoPhotonState::bell(bell), &parse_angles(angles, bell)))
}

/// Monte-Carlo CHSH from `pairs_per_setting` pairs at each setting.
#[pyfunction]
#[pyo3(signature = (pairs_per_setting=25_000, seed=0, state="phi_plus", angles=None))]
fn chsh_sample(
    pairs_per_setting: u64,
    seed: u64,
    state: &str,
    angles: Option<(f64, f64, f64, f64)>,
) -> PyResult<ChshSample> {
    let bell = parse_state(state)?;
    let mut rng = stream(seed, "py.chsh", 0);
    let estimate = spdc::chsh_sampled(
        &TwoPhotonState::bell(bell),
        &parse_angles(angles, bell),
        pairs_per_setting,
        &mut rng,
    )
    .map_err(err)?;
    Ok(ChshSample {
        s: estimate.s,
        sigma_s: estimate.sigma_s,
        significance: estimate.violation_significance(),
        correlations: estimate.correlations.to_vec(),
    })
}

/// Outcome of a formation-acquisition run.
#[pyclass(frozen, get_all)]
struct FormationRun {
    final_error: f64,
    converged: bool,
    /// Formation error norm at each sampled step.
    errors: Vec<f64>,
    times: Vec<f64>,
}

#[pymethods]
impl FormationRun {
    fn __repr__(&self) -> String {
        format!("FormationRun(final_error={:.3e}, converged={})", self.final_error, self.converged)
    }
}

/// Leader-referenced formation acquisition: followers start scattered
/// `perturbation` meters (uniform per axis) off their offset slots.
#[pyfunction]
#[pyo3(signature = (offsets, kp=4.0, kd=4.0, duration=30.0, dt=0.01, perturbation=1.0, seed=0))]
fn formation_acquire(
    offsets: Vec<(f64, f64, f64)>,
    kp: f64,
    kd: f64,
    duration: f64,
    dt: f64,
    perturbation: f64,
    seed: u64,
) -> PyResult<FormationRun> {
    let offsets: Vec<Vector3<f64>> =
        offsets.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
    let network =
        AgentNetwork::ring_with_leader(offsets.clone(), PidGains::pd(kp, kd)).map_err(err)?;
    let mut rng = stream(seed, "py.formation", 0);
    let initial: Vec<Vector3<f64>> = offsets
        .iter()
        .map(|&slot| {
            let mut jitter = || {
                if perturbation > 0.0 {
                    rng.random_range(-perturbation..perturbation)
                } else {
                    0.0
                }
            };
            slot + Vector3::new(jitter(), jitter(), jitter())
        })
        .collect();
    let config = FormationSimConfig { duration, dt, ..FormationSimConfig::default() };
    let trajectory =
        qauto_core::formation::simulate_formation(&network, &initial, &config).map_err(err)?;
    Ok(FormationRun {
        final_error: trajectory.final_error,
        converged: trajectory.converged,
        errors: trajectory.samples.iter().map(|s| s.error_norm).collect(),
        times: trajectory.samples.iter().map(|s| s.t).collect(),
    })
}

/// Closes `num/den` under feedback `fb_num/fb_den` and returns the
/// monic-normalized (numerator, denominator) coefficients, ascending.
#[pyfunction]
fn closed_loop(
    num: Vec<f64>,
    den: Vec<f64>,
    fb_num: Vec<f64>,
    fb_den: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let forward = RationalTF::from_coeffs(&num, &den).map_err(err)?;
    let feedback = RationalTF::from_coeffs(&fb_num, &fb_den).map_err(err)?;
    let closed = control::closed_loop(&forward, &feedback).map_err(err)?;
    Ok((closed.numerator().coeffs().to_vec(), closed.denominator().coeffs().to_vec()))
}

/// Unit-step response of `num/den` on a uniform grid: (times, outputs).
#[pyfunction]
fn step_response(
    num: Vec<f64>,
    den: Vec<f64>,
    t_final: f64,
    dt: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let tf = RationalTF::from_coeffs(&num, &den).map_err(err)?;
    let response = control::step_response(&tf, t_final, dt).map_err(err)?;
    Ok((response.times, response.outputs))
}

/// λ-sweep of first-order perturbation error against exact evolution.
#[pyclass(frozen, get_all)]
struct PerturbationSweep {
    /// log₂ slope of max error between consecutive λ halvings; ≈ 2 for
    /// a correct first-order truncation.
    fitted_exponent: f64,
    lambdas: Vec<f64>,
    max_errors: Vec<f64>,
}

#[pymethods]
impl PerturbationSweep {
    fn __repr__(&self) -> String {
        format!("PerturbationSweep(fitted_exponent={:.3})", self.fitted_exponent)
    }
}

/// Validates first-order perturbation theory for a diagonal H₀ with a
/// real symmetric coupling, sweeping λ, λ/2, λ/4.
#[pyfunction]
#[pyo3(signature = (energies, coupling, lam=0.04, initial_level=0, t_max_phase=10.0, n_times=64))]
fn perturbation_sweep(
    energies: Vec<f64>,
    coupling: Vec<Vec<f64>>,
    lam: f64,
    initial_level: usize,
    t_max_phase: f64,
    n_times: usize,
) -> PyResult<PerturbationSweep> {
    let n = energies.len();
    if coupling.len() != n || coupling.iter().any(|row| row.len() != n) {
        return Err(PyValueError::new_err(format!("coupling must be {n}x{n}")));
    }
    let h_prime = DMatrix::from_fn(n, n, |i, j| Complex64::new(coupling[i][j], 0.0));
    let eigen = EigenSystem::diagonal(energies).map_err(err)?;
    let problem = PerturbationProblem::new(eigen, h_prime, lam, initial_level).map_err(err)?;
    if n_times < 2 {
        return Err(PyValueError::new_err("n_times must be at least 2"));
    }
    let t_max = t_max_phase * qubit::HBAR_EV_S;
    let t_grid: Vec<f64> =
        (0..n_times).map(|k| k as f64 * t_max / (n_times - 1) as f64).collect();
    let report = laplace::validate_against_ode(&problem, &t_grid).map_err(err)?;
    Ok(PerturbationSweep {
        fitted_exponent: report.fitted_exponent,
        lambdas: report.entries.iter().map(|e| e.lambda).collect(),
        max_errors: report.entries.iter().map(|e| e.max_error).collect(),
    })
}

/// Conservation audit of a torque-free tumble.
#[pyclass(frozen, get_all)]
struct RigidBodyAudit {
    /// Max relative drift of rotational kinetic energy.
    energy_drift: f64,
    /// Max relative drift of |L| in the inertial frame.
    momentum_drift: f64,
    /// Max |RᵀR − I| entry over the run.
    orthonormality_defect: f64,
    final_omega: (f64, f64, f64),
}

#[pymethods]
impl RigidBodyAudit {
    fn __repr__(&self) -> String {
        format!(
            "RigidBodyAudit(energy_drift={:.2e}, momentum_drift={:.2e})",
            self.energy_drift, self.momentum_drift
        )
    }
}

/// Integrates a torque-free rigid body and reports conservation drift.
#[pyfunction]
#[pyo3(signature = (inertia=(3.0, 2.0, 1.0), omega0=(0.05, 1.0, 0.05), steps=10_000, dt=1e-3))]
fn rigid_body_audit(
    inertia: (f64, f64, f64),
    omega0: (f64, f64, f64),
    steps: usize,
    dt: f64,
) -> PyResult<RigidBodyAudit> {
    let params = PlatformParams::simple(1.0, inertia.0, inertia.1, inertia.2).map_err(err)?;
    let mut state = BodyState {
        position_inertial: Vector3::zeros(),
        angles: EulerAngles::new(0.0, 0.0, 0.0),
        velocity_body: Vector3::zeros(),
        omega_body: Vector3::new(omega0.0, omega0.1, omega0.2),
    };
    let wrench = Wrench::default();
    let energy0 = rigid_body::rotational_energy(&state, &params.inertia);
    let momentum0 = rigid_body::angular_momentum_inertial(&state, &params.inertia).norm();
    if energy0 == 0.0 || momentum0 == 0.0 {
        return Err(PyValueError::new_err("omega0 must be nonzero"));
    }
    let mut audit = RigidBodyAudit {
        energy_drift: 0.0,
        momentum_drift: 0.0,
        orthonormality_defect: 0.0,
        final_omega: omega0,
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        state = rigid_body::step(&state, &wrench, &params, t, dt).map_err(err)?;
        let energy = rigid_body::rotational_energy(&state, &params.inertia);
        let momentum = rigid_body::angular_momentum_inertial(&state, &params.inertia).norm();
        audit.energy_drift = audit.energy_drift.max((energy - energy0).abs() / energy0);
        audit.momentum_drift =
            audit.momentum_drift.max((momentum - momentum0).abs() / momentum0);
        let r = rigid_body::rotation_inertial_to_body(&state.angles);
        let defect = (r.transpose() * r - nalgebra::Matrix3::identity()).abs().max();
        audit.orthonormality_defect = audit.orthonormality_defect.max(defect);
    }
    audit.final_omega = (state.omega_body.x, state.omega_body.y, state.omega_body.z);
    Ok(audit)
}

/// Paths and summary from one scenario run.
#[pyclass(frozen, get_all)]
struct ScenarioArtifacts {
    /// Closing summary record as a JSON string.
    summary_json: String,
    log_path: String,
    csv_path: String,
}

#[pymethods]
impl ScenarioArtifacts {
    fn __repr__(&self) -> String {
        format!("ScenarioArtifacts(log_path='{}')", self.log_path)
    }
}

/// Runs a scenario from its JSON configuration, writing the JSONL log
/// and CSV into `out_dir` exactly as the `sim` binary would.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, trials=1))]
fn run_scenario(config_json: &str, out_dir: &str, trials: u64) -> PyResult<ScenarioArtifacts> {
    let config = ScenarioConfig::from_json(config_json).map_err(err)?;
    let artifacts =
        run_to_files(&config, trials, std::path::Path::new(out_dir)).map_err(err)?;
    Ok(ScenarioArtifacts {
        summary_json: artifacts.summary.to_string(),
        log_path: artifacts.log_path.display().to_string(),
        csv_path: artifacts.csv_path.display().to_string(),
    })
}

/// Deterministic quantum-automation simulations: qubits, BB84, CHSH,
/// rigid-body and formation dynamics, transfer functions, perturbation
/// theory, and the scenario runner.
#[pymodule]
fn qauto(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Qubit>()?;
    m.add_class::<ExchangeSummary>()?;
    m.add_class::<ChshSample>()?;
    m.add_class::<FormationRun>()?;
    m.add_class::<PerturbationSweep>()?;
    m.add_class::<RigidBodyAudit>()?;
    m.add_class::<ScenarioArtifacts>()?;
    m.add_function(wrap_pyfunction!(bb84_exchange, m)?)?;
    m.add_function(wrap_pyfunction!(chsh_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(chsh_sample, m)?)?;
    m.add_function(wrap_pyfunction!(formation_acquire, m)?)?;
    m.add_function(wrap_pyfunction!(closed_loop, m)?)?;
    m.add_function(wrap_pyfunction!(step_response, m)?)?;
    m.add_function(wrap_pyfunction!(perturbation_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(rigid_body_audit, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("QBER_THRESHOLD", bb84::QBER_THRESHOLD)?;
    m.add("COINCIDENCE_WINDOW_S", spdc::COINCIDENCE_WINDOW_S)?;
    m.add("HBAR_EV_S", qubit::HBAR_EV_S)?;
    Ok(())
}
