//! Scenario orchestration: validated configuration, deterministic RNG
//! fan-out, and reproducible run artifacts.
//!
//! A [`ScenarioConfig`] (usually loaded from JSON) names one of six
//! scenarios and its parameters. [`run_to_files`] executes it for a
//! number of independent trials and writes two artifacts into the output
//! directory:
//!
//! * `<kind>.jsonl` — one JSON record per line: a header (the effective
//!   config with defaults filled, plus its SHA-256
//!   [`ScenarioConfig::config_hash`]), a wall-clock stamp, the per-trial
//!   record streams, and a closing summary. The wall-clock stamp is
//!   segregated to its own line and is the *only* nondeterministic one;
//!   everything else is byte-reproducible for a given config, seed, and
//!   trial count.
//! * `<kind>.csv` — a flat table for plotting, written manually with
//!   Rust's shortest-roundtrip float formatting so bytes never depend on
//!   locale or library version.
//!
//! Trial `i` derives its seed with [`rng::child_seed`]`(seed, "trial", i)`
//! and each module inside a trial draws from its own named stream, so
//! adding draws to one stage never shifts another stage's randomness.
//! Trials run concurrently (they are independent by construction) and
//! their outputs are merged in trial order, so the artifacts do not
//! depend on scheduling.
//!
//! Config parsing rejects unknown keys (naming the offender), and errors
//! split into schema / runtime / I/O classes with stable process exit
//! codes for the CLI: 0 success, 2 schema, 3 runtime, 4 I/O. Failures
//! append an `error` record to the log (best effort) before surfacing.

use crate::bb84::{
    self, alice_prepare, bob_measure, detect_eve, estimate_qber, sift, transmit, Basis,
    ChannelModel, EveModel, EveVerdict, ExchangeConfig, ExchangeOutcome, OneTimePad,
};
use crate::control::{
    self, closed_loop, encode_setpoint, quantum_gated_run, stability, step_response,
    GatedRunConfig, Polynomial, QuantumGate, RationalTF,
};
use crate::formation::{
    self, simulate_formation, AgentNetwork, FormationSample, FormationSimConfig,
    FormationTrajectory, PidGains, ReferenceMotion,
};
use crate::laplace::{self, validate_against_ode, EigenSystem, PerturbationProblem};
use crate::manipulator;
use crate::qubit::{self, HBAR_EV_S};
use crate::rigid_body;
use crate::rng::{child_seed, stream, StreamRng};
use crate::schrodinger;
use crate::spdc::{
    self, chsh, chsh_sampled_detailed, coincidence_times, entanglement_trigger, BellState,
    ChshAngles, ChshEstimate, DetectorModel, JointCounts, PairSource, TriggerConfig,
    TriggerSignal, TwoPhotonState,
};
use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Version stamp written into every log header.
pub const FORMAT_VERSION: u32 = 1;

/// Pulse clock assigning transcript timestamps to prepared photons
/// (photon `k` leaves at `k · PULSE_PERIOD_S`).
pub const PULSE_PERIOD_S: f64 = 1e-6;

/// Failure classes, each with a stable process exit code.
#[derive(Debug, Error)]
pub enum ScenarioError {
    /// The configuration could not be parsed or is self-inconsistent.
    #[error("schema error: {0}")]
    Schema(String),
    /// A simulation stage failed.
    #[error("runtime error: {0}")]
    Runtime(String),
    /// An artifact could not be written.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    /// Exit code contract: 0 success, 2 schema, 3 runtime, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Schema(_) => 2,
            ScenarioError::Runtime(_) => 3,
            ScenarioError::Io(_) => 4,
        }
    }
}

macro_rules! runtime_error_from {
    ($($t:ty),* $(,)?) => {$(
        impl From<$t> for ScenarioError {
            fn from(e: $t) -> Self {
                ScenarioError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_error_from!(
    bb84::Bb84Error,
    bb84::OtpError,
    control::ControlError,
    formation::NetworkError,
    laplace::LaplaceError,
    manipulator::KinematicsError,
    qubit::QubitError,
    rigid_body::DynamicsError,
    schrodinger::EvolutionError,
    spdc::SpdcError,
);

// ------------------------------------------------------------------
// Configuration schema.
// ------------------------------------------------------------------

/// Top-level run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Free-form label copied into the log header.
    #[serde(default)]
    pub name: Option<String>,
    /// Master seed; trials and module streams derive from it.
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioSpec,
}

/// Which scenario to run, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ScenarioSpec {
    Bb84(Bb84Params),
    Entangle(EntangleParams),
    Formation(FormationParams),
    #[serde(rename = "loop")]
    ClosedLoop(LoopParams),
    Perturb(PerturbParams),
    Combined(CombinedParams),
}

impl ScenarioConfig {
    /// Parses a config from JSON text; any problem is a schema error.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))
    }

    /// SHA-256 of the canonical (parsed, re-serialized) config, hex-encoded.
    /// Key order is fixed by the type definitions, so the hash identifies
    /// the effective configuration rather than the input formatting.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Stable scenario label; also the artifact file stem.
    pub fn kind_name(&self) -> &'static str {
        match self.scenario {
            ScenarioSpec::Bb84(_) => "bb84",
            ScenarioSpec::Entangle(_) => "entangle",
            ScenarioSpec::Formation(_) => "formation",
            ScenarioSpec::ClosedLoop(_) => "loop",
            ScenarioSpec::Perturb(_) => "perturb",
            ScenarioSpec::Combined(_) => "combined",
        }
    }
}

/// Key-distribution scenario parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bb84Params {
    #[serde(alias = "n")]
    pub n_qubits: usize,
    pub transmittance: f64,
    pub detector_efficiency: f64,
    /// Fraction of qubits Eve intercepts (0 disables her entirely).
    pub eve_fraction: f64,
    pub sample_fraction: f64,
    pub qber_threshold: f64,
}

impl Default for Bb84Params {
    fn default() -> Self {
        Self {
            n_qubits: 20_000,
            transmittance: 1.0,
            detector_efficiency: 1.0,
            eve_fraction: 0.0,
            sample_fraction: 0.2,
            qber_threshold: bb84::QBER_THRESHOLD,
        }
    }
}

impl Bb84Params {
    fn exchange_config(&self) -> ExchangeConfig {
        ExchangeConfig {
            n_qubits: self.n_qubits,
            channel: ChannelModel {
                transmittance: self.transmittance,
                eve: (self.eve_fraction > 0.0)
                    .then_some(EveModel { intercept_fraction: self.eve_fraction }),
            },
            detector_efficiency: self.detector_efficiency,
            sample_fraction: self.sample_fraction,
            qber_threshold: self.qber_threshold,
        }
    }
}

/// Entangled-pair scenario parameters: CHSH statistics plus a time-tag
/// run through the detection chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntangleParams {
    pub pairs_per_setting: u64,
    pub state: BellState,
    /// Analyzer settings; defaults to the set matched to `state`.
    pub angles: Option<ChshAngles>,
    pub source_rate_hz: f64,
    pub duration_s: f64,
    pub detector: DetectorModel,
    pub window_s: f64,
    pub skew_s: f64,
    pub trigger: TriggerConfig,
}

impl Default for EntangleParams {
    fn default() -> Self {
        Self {
            pairs_per_setting: 25_000,
            state: BellState::PhiPlus,
            angles: None,
            source_rate_hz: 50_000.0,
            duration_s: 1.0,
            detector: DetectorModel::default(),
            window_s: spdc::COINCIDENCE_WINDOW_S,
            skew_s: 0.0,
            trigger: TriggerConfig::default(),
        }
    }
}

/// Formation-flight scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationParams {
    /// Desired reference-relative follower offsets (meters).
    pub offsets: Vec<[f64; 3]>,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub duration: f64,
    pub dt: f64,
    pub convergence_tol: f64,
    pub mass: f64,
    pub linear_drag: f64,
    /// Half-width of the uniform cube each follower's start position is
    /// drawn from, centered on its target slot.
    pub initial_perturbation: f64,
    /// Constant reference velocity; all zeros keeps the reference fixed
    /// at the origin.
    pub reference_velocity: [f64; 3],
    /// Emit every k-th sample to the CSV.
    pub sample_stride: usize,
}

impl Default for FormationParams {
    fn default() -> Self {
        Self {
            offsets: vec![[1.5, 0.0, 0.0], [-0.75, 1.3, 0.0], [-0.75, -1.3, 0.0]],
            kp: 4.0,
            ki: 0.0,
            kd: 4.0,
            duration: 30.0,
            dt: 0.01,
            convergence_tol: 1e-3,
            mass: 1.0,
            linear_drag: 0.0,
            initial_perturbation: 1.0,
            reference_velocity: [0.0, 0.0, 0.0],
            sample_stride: 1,
        }
    }
}

impl FormationParams {
    fn network(&self, offset_scale: f64) -> Result<AgentNetwork, ScenarioError> {
        let offsets: Vec<Vector3<f64>> = self
            .offsets
            .iter()
            .map(|o| Vector3::new(o[0], o[1], o[2]) * offset_scale)
            .collect();
        Ok(AgentNetwork::ring_with_leader(
            offsets,
            PidGains { kp: self.kp, ki: self.ki, kd: self.kd },
        )?)
    }

    fn sim_config(&self, duration: f64) -> FormationSimConfig {
        let v = Vector3::new(
            self.reference_velocity[0],
            self.reference_velocity[1],
            self.reference_velocity[2],
        );
        FormationSimConfig {
            duration,
            dt: self.dt,
            convergence_tol: self.convergence_tol,
            mass: self.mass,
            linear_drag: self.linear_drag,
            reference: if v == Vector3::zeros() {
                ReferenceMotion::Static(Vector3::zeros())
            } else {
                ReferenceMotion::Linear { start: Vector3::zeros(), velocity: v }
            },
        }
    }

    /// Start positions: target slots jittered by the perturbation cube.
    fn initial_positions(&self, network: &AgentNetwork, rng: &mut StreamRng) -> Vec<Vector3<f64>> {
        network
            .offsets()
            .iter()
            .map(|&slot| {
                let jitter = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ) * self.initial_perturbation;
                slot + jitter
            })
            .collect()
    }
}

/// How a gated loop command is protected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GateParams {
    /// One-time-pad encryption with a fresh random pad per trial.
    KeyProtected {
        /// Flip one ciphertext bit to exercise the checksum hold.
        #[serde(default)]
        corrupt: bool,
        /// Pad length in bits.
        #[serde(default = "default_pad_bits")]
        pad_bits: usize,
    },
    /// A scripted entanglement schedule gates the release time.
    EntanglementTriggered {
        /// Active [start, end) intervals of the synthetic schedule.
        active_intervals: Vec<[f64; 2]>,
    },
}

fn default_pad_bits() -> usize {
    160
}

/// Closed-loop scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopParams {
    /// Forward-path numerator, ascending coefficients.
    pub plant_num: Vec<f64>,
    pub plant_den: Vec<f64>,
    pub feedback_num: Vec<f64>,
    pub feedback_den: Vec<f64>,
    pub t_final: f64,
    pub dt: f64,
    /// When present, the reference is a gated setpoint instead of a step.
    pub gate: Option<GateParams>,
    pub t_command: f64,
    pub setpoint: f64,
    pub sample_stride: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            plant_num: vec![8.0],
            plant_den: vec![0.0, 0.0, 1.0],
            feedback_num: vec![2.0, 1.0],
            feedback_den: vec![2.0],
            t_final: 8.0,
            dt: 1e-3,
            gate: None,
            t_command: 1.0,
            setpoint: 1.0,
            sample_stride: 1,
        }
    }
}

/// Perturbation-validation scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbParams {
    /// Unperturbed energies (eV), non-decreasing.
    pub energies: Vec<f64>,
    /// Real and imaginary parts of the coupling matrix, row-major.
    pub coupling_re: Vec<Vec<f64>>,
    pub coupling_im: Vec<Vec<f64>>,
    pub lambda: f64,
    pub initial_level: usize,
    /// Grid end expressed as phase radians at 1 eV (t_max = this × ħ/eV).
    pub t_max_phase: f64,
    pub n_times: usize,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            energies: vec![0.0, 1.0],
            coupling_re: vec![vec![0.0, 0.1], vec![0.1, 0.0]],
            coupling_im: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            lambda: 0.04,
            initial_level: 0,
            t_max_phase: 10.0,
            n_times: 64,
        }
    }
}

impl PerturbParams {
    fn problem(&self) -> Result<PerturbationProblem, ScenarioError> {
        let n = self.energies.len();
        let check_shape = |m: &Vec<Vec<f64>>, label: &str| -> Result<(), ScenarioError> {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(ScenarioError::Schema(format!("{label} must be {n}×{n}")));
            }
            Ok(())
        };
        check_shape(&self.coupling_re, "coupling_re")?;
        check_shape(&self.coupling_im, "coupling_im")?;
        let h_prime = DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(self.coupling_re[i][j], self.coupling_im[i][j])
        });
        let eigen = EigenSystem::diagonal(self.energies.clone())?;
        Ok(PerturbationProblem::new(eigen, h_prime, self.lambda, self.initial_level)?)
    }

    fn t_grid(&self) -> Result<Vec<f64>, ScenarioError> {
        if self.n_times < 2 {
            return Err(ScenarioError::Schema("n_times must be at least 2".into()));
        }
        let t_max = self.t_max_phase * HBAR_EV_S;
        Ok((0..self.n_times)
            .map(|k| k as f64 * t_max / (self.n_times - 1) as f64)
            .collect())
    }
}

/// End-to-end mission parameters: keys, triggers, then flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinedParams {
    pub bb84: Bb84Params,
    pub entangle: EntangleParams,
    pub formation: FormationParams,
    /// When the engage command is issued (seconds into the run).
    pub t_command: f64,
    /// Value sealed in the command payload; scales the target offsets.
    pub setpoint_scale: f64,
    /// Flip a ciphertext bit in flight to exercise the checksum hold.
    pub corrupt_command: bool,
}

impl Default for CombinedParams {
    fn default() -> Self {
        Self {
            bb84: Bb84Params { n_qubits: 4096, ..Bb84Params::default() },
            entangle: EntangleParams::default(),
            formation: FormationParams::default(),
            t_command: 0.5,
            setpoint_scale: 1.0,
            corrupt_command: false,
        }
    }
}

// ------------------------------------------------------------------
// Artifact writing.
// ------------------------------------------------------------------

/// Where a run wrote its outputs, plus the closing summary record.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: Value,
    pub log_path: PathBuf,
    pub csv_path: PathBuf,
}

/// Serializes possibly non-finite floats: numbers stay numbers, the rest
/// become strings (JSON has no Inf/NaN).
fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format!("{x}"))
    }
}

struct LogWriter {
    out: BufWriter<fs::File>,
}

impl LogWriter {
    fn record(&mut self, value: &Value) -> Result<(), ScenarioError> {
        serde_json::to_writer(&mut self.out, value)
            .map_err(|e| ScenarioError::Io(std::io::Error::other(e)))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

struct CsvWriter {
    out: BufWriter<fs::File>,
}

impl CsvWriter {
    fn header(&mut self, columns: &[&str]) -> Result<(), ScenarioError> {
        writeln!(self.out, "{}", columns.join(","))?;
        Ok(())
    }

    fn row(&mut self, fields: &[String]) -> Result<(), ScenarioError> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Runs independent trial bodies concurrently (bounded by the machine's
/// parallelism) and returns the outputs ordered by trial index, so the
/// merged artifacts never depend on scheduling. The error surfaced is the
/// lowest-indexed one for the same reason.
fn fan_out_trials<T, F>(trials: u64, body: F) -> Result<Vec<T>, ScenarioError>
where
    T: Send,
    F: Fn(u64) -> Result<T, ScenarioError> + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(trials as usize)
        .max(1);
    if workers == 1 {
        return (0..trials).map(body).collect();
    }
    let next = AtomicU64::new(0);
    let slots: Vec<Mutex<Option<Result<T, ScenarioError>>>> =
        (0..trials).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= trials {
                    break;
                }
                let out = body(i);
                *slots[i as usize].lock().expect("trial slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("trial slot").expect("every trial ran"))
        .collect()
}

/// Runs the configured scenario `trials` times and writes the JSONL log
/// and CSV table into `out_dir` (created if missing).
pub fn run_to_files(
    config: &ScenarioConfig,
    trials: u64,
    out_dir: &Path,
) -> Result<RunArtifacts, ScenarioError> {
    if trials == 0 {
        return Err(ScenarioError::Schema("trials must be at least 1".into()));
    }
    fs::create_dir_all(out_dir)?;
    let kind = config.kind_name();
    let log_path = out_dir.join(format!("{kind}.jsonl"));
    let csv_path = out_dir.join(format!("{kind}.csv"));
    let mut log = LogWriter { out: BufWriter::new(fs::File::create(&log_path)?) };
    let mut csv = CsvWriter { out: BufWriter::new(fs::File::create(&csv_path)?) };

    log.record(&json!({
        "record": "header",
        "format_version": FORMAT_VERSION,
        "scenario": kind,
        "name": config.name,
        "seed": config.seed,
        "trials": trials,
        "config_hash": config.config_hash(),
        "config": serde_json::to_value(config).expect("config serializes"),
    }))?;
    // The only nondeterministic line in the artifacts, kept on its own so
    // reproducibility checks can skip exactly one line.
    let unix_time_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    log.record(&json!({ "record": "wall_clock", "unix_time_s": unix_time_s }))?;

    log::info!("running scenario '{kind}' for {trials} trial(s), seed {}", config.seed);
    let result = match &config.scenario {
        ScenarioSpec::Bb84(p) => run_bb84(p, config.seed, trials, &mut log, &mut csv),
        ScenarioSpec::Entangle(p) => run_entangle(p, config.seed, trials, &mut log, &mut csv),
        ScenarioSpec::Formation(p) => run_formation(p, config.seed, trials, &mut log, &mut csv),
        ScenarioSpec::ClosedLoop(p) => run_loop(p, config.seed, trials, &mut log, &mut csv),
        ScenarioSpec::Perturb(p) => run_perturb(p, trials, &mut log, &mut csv),
        ScenarioSpec::Combined(p) => run_combined(p, config.seed, trials, &mut log, &mut csv),
    };

    match result {
        Ok(summary) => {
            let mut record = json!({ "record": "summary" });
            merge(&mut record, &summary);
            log.record(&record)?;
            log.out.flush()?;
            csv.out.flush()?;
            log::info!("scenario '{kind}' finished");
            Ok(RunArtifacts { summary, log_path, csv_path })
        }
        Err(e) => {
            // Best effort: leave the failure in the artifact trail even
            // when the failure itself was an I/O one.
            let _ = log.record(&json!({ "record": "error", "message": e.to_string() }));
            let _ = log.out.flush();
            let _ = csv.out.flush();
            log::error!("scenario '{kind}' failed: {e}");
            Err(e)
        }
    }
}

fn merge(target: &mut Value, extra: &Value) {
    if let (Value::Object(t), Value::Object(e)) = (target, extra) {
        for (k, v) in e {
            t.insert(k.clone(), v.clone());
        }
    }
}

// ------------------------------------------------------------------
// Scenario bodies.
// ------------------------------------------------------------------

fn verdict_str(v: EveVerdict) -> &'static str {
    match v {
        EveVerdict::Clean => "clean",
        EveVerdict::Compromised => "compromised",
    }
}

fn basis_str(b: Basis) -> &'static str {
    match b {
        Basis::Plus => "plus",
        Basis::Cross => "cross",
    }
}

/// Polarization angle encoding a (bit, basis) pair, in degrees.
fn pol_angle_deg(bit: u8, basis: Basis) -> f64 {
    match (basis, bit) {
        (Basis::Plus, 0) => 0.0,
        (Basis::Plus, _) => 90.0,
        (Basis::Cross, 0) => 45.0,
        (Basis::Cross, _) => -45.0,
    }
}

struct Bb84Trial {
    trial_seed: u64,
    outcome: ExchangeOutcome,
    /// One transcript record per photon, already trial-tagged.
    photons: Vec<Value>,
}

/// Runs the staged protocol (same stage order as
/// [`bb84::run_exchange`], hence identical draws) while keeping the
/// per-photon data the transcript needs.
fn bb84_trial(params: &Bb84Params, seed: u64, trial: u64) -> Result<Bb84Trial, ScenarioError> {
    let config = params.exchange_config();
    let trial_seed = child_seed(seed, "trial", trial);
    let mut rng = stream(trial_seed, "bb84", 0);
    let prepared = alice_prepare(config.n_qubits, &mut rng);
    let received = transmit(&prepared, &config.channel, &mut rng)?;
    let records = bob_measure(&received, config.detector_efficiency, &mut rng)?;
    let n_received = records.iter().filter(|r| r.is_some()).count();
    let sifted = sift(&prepared, &records)?;
    let mut kept = vec![false; prepared.len()];
    for &k in &sifted.indices {
        kept[k] = true;
    }
    let n_sifted = sifted.len();
    let estimate = estimate_qber(&sifted, config.sample_fraction, &mut rng)?;
    let photons = prepared
        .iter()
        .zip(&received)
        .zip(&records)
        .enumerate()
        .map(|(k, ((p, arrival), record))| {
            json!({
                "record": "photon",
                "trial": trial,
                "index": k,
                "t_s": k as f64 * PULSE_PERIOD_S,
                "bit": p.bit,
                "basis": basis_str(p.basis),
                "pol_angle_deg": pol_angle_deg(p.bit, p.basis),
                "arrived": arrival.is_some(),
                "detected": record.is_some(),
                "bob_basis": record.map(|r| json!(basis_str(r.basis))).unwrap_or(Value::Null),
                "bob_bit": record.map(|r| json!(r.bit)).unwrap_or(Value::Null),
                "sifted": kept[k],
            })
        })
        .collect();
    let outcome = ExchangeOutcome {
        n_sent: config.n_qubits,
        n_received,
        n_sifted,
        qber: estimate.qber,
        disclosed: estimate.disclosed,
        verdict: detect_eve(estimate.qber, config.qber_threshold),
        alice_key: estimate.kept_alice,
        bob_key: estimate.kept_bob,
    };
    Ok(Bb84Trial { trial_seed, outcome, photons })
}

fn run_bb84(
    params: &Bb84Params,
    seed: u64,
    trials: u64,
    log: &mut LogWriter,
    csv: &mut CsvWriter,
) -> Result<Value, ScenarioError> {
    csv.header(&["trial", "n", "sift_fraction", "qber", "verdict", "key_len"])?;
    let outputs = fan_out_trials(trials, |trial| bb84_trial(params, seed, trial))?;
    let mut qber_sum = 0.0;
    let mut sift_sum = 0.0;
    let mut compromised = 0u64;
    for (trial, out) in outputs.iter().enumerate() {
        let outcome = &out.outcome;
        let sift_fraction = outcome.n_sifted as f64 / outcome.n_sent as f64;
        log::debug!("trial {trial}: qber {:.4}, sifted {}", outcome.qber, outcome.n_sifted);
        for photon in &out.photons {
            log.record(photon)?;
        }
        log.record(&json!({
            "record": "trial",
            "trial": trial,
            "trial_seed": out.trial_seed,
            "n_sent": outcome.n_sent,
            "n_received": outcome.n_received,
            "n_sifted": outcome.n_sifted,
            "sift_fraction": sift_fraction,
            "qber": outcome.qber,
            "disclosed": outcome.disclosed,
            "verdict": verdict_str(outcome.verdict),
            "key_len": outcome.alice_key.len(),
        }))?;
        csv.row(&[
            trial.to_string(),
            outcome.n_sent.to_string(),
            fmt(sift_fraction),
            fmt(outcome.qber),
            verdict_str(outcome.verdict).to_string(),
            outcome.alice_key.len().to_string(),
        ])?;
        qber_sum += outcome.qber;
        sift_sum += sift_fraction;
        if outcome.verdict == EveVerdict::Compromised {
            compromised += 1;
        }
    }
    Ok(json!({
        "trials": trials,
        "mean_qber": qber_sum / trials as f64,
        "mean_sift_fraction": sift_sum / trials as f64,
        "compromised_trials": compromised,
    }))
}

struct EntangleTrial {
    trial_seed: u64,
    estimate: ChshEstimate,
    counts: [JointCounts; 4],
    n_emitted: usize,
    n_clicks_a: usize,
    n_clicks_b: usize,
    n_coincidences: usize,
    signal: TriggerSignal,
}

fn entangle_trial(
    params: &EntangleParams,
    state: &TwoPhotonState,
    angles: &ChshAngles,
    seed: u64,
    trial: u64,
) -> Result<EntangleTrial, ScenarioError> {
    let trial_seed = child_seed(seed, "trial", trial);
    let (estimate, counts) = chsh_sampled_detailed(
        state,
        angles,
        params.pairs_per_setting,
        &mut stream(trial_seed, "entangle.chsh", 0),
    )?;
    let source = PairSource { rate_hz: params.source_rate_hz, duration_s: params.duration_s };
    let emissions = source.emission_times(&mut stream(trial_seed, "entangle.source", 0))?;
    let clicks_a = params.detector.detect(
        &emissions,
        params.duration_s,
        &mut stream(trial_seed, "entangle.det_a", 0),
    )?;
    let clicks_b = params.detector.detect(
        &emissions,
        params.duration_s,
        &mut stream(trial_seed, "entangle.det_b", 0),
    )?;
    let coincidences = coincidence_times(&clicks_a, &clicks_b, params.window_s, params.skew_s)?;
    let signal = entanglement_trigger(&coincidences, params.duration_s, &params.trigger)?;
    Ok(EntangleTrial {
        trial_seed,
        estimate,
        counts,
        n_emitted: emissions.len(),
        n_clicks_a: clicks_a.len(),
        n_clicks_b: clicks_b.len(),
        n_coincidences: coincidences.len(),
        signal,
    })
}

fn run_entangle(
    params: &EntangleParams,
    seed: u64,
    trials: u64,
    log: &mut LogWriter,
    csv: &mut CsvWriter,
) -> Result<Value, ScenarioError> {
    csv.header(&[
        "trial",
        "setting",
        "alpha_deg",
        "beta_deg",
        "n_tt",
        "n_tr",
        "n_rt",
        "n_rr",
        "correlation",
        "sigma_e",
    ])?;
    let state = TwoPhotonState::bell(params.state);
    let angles = params.angles.unwrap_or_else(|| ChshAngles::for_state(params.state));
    let s_analytic = chsh(&state, &angles);
    let outputs =
        fan_out_trials(trials, |trial| entangle_trial(params, &state, &angles, seed, trial))?;
    let mut s_sum = 0.0;
    let mut significance_sum = 0.0;
    let mut duty_sum = 0.0;
    let setting_labels = ["a1b1", "a1b2", "a2b1", "a2b2"];
    for (trial, out) in outputs.iter().enumerate() {
        let significance = out.estimate.violation_significance();
        let correlations: Vec<f64> = out.estimate.correlations.iter().map(|&(e, _)| e).collect();
        log.record(&json!({
            "record": "trial",
            "trial": trial,
            "trial_seed": out.trial_seed,
            "s_analytic": s_analytic,
            "s_sampled": out.estimate.s,
            "sigma_s": out.estimate.sigma_s,
            "significance": json_f64(significance),
            "correlations": correlations,
            "n_emitted": out.n_emitted,
            "n_clicks_a": out.n_clicks_a,
            "n_clicks_b": out.n_clicks_b,
            "n_coincidences": out.n_coincidences,
            "duty_cycle": out.signal.duty_cycle(),
            "active_intervals": out.signal.intervals().len(),
        }))?;
        let settings = angles.settings();
        for (k, (&(a, b), counts)) in settings.iter().zip(&out.counts).enumerate() {
            let (e, sigma) = out.estimate.correlations[k];
            csv.row(&[
                trial.to_string(),
                setting_labels[k].to_string(),
                fmt(a),
                fmt(b),
                counts.tt.to_string(),
                counts.tf.to_string(),
                counts.ft.to_string(),
                counts.ff.to_string(),
                fmt(e),
                fmt(sigma),
            ])?;
        }
        s_sum += out.estimate.s;
        significance_sum += significance;
        duty_sum += out.signal.duty_cycle();
    }
    Ok(json!({
        "trials": trials,
        "s_analytic": s_analytic,
        "mean_s_sampled": s_sum / trials as f64,
        "mean_significance": json_f64(significance_sum / trials as f64),
        "mean_duty_cycle": duty_sum / trials as f64,
        "trigger_intervals": outputs.iter().map(|o| o.signal.intervals().len()).sum::<usize>(),
    }))
}

/// CSV schema for a formation trajectory: time, per-agent position (node
/// 0 is the reference), error norm.
fn formation_csv_header(n_nodes: usize) -> Vec<String> {
    let mut columns = vec!["t".to_string()];
    for i in 0..n_nodes {
        for axis in ["x", "y", "z"] {
            columns.push(format!("{axis}{i}"));
        }
    }
    columns.push("error_norm".to_string());
    columns
}

fn write_formation_csv(
    csv: &mut CsvWriter,
    trajectory: &FormationTrajectory,
    stride: usize,
) -> Result<(), ScenarioError> {
    let stride = stride.max(1);
    let last = trajectory.samples.len().saturating_sub(1);
    for (k, sample) in trajectory.samples.iter().enumerate() {
        if k % stride == 0 || k == last {
            let mut fields = vec![fmt(sample.t)];
            for p in &sample.positions {
                fields.extend([fmt(p.x), fmt(p.y), fmt(p.z)]);
            }
            fields.push(fmt(sample.error_norm));
            csv.row(&fields)?;
        }
    }
    Ok(())
}

struct FormationTrial {
    trial_seed: u64,
    trajectory: FormationTrajectory,
}

fn run_formation(
    params: &FormationParams,
    seed: u64,
    trials: u64,
    log: &mut LogWriter,
    csv: &mut CsvWriter,
) -> Result<Value, ScenarioError> {
    let network = params.network(1.0)?;
    let header = formation_csv_header(network.offsets().len() + 1);
    csv.header(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
    let sim = params.sim_config(params.duration);
    let outputs = fan_out_trials(trials, |trial| {
        let trial_seed = child_seed(seed, "trial", trial);
        let mut rng = stream(trial_seed, "formation.init", 0);
        let initial = params.initial_positions(&network, &mut rng);
        let trajectory = simulate_formation(&network, &initial, &sim)?;
        Ok(FormationTrial { trial_seed, trajectory })
    })?;
    let mut final_sum = 0.0;
    let mut all_converged = true;
    for (trial, out) in outputs.iter().enumerate() {
        let trajectory = &out.trajectory;
        log.record(&json!({
            "record": "trial",
            "trial": trial,
            "trial_seed": out.trial_seed,
            "initial_error": trajectory.samples[0].error_norm,
            "final_error": trajectory.final_error,
            "converged": trajectory.converged,
            "steps": trajectory.samples.len() - 1,
        }))?;
        if trial == 0 {
            write_formation_csv(csv, trajectory, params.sample_stride)?;
        }
        final_sum += trajectory.final_error;
        all_converged &= trajectory.converged;
    }
    Ok(json!({
        "trials": trials,
        "mean_final_error": final_sum / trials as f64,
        "all_converged": all_converged,
    }))
}

fn describe_poles(report: &control::StabilityReport) -> Value {
    Value::Array(
        report
            .poles
            .iter()
            .map(|p| json!([json_f64(p.re), json_f64(p.im)]))
            .collect(),
    )
}

struct LoopTrial {
    trial_seed: u64,
    references: Vec<f64>,
    response: control::TimeResponse,
    decision: Option<control::GateDecision>,
}

fn loop_trial(
    params: &LoopParams,
    loop_tf: &RationalTF,
    seed: u64,
    trial: u64,
) -> Result<LoopTrial, ScenarioError> {
    let trial_seed = child_seed(seed, "trial", trial);
    let gated_config = GatedRunConfig {
        t_final: params.t_final,
        dt: params.dt,
        t_command: params.t_command,
    };
    let (references, response, decision) = match &params.gate {
        None => {
            let response = step_response(loop_tf, params.t_final, params.dt)?;
            let references = vec![1.0; response.times.len()];
            (references, response, None)
        }
        Some(GateParams::KeyProtected { corrupt, pad_bits }) => {
            let mut rng = stream(trial_seed, "loop.pad", 0);
            let bits: Vec<u8> = (0..*pad_bits).map(|_| u8::from(rng.random_bool(0.5))).collect();
            let mut sender = OneTimePad::new(bits.clone())?;
            let receiver = OneTimePad::new(bits)?;
            let mut message = sender.encrypt(&encode_setpoint(params.setpoint))?;
            if *corrupt {
                message.ciphertext[0] ^= 0x01;
            }
            let gate = QuantumGate::KeyProtected { pad: &receiver, message: &message };
            let run = quantum_gated_run(loop_tf, &gate, &gated_config)?;
            (run.references, run.response, Some(run.decision))
        }
        Some(GateParams::EntanglementTriggered { active_intervals }) => {
            let intervals: Vec<(f64, f64)> =
                active_intervals.iter().map(|iv| (iv[0], iv[1])).collect();
            let signal = TriggerSignal::from_intervals(intervals, params.t_final)?;
            let gate =
                QuantumGate::EntanglementTriggered { signal: &signal, setpoint: params.setpoint };
            let run = quantum_gated_run(loop_tf, &gate, &gated_config)?;
            (run.references, run.response, Some(run.decision))
        }
    };
    Ok(LoopTrial { trial_seed, references, response, decision })
}

fn run_loop(
    params: &LoopParams,
    seed: u64,
    trials: u64,
    log: &mut LogWriter,
    csv: &mut CsvWriter,
) -> Result<Value, ScenarioError> {
    csv.header(&["t", "setpoint", "released", "output"])?;
    let plant = RationalTF::new(
        Polynomial::new(params.plant_num.clone()),
        Polynomial::new(params.plant_den.clone()),
    )?;
    let feedback = RationalTF::new(
        Polynomial::new(params.feedback_num.clone()),
        Polynomial::new(params.feedback_den.clone()),
    )?;
    let loop_tf = closed_loop(&plant, &feedback)?;
    let report = stability(&loop_tf);
    let outputs = fan_out_trials(trials, |trial| loop_trial(params, &loop_tf, seed, trial))?;
    let mut final_sum = 0.0;
    let mut held = 0u64;
    for (trial, out) in outputs.iter().enumerate() {
        let final_output = *out.response.outputs.last().expect("response has samples");
        let (release_time, hold_reason) = match &out.decision {
            Some(d) => (
                d.release_time.map(|t| json!(t)).unwrap_or(Value::Null),
                d.hold_reason.map(|r| json!(r)).unwrap_or(Value::Null),
            ),
            // An ungated step releases at t = 0 by definition.
            None => (json!(0.0), Value::Null),
        };
        if out.decision.as_ref().is_some_and(|d| d.release_time.is_none()) {
            held += 1;
        }
        log.record(&json!({
            "record": "trial",
            "trial": trial,
            "trial_seed": out.trial_seed,
            "dc_gain": json_f64(loop_tf.dc_gain()),
            "stable": report.stable,
            "marginal": report.marginal,
            "poles": describe_poles(&report),
            "release_time": release_time,
            "hold_reason": hold_reason,
            "final_output": final_output,
        }))?;
        if trial == 0 {
            let released_at = match &out.decision {
                Some(d) => d.release_time,
                None => Some(0.0),
            };
            let stride = params.sample_stride.max(1);
            let last = out.response.times.len() - 1;
            for k in 0..out.response.times.len() {
                if k % stride == 0 || k == last {
                    let t = out.response.times[k];
                    let released = released_at.is_some_and(|tr| t >= tr);
                    csv.row(&[
                        fmt(t),
                        fmt(out.references[k]),
                        u8::from(released).to_string(),
                        fmt(out.response.outputs[k]),
                    ])?;
                }
            }
        }
        final_sum += final_output;
    }
    Ok(json!({
        "trials": trials,
        "dc_gain": json_f64(loop_tf.dc_gain()),
        "stable": report.stable,
        "marginal": report.marginal,
        "numerator": loop_tf.numerator().coeffs(),
        "denominator": loop_tf.denominator().coeffs(),
        "mean_final_output": final_sum / trials as f64,
        "held_trials": held,
    }))
}

fn run_perturb(
    params: &PerturbParams,
    trials: u64,
    log: &mut LogWriter,
    csv: &mut CsvWriter,
) -> Result<Value, ScenarioError> {
    csv.header(&["lambda", "max_error", "max_norm_defect"])?;
    let problem = params.problem()?;
    let t_grid = params.t_grid()?;
    // Fully deterministic: every trial would repeat the same sweep, so run
    // it once and report it once.
    let report = validate_against_ode(&problem, &t_grid)?;
    for entry in &report.entries {
        log.record(&json!({
            "record": "sweep",
            "lambda": entry.lambda,
            "max_error": entry.max_error,
            "max_norm_defect": entry.max_norm_defect,
        }))?;
        csv.row(&[fmt(entry.lambda), fmt(entry.max_error), fmt(entry.max_norm_defect)])?;
    }
    let _ = trials;
    Ok(json!({
        "levels": params.energies.len(),
        "lambda": params.lambda,
        "fitted_exponent": json_f64(report.fitted_exponent),
        "sweep_points": report.entries.len(),
    }))
}

/// Builds the trajectory of a gated formation stage: the flight is frozen
/// (agents at rest, zero force) until `release`, then the closed loop runs
/// with the scaled offsets. A held command freezes the whole window, so
/// the final deviation equals the initial one exactly.
fn gated_formation(
    params: &FormationParams,
    offset_scale: f64,
    release: Option<f64>,
    rng: &mut StreamRng,
) -> Result<FormationTrajectory, ScenarioError> {
    let network = params.network(offset_scale)?;
    let initial = params.initial_positions(&network, rng);
    let reference0 = Vector3::zeros();
    let initial_error =
        formation::formation_error(&initial, reference0, network.offsets()).norm;
    let frozen_sample = |t: f64| {
        let mut positions = vec![reference0];
        positions.extend(initial.iter().copied());
        FormationSample { t, positions, error_norm: initial_error }
    };
    let steps = (params.duration / params.dt).round() as usize;
    match release {
        Some(t_release) if t_release < params.duration => {
            let frozen_steps = (t_release / params.dt).ceil() as usize;
            let t_start = frozen_steps as f64 * params.dt;
            let mut samples: Vec<FormationSample> =
                (0..frozen_steps).map(|k| frozen_sample(k as f64 * params.dt)).collect();
            let sim = params.sim_config(params.duration - t_start);
            let mut active = simulate_formation(&network, &initial, &sim)?;
            for sample in &mut active.samples {
                sample.t += t_start;
            }
            samples.extend(active.samples);
            Ok(FormationTrajectory {
                samples,
                converged: active.converged,
                final_error: active.final_error,
            })
        }
        _ => {
            let samples: Vec<FormationSample> =
                (0..=steps).map(|k| frozen_sample(k as f64 * params.dt)).collect();
            Ok(FormationTrajectory {
                samples,
                converged: initial_error < params.convergence_tol,
                final_error: initial_error,
            })
        }
    }
}

struct CombinedTrial {
    trial_seed: u64,
    qber: f64,
    verdict: EveVerdict,
    key_bits: usize,
    n_coincidences: usize,
    duty_cycle: f64,
    release: Option<f64>,
    hold_reason: Option<&'static str>,
    trajectory: FormationTrajectory,
}

fn combined_trial(
    params: &CombinedParams,
    seed: u64,
    trial: u64,
) -> Result<CombinedTrial, ScenarioError> {
    let trial_seed = child_seed(seed, "trial", trial);

    // Stage 1: establish a shared key and check it for tampering.
    let exchange = bb84::run_exchange(
        &params.bb84.exchange_config(),
        &mut stream(trial_seed, "combined.bb84", 0),
    )?;

    // Stage 2: entangled-pair link quality → trigger schedule.
    let source = PairSource {
        rate_hz: params.entangle.source_rate_hz,
        duration_s: params.entangle.duration_s,
    };
    let emissions = source.emission_times(&mut stream(trial_seed, "combined.source", 0))?;
    let clicks_a = params.entangle.detector.detect(
        &emissions,
        params.entangle.duration_s,
        &mut stream(trial_seed, "combined.det_a", 0),
    )?;
    let clicks_b = params.entangle.detector.detect(
        &emissions,
        params.entangle.duration_s,
        &mut stream(trial_seed, "combined.det_b", 0),
    )?;
    let coincidences = coincidence_times(
        &clicks_a,
        &clicks_b,
        params.entangle.window_s,
        params.entangle.skew_s,
    )?;
    let signal =
        entanglement_trigger(&coincidences, params.entangle.duration_s, &params.entangle.trigger)?;

    // Stage 3: gate the engage command. A tamper alarm withholds the key;
    // a valid payload still waits for an attested interval.
    let mut hold_reason: Option<&'static str> = None;
    let mut release: Option<f64> = None;
    let mut decoded_scale = params.setpoint_scale;
    if exchange.verdict == EveVerdict::Compromised {
        hold_reason = Some("qber_alarm");
    } else {
        let needed_bits = 8 * control::SETPOINT_PAYLOAD_LEN;
        if exchange.alice_key.len() < needed_bits {
            return Err(ScenarioError::Runtime(format!(
                "sifted key too short for the command payload: {} < {needed_bits} bits",
                exchange.alice_key.len()
            )));
        }
        let mut sender = OneTimePad::new(exchange.alice_key.clone())?;
        let receiver = OneTimePad::new(exchange.bob_key.clone())?;
        let mut message = sender.encrypt(&encode_setpoint(params.setpoint_scale))?;
        if params.corrupt_command {
            message.ciphertext[0] ^= 0x01;
        }
        let gate = QuantumGate::KeyProtected { pad: &receiver, message: &message };
        let decision = control::evaluate_gate(&gate, params.t_command);
        match (decision.release_time, decision.setpoint) {
            (Some(_), Some(setpoint)) => {
                decoded_scale = setpoint;
                match signal.first_active_at_or_after(params.t_command) {
                    Some(t) => release = Some(t),
                    None => hold_reason = Some("no_active_interval"),
                }
            }
            _ => hold_reason = Some("checksum_failed"),
        }
    }

    // Stage 4: fly the formation under the gated command.
    let trajectory = gated_formation(
        &params.formation,
        decoded_scale,
        release,
        &mut stream(trial_seed, "combined.formation", 0),
    )?;
    Ok(CombinedTrial {
        trial_seed,
        qber: exchange.qber,
        verdict: exchange.verdict,
        key_bits: exchange.alice_key.len(),
        n_coincidences: coincidences.len(),
        duty_cycle: signal.duty_cycle(),
        release,
        hold_reason,
        trajectory,
    })
}

fn run_combined(
    params: &CombinedParams,
    seed: u64,
    trials: u64,
    log: &mut LogWriter,
    csv: &mut CsvWriter,
) -> Result<Value, ScenarioError> {
    let header = formation_csv_header(params.formation.offsets.len() + 1);
    csv.header(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
    let outputs = fan_out_trials(trials, |trial| combined_trial(params, seed, trial))?;
    let mut engaged = 0u64;
    let mut held = 0u64;
    let mut final_sum = 0.0;
    for (trial, out) in outputs.iter().enumerate() {
        if out.release.is_some() {
            engaged += 1;
        } else {
            held += 1;
        }
        final_sum += out.trajectory.final_error;
        log.record(&json!({
            "record": "trial",
            "trial": trial,
            "trial_seed": out.trial_seed,
            "qber": out.qber,
            "verdict": verdict_str(out.verdict),
            "key_bits": out.key_bits,
            "n_coincidences": out.n_coincidences,
            "duty_cycle": out.duty_cycle,
            "release_time": out.release.map(|t| json!(t)).unwrap_or(Value::Null),
            "hold_reason": out.hold_reason.map(|r| json!(r)).unwrap_or(Value::Null),
            "initial_error": out.trajectory.samples[0].error_norm,
            "final_error": out.trajectory.final_error,
            "converged": out.trajectory.converged,
        }))?;
        if trial == 0 {
            write_formation_csv(csv, &out.trajectory, params.formation.sample_stride)?;
        }
    }
    Ok(json!({
        "trials": trials,
        "engaged_trials": engaged,
        "held_trials": held,
        "mean_final_error": final_sum / trials as f64,
    }))
}
