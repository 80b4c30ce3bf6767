//! Transfer-function models of the closed position loop, and the quantum
//! gate that stands between a setpoint command and the controller.
//!
//! A force command `F` acting on a platform of mass `m` gives the double
//! integrator `G(s) = K/(ms²)`; closing unity feedback around it yields
//!
//! ```text
//! T(s) = G/(1 + G·H) = K/(ms² + K)
//! ```
//!
//! an undamped oscillator — the classic motivation for adding rate
//! feedback before trusting the loop. [`closed_loop`] performs that
//! algebra for arbitrary rational `G` and `H`, [`step_response`] simulates
//! the result in controllable canonical form, and [`stability`] reads the
//! pole locations off the companion matrix.
//!
//! The quantum layer gates the *reference* rather than the loop: a
//! setpoint travels either one-time-pad encrypted with a checksum
//! ([`QuantumGate::KeyProtected`] — a forged or corrupted command fails to
//! verify and the loop holds), or cleared for execution only while an
//! entanglement trigger attests the link ([`QuantumGate::EntanglementTriggered`]
//! — a command arriving outside an active interval defers to the next one).

use crate::bb84::{OneTimePad, OtpError, OtpMessage};
use crate::spdc::TriggerSignal;
use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from transfer-function algebra and gated runs.
#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    /// The denominator polynomial vanishes identically.
    #[error("denominator must be nonzero")]
    ZeroDenominator,
    /// Numerator degree exceeds denominator degree; not realizable as a
    /// state-space system.
    #[error("improper transfer function: numerator degree {num} > denominator degree {den}")]
    ImproperSystem { num: usize, den: usize },
    /// A simulation parameter is out of range.
    #[error("{name}: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
    /// A setpoint payload failed structural validation.
    #[error("command payload rejected: {reason}")]
    PayloadRejected { reason: &'static str },
    /// The one-time pad rejected the decryption request.
    #[error("one-time pad error: {0}")]
    Pad(#[from] OtpError),
}

// ------------------------------------------------------------------
// Polynomials and rational transfer functions.
// ------------------------------------------------------------------

/// Real polynomial with ascending coefficients: `c₀ + c₁s + c₂s² + …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial, trimming trailing (highest-order) zeros.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut coeffs = if coeffs.is_empty() { vec![0.0] } else { coeffs };
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::ZERO, |acc, &c| acc * s + c)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, &a) in self.coeffs.iter().enumerate() {
            out[i] += a;
        }
        for (i, &b) in other.coeffs.iter().enumerate() {
            out[i] += b;
        }
        Self::new(out)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.coeffs.iter().map(|&c| c * factor).collect())
    }

    /// Index of the lowest-order nonzero coefficient, if any.
    fn lowest_nonzero(&self) -> Option<usize> {
        self.coeffs.iter().position(|&c| c != 0.0)
    }
}

/// Proper rational transfer function; the denominator is kept monic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTF {
    num: Polynomial,
    den: Polynomial,
}

impl RationalTF {
    /// Builds `num/den`, normalizing the denominator's leading coefficient
    /// to one (the numerator absorbs the factor).
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self, ControlError> {
        if den.is_zero() {
            return Err(ControlError::ZeroDenominator);
        }
        let lead = *den.coeffs().last().expect("trimmed polynomial is non-empty");
        Ok(Self { num: num.scale(1.0 / lead), den: den.scale(1.0 / lead) })
    }

    /// Convenience constructor from coefficient slices.
    pub fn from_coeffs(num: &[f64], den: &[f64]) -> Result<Self, ControlError> {
        Self::new(Polynomial::new(num.to_vec()), Polynomial::new(den.to_vec()))
    }

    pub fn numerator(&self) -> &Polynomial {
        &self.num
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.den
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval(s) / self.den.eval(s)
    }

    /// Series (cascade) connection `self · other`.
    pub fn series(&self, other: &Self) -> Result<Self, ControlError> {
        Self::new(self.num.mul(&other.num), self.den.mul(&other.den))
    }

    /// DC gain `lim_{s→0} G(s)`: the ratio of the lowest-order nonzero
    /// coefficients when their orders match, zero when the numerator's
    /// zero at the origin dominates, ±∞ when a pole at the origin does.
    pub fn dc_gain(&self) -> f64 {
        let kd = self.den.lowest_nonzero().expect("denominator is nonzero");
        let Some(kn) = self.num.lowest_nonzero() else {
            return 0.0;
        };
        let ratio = self.num.coeffs()[kn] / self.den.coeffs()[kd];
        match kn.cmp(&kd) {
            std::cmp::Ordering::Equal => ratio,
            std::cmp::Ordering::Greater => 0.0,
            std::cmp::Ordering::Less => ratio * f64::INFINITY,
        }
    }

    /// Poles: eigenvalues of the denominator's companion matrix.
    pub fn poles(&self) -> Vec<Complex64> {
        let den = self.den.coeffs();
        let n = den.len() - 1;
        if n == 0 {
            return vec![];
        }
        // Monic denominator: companion matrix with −coefficients last row.
        let mut companion = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            companion[(i - 1, i)] = 1.0;
        }
        for j in 0..n {
            companion[(n - 1, j)] = -den[j];
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|e: &Complex<f64>| Complex64::new(e.re, e.im))
            .collect()
    }
}

/// Negative-feedback interconnection `G/(1 + G·H)`:
/// `num = n_G·d_H`, `den = d_G·d_H + n_G·n_H`.
pub fn closed_loop(g: &RationalTF, h: &RationalTF) -> Result<RationalTF, ControlError> {
    let num = g.num.mul(&h.den);
    let den = g.den.mul(&h.den).add(&g.num.mul(&h.num));
    RationalTF::new(num, den)
}

/// Pole locations and the verdicts they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub poles: Vec<Complex64>,
    /// All poles strictly in the left half-plane.
    pub stable: bool,
    /// Some pole on the imaginary axis, none to the right.
    pub marginal: bool,
}

/// Classifies the poles of a transfer function.
pub fn stability(tf: &RationalTF) -> StabilityReport {
    let poles = tf.poles();
    let max_re = poles.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9;
    let stable = poles.iter().all(|p| p.re < -tol);
    let marginal = !stable && max_re <= tol;
    StabilityReport { poles, stable, marginal }
}

/// A simulated step (or gated-reference) response.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeResponse {
    pub times: Vec<f64>,
    pub outputs: Vec<f64>,
}

/// Controllable canonical state-space realization of a proper TF.
struct StateSpace {
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
}

impl StateSpace {
    fn from_tf(tf: &RationalTF) -> Result<Self, ControlError> {
        let den = tf.den.coeffs();
        let num = tf.num.coeffs();
        let n = den.len() - 1;
        if num.len() > den.len() {
            return Err(ControlError::ImproperSystem { num: num.len() - 1, den: n });
        }
        // Monic denominator (enforced at construction): feedthrough is the
        // coefficient of s^n in the numerator.
        let d = if num.len() == den.len() { num[n] } else { 0.0 };
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            a[(i - 1, i)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = -den[j];
        }
        let mut b = vec![0.0; n];
        if n > 0 {
            b[n - 1] = 1.0;
        }
        // y = (num − d·den) x-chain + d·u
        let c = (0..n)
            .map(|j| num.get(j).copied().unwrap_or(0.0) - d * den[j])
            .collect();
        Ok(Self { a, b, c, d })
    }

    fn derivative(&self, x: &[f64], u: f64, out: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.a[(i, j)] * x[j];
            }
            out[i] = acc + self.b[i] * u;
        }
    }

    fn output(&self, x: &[f64], u: f64) -> f64 {
        self.c.iter().zip(x).map(|(ci, xi)| ci * xi).sum::<f64>() + self.d * u
    }
}

/// Simulates the response to an arbitrary reference `r(t)` from zero
/// initial conditions with fixed-step fourth-order Runge-Kutta.
pub fn reference_response(
    tf: &RationalTF,
    reference: impl Fn(f64) -> f64,
    t_final: f64,
    dt: f64,
) -> Result<TimeResponse, ControlError> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(ControlError::InvalidParameter { name: "t_final", reason: "must be > 0" });
    }
    if !(dt > 0.0) || dt > t_final {
        return Err(ControlError::InvalidParameter { name: "dt", reason: "must lie in (0, t_final]" });
    }
    let ss = StateSpace::from_tf(tf)?;
    let n = ss.b.len();
    let steps = (t_final / dt).round() as usize;
    let mut x = vec![0.0; n];
    let mut times = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for step in 0..=steps {
        let t = step as f64 * dt;
        times.push(t);
        outputs.push(ss.output(&x, reference(t)));
        if step == steps {
            break;
        }
        let (u0, um, u1) = (reference(t), reference(t + 0.5 * dt), reference(t + dt));
        ss.derivative(&x, u0, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        ss.derivative(&tmp, um, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        ss.derivative(&tmp, um, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        ss.derivative(&tmp, u1, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(TimeResponse { times, outputs })
}

/// Unit step response from zero initial conditions.
pub fn step_response(tf: &RationalTF, t_final: f64, dt: f64) -> Result<TimeResponse, ControlError> {
    reference_response(tf, |_| 1.0, t_final, dt)
}

// ------------------------------------------------------------------
// Quantum-gated setpoint commands.
// ------------------------------------------------------------------

/// Bytes in a sealed setpoint payload: 8 value bytes + 2 checksum bytes.
pub const SETPOINT_PAYLOAD_LEN: usize = 10;

/// Serializes a setpoint as 8 little-endian value bytes followed by a
/// little-endian 16-bit wrapping byte-sum checksum.
pub fn encode_setpoint(setpoint: f64) -> [u8; SETPOINT_PAYLOAD_LEN] {
    let mut payload = [0u8; SETPOINT_PAYLOAD_LEN];
    payload[..8].copy_from_slice(&setpoint.to_le_bytes());
    let checksum: u16 = payload[..8].iter().fold(0u16, |acc, &b| acc.wrapping_add(b as u16));
    payload[8..].copy_from_slice(&checksum.to_le_bytes());
    payload
}

/// Parses and verifies a payload produced by [`encode_setpoint`].
pub fn decode_setpoint(payload: &[u8]) -> Result<f64, ControlError> {
    if payload.len() != SETPOINT_PAYLOAD_LEN {
        return Err(ControlError::PayloadRejected { reason: "wrong length" });
    }
    let checksum: u16 = payload[..8].iter().fold(0u16, |acc, &b| acc.wrapping_add(b as u16));
    let declared = u16::from_le_bytes([payload[8], payload[9]]);
    if checksum != declared {
        return Err(ControlError::PayloadRejected { reason: "checksum mismatch" });
    }
    let value = f64::from_le_bytes(payload[..8].try_into().expect("checked length"));
    if !value.is_finite() {
        return Err(ControlError::PayloadRejected { reason: "non-finite setpoint" });
    }
    Ok(value)
}

/// The quantum mechanism guarding a setpoint command.
pub enum QuantumGate<'a> {
    /// The setpoint arrives one-time-pad encrypted; it is accepted at its
    /// command time only if it decrypts to a payload whose checksum
    /// verifies. Anything else holds the loop at its current reference.
    KeyProtected { pad: &'a OneTimePad, message: &'a OtpMessage },
    /// The plaintext setpoint may only take effect while the entanglement
    /// trigger attests the link; early commands defer to the next active
    /// interval.
    EntanglementTriggered { signal: &'a TriggerSignal, setpoint: f64 },
}

/// Why a command did not execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldReason {
    ChecksumFailed,
    PadError,
    NoActiveInterval,
}

/// Result of pushing one command through a gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    /// When the setpoint takes effect; `None` if it never does.
    pub release_time: Option<f64>,
    pub setpoint: Option<f64>,
    pub hold_reason: Option<HoldReason>,
}

/// Evaluates a gate for a command issued at `t_command`.
pub fn evaluate_gate(gate: &QuantumGate<'_>, t_command: f64) -> GateDecision {
    match gate {
        QuantumGate::KeyProtected { pad, message } => match pad.decrypt(message) {
            Ok(payload) => match decode_setpoint(&payload) {
                Ok(setpoint) => GateDecision {
                    release_time: Some(t_command),
                    setpoint: Some(setpoint),
                    hold_reason: None,
                },
                Err(_) => GateDecision {
                    release_time: None,
                    setpoint: None,
                    hold_reason: Some(HoldReason::ChecksumFailed),
                },
            },
            Err(_) => GateDecision {
                release_time: None,
                setpoint: None,
                hold_reason: Some(HoldReason::PadError),
            },
        },
        QuantumGate::EntanglementTriggered { signal, setpoint } => {
            match signal.first_active_at_or_after(t_command) {
                Some(t) => GateDecision {
                    release_time: Some(t),
                    setpoint: Some(*setpoint),
                    hold_reason: None,
                },
                None => GateDecision {
                    release_time: None,
                    setpoint: None,
                    hold_reason: Some(HoldReason::NoActiveInterval),
                },
            }
        }
    }
}

/// Timing for a gated closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedRunConfig {
    pub t_final: f64,
    pub dt: f64,
    /// When the command is issued.
    pub t_command: f64,
}

/// A gated run: the decision that was made and the resulting trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedRunResult {
    pub decision: GateDecision,
    pub response: TimeResponse,
    /// Reference value at each sample time.
    pub references: Vec<f64>,
}

/// Simulates the closed-loop transfer function driven by a gated setpoint:
/// the reference is zero until the gate releases the command, then the
/// decoded setpoint. A held command leaves the loop at rest.
pub fn quantum_gated_run(
    loop_tf: &RationalTF,
    gate: &QuantumGate<'_>,
    config: &GatedRunConfig,
) -> Result<GatedRunResult, ControlError> {
    if !(config.t_command >= 0.0) {
        return Err(ControlError::InvalidParameter { name: "t_command", reason: "must be ≥ 0" });
    }
    let decision = evaluate_gate(gate, config.t_command);
    let reference = |t: f64| match (&decision.release_time, &decision.setpoint) {
        (Some(release), Some(setpoint)) if t >= *release => *setpoint,
        _ => 0.0,
    };
    let response = reference_response(loop_tf, reference, config.t_final, config.dt)?;
    let references = response.times.iter().map(|&t| reference(t)).collect();
    Ok(GatedRunResult { decision, response, references })
}
