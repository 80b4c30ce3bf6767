//! Two-level quantum state algebra.
//!
//! States live in the spin-z eigenbasis `{|+z>, |-z>}`. The same pair of
//! amplitudes doubles as a photon polarization state under the mapping used
//! throughout the crate:
//!
//! * `|+z> = |H>` (horizontal, key bit 0)
//! * `|-z> = |V>` (vertical, key bit 1)
//! * linear polarization at angle θ = `cos θ |H> + sin θ |V>`
//!
//! Rotations are generated by the angular-momentum operators `J = (ħ/2)σ`:
//! `R(angle, n) = exp(-i · angle · (n·J)/ħ) = exp(-i · angle · (n·σ)/2)`,
//! evaluated in closed form. A spinor picks up a sign under a full 2π turn
//! (`R(2π) = -I`); physical predictions are invariant because probabilities
//! ignore global phase.
//!
//! # Example
//!
//! ```
//! use qauto_core::qubit::{Qubit, rotation};
//! use nalgebra::Vector3;
//!
//! // A π/2 turn about the y-axis carries |+z> onto |+x>.
//! let r = rotation(Vector3::y(), std::f64::consts::FRAC_PI_2).unwrap();
//! let rotated = Qubit::plus_z().apply(&r);
//! assert!((rotated.probability(&Qubit::plus_x()) - 1.0).abs() < 1e-12);
//! ```

use nalgebra::{Matrix2, Vector2, Vector3};
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

/// Reduced Planck constant in electron-volt seconds.
pub const HBAR_EV_S: f64 = 6.582e-16;
/// Reduced Planck constant in erg seconds.
pub const HBAR_ERG_S: f64 = 1.055e-27;

/// Raw two-component complex amplitude vector (not necessarily normalized).
pub type Amplitudes = Vector2<Complex64>;
/// A 2×2 complex operator.
pub type Operator = Matrix2<Complex64>;

/// Errors from state and operator construction.
#[derive(Debug, Error, PartialEq)]
pub enum QubitError {
    /// Construction from an (approximately) zero amplitude vector.
    #[error("amplitude vector has zero norm; cannot normalize")]
    ZeroVector,
    /// A rotation axis of zero length was supplied.
    #[error("rotation axis has zero length")]
    ZeroAxis,
}

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Pauli x operator.
pub fn pauli_x() -> Operator {
    Operator::new(Complex64::ZERO, ONE, ONE, Complex64::ZERO)
}

/// Pauli y operator.
pub fn pauli_y() -> Operator {
    Operator::new(Complex64::ZERO, -I, I, Complex64::ZERO)
}

/// Pauli z operator.
pub fn pauli_z() -> Operator {
    Operator::new(ONE, Complex64::ZERO, Complex64::ZERO, -ONE)
}

/// Angular-momentum operator `(ħ/2)(n̂·σ)` about `axis`, in eV·s.
pub fn angular_momentum(axis: Vector3<f64>) -> Result<Operator, QubitError> {
    Ok(axis_sigma(axis)? * Complex64::new(HBAR_EV_S / 2.0, 0.0))
}

/// `n̂·σ` for the normalized direction of `axis`.
fn axis_sigma(axis: Vector3<f64>) -> Result<Operator, QubitError> {
    let norm = axis.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(QubitError::ZeroAxis);
    }
    let n = axis / norm;
    Ok(pauli_x() * Complex64::new(n.x, 0.0)
        + pauli_y() * Complex64::new(n.y, 0.0)
        + pauli_z() * Complex64::new(n.z, 0.0))
}

/// Rotation operator `exp(-i · angle · (n·σ)/2)` about `axis`.
///
/// Evaluated in closed form as `cos(angle/2)·I − i·sin(angle/2)·(n̂·σ)`,
/// which is exact for any angle. Note `rotation(axis, 2π) = -I`: the spinor
/// sign flip is physical for half-integer spin and invisible to
/// probabilities.
pub fn rotation(axis: Vector3<f64>, angle: f64) -> Result<Operator, QubitError> {
    let ns = axis_sigma(axis)?;
    let half = angle / 2.0;
    Ok(Operator::identity() * Complex64::new(half.cos(), 0.0) - ns * (I * half.sin()))
}

/// A normalized two-level state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qubit {
    amplitudes: Amplitudes,
}

impl Qubit {
    /// Builds a state from raw amplitudes, normalizing them.
    pub fn new(c_plus: Complex64, c_minus: Complex64) -> Result<Self, QubitError> {
        Self::from_vector(Amplitudes::new(c_plus, c_minus))
    }

    /// Builds a state from an amplitude vector, normalizing it.
    pub fn from_vector(amplitudes: Amplitudes) -> Result<Self, QubitError> {
        let norm = amplitudes.norm();
        if norm < 1e-300 || !norm.is_finite() {
            return Err(QubitError::ZeroVector);
        }
        Ok(Self { amplitudes: amplitudes / Complex64::new(norm, 0.0) })
    }

    /// Spin-up along z; horizontal polarization; key bit 0.
    pub fn plus_z() -> Self {
        Self { amplitudes: Amplitudes::new(ONE, Complex64::ZERO) }
    }

    /// Spin-down along z; vertical polarization; key bit 1.
    pub fn minus_z() -> Self {
        Self { amplitudes: Amplitudes::new(Complex64::ZERO, ONE) }
    }

    /// Spin-up along x: `(|+z> + |-z>)/√2`.
    pub fn plus_x() -> Self {
        let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { amplitudes: Amplitudes::new(c, c) }
    }

    /// Spin-down along x: `(|+z> - |-z>)/√2`.
    pub fn minus_x() -> Self {
        let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { amplitudes: Amplitudes::new(c, -c) }
    }

    /// Linear polarization at `angle_deg` degrees from horizontal:
    /// `cos θ |H> + sin θ |V>`.
    pub fn linear_polarization(angle_deg: f64) -> Self {
        let theta = angle_deg.to_radians();
        Self {
            amplitudes: Amplitudes::new(
                Complex64::new(theta.cos(), 0.0),
                Complex64::new(theta.sin(), 0.0),
            ),
        }
    }

    /// Amplitude on `|+z>`.
    pub fn c_plus(&self) -> Complex64 {
        self.amplitudes.x
    }

    /// Amplitude on `|-z>`.
    pub fn c_minus(&self) -> Complex64 {
        self.amplitudes.y
    }

    /// The underlying normalized amplitude vector.
    pub fn vector(&self) -> Amplitudes {
        self.amplitudes
    }

    /// Inner product `<self|other>` (conjugate-linear in `self`).
    pub fn inner(&self, other: &Qubit) -> Complex64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// Born probability of projecting onto `target`: `|<target|self>|²`.
    pub fn probability(&self, target: &Qubit) -> f64 {
        target.inner(self).norm_sqr()
    }

    /// Whether two states are physically the same (equal up to global phase).
    pub fn same_ray(&self, other: &Qubit, tol: f64) -> bool {
        (self.inner(other).norm() - 1.0).abs() <= tol
    }

    /// Applies a unitary operator, renormalizing to absorb float rounding.
    ///
    /// The result is only meaningful for (near-)unitary `op`; truncated
    /// propagators that deliberately leave the unit sphere should act on the
    /// raw [`Amplitudes`] vector instead.
    pub fn apply(&self, op: &Operator) -> Qubit {
        Qubit::from_vector(op * self.amplitudes)
            .expect("unitary application of a normalized state cannot vanish")
    }
}

/// Measurement outcome label: projection onto the first or second basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// First basis state (`|+z>`, `|+x>`, or the θ-polarized state).
    Plus,
    /// Second basis state, orthogonal to the first.
    Minus,
}

impl Outcome {
    /// Key-bit convention: `Plus → 0`, `Minus → 1`.
    pub fn bit(self) -> u8 {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }
}

/// A projective measurement basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementBasis {
    /// `{|+z>, |-z>}` — horizontal/vertical polarization.
    Z,
    /// `{|+x>, |-x>}` — ±45° linear polarization.
    X,
    /// Linear polarization analyzer at `angle_deg` and `angle_deg + 90°`.
    Linear { angle_deg: f64 },
}

impl MeasurementBasis {
    /// The orthonormal pair of basis states `(plus, minus)`.
    pub fn states(&self) -> (Qubit, Qubit) {
        match *self {
            MeasurementBasis::Z => (Qubit::plus_z(), Qubit::minus_z()),
            MeasurementBasis::X => (Qubit::plus_x(), Qubit::minus_x()),
            MeasurementBasis::Linear { angle_deg } => (
                Qubit::linear_polarization(angle_deg),
                Qubit::linear_polarization(angle_deg + 90.0),
            ),
        }
    }
}

/// Result of a projective measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Which basis state the system collapsed onto.
    pub outcome: Outcome,
    /// Born probability the realized outcome had before the draw.
    pub probability: f64,
    /// Post-measurement state (the realized basis state).
    pub post_state: Qubit,
}

/// Performs a Born-rule projective measurement, consuming one uniform draw.
pub fn measure<R: Rng + ?Sized>(
    state: &Qubit,
    basis: MeasurementBasis,
    rng: &mut R,
) -> Measurement {
    let (plus, minus) = basis.states();
    let p_plus = state.probability(&plus);
    let u: f64 = rng.random();
    if u < p_plus {
        Measurement { outcome: Outcome::Plus, probability: p_plus, post_state: plus }
    } else {
        Measurement { outcome: Outcome::Minus, probability: 1.0 - p_plus, post_state: minus }
    }
}
