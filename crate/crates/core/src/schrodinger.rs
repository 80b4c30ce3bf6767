//! Time evolution of two-level systems.
//!
//! For a static Hamiltonian the propagator `U(t) = exp(−iHt/ħ)` is computed
//! in closed form from the decomposition `H = a·I + v·σ`:
//!
//! ```text
//! U(t) = e^(−iat/ħ)·[cos(|v|t/ħ)·I − i·sin(|v|t/ħ)·(v̂·σ)]
//! ```
//!
//! which is exact for all `t`. A first-order truncation
//! `U ≈ I − iH·dt/ħ` is also exposed; it is deliberately *not* unitary
//! (the state norm picks up an `O(dt²)` defect per step) and exists to make
//! the truncation error observable.
//!
//! Time-dependent drives are sums of harmonics about a static term,
//! `H′(t) = Σ_l V_l·exp(−i·l·ε·t/ħ)`. Hermiticity of the evaluated drive is
//! guaranteed at validation by requiring harmonics in conjugate pairs,
//! `V_{−l} = V_l†` (a single-sided drive is rejected). Driven evolution
//! steps with the exact exponential of the midpoint-sampled Hamiltonian
//! `exp(−i·H(t+dt/2)·dt/ħ)`, a second-order, norm-preserving scheme.
//!
//! Energies are in eV and times in seconds throughout, matching
//! [`crate::qubit::HBAR_EV_S`].

use crate::qubit::{Amplitudes, Operator, Qubit, HBAR_EV_S};
use num_complex::Complex64;
use std::collections::BTreeMap;
use thiserror::Error;

/// Errors from Hamiltonian/drive construction and driven evolution.
#[derive(Debug, Error, PartialEq)]
pub enum EvolutionError {
    /// Matrix is not Hermitian within tolerance.
    #[error("matrix is not Hermitian within 1e-12 of its scale")]
    NonHermitian,
    /// A drive harmonic lacks its conjugate partner at the opposite index.
    #[error("drive harmonic l={l} has no conjugate partner V_{{-l}} = V_l†")]
    UnpairedDriveTerm { l: i64 },
    /// Step size or horizon is unusable.
    #[error("invalid time step: {reason}")]
    InvalidTimeStep { reason: &'static str },
}

fn hermitian_defect(m: &Operator) -> f64 {
    (m - m.adjoint()).norm()
}

fn matrix_scale(m: &Operator) -> f64 {
    m.norm().max(1.0)
}

/// A validated Hermitian 2×2 Hamiltonian (entries in eV).
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    matrix: Operator,
}

impl Hamiltonian {
    /// Validates Hermiticity to 10⁻¹² of the matrix scale.
    pub fn new(matrix: Operator) -> Result<Self, EvolutionError> {
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
            || hermitian_defect(&matrix) > 1e-12 * matrix_scale(&matrix)
        {
            return Err(EvolutionError::NonHermitian);
        }
        Ok(Self { matrix })
    }

    /// Diagonal Hamiltonian with the given eigenenergies (eV).
    pub fn diagonal(e_plus: f64, e_minus: f64) -> Self {
        Self::new(Operator::new(
            Complex64::new(e_plus, 0.0),
            Complex64::ZERO,
            Complex64::ZERO,
            Complex64::new(e_minus, 0.0),
        ))
        .expect("real diagonal matrices are Hermitian")
    }

    pub fn matrix(&self) -> &Operator {
        &self.matrix
    }
}

/// Exact propagator `exp(−i·H·t/ħ)` for a Hermitian matrix.
pub fn propagator_exact(h: &Operator, t: f64) -> Operator {
    // H = a·I + v·σ with a, v real for Hermitian H.
    let a = (h[(0, 0)].re + h[(1, 1)].re) / 2.0;
    let vz = (h[(0, 0)].re - h[(1, 1)].re) / 2.0;
    let vx = h[(0, 1)].re;
    let vy = -h[(0, 1)].im;
    let v_norm = (vx * vx + vy * vy + vz * vz).sqrt();
    let phase = Complex64::from_polar(1.0, -a * t / HBAR_EV_S);
    if v_norm == 0.0 {
        return Operator::identity() * phase;
    }
    let angle = v_norm * t / HBAR_EV_S;
    let (nx, ny, nz) = (vx / v_norm, vy / v_norm, vz / v_norm);
    let cos = Complex64::new(angle.cos(), 0.0);
    let msin = Complex64::new(0.0, -angle.sin());
    // cos·I − i·sin·(n̂·σ), then the overall phase from the a·I part.
    let u = Operator::new(
        cos + msin * nz,
        msin * Complex64::new(nx, -ny),
        msin * Complex64::new(nx, ny),
        cos - msin * nz,
    );
    u * phase
}

/// Evolves a state under a static Hamiltonian: `ψ(t) = exp(−iHt/ħ)·ψ(0)`.
pub fn evolve_static(h: &Hamiltonian, psi0: &Qubit, t: f64) -> Qubit {
    psi0.apply(&propagator_exact(h.matrix(), t))
}

/// First-order truncated propagator `I − i·H·dt/ħ`.
///
/// Not unitary: applying it inflates the norm by `O((dt·‖H‖/ħ)²)`. Useful
/// precisely because that defect is observable.
pub fn infinitesimal_propagator(h: &Hamiltonian, dt: f64) -> Operator {
    Operator::identity() - h.matrix() * Complex64::new(0.0, dt / HBAR_EV_S)
}

/// Harmonic drive `H′(t) = Σ_l V_l·exp(−i·l·ε·t/ħ)` about a static term.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicDrive {
    /// Combined amplitude per harmonic index.
    harmonics: BTreeMap<i64, Operator>,
    /// Harmonic energy quantum ε (eV).
    epsilon: f64,
}

impl HarmonicDrive {
    /// Builds a drive from `(V_l, l)` terms, merging duplicate indices.
    ///
    /// Validation requires `V_{−l} = V_l†` for every harmonic (so the
    /// evaluated drive is Hermitian at every instant) and a Hermitian `l=0`
    /// term. Single-sided drives are rejected with
    /// [`EvolutionError::UnpairedDriveTerm`].
    pub fn new(terms: Vec<(Operator, i64)>, epsilon: f64) -> Result<Self, EvolutionError> {
        if !epsilon.is_finite() {
            return Err(EvolutionError::InvalidTimeStep { reason: "epsilon must be finite" });
        }
        let mut harmonics: BTreeMap<i64, Operator> = BTreeMap::new();
        for (v, l) in terms {
            *harmonics.entry(l).or_insert_with(Operator::zeros) += v;
        }
        for (&l, v) in &harmonics {
            let partner = harmonics.get(&-l).ok_or(EvolutionError::UnpairedDriveTerm { l })?;
            if (v - partner.adjoint()).norm() > 1e-12 * matrix_scale(v) {
                return Err(EvolutionError::UnpairedDriveTerm { l });
            }
        }
        Ok(Self { harmonics, epsilon })
    }

    /// Convenience: the paired drive `V·e^(−iεt/ħ) + V†·e^(+iεt/ħ)`.
    pub fn single_harmonic(v: Operator, epsilon: f64) -> Result<Self, EvolutionError> {
        Self::new(vec![(v, 1), (v.adjoint(), -1)], epsilon)
    }

    /// Evaluates `H′(t)`; Hermitian by the pairing invariant.
    pub fn evaluate(&self, t: f64) -> Operator {
        let mut h = Operator::zeros();
        for (&l, v) in &self.harmonics {
            let phase = Complex64::from_polar(1.0, -(l as f64) * self.epsilon * t / HBAR_EV_S);
            h += v * phase;
        }
        h
    }
}

/// Result of a driven evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolvedState {
    /// Final state, renormalized.
    pub state: Qubit,
    /// `|‖ψ_raw‖ − 1|` accumulated by the stepper before renormalization.
    pub norm_defect: f64,
}

/// Evolves under `H(t) = H₀ + H′(t)` from 0 to `t` with midpoint-sampled
/// exact exponentials of step `dt` (plus one partial step to land on `t`).
pub fn evolve_driven(
    h0: &Hamiltonian,
    drive: &HarmonicDrive,
    psi0: &Qubit,
    t: f64,
    dt: f64,
) -> Result<EvolvedState, EvolutionError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(EvolutionError::InvalidTimeStep { reason: "dt must be positive and finite" });
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(EvolutionError::InvalidTimeStep { reason: "t must be non-negative and finite" });
    }
    let mut psi: Amplitudes = psi0.vector();
    let mut now = 0.0;
    while now < t {
        let step = dt.min(t - now);
        if step <= 0.0 {
            break;
        }
        let h_mid = h0.matrix() + drive.evaluate(now + step / 2.0);
        psi = propagator_exact(&h_mid, step) * psi;
        now += step;
    }
    let norm_defect = (psi.norm() - 1.0).abs();
    Ok(EvolvedState {
        state: Qubit::from_vector(psi).expect("unitary steps keep the norm near 1"),
        norm_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit::{pauli_x, pauli_z};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Time for one radian of phase at 1 eV.
    const T1: f64 = HBAR_EV_S;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn hermiticity_is_validated() {
        let bad = Operator::new(c(1.0, 0.0), c(0.5, 0.1), c(0.5, 0.1), c(2.0, 0.0));
        assert_eq!(Hamiltonian::new(bad).unwrap_err(), EvolutionError::NonHermitian);
        let good = Operator::new(c(1.0, 0.0), c(0.5, 0.1), c(0.5, -0.1), c(2.0, 0.0));
        assert!(Hamiltonian::new(good).is_ok());
    }

    #[test]
    fn diagonal_hamiltonian_evolves_pure_phases() {
        // Oracle: each amplitude picks up e^(−iE t/ħ); computed directly
        // from complex arithmetic here and compared to the propagator.
        let h = Hamiltonian::diagonal(1.0, 2.5);
        let psi0 = Qubit::new(c(0.8, 0.0), c(0.0, 0.6)).unwrap();
        let t = 3.7 * T1;
        let out = evolve_static(&h, &psi0, t);
        let expect_plus = psi0.c_plus() * Complex64::from_polar(1.0, -1.0 * t / HBAR_EV_S);
        let expect_minus = psi0.c_minus() * Complex64::from_polar(1.0, -2.5 * t / HBAR_EV_S);
        assert!((out.c_plus() - expect_plus).norm() < 1e-12);
        assert!((out.c_minus() - expect_minus).norm() < 1e-12);
    }

    #[test]
    fn x_coupling_drives_a_full_spin_flip_at_half_rabi_period() {
        // H = (E/2)σx swaps the z states (up to phase) after t = πħ/E.
        let e = 2.0;
        let h = Hamiltonian::new(pauli_x() * c(e / 2.0, 0.0)).unwrap();
        let t = PI * HBAR_EV_S / e;
        let flipped = evolve_static(&h, &Qubit::plus_z(), t);
        assert_relative_eq!(flipped.probability(&Qubit::minus_z()), 1.0, epsilon = 1e-12);
        // At half that time the populations are even.
        let halfway = evolve_static(&h, &Qubit::plus_z(), t / 2.0);
        assert_relative_eq!(halfway.probability(&Qubit::minus_z()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn truncated_propagator_norm_defect_is_second_order() {
        let h = Hamiltonian::new(
            Operator::new(c(1.0, 0.0), c(0.3, -0.2), c(0.3, 0.2), c(-0.5, 0.0)),
        )
        .unwrap();
        let psi = Qubit::plus_x();
        let defect = |dt: f64| -> f64 {
            let stepped = infinitesimal_propagator(&h, dt) * psi.vector();
            (stepped.norm() - 1.0).abs()
        };
        let (d1, d2) = (defect(1e-2 * T1), defect(5e-3 * T1));
        let ratio = d1 / d2;
        assert!((3.8..=4.2).contains(&ratio), "norm defect ratio {ratio} not O(dt²)");
        // And the deviation from the exact propagator is also second order.
        let dev = |dt: f64| -> f64 {
            (propagator_exact(h.matrix(), dt) - infinitesimal_propagator(&h, dt)).norm()
        };
        let ratio = dev(1e-2 * T1) / dev(5e-3 * T1);
        assert!((3.8..=4.2).contains(&ratio), "operator deviation ratio {ratio} not O(dt²)");
    }

    #[test]
    fn finite_difference_matches_schrodinger_rhs_at_first_order() {
        // (ψ(t+δ) − ψ(t))/δ → (−i/ħ)Hψ(t); the forward-difference defect is
        // first order, so halving δ halves it (within 10%).
        let h = Hamiltonian::new(
            Operator::new(c(0.7, 0.0), c(0.2, 0.4), c(0.2, -0.4), c(-0.3, 0.0)),
        )
        .unwrap();
        let t0 = 0.9 * T1;
        let psi_t = evolve_static(&h, &Qubit::plus_z(), t0);
        let rhs = h.matrix() * psi_t.vector() * c(0.0, -1.0 / HBAR_EV_S);
        let defect = |delta: f64| -> f64 {
            let psi_next = evolve_static(&h, &Qubit::plus_z(), t0 + delta);
            let fd = (psi_next.vector() - psi_t.vector()) / c(delta, 0.0);
            (fd - rhs).norm()
        };
        let ratio = defect(1e-3 * T1) / defect(5e-4 * T1);
        assert!((1.8..=2.2).contains(&ratio), "defect ratio {ratio} not first order");
    }

    #[test]
    fn unpaired_drive_terms_are_rejected() {
        let v = Operator::new(c(0.0, 0.0), c(0.1, 0.05), c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!(
            HarmonicDrive::new(vec![(v, 1)], 1.0).unwrap_err(),
            EvolutionError::UnpairedDriveTerm { l: 1 }
        );
        // Present but not the adjoint; the error may name either harmonic of
        // the failed pair.
        assert!(matches!(
            HarmonicDrive::new(vec![(v, 1), (v, -1)], 1.0).unwrap_err(),
            EvolutionError::UnpairedDriveTerm { .. }
        ));
        // Non-Hermitian static term.
        assert!(HarmonicDrive::new(vec![(v, 0)], 1.0).is_err());
        assert!(HarmonicDrive::single_harmonic(v, 1.0).is_ok());
    }

    #[test]
    fn zero_drive_reduces_to_static_evolution() {
        let h0 = Hamiltonian::new(
            Operator::new(c(0.4, 0.0), c(0.1, -0.3), c(0.1, 0.3), c(1.1, 0.0)),
        )
        .unwrap();
        let drive = HarmonicDrive::single_harmonic(Operator::zeros(), 1.0).unwrap();
        let psi0 = Qubit::new(c(0.6, 0.2), c(-0.5, 0.3)).unwrap();
        let t = 5.0 * T1;
        let driven = evolve_driven(&h0, &drive, &psi0, t, t / 400.0).unwrap();
        let exact = evolve_static(&h0, &psi0, t);
        assert!(driven.state.same_ray(&exact, 1e-10));
        assert!((driven.state.vector() - exact.vector()).norm() < 1e-10);
    }

    #[test]
    fn driven_stepper_preserves_norm_over_many_steps() {
        let h0 = Hamiltonian::diagonal(0.0, 1.0);
        let v = Operator::new(c(0.0, 0.0), c(0.05, 0.02), c(0.0, 0.0), c(0.0, 0.0));
        let drive = HarmonicDrive::single_harmonic(v, 1.0).unwrap();
        let t = 100.0 * T1;
        let out = evolve_driven(&h0, &drive, &Qubit::plus_z(), t, t / 100_000.0).unwrap();
        assert!(out.norm_defect < 1e-10, "norm defect {}", out.norm_defect);
    }

    #[test]
    fn midpoint_stepper_converges_at_second_order() {
        let h0 = Hamiltonian::diagonal(0.0, 1.0);
        let v = Operator::new(c(0.0, 0.0), c(0.2, -0.1), c(0.0, 0.0), c(0.0, 0.0));
        let drive = HarmonicDrive::single_harmonic(v, 0.7).unwrap();
        let psi0 = Qubit::plus_z();
        let t = 6.0 * T1;
        let reference = evolve_driven(&h0, &drive, &psi0, t, t / 65_536.0).unwrap().state;
        let err = |n: f64| {
            let coarse = evolve_driven(&h0, &drive, &psi0, t, t / n).unwrap().state;
            (coarse.vector() - reference.vector()).norm()
        };
        let ratio = err(256.0) / err(512.0);
        assert!((3.6..=4.4).contains(&ratio), "convergence ratio {ratio} not second order");
    }

    #[test]
    fn resonant_weak_drive_population_grows_quadratically_at_short_times() {
        // From |1⟩ under a weak resonant drive the excited population obeys
        // P₂(t) = |⟨2|H′(0)|1⟩·t/ħ|²·(1 + O(t)); fit the exponent on a
        // short-time doubling ladder.
        let h0 = Hamiltonian::diagonal(0.0, 1.0);
        let g = 0.1;
        let v = Operator::new(c(0.0, 0.0), c(0.0, 0.0), c(g, 0.0), c(0.0, 0.0));
        let drive = HarmonicDrive::single_harmonic(v, 1.0).unwrap();
        let times = [1e-3 * T1, 2e-3 * T1, 4e-3 * T1];
        let populations: Vec<f64> = times
            .iter()
            .map(|&t| {
                let out = evolve_driven(&h0, &drive, &Qubit::plus_z(), t, t / 200.0).unwrap();
                out.state.probability(&Qubit::minus_z())
            })
            .collect();
        let exponent_low = (populations[1] / populations[0]).ln() / 2f64.ln();
        let exponent_high = (populations[2] / populations[1]).ln() / 2f64.ln();
        assert!((exponent_low - 2.0).abs() < 0.1, "low exponent {exponent_low}");
        assert!((exponent_high - 2.0).abs() < 0.1, "high exponent {exponent_high}");
    }

    proptest! {
        #[test]
        fn exact_propagators_are_unitary_and_compose(
            a in -2.0f64..2.0, z in -2.0f64..2.0,
            re in -2.0f64..2.0, im in -2.0f64..2.0,
            t1 in 0.0f64..5.0, t2 in 0.0f64..5.0,
        ) {
            let h = Operator::new(c(a + z, 0.0), c(re, im), c(re, -im), c(a - z, 0.0));
            let u1 = propagator_exact(&h, t1 * T1);
            let u2 = propagator_exact(&h, t2 * T1);
            let u12 = propagator_exact(&h, (t1 + t2) * T1);
            prop_assert!((u1.adjoint() * u1 - Operator::identity()).norm() < 1e-12);
            prop_assert!((u2 * u1 - u12).norm() < 1e-11);
        }

        #[test]
        fn evaluated_drives_are_hermitian(
            re in -1.0f64..1.0, im in -1.0f64..1.0, t in 0.0f64..50.0,
        ) {
            let v = Operator::new(c(0.1, 0.0), c(re, im), c(im, re), c(-0.2, 0.0));
            let drive = HarmonicDrive::new(
                vec![(v, 2), (v.adjoint(), -2), (pauli_z() * c(0.3, 0.0), 0)],
                0.9,
            ).unwrap();
            let h = drive.evaluate(t * T1);
            prop_assert!(hermitian_defect(&h) < 1e-12 * matrix_scale(&h));
        }
    }
}
