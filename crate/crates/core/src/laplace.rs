//! Perturbation theory in the Laplace domain.
//!
//! For `H = H⁰ + λH′` with time-independent `H′`, expanding the transformed
//! state `Ψ(s) = Σ_n λⁿ·Ψ⁽ⁿ⁾(s)` in the transformed Schrödinger equation
//! yields a hierarchy of algebraic equations, one per order:
//!
//! ```text
//! (H⁰ − iħs)·Ψ⁽⁰⁾(s) = −iħ·ψ(0)
//! (H⁰ − iħs)·Ψ⁽ⁿ⁾(s) = −H′·Ψ⁽ⁿ⁻¹⁾(s)      (n ≥ 1)
//! ```
//!
//! In the `H⁰` eigenbasis (energies `E_m`, initial state the eigenvector at
//! `initial_level`, written `φ₁`) the solutions are rational functions of
//! `s` with poles only at `E_m/(iħ)`:
//!
//! ```text
//! C₁⁽⁰⁾(s) = iħ/(iħs − E₁)
//! C_m⁽¹⁾(s) = iħ·⟨φ_m|H′|φ₁⟩ / ((iħs − E_m)(iħs − E₁))
//! ```
//!
//! Coefficients are kept in factored rational form ([`RationalS`]): an
//! explicit pole list over a numerator polynomial. That makes the pole
//! structure checkable symbolically, lets the hierarchy be extended to any
//! order (see [`order_coefficients`] and [`hierarchy_residual`]), and
//! supports partial-fraction inversion back to the time domain by residues.
//!
//! Inverting the first-order coefficients gives the corrected state
//!
//! ```text
//! ψ(t) ≈ [1 − (iλt/ħ)⟨φ₁|H′|φ₁⟩]·φ₁·e^(−iE₁t/ħ)
//!        + λ·Σ_{m≠1} (⟨φ_m|H′|φ₁⟩/(E₁ − E_m))·(e^(−iE₁t/ħ) − e^(−iE_mt/ħ))·φ_m
//! ```
//!
//! where the bracketed secular term is the inverse of the double pole that
//! the `m = 1` coefficient develops at `E₁/(iħ)`. [`validate_against_ode`]
//! quantifies the truncation error against exact propagation of the full
//! Hamiltonian across a λ sweep; the deviation must scale as λ².

use crate::qubit::HBAR_EV_S;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Errors from construction, inversion, and validation.
#[derive(Debug, Error, PartialEq)]
pub enum LaplaceError {
    /// Eigenvector set is not orthonormal within 1e-12.
    #[error("eigenvectors are not orthonormal")]
    NotOrthonormal,
    /// Energies must be supplied in non-decreasing order.
    #[error("energies must be non-decreasing")]
    EnergiesNotAscending,
    /// Perturbation matrix is not Hermitian within 1e-12 of its scale.
    #[error("perturbation matrix is not Hermitian")]
    NotHermitian,
    /// Vector/matrix dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The requested initial level does not exist.
    #[error("initial level {level} out of range for {n} levels")]
    InvalidLevel { level: usize, n: usize },
    /// Two levels coincide with the initial level's energy, so the
    /// first-order energy denominators vanish.
    #[error("levels {level_a} and {level_b} are degenerate; first-order inversion undefined")]
    DegenerateSpectrum { level_a: usize, level_b: usize },
    /// A time grid or λ value is unusable.
    #[error("invalid input: {reason}")]
    InvalidInput { reason: &'static str },
    /// Residue inversion implemented for poles of multiplicity ≤ 2 (all the
    /// hierarchy needs through first order).
    #[error("pole multiplicity {multiplicity} unsupported by the inverter")]
    UnsupportedPoleMultiplicity { multiplicity: usize },
}

// ------------------------------------------------------------------
// Polynomials in s (ascending complex coefficients) — just enough for
// rational-function bookkeeping.
// ------------------------------------------------------------------

fn poly_eval(p: &[Complex64], s: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::ZERO, |acc, &c| acc * s + c)
}

fn poly_mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_derivative(p: &[Complex64]) -> Vec<Complex64> {
    if p.len() <= 1 {
        return vec![Complex64::ZERO];
    }
    p.iter().enumerate().skip(1).map(|(k, &c)| c * k as f64).collect()
}

/// Expands `Π (s − roots[k])` into coefficients.
fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut p = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        p = poly_mul(&p, &[-r, Complex64::new(1.0, 0.0)]);
    }
    p
}

// ------------------------------------------------------------------
// Factored rational functions of s.
// ------------------------------------------------------------------

/// A rational function `num(s) / (scale · Π_k (s − poles[k]))` with the
/// denominator kept in factored form so pole structure stays explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalS {
    numerator: Vec<Complex64>,
    scale: Complex64,
    poles: Vec<Complex64>,
}

impl RationalS {
    /// The zero function.
    pub fn zero() -> Self {
        Self { numerator: vec![Complex64::ZERO], scale: Complex64::new(1.0, 0.0), poles: vec![] }
    }

    /// `constant / (scale · Π (s − poles))`.
    pub fn from_constant_over_poles(
        constant: Complex64,
        scale: Complex64,
        poles: Vec<Complex64>,
    ) -> Self {
        Self { numerator: vec![constant], scale, poles }
    }

    pub fn is_zero(&self) -> bool {
        self.numerator.iter().all(|c| c.norm() == 0.0)
    }

    /// Pole list (with multiplicity); empty for the zero function.
    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// Evaluates the function at `s` (must not sit on a pole).
    pub fn evaluate(&self, s: Complex64) -> Complex64 {
        let den = self.poles.iter().fold(self.scale, |acc, &p| acc * (s - p));
        poly_eval(&self.numerator, s) / den
    }

    /// Multiplies by the resolvent factor `1/(iħs − e)`, i.e. appends the
    /// pole `e/(iħ)` and folds `iħ` into the scale.
    pub fn divide_by_resolvent(&self, energy: f64) -> Self {
        let ih = Complex64::new(0.0, HBAR_EV_S);
        Self {
            numerator: self.numerator.clone(),
            scale: self.scale * ih,
            poles: {
                let mut p = self.poles.clone();
                p.push(Complex64::new(0.0, -energy / HBAR_EV_S));
                p
            },
        }
    }

    /// Scalar multiple.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            numerator: self.numerator.iter().map(|&c| c * factor).collect(),
            scale: self.scale,
            poles: self.poles.clone(),
        }
    }

    /// Sum over a common denominator. Poles within `tol` of each other are
    /// identified; the union keeps each pole at its maximal multiplicity.
    pub fn add(&self, other: &Self, tol: f64) -> Self {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        // Cluster the union of pole lists.
        let mut clusters: Vec<(Complex64, usize, usize)> = Vec::new(); // (rep, mult_a, mult_b)
        for &p in &self.poles {
            match clusters.iter_mut().find(|(rep, _, _)| (*rep - p).norm() <= tol) {
                Some(c) => c.1 += 1,
                None => clusters.push((p, 1, 0)),
            }
        }
        for &p in &other.poles {
            match clusters.iter_mut().find(|(rep, _, _)| (*rep - p).norm() <= tol) {
                Some(c) => c.2 += 1,
                None => clusters.push((p, 0, 1)),
            }
        }
        let mut poles = Vec::new();
        let mut missing_a = Vec::new(); // factors self lacks relative to the union
        let mut missing_b = Vec::new();
        for &(rep, ma, mb) in &clusters {
            let m = ma.max(mb);
            for _ in 0..m {
                poles.push(rep);
            }
            for _ in ma..m {
                missing_a.push(rep);
            }
            for _ in mb..m {
                missing_b.push(rep);
            }
        }
        // a/(sa·Pa) + b/(sb·Pb) = (a·sb·Qa + b·sa·Qb)/(sa·sb·P∪)
        let qa = poly_from_roots(&missing_a);
        let qb = poly_from_roots(&missing_b);
        let mut term_a = poly_mul(&self.numerator, &qa);
        let term_b = poly_mul(&other.numerator, &qb);
        for c in &mut term_a {
            *c *= other.scale;
        }
        let mut numerator = term_a;
        if numerator.len() < term_b.len() {
            numerator.resize(term_b.len(), Complex64::ZERO);
        }
        for (i, &c) in term_b.iter().enumerate() {
            numerator[i] += c * self.scale;
        }
        Self { numerator, scale: self.scale * other.scale, poles }
    }

    /// Inverse Laplace transform at time `t` by residues.
    ///
    /// Poles are clustered with tolerance `tol`; clusters of multiplicity 1
    /// and 2 are inverted exactly (simple residue, and
    /// `(g′(p) + t·g(p))·e^(pt)` for a double pole).
    pub fn inverse_laplace(&self, t: f64, tol: f64) -> Result<Complex64, LaplaceError> {
        if self.is_zero() {
            return Ok(Complex64::ZERO);
        }
        // Cluster poles.
        let mut clusters: Vec<(Complex64, usize)> = Vec::new();
        for &p in &self.poles {
            match clusters.iter_mut().find(|(rep, _)| (*rep - p).norm() <= tol) {
                Some(c) => c.1 += 1,
                None => clusters.push((p, 1)),
            }
        }
        let mut value = Complex64::ZERO;
        for (i, &(p, mult)) in clusters.iter().enumerate() {
            // g(s) = num(s)/(scale·Π_{other clusters}(s − q)^mult_q)
            let mut others = Vec::new();
            for (j, &(q, mq)) in clusters.iter().enumerate() {
                if j != i {
                    for _ in 0..mq {
                        others.push(q);
                    }
                }
            }
            let d = {
                let mut d = poly_from_roots(&others);
                for c in &mut d {
                    *c *= self.scale;
                }
                d
            };
            let exp = (p * t).exp();
            match mult {
                1 => {
                    value += poly_eval(&self.numerator, p) / poly_eval(&d, p) * exp;
                }
                2 => {
                    // g' = (num'·d − num·d')/d²
                    let num_p = poly_eval(&self.numerator, p);
                    let num_dp = poly_eval(&poly_derivative(&self.numerator), p);
                    let d_p = poly_eval(&d, p);
                    let d_dp = poly_eval(&poly_derivative(&d), p);
                    let g = num_p / d_p;
                    let g_prime = (num_dp * d_p - num_p * d_dp) / (d_p * d_p);
                    value += (g_prime + g * t) * exp;
                }
                m => return Err(LaplaceError::UnsupportedPoleMultiplicity { multiplicity: m }),
            }
        }
        Ok(value)
    }
}

// ------------------------------------------------------------------
// Hermitian eigen-decomposition (cyclic Jacobi with complex rotations).
// ------------------------------------------------------------------

fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    (m - m.adjoint()).norm()
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi sweeps.
///
/// Returns `(eigenvalues ascending, unitary whose columns are the matching
/// eigenvectors)`. Small dense problems only — exactly what the validation
/// oracle needs.
pub fn hermitian_eigen(h: &DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>), LaplaceError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(LaplaceError::DimensionMismatch { expected: n, got: h.ncols() });
    }
    if hermitian_defect(h) > 1e-12 * h.norm().max(1.0) {
        return Err(LaplaceError::NotHermitian);
    }
    let mut a = h.clone();
    let mut u = DMatrix::<Complex64>::identity(n, n);
    let scale = h.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[(p, q)].norm());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.norm() <= 1e-300 {
                    continue;
                }
                // Phase that makes the (p,q) entry real, then a real Jacobi
                // rotation that zeroes it.
                let phase = apq / apq.norm();
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * apq.norm());
                let tan = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + tan * tan).sqrt();
                let s = tan * c;
                // Column operations: G restricted to (p,q) is
                // [c, s; −s̄·e^{−iφ} ... ] — build explicitly.
                let g_pp = Complex64::new(c, 0.0);
                let g_pq = phase * s;
                let g_qp = -phase.conj() * s;
                let g_qq = Complex64::new(c, 0.0);
                // a ← G† a G; apply on the right (columns) then left (rows).
                for r in 0..n {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = arp * g_pp + arq * g_qp;
                    a[(r, q)] = arp * g_pq + arq * g_qq;
                }
                for col in 0..n {
                    let apc = a[(p, col)];
                    let aqc = a[(q, col)];
                    a[(p, col)] = g_pp.conj() * apc + g_qp.conj() * aqc;
                    a[(q, col)] = g_pq.conj() * apc + g_qq.conj() * aqc;
                }
                for r in 0..n {
                    let urp = u[(r, p)];
                    let urq = u[(r, q)];
                    u[(r, p)] = urp * g_pp + urq * g_qp;
                    u[(r, q)] = urp * g_pq + urq * g_qq;
                }
            }
        }
    }
    // Sort ascending by eigenvalue, permuting eigenvector columns alongside.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).expect("finite eigenvalues"));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        vectors.set_column(new_col, &u.column(old_col));
    }
    Ok((eigenvalues, vectors))
}

/// Exact propagation `ψ(t) = exp(−iHt/ħ)·ψ(0)` for Hermitian `H`, via the
/// Jacobi eigen-decomposition.
pub fn propagate_exact(
    h: &DMatrix<Complex64>,
    psi0: &DVector<Complex64>,
    t: f64,
) -> Result<DVector<Complex64>, LaplaceError> {
    let (energies, vectors) = hermitian_eigen(h)?;
    if psi0.len() != h.nrows() {
        return Err(LaplaceError::DimensionMismatch { expected: h.nrows(), got: psi0.len() });
    }
    let coeffs = vectors.adjoint() * psi0;
    let evolved = DVector::from_iterator(
        energies.len(),
        energies
            .iter()
            .zip(coeffs.iter())
            .map(|(&e, &c)| c * Complex64::from_polar(1.0, -e * t / HBAR_EV_S)),
    );
    Ok(&vectors * evolved)
}

// ------------------------------------------------------------------
// Eigen systems and perturbation problems.
// ------------------------------------------------------------------

/// Orthonormal eigenbasis of an unperturbed Hamiltonian with its energies.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    energies: Vec<f64>,
    /// Unitary whose columns are the eigenvectors, in energy order.
    vectors: DMatrix<Complex64>,
}

impl EigenSystem {
    /// Builds from explicit energies (non-decreasing) and eigenvector
    /// columns (orthonormal within 1e-12).
    pub fn new(energies: Vec<f64>, vectors: DMatrix<Complex64>) -> Result<Self, LaplaceError> {
        let n = energies.len();
        if n < 2 {
            return Err(LaplaceError::InvalidInput { reason: "need at least two levels" });
        }
        if vectors.nrows() != n || vectors.ncols() != n {
            return Err(LaplaceError::DimensionMismatch { expected: n, got: vectors.nrows() });
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(LaplaceError::InvalidInput { reason: "energies must be finite" });
        }
        if energies.windows(2).any(|w| w[1] < w[0]) {
            return Err(LaplaceError::EnergiesNotAscending);
        }
        let gram = vectors.adjoint() * &vectors;
        if (&gram - DMatrix::<Complex64>::identity(n, n)).norm() > 1e-12 * (n as f64) {
            return Err(LaplaceError::NotOrthonormal);
        }
        Ok(Self { energies, vectors })
    }

    /// Diagonalizes a Hermitian Hamiltonian.
    pub fn from_hamiltonian(h: &DMatrix<Complex64>) -> Result<Self, LaplaceError> {
        let (energies, vectors) = hermitian_eigen(h)?;
        Self::new(energies, vectors)
    }

    /// The standard basis with the given (non-decreasing) energies.
    pub fn diagonal(energies: Vec<f64>) -> Result<Self, LaplaceError> {
        let n = energies.len();
        Self::new(energies, DMatrix::identity(n, n))
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vector(&self, m: usize) -> DVector<Complex64> {
        self.vectors.column(m).into_owned()
    }

    /// Reconstructs `H⁰ = Σ_m E_m·|φ_m⟩⟨φ_m|`.
    pub fn hamiltonian(&self) -> DMatrix<Complex64> {
        let n = self.len();
        let lambda = DMatrix::from_fn(n, n, |i, j| {
            if i == j { Complex64::new(self.energies[i], 0.0) } else { Complex64::ZERO }
        });
        &self.vectors * lambda * self.vectors.adjoint()
    }
}

/// A perturbation problem: unperturbed spectrum, Hermitian perturbation,
/// strength λ, and the initially occupied level.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationProblem {
    eigen: EigenSystem,
    h_prime: DMatrix<Complex64>,
    /// `⟨φ_m|H′|φ_k⟩` in the eigenbasis.
    elements: DMatrix<Complex64>,
    lambda: f64,
    initial_level: usize,
}

impl PerturbationProblem {
    pub fn new(
        eigen: EigenSystem,
        h_prime: DMatrix<Complex64>,
        lambda: f64,
        initial_level: usize,
    ) -> Result<Self, LaplaceError> {
        let n = eigen.len();
        if h_prime.nrows() != n || h_prime.ncols() != n {
            return Err(LaplaceError::DimensionMismatch { expected: n, got: h_prime.nrows() });
        }
        if hermitian_defect(&h_prime) > 1e-12 * h_prime.norm().max(1.0) {
            return Err(LaplaceError::NotHermitian);
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(LaplaceError::InvalidInput { reason: "lambda must be finite and ≥ 0" });
        }
        if initial_level >= n {
            return Err(LaplaceError::InvalidLevel { level: initial_level, n });
        }
        let elements = eigen.vectors.adjoint() * &h_prime * &eigen.vectors;
        Ok(Self { eigen, h_prime, elements, lambda, initial_level })
    }

    pub fn eigen(&self) -> &EigenSystem {
        &self.eigen
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn initial_level(&self) -> usize {
        self.initial_level
    }

    /// `⟨φ_m|H′|φ_k⟩`.
    pub fn element(&self, m: usize, k: usize) -> Complex64 {
        self.elements[(m, k)]
    }

    /// Full Hamiltonian `H⁰ + λ·H′` at a given strength.
    pub fn full_hamiltonian(&self, lambda: f64) -> DMatrix<Complex64> {
        self.eigen.hamiltonian() + &self.h_prime * Complex64::new(lambda, 0.0)
    }

    /// Pole-comparison tolerance: 10⁻⁹ of the largest pole magnitude.
    pub fn pole_tolerance(&self) -> f64 {
        let max_e = self
            .eigen
            .energies
            .iter()
            .fold(0.0f64, |acc, &e| acc.max(e.abs()))
            .max(f64::MIN_POSITIVE);
        1e-9 * max_e / HBAR_EV_S
    }

    /// Fails when any other level's energy coincides with the initial
    /// level's (the first-order denominators `E₁ − E_m` vanish).
    fn check_nondegenerate(&self) -> Result<(), LaplaceError> {
        let e1 = self.eigen.energies[self.initial_level];
        let scale = self
            .eigen
            .energies
            .iter()
            .fold(1.0f64, |acc, &e| acc.max(e.abs()));
        for (m, &em) in self.eigen.energies.iter().enumerate() {
            if m != self.initial_level && (em - e1).abs() <= 1e-9 * scale {
                return Err(LaplaceError::DegenerateSpectrum {
                    level_a: self.initial_level,
                    level_b: m,
                });
            }
        }
        Ok(())
    }
}

/// Eigenbasis coefficients of one expansion order, as rational functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SDomainState {
    pub order: usize,
    pub coefficients: Vec<RationalS>,
}

/// Order-0 coefficients: `C_m⁽⁰⁾(s) = iħ·δ_{m,initial}/(iħs − E_m)`.
pub fn zeroth_order(problem: &PerturbationProblem) -> SDomainState {
    let ih = Complex64::new(0.0, HBAR_EV_S);
    let coefficients = (0..problem.eigen.len())
        .map(|m| {
            if m == problem.initial_level {
                RationalS::from_constant_over_poles(ih, Complex64::new(1.0, 0.0), vec![])
                    .divide_by_resolvent(problem.eigen.energies[m])
            } else {
                RationalS::zero()
            }
        })
        .collect();
    SDomainState { order: 0, coefficients }
}

/// Coefficients of an arbitrary order, built recursively from the hierarchy
/// `C_m⁽ⁿ⁾(s) = Σ_k ⟨φ_m|H′|φ_k⟩·C_k⁽ⁿ⁻¹⁾(s) / (iħs − E_m)`.
pub fn order_coefficients(problem: &PerturbationProblem, order: usize) -> SDomainState {
    let mut state = zeroth_order(problem);
    let tol = problem.pole_tolerance();
    for n in 1..=order {
        let coefficients = (0..problem.eigen.len())
            .map(|m| {
                let mut sum = RationalS::zero();
                for (k, prev) in state.coefficients.iter().enumerate() {
                    if prev.is_zero() {
                        continue;
                    }
                    sum = sum.add(&prev.scaled(problem.element(m, k)), tol);
                }
                sum.divide_by_resolvent(problem.eigen.energies[m])
            })
            .collect();
        state = SDomainState { order: n, coefficients };
    }
    state
}

/// First-order coefficients (the workhorse order).
pub fn first_order_coefficients(problem: &PerturbationProblem) -> SDomainState {
    order_coefficients(problem, 1)
}

/// Largest residual of the order-`n` hierarchy equation
/// `(iħs − E_m)·C_m⁽ⁿ⁾(s) − Σ_k ⟨φ_m|H′|φ_k⟩·C_k⁽ⁿ⁻¹⁾(s)` over the sample
/// points (which must avoid the poles). For `n = 0` the right-hand side is
/// the initial-condition source `iħ·δ_{m,initial}`.
pub fn hierarchy_residual(
    problem: &PerturbationProblem,
    order: usize,
    s_samples: &[Complex64],
) -> f64 {
    let ih = Complex64::new(0.0, HBAR_EV_S);
    let current = order_coefficients(problem, order);
    let previous = order.checked_sub(1).map(|n| order_coefficients(problem, n));
    let mut worst = 0.0f64;
    for &s in s_samples {
        for m in 0..problem.eigen.len() {
            let lhs = (ih * s - Complex64::new(problem.eigen.energies[m], 0.0))
                * current.coefficients[m].evaluate(s);
            let rhs = match &previous {
                Some(prev) => (0..problem.eigen.len())
                    .map(|k| problem.element(m, k) * prev.coefficients[k].evaluate(s))
                    .fold(Complex64::ZERO, |acc, v| acc + v),
                None => {
                    if m == problem.initial_level {
                        ih
                    } else {
                        Complex64::ZERO
                    }
                }
            };
            worst = worst.max((lhs - rhs).norm());
        }
    }
    worst
}

/// First-order time-domain state and its norm defect.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderState {
    /// Coefficients on the unperturbed eigenbasis (unnormalized).
    pub eigen_coefficients: DVector<Complex64>,
    /// The state in the original basis (unnormalized).
    pub state: DVector<Complex64>,
    /// `|‖ψ‖ − 1|`; O(λ²) by construction.
    pub norm_defect: f64,
}

/// Closed-form inverse transform of the first-order hierarchy:
///
/// ```text
/// ψ(t) = [1 − (iλt/ħ)·⟨φ₁|H′|φ₁⟩]·φ₁·e^(−iE₁t/ħ)
///        + λ·Σ_{m≠1} (⟨φ_m|H′|φ₁⟩/(E₁ − E_m))·(e^(−iE₁t/ħ) − e^(−iE_mt/ħ))·φ_m
/// ```
pub fn first_order_time_state(
    problem: &PerturbationProblem,
    t: f64,
) -> Result<FirstOrderState, LaplaceError> {
    problem.check_nondegenerate()?;
    let n = problem.eigen.len();
    let one = problem.initial_level;
    let e1 = problem.eigen.energies[one];
    let lambda = problem.lambda;
    let phase1 = Complex64::from_polar(1.0, -e1 * t / HBAR_EV_S);
    let mut coeffs = DVector::<Complex64>::zeros(n);
    let secular =
        Complex64::new(1.0, 0.0) - Complex64::new(0.0, lambda * t / HBAR_EV_S) * problem.element(one, one);
    coeffs[one] = secular * phase1;
    for m in 0..n {
        if m == one {
            continue;
        }
        let em = problem.eigen.energies[m];
        let phase_m = Complex64::from_polar(1.0, -em * t / HBAR_EV_S);
        coeffs[m] = problem.element(m, one) / Complex64::new(e1 - em, 0.0)
            * (phase1 - phase_m)
            * lambda;
    }
    let state = {
        let mut acc = DVector::<Complex64>::zeros(n);
        for m in 0..n {
            acc += problem.eigen.vector(m) * coeffs[m];
        }
        acc
    };
    let norm_defect = (state.norm() - 1.0).abs();
    Ok(FirstOrderState { eigen_coefficients: coeffs, state, norm_defect })
}

/// One λ-sweep entry of a validation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepEntry {
    pub lambda: f64,
    /// Max deviation ‖ψ_pert − ψ_exact‖ over the time grid.
    pub max_error: f64,
    /// Max norm defect of the truncated state over the grid.
    pub max_norm_defect: f64,
}

/// Result of validating the first-order state against exact propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub entries: Vec<SweepEntry>,
    /// Least-squares slope of ln(max_error) against ln(λ); 2 for a correct
    /// first-order truncation.
    pub fitted_exponent: f64,
}

/// Compares [`first_order_time_state`] against exact propagation of
/// `H⁰ + λH′` over `t_grid`, for λ ∈ {λ₀, λ₀/2, λ₀/4} (λ₀ from the
/// problem), and fits the error-versus-λ exponent.
pub fn validate_against_ode(
    problem: &PerturbationProblem,
    t_grid: &[f64],
) -> Result<ValidationReport, LaplaceError> {
    problem.check_nondegenerate()?;
    if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(LaplaceError::InvalidInput { reason: "time grid must be finite and non-empty" });
    }
    if !(problem.lambda > 0.0) {
        return Err(LaplaceError::InvalidInput { reason: "lambda sweep needs lambda > 0" });
    }
    let psi0 = problem.eigen.vector(problem.initial_level);
    let mut entries = Vec::new();
    for divisor in [1.0, 2.0, 4.0] {
        let lambda = problem.lambda / divisor;
        let sub = PerturbationProblem::new(
            problem.eigen.clone(),
            problem.h_prime.clone(),
            lambda,
            problem.initial_level,
        )?;
        let h_full = sub.full_hamiltonian(lambda);
        let mut max_error = 0.0f64;
        let mut max_norm_defect = 0.0f64;
        for &t in t_grid {
            let pert = first_order_time_state(&sub, t)?;
            let exact = propagate_exact(&h_full, &psi0, t)?;
            max_error = max_error.max((&pert.state - exact).norm());
            max_norm_defect = max_norm_defect.max(pert.norm_defect);
        }
        entries.push(SweepEntry { lambda, max_error, max_norm_defect });
    }
    // Least-squares slope of ln(err) on ln(λ).
    let points: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| e.max_error > 0.0)
        .map(|e| (e.lambda.ln(), e.max_error.ln()))
        .collect();
    let fitted_exponent = fit_slope(&points);
    Ok(ValidationReport { entries, fitted_exponent })
}

/// Least-squares slope of `y` against `x`.
fn fit_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let (sx, sy): (f64, f64) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(num, den), &(x, y)| {
        (num + (x - mx) * (y - my), den + (x - mx) * (x - mx))
    });
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Time for one radian of phase at 1 eV.
    const T1: f64 = HBAR_EV_S;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Two-level benchmark: E = (0, 1) eV, off-diagonal coupling 0.1 eV.
    fn two_level(lambda: f64) -> PerturbationProblem {
        let eigen = EigenSystem::diagonal(vec![0.0, 1.0]).unwrap();
        let h_prime = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.1, 0.0), c(0.1, 0.0), c(0.0, 0.0)]);
        PerturbationProblem::new(eigen, h_prime, lambda, 0).unwrap()
    }

    /// Three-level problem with a diagonal element on the initial level, so
    /// the secular term is exercised too.
    fn three_level(lambda: f64) -> PerturbationProblem {
        let eigen = EigenSystem::diagonal(vec![0.0, 0.8, 2.1]).unwrap();
        let h_prime = DMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.3, 0.0), c(0.2, 0.1), c(0.05, -0.02),
                c(0.2, -0.1), c(-0.1, 0.0), c(0.15, 0.0),
                c(0.05, 0.02), c(0.15, 0.0), c(0.4, 0.0),
            ],
        );
        PerturbationProblem::new(eigen, h_prime, lambda, 0).unwrap()
    }

    #[test]
    fn eigen_system_validation() {
        // Non-orthonormal columns.
        let bad = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(
            EigenSystem::new(vec![0.0, 1.0], bad).unwrap_err(),
            LaplaceError::NotOrthonormal
        );
        // Decreasing energies.
        assert_eq!(
            EigenSystem::diagonal(vec![1.0, 0.0]).unwrap_err(),
            LaplaceError::EnergiesNotAscending
        );
        // Non-Hermitian perturbation.
        let eigen = EigenSystem::diagonal(vec![0.0, 1.0]).unwrap();
        let skew = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.1, 0.0), c(-0.1, 0.0), c(0.0, 0.0)]);
        assert_eq!(
            PerturbationProblem::new(eigen, skew, 0.1, 0).unwrap_err(),
            LaplaceError::NotHermitian
        );
    }

    #[test]
    fn jacobi_eigen_reconstructs_hermitian_matrices() {
        let h = DMatrix::from_row_slice(
            3,
            3,
            &[
                c(1.0, 0.0), c(0.3, 0.4), c(-0.2, 0.1),
                c(0.3, -0.4), c(-0.5, 0.0), c(0.6, -0.3),
                c(-0.2, -0.1), c(0.6, 0.3), c(2.0, 0.0),
            ],
        );
        let (vals, vecs) = hermitian_eigen(&h).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let gram = vecs.adjoint() * &vecs;
        assert!((gram - DMatrix::<Complex64>::identity(3, 3)).norm() < 1e-12);
        let lambda = DMatrix::from_fn(3, 3, |i, j| if i == j { c(vals[i], 0.0) } else { c(0.0, 0.0) });
        let rebuilt = &vecs * lambda * vecs.adjoint();
        assert!((rebuilt - h).norm() < 1e-12, "reconstruction defect");
    }

    #[test]
    fn eigen_system_from_hamiltonian_satisfies_eigen_equation() {
        let h = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.4, -0.2), c(0.4, 0.2), c(-0.7, 0.0)]);
        let eigen = EigenSystem::from_hamiltonian(&h).unwrap();
        for m in 0..2 {
            let residual = &h * eigen.vector(m) - eigen.vector(m) * c(eigen.energies()[m], 0.0);
            assert!(residual.norm() < 1e-10);
        }
        assert!((eigen.hamiltonian() - h).norm() < 1e-10);
    }

    #[test]
    fn zeroth_order_populates_only_the_initial_level() {
        let problem = two_level(0.1);
        let state = zeroth_order(&problem);
        assert!(state.coefficients[1].is_zero());
        // C₁⁽⁰⁾(s) = iħ/(iħs − E₁) with E₁ = 0 here; evaluate against the
        // hand formula at an off-pole sample point.
        let s = c(0.7, 0.3) / HBAR_EV_S;
        let ih = c(0.0, HBAR_EV_S);
        let expected = ih / (ih * s - c(0.0, 0.0));
        assert!((state.coefficients[0].evaluate(s) - expected).norm() < 1e-12 * expected.norm());
        // Single pole at E₁/(iħ).
        assert_eq!(state.coefficients[0].poles().len(), 1);
        assert!((state.coefficients[0].poles()[0] - c(0.0, 0.0)).norm() <= problem.pole_tolerance());
    }

    #[test]
    fn zeroth_order_inverts_to_the_free_phase() {
        let eigen = EigenSystem::diagonal(vec![0.4, 1.3]).unwrap();
        let h_prime = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.1, 0.0), c(0.1, 0.0), c(0.0, 0.0)]);
        let problem = PerturbationProblem::new(eigen, h_prime, 0.1, 0).unwrap();
        let state = zeroth_order(&problem);
        let t = 2.7 * T1;
        let inverted = state.coefficients[0].inverse_laplace(t, problem.pole_tolerance()).unwrap();
        let expected = Complex64::from_polar(1.0, -0.4 * t / HBAR_EV_S);
        assert!((inverted - expected).norm() < 1e-12);
    }

    #[test]
    fn first_order_coefficients_match_the_resolvent_formula() {
        let problem = three_level(0.05);
        let first = first_order_coefficients(&problem);
        let ih = c(0.0, HBAR_EV_S);
        let e = problem.eigen().energies().to_vec();
        let s = c(0.9, -0.4) / HBAR_EV_S;
        for m in 1..3 {
            let expected =
                ih * problem.element(m, 0) / ((ih * s - c(e[m], 0.0)) * (ih * s - c(e[0], 0.0)));
            let got = first.coefficients[m].evaluate(s);
            assert!(
                (got - expected).norm() < 1e-10 * expected.norm(),
                "level {m}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn first_order_pole_structure_is_as_derived() {
        let problem = three_level(0.05);
        let tol = problem.pole_tolerance();
        let first = first_order_coefficients(&problem);
        let pole_of = |e: f64| c(0.0, -e / HBAR_EV_S);
        let e = problem.eigen().energies().to_vec();
        // m ≠ 1 (initial level index 0): simple poles at E_m/(iħ) and E₁/(iħ).
        for m in 1..3 {
            let poles = first.coefficients[m].poles();
            assert_eq!(poles.len(), 2, "level {m}");
            let mut found_m = false;
            let mut found_1 = false;
            for &p in poles {
                found_m |= (p - pole_of(e[m])).norm() <= tol;
                found_1 |= (p - pole_of(e[0])).norm() <= tol;
            }
            assert!(found_m && found_1, "level {m} poles {poles:?}");
        }
        // Initial level: double pole at E₁/(iħ) — the secular term.
        let poles = first.coefficients[0].poles();
        assert_eq!(poles.len(), 2);
        assert!(poles.iter().all(|&p| (p - pole_of(e[0])).norm() <= tol));
    }

    #[test]
    fn residue_inversion_agrees_with_the_closed_form_state() {
        // Dual route: invert the rational coefficients by residues and
        // compare against the analytic first-order formula.
        let problem = three_level(0.07);
        let first = first_order_coefficients(&problem);
        let tol = problem.pole_tolerance();
        let zero = zeroth_order(&problem);
        for k in 0..24 {
            let t = k as f64 * 0.5 * T1;
            let analytic = first_order_time_state(&problem, t).unwrap();
            for m in 0..3 {
                // ψ ≈ ψ⁽⁰⁾ + λψ⁽¹⁾ with both orders inverted numerically.
                let c0 = zero.coefficients[m].inverse_laplace(t, tol).unwrap();
                let c1 = first.coefficients[m].inverse_laplace(t, tol).unwrap();
                let numeric = c0 + c1 * c(problem.lambda(), 0.0);
                let defect = (numeric - analytic.eigen_coefficients[m]).norm();
                assert!(defect < 1e-12, "t={t:e} level {m}: defect {defect:e}");
            }
        }
    }

    #[test]
    fn hierarchy_residuals_vanish_through_second_order() {
        let problem = three_level(0.05);
        // Sample points well away from the (imaginary-axis) poles.
        let samples: Vec<Complex64> =
            [(0.9, 0.3), (0.2, -1.1), (1.7, 0.0)].iter().map(|&(a, b)| c(a, b) / HBAR_EV_S).collect();
        for order in 0..=2 {
            let residual = hierarchy_residual(&problem, order, &samples);
            assert!(residual < 1e-12, "order {order} residual {residual:e}");
        }
    }

    #[test]
    fn lambda_zero_reduces_to_free_evolution() {
        let problem = two_level(0.0);
        let h0 = problem.eigen().hamiltonian();
        let psi0 = problem.eigen().vector(0);
        for k in 0..10 {
            let t = k as f64 * T1;
            let pert = first_order_time_state(&problem, t).unwrap();
            let exact = propagate_exact(&h0, &psi0, t).unwrap();
            assert!((&pert.state - exact).norm() < 1e-12);
            assert!(pert.norm_defect < 1e-14);
        }
    }

    #[test]
    fn truncation_error_scales_as_lambda_squared() {
        let t_grid: Vec<f64> = (0..64).map(|k| k as f64 * 10.0 / 63.0 * T1).collect();
        for problem in [two_level(0.04), three_level(0.04)] {
            let report = validate_against_ode(&problem, &t_grid).unwrap();
            assert!(
                (report.fitted_exponent - 2.0).abs() < 0.2,
                "fitted exponent {}",
                report.fitted_exponent
            );
            // Errors shrink monotonically with λ.
            assert!(report.entries[0].max_error > report.entries[2].max_error);
        }
    }

    #[test]
    fn norm_defect_is_second_order_in_lambda() {
        let t = 5.0 * T1;
        let defects: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&l| first_order_time_state(&three_level(l), t).unwrap().norm_defect)
            .collect();
        let slope = fit_slope(&[
            (0.04f64.ln(), defects[0].ln()),
            (0.02f64.ln(), defects[1].ln()),
            (0.01f64.ln(), defects[2].ln()),
        ]);
        assert!(slope >= 1.8, "norm defect exponent {slope}");
    }

    #[test]
    fn degenerate_spectrum_is_rejected() {
        let eigen = EigenSystem::diagonal(vec![1.0, 1.0]).unwrap();
        let h_prime = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.1, 0.0), c(0.1, 0.0), c(0.0, 0.0)]);
        let problem = PerturbationProblem::new(eigen, h_prime, 0.1, 0).unwrap();
        assert!(matches!(
            first_order_time_state(&problem, T1).unwrap_err(),
            LaplaceError::DegenerateSpectrum { .. }
        ));
        assert!(matches!(
            validate_against_ode(&problem, &[T1]).unwrap_err(),
            LaplaceError::DegenerateSpectrum { .. }
        ));
    }

    #[test]
    fn rational_addition_merges_pole_multisets() {
        // 1/(s−1) + 1/(s−2) = (2s−3)/((s−1)(s−2)), and adding 1/(s−1) again
        // keeps the pole list at multiplicity one per root.
        let one = c(1.0, 0.0);
        let a = RationalS::from_constant_over_poles(one, one, vec![c(1.0, 0.0)]);
        let b = RationalS::from_constant_over_poles(one, one, vec![c(2.0, 0.0)]);
        let sum = a.add(&b, 1e-9);
        assert_eq!(sum.poles().len(), 2);
        let s = c(0.3, 0.7);
        let expected = one / (s - c(1.0, 0.0)) + one / (s - c(2.0, 0.0));
        assert!((sum.evaluate(s) - expected).norm() < 1e-14);
        let sum2 = sum.add(&a, 1e-9);
        assert_eq!(sum2.poles().len(), 2);
        let expected2 = expected + one / (s - c(1.0, 0.0));
        assert!((sum2.evaluate(s) - expected2).norm() < 1e-14);
    }

    #[test]
    fn double_pole_inversion_matches_t_exponential() {
        // L⁻¹[1/(s−a)²] = t·e^(at).
        let a = c(-0.4, 1.3);
        let f = RationalS::from_constant_over_poles(c(1.0, 0.0), c(1.0, 0.0), vec![a, a]);
        for &t in &[0.0, 0.5, 2.0] {
            let got = f.inverse_laplace(t, 1e-12).unwrap();
            let expected = (a * t).exp() * t;
            assert!((got - expected).norm() < 1e-12);
        }
    }
}
