//! Six-degree-of-freedom rigid-body dynamics.
//!
//! Body-frame translational and rotational dynamics for a single platform:
//!
//! ```text
//! v̇_B = (1/m)·F_B + H_I^B·g_I − ω̃_B·v_B
//! ω̇_B = I_B⁻¹·(M_B − ω̃_B·I_B·ω_B)
//! ```
//!
//! together with the kinematic couplings `ṙ_I = H_B^I·v_B` and
//! `Θ̇ = L_B^I·ω_B`. Forces and moments are supplied in the body frame and
//! split into drag and propulsion contributions; gravity is given in the
//! inertial frame and rotated in by the attitude matrix.
//!
//! # Attitude convention
//!
//! Attitude is a z-y-x (yaw `θ_z`, then pitch `θ_y`, then roll `θ_x`)
//! passive Euler sequence. The inertial-to-body direction cosine matrix is
//! the product of the three single-axis passive rotations
//!
//! ```text
//! H_I^B = H_x(θ_x) · H_y(θ_y) · H_z(θ_z)
//!
//!          [1   0       0    ]        [cos θ_y  0  −sin θ_y]        [ cos θ_z  sin θ_z  0]
//! H_x(θ) = [0   cos θ   sin θ],  H_y = [0        1   0      ],  H_z = [−sin θ_z  cos θ_z  0]
//!          [0  −sin θ   cos θ]        [sin θ_y  0   cos θ_y]        [ 0        0        1]
//! ```
//!
//! and body rates relate to Euler-angle rates through
//!
//! ```text
//!       [1   0        −sin θ_y       ]
//! L_I^B=[0   cos θ_x   sin θ_x cos θ_y]   (ω_B = L_I^B · Θ̇).
//!       [0  −sin θ_x   cos θ_x cos θ_y]
//! ```
//!
//! The inverse mapping is singular at pitch ±90°; a guard band of 10⁻⁶ rad
//! around the singularity raises [`DynamicsError::GimbalLock`] instead of
//! returning garbage.
//!
//! Integration is fixed-step classical Runge–Kutta (RK4) on the stacked
//! 12-dimensional state. For a torque-free tumble this conserves rotational
//! kinetic energy and the inertial angular-momentum vector to well below
//! 10⁻⁶ relative drift over 10⁴ steps at `dt = 10⁻³ s`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Half-width of the guard band around pitch ±90° (radians).
pub const GIMBAL_GUARD_RAD: f64 = 1e-6;

/// Errors from dynamics evaluation and integration.
#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    /// Pitch angle is within the guard band of the Euler-rate singularity.
    #[error("pitch {pitch_rad} rad is within {GIMBAL_GUARD_RAD} rad of the ±π/2 singularity")]
    GimbalLock { pitch_rad: f64 },
    /// A state, input, or derived quantity is NaN or infinite.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    /// Mass schedule produced a non-positive or non-finite mass.
    #[error("mass must be positive and finite, got {mass}")]
    NonPositiveMass { mass: f64 },
    /// Inertia matrix is not symmetric positive definite.
    #[error("inertia matrix is not symmetric positive definite")]
    SingularInertia,
    /// A schedule or integration interval was empty or non-increasing.
    #[error("invalid time grid: {reason}")]
    InvalidTimeGrid { reason: &'static str },
}

/// Z-y-x Euler attitude angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    /// Roll about the body x-axis.
    pub theta_x: f64,
    /// Pitch about the intermediate y-axis.
    pub theta_y: f64,
    /// Yaw about the inertial z-axis.
    pub theta_z: f64,
}

impl EulerAngles {
    pub fn new(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        Self { theta_x, theta_y, theta_z }
    }

    fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.theta_x, self.theta_y, self.theta_z)
    }

    fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Full kinematic + dynamic state of one platform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    /// Position of the body origin in the inertial frame (m).
    pub position_inertial: Vector3<f64>,
    /// Attitude of the body relative to the inertial frame.
    pub angles: EulerAngles,
    /// Translational velocity in body axes (m/s).
    pub velocity_body: Vector3<f64>,
    /// Angular velocity in body axes (rad/s).
    pub omega_body: Vector3<f64>,
}

impl BodyState {
    /// State at the inertial origin, level attitude, at rest.
    pub fn at_rest() -> Self {
        Self {
            position_inertial: Vector3::zeros(),
            angles: EulerAngles::default(),
            velocity_body: Vector3::zeros(),
            omega_body: Vector3::zeros(),
        }
    }

    fn is_finite(&self) -> bool {
        self.position_inertial.iter().all(|x| x.is_finite())
            && self.angles.as_vector().iter().all(|x| x.is_finite())
            && self.velocity_body.iter().all(|x| x.is_finite())
            && self.omega_body.iter().all(|x| x.is_finite())
    }
}

/// Body-frame force and moment inputs, split into drag and propulsion parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force_drag: Vector3<f64>,
    pub force_propulsion: Vector3<f64>,
    pub moment_drag: Vector3<f64>,
    pub moment_propulsion: Vector3<f64>,
}

impl Wrench {
    /// A wrench with only a propulsion force.
    pub fn from_force(force: Vector3<f64>) -> Self {
        Self { force_propulsion: force, ..Self::default() }
    }

    /// Total body-frame force `F_B` (drag + propulsion).
    pub fn total_force(&self) -> Vector3<f64> {
        self.force_drag + self.force_propulsion
    }

    /// Total body-frame moment `M_B` (drag + propulsion).
    pub fn total_moment(&self) -> Vector3<f64> {
        self.moment_drag + self.moment_propulsion
    }

    fn is_finite(&self) -> bool {
        self.total_force().iter().all(|x| x.is_finite())
            && self.total_moment().iter().all(|x| x.is_finite())
    }
}

/// Validated symmetric positive-definite inertia matrix (kg·m²).
#[derive(Debug, Clone, PartialEq)]
pub struct Inertia {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl Inertia {
    /// Validates symmetry (to 10⁻⁹ relative) and positive definiteness.
    pub fn new(matrix: Matrix3<f64>) -> Result<Self, DynamicsError> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite { context: "inertia matrix" });
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if (matrix - matrix.transpose()).amax() > 1e-9 * scale {
            return Err(DynamicsError::SingularInertia);
        }
        // Cholesky succeeds exactly for symmetric positive-definite input.
        if matrix.cholesky().is_none() {
            return Err(DynamicsError::SingularInertia);
        }
        let inverse = matrix.try_inverse().ok_or(DynamicsError::SingularInertia)?;
        Ok(Self { matrix, inverse })
    }

    /// Principal-axis inertia `diag(ixx, iyy, izz)`.
    pub fn principal(ixx: f64, iyy: f64, izz: f64) -> Result<Self, DynamicsError> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(ixx, iyy, izz)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }
}

/// Piecewise-linear mass-versus-time schedule (kg).
///
/// Outside the tabulated span the nearest endpoint value holds, so a
/// constant schedule is a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct MassSchedule {
    points: Vec<(f64, f64)>,
}

impl MassSchedule {
    /// Constant mass for all time.
    pub fn constant(mass: f64) -> Result<Self, DynamicsError> {
        Self::piecewise_linear(vec![(0.0, mass)])
    }

    /// Piecewise-linear schedule through `(time, mass)` knots.
    pub fn piecewise_linear(points: Vec<(f64, f64)>) -> Result<Self, DynamicsError> {
        if points.is_empty() {
            return Err(DynamicsError::InvalidTimeGrid { reason: "empty mass schedule" });
        }
        for window in points.windows(2) {
            if !(window[1].0 > window[0].0) {
                return Err(DynamicsError::InvalidTimeGrid {
                    reason: "mass schedule times must strictly increase",
                });
            }
        }
        for &(t, m) in &points {
            if !t.is_finite() {
                return Err(DynamicsError::NonFinite { context: "mass schedule time" });
            }
            if !(m > 0.0) || !m.is_finite() {
                return Err(DynamicsError::NonPositiveMass { mass: m });
            }
        }
        Ok(Self { points })
    }

    /// Mass at time `t`, clamped to the schedule's span.
    pub fn mass_at(&self, t: f64) -> f64 {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        for window in self.points.windows(2) {
            let ((t0, m0), (t1, m1)) = (window[0], window[1]);
            if t <= t1 {
                return m0 + (m1 - m0) * (t - t0) / (t1 - t0);
            }
        }
        last.1
    }
}

/// Mass, inertia, and gravity description of one platform.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformParams {
    pub mass: MassSchedule,
    pub inertia: Inertia,
    /// Gravitational acceleration in the inertial frame (m/s²).
    pub gravity_inertial: Vector3<f64>,
}

impl PlatformParams {
    /// Constant mass, principal inertia, no gravity — the workhorse for
    /// formation scenarios.
    pub fn simple(mass: f64, ixx: f64, iyy: f64, izz: f64) -> Result<Self, DynamicsError> {
        Ok(Self {
            mass: MassSchedule::constant(mass)?,
            inertia: Inertia::principal(ixx, iyy, izz)?,
            gravity_inertial: Vector3::zeros(),
        })
    }
}

/// Skew-symmetric cross-product matrix `ω̃` with `ω̃·v = ω × v`.
pub fn skew(v: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Passive rotation about x by `theta`.
pub fn rot_x(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

/// Passive rotation about y by `theta`.
pub fn rot_y(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Passive rotation about z by `theta`.
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Inertial-to-body direction cosine matrix `H_I^B` for the z-y-x sequence.
pub fn rotation_inertial_to_body(angles: &EulerAngles) -> Matrix3<f64> {
    rot_x(angles.theta_x) * rot_y(angles.theta_y) * rot_z(angles.theta_z)
}

/// Euler-rate-to-body-rate matrix `L_I^B` (`ω_B = L_I^B · Θ̇`).
pub fn euler_rate_matrix(angles: &EulerAngles) -> Matrix3<f64> {
    let (sx, cx) = angles.theta_x.sin_cos();
    let (sy, cy) = angles.theta_y.sin_cos();
    Matrix3::new(
        1.0, 0.0, -sy, //
        0.0, cx, sx * cy, //
        0.0, -sx, cx * cy,
    )
}

/// Body rates from Euler-angle rates: `ω_B = L_I^B · Θ̇`.
pub fn body_rates_from_euler_rates(angles: &EulerAngles, euler_rates: Vector3<f64>) -> Vector3<f64> {
    euler_rate_matrix(angles) * euler_rates
}

/// Euler-angle rates from body rates: `Θ̇ = (L_I^B)⁻¹ · ω_B`.
///
/// Uses the closed-form inverse
///
/// ```text
/// θ̇_x = p + (q·sin θ_x + r·cos θ_x)·tan θ_y
/// θ̇_y = q·cos θ_x − r·sin θ_x
/// θ̇_z = (q·sin θ_x + r·cos θ_x)/cos θ_y
/// ```
///
/// and fails with [`DynamicsError::GimbalLock`] inside the ±90° pitch guard
/// band where `cos θ_y` vanishes.
pub fn euler_rates_from_body_rates(
    angles: &EulerAngles,
    omega_body: Vector3<f64>,
) -> Result<Vector3<f64>, DynamicsError> {
    let (sx, cx) = angles.theta_x.sin_cos();
    let cy = angles.theta_y.cos();
    if cy.abs() <= GIMBAL_GUARD_RAD.sin().max(f64::MIN_POSITIVE) {
        return Err(DynamicsError::GimbalLock { pitch_rad: angles.theta_y });
    }
    let (p, q, r) = (omega_body.x, omega_body.y, omega_body.z);
    let lateral = q * sx + r * cx;
    let tan_y = angles.theta_y.tan();
    Ok(Vector3::new(p + lateral * tan_y, q * cx - r * sx, lateral / cy))
}

/// Body-frame translational acceleration
/// `v̇_B = (1/m)·F_B + H_I^B·g_I − ω̃_B·v_B`.
pub fn translational_accel(
    state: &BodyState,
    wrench: &Wrench,
    mass: f64,
    gravity_inertial: Vector3<f64>,
) -> Result<Vector3<f64>, DynamicsError> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(DynamicsError::NonPositiveMass { mass });
    }
    let h_ib = rotation_inertial_to_body(&state.angles);
    Ok(wrench.total_force() / mass + h_ib * gravity_inertial
        - skew(state.omega_body) * state.velocity_body)
}

/// Body-frame angular acceleration `ω̇_B = I⁻¹·(M_B − ω̃_B·I·ω_B)`.
pub fn angular_accel(state: &BodyState, wrench: &Wrench, inertia: &Inertia) -> Vector3<f64> {
    let h = inertia.matrix() * state.omega_body;
    inertia.inverse() * (wrench.total_moment() - skew(state.omega_body) * h)
}

/// Time derivative of the full state under the given wrench.
fn state_derivative(
    t: f64,
    state: &BodyState,
    wrench: &Wrench,
    params: &PlatformParams,
) -> Result<BodyState, DynamicsError> {
    let mass = params.mass.mass_at(t);
    let h_ib = rotation_inertial_to_body(&state.angles);
    let position_dot = h_ib.transpose() * state.velocity_body;
    let angles_dot = euler_rates_from_body_rates(&state.angles, state.omega_body)?;
    let velocity_dot = translational_accel(state, wrench, mass, params.gravity_inertial)?;
    let omega_dot = angular_accel(state, wrench, &params.inertia);
    Ok(BodyState {
        position_inertial: position_dot,
        angles: EulerAngles::from_vector(angles_dot),
        velocity_body: velocity_dot,
        omega_body: omega_dot,
    })
}

fn state_axpy(state: &BodyState, scale: f64, delta: &BodyState) -> BodyState {
    BodyState {
        position_inertial: state.position_inertial + scale * delta.position_inertial,
        angles: EulerAngles::from_vector(
            state.angles.as_vector() + scale * delta.angles.as_vector(),
        ),
        velocity_body: state.velocity_body + scale * delta.velocity_body,
        omega_body: state.omega_body + scale * delta.omega_body,
    }
}

/// Advances the state one RK4 step of length `dt` starting at time `t`,
/// holding the wrench constant across the step.
pub fn step(
    state: &BodyState,
    wrench: &Wrench,
    params: &PlatformParams,
    t: f64,
    dt: f64,
) -> Result<BodyState, DynamicsError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::InvalidTimeGrid { reason: "dt must be positive and finite" });
    }
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite { context: "state" });
    }
    if !wrench.is_finite() {
        return Err(DynamicsError::NonFinite { context: "wrench" });
    }
    let k1 = state_derivative(t, state, wrench, params)?;
    let k2 = state_derivative(t + dt / 2.0, &state_axpy(state, dt / 2.0, &k1), wrench, params)?;
    let k3 = state_derivative(t + dt / 2.0, &state_axpy(state, dt / 2.0, &k2), wrench, params)?;
    let k4 = state_derivative(t + dt, &state_axpy(state, dt, &k3), wrench, params)?;
    let mut next = state_axpy(state, dt / 6.0, &k1);
    next = state_axpy(&next, dt / 3.0, &k2);
    next = state_axpy(&next, dt / 3.0, &k3);
    next = state_axpy(&next, dt / 6.0, &k4);
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite { context: "integrated state" });
    }
    Ok(next)
}

/// Rotational kinetic energy `½·ω_B·I·ω_B` (J).
pub fn rotational_energy(state: &BodyState, inertia: &Inertia) -> f64 {
    0.5 * state.omega_body.dot(&(inertia.matrix() * state.omega_body))
}

/// Angular momentum resolved in the inertial frame, `H_B^I · (I·ω_B)`.
pub fn angular_momentum_inertial(state: &BodyState, inertia: &Inertia) -> Vector3<f64> {
    rotation_inertial_to_body(&state.angles).transpose() * (inertia.matrix() * state.omega_body)
}
