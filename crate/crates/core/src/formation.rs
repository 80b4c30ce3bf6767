//! Leader/follower formation control.
//!
//! A network of `n` follower platforms plus a reference (index 0) is
//! described by a binary adjacency matrix and per-follower formation
//! offsets `d_i` (the desired displacement from the reference). Each
//! follower applies a PID law to the sum of its pairwise formation errors:
//!
//! ```text
//! F_i = −Σ_j a_ij · [ k_p·e_ij + k_i·∫e_ij dt + k_d·ė_ij ]
//! e_ij = (r_i − r_j) − (d_i − d_j),        d_0 = 0
//! ```
//!
//! The control objective is the limit condition `‖(r_i − r_ref) − d_i‖ → 0`
//! for every follower. Subtracting `d_i − d_j` (rather than `d_i` alone)
//! makes every pairwise term vanish at the target geometry, so any connected
//! network admits the formation as an equilibrium; the raw-offset variant is
//! still available as [`OffsetConvention::AbsoluteFromReference`] for
//! consumers that expect the literal `(r_i − r_j) − d_i` error.
//!
//! Because the law only ever sees differences of positions and of
//! velocities, it is translation-invariant: displacing the whole fleet and
//! the reference by a common vector leaves every force unchanged.
//!
//! The integral term accumulates the summed pairwise error (gains are
//! linear, so per-pair integration and post-sum integration coincide) and is
//! clamped per axis to an optional limit for anti-windup; total force can be
//! saturated per axis as well.

use crate::rigid_body::{self, BodyState, DynamicsError, PlatformParams, Wrench};
use nalgebra::Vector3;
use thiserror::Error;

/// Errors from network construction and formation simulation.
#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    /// Adjacency/offset dimensions are inconsistent with the agent count.
    #[error("expected {expected} {what}, got {got}")]
    SizeMismatch { what: &'static str, expected: usize, got: usize },
    /// An adjacency entry was something other than 0 or 1.
    #[error("adjacency entries must be 0 or 1, found {value} at ({row}, {col})")]
    NonBinaryAdjacency { row: usize, col: usize, value: u8 },
    /// The communication graph over reference + followers is not connected.
    #[error("agent network graph is not connected")]
    DisconnectedGraph,
    /// A gain, limit, or config scalar is invalid.
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: &'static str },
    /// The underlying rigid-body step failed.
    #[error("dynamics error during formation step: {0}")]
    Dynamics(#[from] DynamicsError),
}

/// PID gains applied per axis to the summed pairwise error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    /// Proportional-derivative gains with no integral action.
    pub fn pd(kp: f64, kd: f64) -> Self {
        Self { kp, ki: 0.0, kd }
    }
}

/// Optional per-axis saturation limits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlLimits {
    /// Anti-windup clamp on each axis of the accumulated error integral.
    pub integrator_limit: Option<f64>,
    /// Saturation on each axis of the commanded force.
    pub force_limit: Option<f64>,
}

/// Which displacement the pairwise error subtracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetConvention {
    /// `e_ij = (r_i − r_j) − (d_i − d_j)` — consistent for any pair.
    #[default]
    RelativeTemplate,
    /// `e_ij = (r_i − r_j) − d_i` — offset interpreted as if every
    /// neighbor sat at the reference.
    AbsoluteFromReference,
}

/// Validated agent network: adjacency, offsets, gains, limits.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNetwork {
    n_followers: usize,
    adjacency: Vec<Vec<u8>>,
    offsets: Vec<Vector3<f64>>,
    gains: PidGains,
    limits: ControlLimits,
    convention: OffsetConvention,
}

impl AgentNetwork {
    /// Builds and validates a network.
    ///
    /// `adjacency` is `(n+1)×(n+1)` over node indices `0..=n` with node 0
    /// the reference; entries must be 0 or 1 and the diagonal is forced to
    /// zero (an agent never pairs with itself). `offsets` holds the desired
    /// reference-relative displacement of each follower `1..=n`. The graph
    /// (edges read as undirected) must connect all nodes.
    pub fn new(
        n_followers: usize,
        adjacency: Vec<Vec<u8>>,
        offsets: Vec<Vector3<f64>>,
        gains: PidGains,
        limits: ControlLimits,
        convention: OffsetConvention,
    ) -> Result<Self, NetworkError> {
        let n_nodes = n_followers + 1;
        if adjacency.len() != n_nodes {
            return Err(NetworkError::SizeMismatch {
                what: "adjacency rows",
                expected: n_nodes,
                got: adjacency.len(),
            });
        }
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n_nodes {
                return Err(NetworkError::SizeMismatch {
                    what: "adjacency columns",
                    expected: n_nodes,
                    got: row.len(),
                });
            }
            for (j, &a) in row.iter().enumerate() {
                if a > 1 {
                    return Err(NetworkError::NonBinaryAdjacency { row: i, col: j, value: a });
                }
            }
        }
        if offsets.len() != n_followers {
            return Err(NetworkError::SizeMismatch {
                what: "offsets",
                expected: n_followers,
                got: offsets.len(),
            });
        }
        for g in [gains.kp, gains.ki, gains.kd] {
            if !g.is_finite() || g < 0.0 {
                return Err(NetworkError::InvalidParameter {
                    reason: "gains must be finite and non-negative",
                });
            }
        }
        let mut adjacency = adjacency;
        for (i, row) in adjacency.iter_mut().enumerate() {
            row[i] = 0;
        }
        let network = Self { n_followers, adjacency, offsets, gains, limits, convention };
        if !network.is_connected() {
            return Err(NetworkError::DisconnectedGraph);
        }
        Ok(network)
    }

    /// A standard topology: every follower linked to the reference and to
    /// its ring neighbors.
    pub fn ring_with_leader(
        offsets: Vec<Vector3<f64>>,
        gains: PidGains,
    ) -> Result<Self, NetworkError> {
        let n = offsets.len();
        let n_nodes = n + 1;
        let mut adjacency = vec![vec![0u8; n_nodes]; n_nodes];
        for i in 1..=n {
            adjacency[i][0] = 1;
            adjacency[0][i] = 1;
            if n > 1 {
                let next = if i == n { 1 } else { i + 1 };
                adjacency[i][next] = 1;
                adjacency[next][i] = 1;
            }
        }
        Self::new(n, adjacency, offsets, gains, ControlLimits::default(), OffsetConvention::default())
    }

    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn offsets(&self) -> &[Vector3<f64>] {
        &self.offsets
    }

    pub fn gains(&self) -> PidGains {
        self.gains
    }

    /// Desired displacement of node `i` (0 = reference ⇒ zero).
    fn offset_of(&self, node: usize) -> Vector3<f64> {
        if node == 0 {
            Vector3::zeros()
        } else {
            self.offsets[node - 1]
        }
    }

    fn is_connected(&self) -> bool {
        let n_nodes = self.n_followers + 1;
        let mut seen = vec![false; n_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n_nodes {
                if !seen[j] && (self.adjacency[i][j] == 1 || self.adjacency[j][i] == 1) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Running integral of each follower's summed pairwise error.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorState {
    accumulated: Vec<Vector3<f64>>,
}

impl IntegratorState {
    pub fn zeroed(n_followers: usize) -> Self {
        Self { accumulated: vec![Vector3::zeros(); n_followers] }
    }

    pub fn accumulated(&self) -> &[Vector3<f64>] {
        &self.accumulated
    }
}

fn clamp_per_axis(v: Vector3<f64>, limit: Option<f64>) -> Vector3<f64> {
    match limit {
        Some(l) => v.map(|x| x.clamp(-l, l)),
        None => v,
    }
}

/// Per-follower deviation from the target geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationDeviation {
    /// `(r_i − r_ref) − d_i` for each follower.
    pub per_agent: Vec<Vector3<f64>>,
    /// Euclidean norm of the stacked deviation vector.
    pub norm: f64,
}

/// Measures how far each follower sits from its assigned slot.
pub fn formation_error(
    positions: &[Vector3<f64>],
    reference: Vector3<f64>,
    offsets: &[Vector3<f64>],
) -> FormationDeviation {
    let per_agent: Vec<Vector3<f64>> = positions
        .iter()
        .zip(offsets)
        .map(|(r, d)| (r - reference) - d)
        .collect();
    let norm = per_agent.iter().map(|e| e.norm_squared()).sum::<f64>().sqrt();
    FormationDeviation { per_agent, norm }
}

/// Evaluates the pairwise PID law for every follower.
///
/// `positions` and `velocities` are indexed by node (0 = reference,
/// `1..=n` = followers). The integrator accumulates `Σ_j a_ij·e_ij · dt`
/// per follower before clamping, so calling this once per control step with
/// the step length keeps the integral consistent.
pub fn control_forces(
    network: &AgentNetwork,
    positions: &[Vector3<f64>],
    velocities: &[Vector3<f64>],
    integrator: &mut IntegratorState,
    dt: f64,
) -> Result<Vec<Vector3<f64>>, NetworkError> {
    let n_nodes = network.n_followers + 1;
    if positions.len() != n_nodes {
        return Err(NetworkError::SizeMismatch {
            what: "positions",
            expected: n_nodes,
            got: positions.len(),
        });
    }
    if velocities.len() != n_nodes {
        return Err(NetworkError::SizeMismatch {
            what: "velocities",
            expected: n_nodes,
            got: velocities.len(),
        });
    }
    if integrator.accumulated.len() != network.n_followers {
        return Err(NetworkError::SizeMismatch {
            what: "integrator entries",
            expected: network.n_followers,
            got: integrator.accumulated.len(),
        });
    }
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(NetworkError::InvalidParameter { reason: "dt must be non-negative and finite" });
    }
    let g = network.gains();
    let mut forces = Vec::with_capacity(network.n_followers);
    for i in 1..n_nodes {
        let mut error_sum = Vector3::zeros();
        let mut error_rate_sum = Vector3::zeros();
        for j in 0..n_nodes {
            if network.adjacency[i][j] == 0 {
                continue;
            }
            let separation = match network.convention {
                OffsetConvention::RelativeTemplate => network.offset_of(i) - network.offset_of(j),
                OffsetConvention::AbsoluteFromReference => network.offset_of(i),
            };
            error_sum += (positions[i] - positions[j]) - separation;
            error_rate_sum += velocities[i] - velocities[j];
        }
        let accum = &mut integrator.accumulated[i - 1];
        *accum = clamp_per_axis(*accum + error_sum * dt, network.limits.integrator_limit);
        let force =
            -(g.kp * error_sum + g.ki * *accum + g.kd * error_rate_sum);
        forces.push(clamp_per_axis(force, network.limits.force_limit));
    }
    Ok(forces)
}

/// Reference motion for a formation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceMotion {
    /// Fixed reference point.
    Static(Vector3<f64>),
    /// Constant-velocity reference.
    Linear { start: Vector3<f64>, velocity: Vector3<f64> },
}

impl ReferenceMotion {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        match *self {
            ReferenceMotion::Static(p) => p,
            ReferenceMotion::Linear { start, velocity } => start + velocity * t,
        }
    }

    pub fn velocity_at(&self, _t: f64) -> Vector3<f64> {
        match *self {
            ReferenceMotion::Static(_) => Vector3::zeros(),
            ReferenceMotion::Linear { velocity, .. } => velocity,
        }
    }
}

/// Parameters for a closed-loop formation run.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSimConfig {
    pub duration: f64,
    pub dt: f64,
    /// Error norm below which the final state counts as converged.
    pub convergence_tol: f64,
    /// Uniform follower mass (kg).
    pub mass: f64,
    /// Linear drag coefficient: drag force = −c·v (kg/s).
    pub linear_drag: f64,
    pub reference: ReferenceMotion,
}

impl Default for FormationSimConfig {
    fn default() -> Self {
        Self {
            duration: 30.0,
            dt: 0.01,
            convergence_tol: 1e-3,
            mass: 1.0,
            linear_drag: 0.0,
            reference: ReferenceMotion::Static(Vector3::zeros()),
        }
    }
}

/// One recorded step of a formation run.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSample {
    pub t: f64,
    /// Reference position followed by follower positions.
    pub positions: Vec<Vector3<f64>>,
    pub error_norm: f64,
}

/// Trajectory log of a formation run.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationTrajectory {
    pub samples: Vec<FormationSample>,
    pub converged: bool,
    pub final_error: f64,
}

/// Runs the closed loop: pairwise PID forces driving point-platform
/// rigid-body dynamics (level attitude, no applied moments).
pub fn simulate_formation(
    network: &AgentNetwork,
    initial_positions: &[Vector3<f64>],
    config: &FormationSimConfig,
) -> Result<FormationTrajectory, NetworkError> {
    let n = network.n_followers;
    if initial_positions.len() != n {
        return Err(NetworkError::SizeMismatch {
            what: "initial positions",
            expected: n,
            got: initial_positions.len(),
        });
    }
    if !(config.dt > 0.0) || !(config.duration >= config.dt) || !(config.mass > 0.0) {
        return Err(NetworkError::InvalidParameter {
            reason: "duration, dt, and mass must be positive with duration ≥ dt",
        });
    }
    let params = PlatformParams::simple(config.mass, 1.0, 1.0, 1.0)?;
    let mut bodies: Vec<BodyState> = initial_positions
        .iter()
        .map(|&p| BodyState { position_inertial: p, ..BodyState::at_rest() })
        .collect();
    let mut integrator = IntegratorState::zeroed(n);
    let steps = (config.duration / config.dt).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);

    let record = |t: f64, bodies: &[BodyState], samples: &mut Vec<FormationSample>| {
        let reference = config.reference.position_at(t);
        let follower_positions: Vec<Vector3<f64>> =
            bodies.iter().map(|b| b.position_inertial).collect();
        let error = formation_error(&follower_positions, reference, network.offsets());
        let mut positions = vec![reference];
        positions.extend(follower_positions);
        samples.push(FormationSample { t, positions, error_norm: error.norm });
    };

    record(0.0, &bodies, &mut samples);
    for k in 0..steps {
        let t = k as f64 * config.dt;
        let mut positions = vec![config.reference.position_at(t)];
        let mut velocities = vec![config.reference.velocity_at(t)];
        for body in &bodies {
            positions.push(body.position_inertial);
            // Level attitude throughout, so body velocity is inertial velocity.
            velocities.push(body.velocity_body);
        }
        let forces = control_forces(network, &positions, &velocities, &mut integrator, config.dt)?;
        for (body, force) in bodies.iter_mut().zip(&forces) {
            let wrench = Wrench {
                force_propulsion: *force,
                force_drag: -config.linear_drag * body.velocity_body,
                ..Wrench::default()
            };
            *body = rigid_body::step(body, &wrench, &params, t, config.dt)?;
        }
        record((k + 1) as f64 * config.dt, &bodies, &mut samples);
    }
    let final_error = samples.last().expect("at least the initial sample").error_norm;
    Ok(FormationTrajectory { samples, converged: final_error < config.convergence_tol, final_error })
}
