//! Deterministic simulation suite for quantum-secured autonomy.
//!
//! The crate models a small robotic platform stack end to end:
//!
//! * [`rigid_body`] — six-degree-of-freedom rigid-body dynamics with
//!   aerospace Euler-angle kinematics and a fixed-step RK4 integrator.
//! * [`manipulator`] — homogeneous-transform chains and end-effector pose
//!   composition onto a moving base.
//! * [`formation`] — pairwise PID formation control for a leader/follower
//!   agent network, driving the rigid-body model.
//! * [`qubit`] — two-level quantum state algebra: kets, inner products,
//!   rotations, Born-rule measurement.
//! * [`schrodinger`] — time evolution of two-level systems under static and
//!   harmonically driven Hamiltonians.
//! * [`laplace`] — s-domain perturbation theory: the resolvent hierarchy,
//!   rational-coefficient representations, partial-fraction inversion, and
//!   validation against exact propagation.
//! * [`bb84`] — four-state polarization key distribution with an
//!   intercept-resend eavesdropper, sifting, error-rate estimation, and
//!   one-time-pad encryption of command bytes.
//! * [`spdc`] — polarization-entangled photon pairs: joint detection
//!   statistics, CHSH correlation sums, detector imperfections, coincidence
//!   counting, and an entanglement-based trigger signal.
//! * [`control`] — rational transfer functions, closed-loop composition,
//!   step responses, and quantum-gated command release.
//! * [`scenario`] — the scenario runner: JSON configuration, per-module
//!   deterministic random streams, JSONL/CSV emission, and the combined
//!   key-to-maneuver demonstration.
//!
//! Every stochastic element draws from [`rng`] streams derived from a single
//! master seed, so a `(config, seed)` pair reproduces a run byte for byte.

pub mod bb84;
pub mod control;
pub mod formation;
pub mod laplace;
pub mod manipulator;
pub mod qubit;
pub mod rigid_body;
pub mod rng;
pub mod scenario;
pub mod schrodinger;
pub mod spdc;

pub use qubit::{HBAR_ERG_S, HBAR_EV_S};
