//! Polarization-entangled photon pairs from spontaneous parametric
//! down-conversion: states, analyzers, CHSH statistics, and a detection
//! chain (efficiency, dark counts, timing jitter, dead time, coincidence
//! windows) feeding an entanglement trigger signal.
//!
//! Two-photon polarization states live on the basis (|HH⟩, |HV⟩, |VH⟩,
//! |VV⟩), first letter = arm A. A type-II source natively emits
//! Ψ⁺ = (|HV⟩ + |VH⟩)/√2; a half-wave plate at 45° in one arm converts it
//! to Φ⁺ = (|HH⟩ + |VV⟩)/√2.
//!
//! Analyzer correlations (T = transmit, F = absorb, analyzers at angles α
//! and β measured from H, in degrees):
//!
//! ```text
//! Ψ⁺:  P(TT) = ½·sin²(α + β)    E(α, β) = −cos 2(α + β)
//! Φ⁺:  P(TT) = ½·cos²(α − β)    E(α, β) =  cos 2(α − β)
//! ```
//!
//! Both saturate the Tsirelson bound S = 2√2 — but at different analyzer
//! settings. The conventional set (a₁, a₂; b₁, b₂) = (0°, 45°; 22.5°,
//! 67.5°) is matched to Φ⁺; on Ψ⁺ its four terms cancel to S = 0 exactly.
//! [`ChshAngles::for_state`] returns settings matched to each state.

use crate::rng::StreamRng;
use nalgebra::{Matrix2, Vector2, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from state construction and the detection chain.
#[derive(Debug, Error, PartialEq)]
pub enum SpdcError {
    /// State amplitudes cannot all vanish.
    #[error("two-photon amplitudes must not all vanish")]
    ZeroAmplitude,
    /// A parameter is outside its valid range.
    #[error("{name}: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
    /// Time-tag streams must be sorted ascending.
    #[error("time tags must be sorted ascending")]
    UnsortedTimes,
}

/// The four maximally entangled polarization states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellState {
    /// (|HH⟩ + |VV⟩)/√2
    PhiPlus,
    /// (|HH⟩ − |VV⟩)/√2
    PhiMinus,
    /// (|HV⟩ + |VH⟩)/√2
    PsiPlus,
    /// (|HV⟩ − |VH⟩)/√2
    PsiMinus,
}

/// Pure polarization state of a photon pair on (|HH⟩, |HV⟩, |VH⟩, |VV⟩).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    amplitudes: Vector4<Complex64>,
}

/// Which photon of the pair an optic acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    A,
    B,
}

impl TwoPhotonState {
    /// Builds and normalizes a state from raw amplitudes.
    pub fn new(amplitudes: Vector4<Complex64>) -> Result<Self, SpdcError> {
        let norm = amplitudes.norm();
        if norm < 1e-300 {
            return Err(SpdcError::ZeroAmplitude);
        }
        Ok(Self { amplitudes: amplitudes / Complex64::new(norm, 0.0) })
    }

    pub fn bell(which: BellState) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = |x: f64| Complex64::new(x, 0.0);
        let amplitudes = match which {
            BellState::PhiPlus => Vector4::new(c(h), c(0.0), c(0.0), c(h)),
            BellState::PhiMinus => Vector4::new(c(h), c(0.0), c(0.0), c(-h)),
            BellState::PsiPlus => Vector4::new(c(0.0), c(h), c(h), c(0.0)),
            BellState::PsiMinus => Vector4::new(c(0.0), c(h), c(-h), c(0.0)),
        };
        Self { amplitudes }
    }

    /// The native emission of a type-II crystal.
    pub fn psi_plus() -> Self {
        Self::bell(BellState::PsiPlus)
    }

    pub fn phi_plus() -> Self {
        Self::bell(BellState::PhiPlus)
    }

    pub fn amplitudes(&self) -> &Vector4<Complex64> {
        &self.amplitudes
    }

    /// True when the states differ only by a global phase.
    pub fn same_ray(&self, other: &Self, tol: f64) -> bool {
        let overlap: Complex64 = self
            .amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        (overlap.norm() - 1.0).abs() <= tol
    }

    /// Applies a single-photon operator to one arm (op ⊗ I or I ⊗ op).
    pub fn apply_one_arm(&self, arm: Arm, op: &Matrix2<f64>) -> Result<Self, SpdcError> {
        let opc = op.map(|x| Complex64::new(x, 0.0));
        let id = Matrix2::identity();
        let joint = match arm {
            Arm::A => opc.kronecker(&id),
            Arm::B => id.kronecker(&opc),
        };
        Self::new(joint * self.amplitudes)
    }

    /// Overlap probability |⟨other|self⟩|².
    pub fn probability(&self, other: &Self) -> f64 {
        let overlap: Complex64 = other
            .amplitudes
            .iter()
            .zip(self.amplitudes.iter())
            .map(|(o, s)| o.conj() * s)
            .sum();
        overlap.norm_sqr()
    }
}

/// Jones matrix of a half-wave plate with its fast axis at `theta_deg`
/// from horizontal: reflects polarization about the fast axis.
pub fn half_wave_plate(theta_deg: f64) -> Matrix2<f64> {
    let two_theta = 2.0 * theta_deg.to_radians();
    Matrix2::new(two_theta.cos(), two_theta.sin(), two_theta.sin(), -two_theta.cos())
}

/// Passes one arm of the pair through a half-wave plate.
pub fn apply_waveplate(
    state: &TwoPhotonState,
    arm: Arm,
    theta_deg: f64,
) -> Result<TwoPhotonState, SpdcError> {
    state.apply_one_arm(arm, &half_wave_plate(theta_deg))
}

fn analyzer_vector(angle_deg: f64, transmit: bool) -> Vector2<Complex64> {
    let a = angle_deg.to_radians();
    let (c, s) = (a.cos(), a.sin());
    let (x, y) = if transmit { (c, s) } else { (-s, c) };
    Vector2::new(Complex64::new(x, 0.0), Complex64::new(y, 0.0))
}

/// Probabilities of the four analyzer outcomes (T = transmit, F = reject)
/// with analyzers at `alpha_deg` (arm A) and `beta_deg` (arm B).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointProbabilities {
    pub tt: f64,
    pub tf: f64,
    pub ft: f64,
    pub ff: f64,
}

impl JointProbabilities {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tt, self.tf, self.ft, self.ff]
    }
}

/// Computes the four joint outcome probabilities analytically.
pub fn joint_probabilities(
    state: &TwoPhotonState,
    alpha_deg: f64,
    beta_deg: f64,
) -> JointProbabilities {
    let mut p = [0.0f64; 4];
    for (idx, (ta, tb)) in [(true, true), (true, false), (false, true), (false, false)]
        .iter()
        .enumerate()
    {
        let a = analyzer_vector(alpha_deg, *ta);
        let b = analyzer_vector(beta_deg, *tb);
        let joint = a.kronecker(&b);
        let overlap: Complex64 = joint
            .iter()
            .zip(state.amplitudes.iter())
            .map(|(j, s)| j.conj() * s)
            .sum();
        p[idx] = overlap.norm_sqr();
    }
    JointProbabilities { tt: p[0], tf: p[1], ft: p[2], ff: p[3] }
}

/// Polarization correlation E(α, β) = P(TT) − P(TF) − P(FT) + P(FF).
pub fn correlation(state: &TwoPhotonState, alpha_deg: f64, beta_deg: f64) -> f64 {
    let p = joint_probabilities(state, alpha_deg, beta_deg);
    p.tt - p.tf - p.ft + p.ff
}

/// The four analyzer settings of a CHSH run (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChshAngles {
    pub a1_deg: f64,
    pub a2_deg: f64,
    pub b1_deg: f64,
    pub b2_deg: f64,
}

impl Default for ChshAngles {
    /// The conventional settings, matched to Φ⁺.
    fn default() -> Self {
        Self { a1_deg: 0.0, a2_deg: 45.0, b1_deg: 22.5, b2_deg: 67.5 }
    }
}

impl ChshAngles {
    /// Settings that drive the given state to S = 2√2. The sum-angle
    /// correlation of the Ψ states swaps the roles of b₁ and b₂ relative
    /// to the Φ states.
    pub fn for_state(state: BellState) -> Self {
        match state {
            BellState::PhiPlus | BellState::PhiMinus => Self::default(),
            BellState::PsiPlus | BellState::PsiMinus => {
                Self { a1_deg: 0.0, a2_deg: 45.0, b1_deg: 67.5, b2_deg: 22.5 }
            }
        }
    }

    /// The four joint settings in CHSH order: (a₁b₁, a₁b₂, a₂b₁, a₂b₂).
    pub fn settings(&self) -> [(f64, f64); 4] {
        [
            (self.a1_deg, self.b1_deg),
            (self.a1_deg, self.b2_deg),
            (self.a2_deg, self.b1_deg),
            (self.a2_deg, self.b2_deg),
        ]
    }
}

/// Analytic CHSH combination S = E(a₁,b₁) − E(a₁,b₂) + E(a₂,b₁) + E(a₂,b₂).
pub fn chsh(state: &TwoPhotonState, angles: &ChshAngles) -> f64 {
    let [e11, e12, e21, e22] =
        angles.settings().map(|(a, b)| correlation(state, a, b));
    e11 - e12 + e21 + e22
}

/// Outcome counts from sampling pairs at one analyzer setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JointCounts {
    pub tt: u64,
    pub tf: u64,
    pub ft: u64,
    pub ff: u64,
}

impl JointCounts {
    pub fn total(&self) -> u64 {
        self.tt + self.tf + self.ft + self.ff
    }

    /// Sample correlation and its standard error √((1 − E²)/N).
    pub fn correlation(&self) -> (f64, f64) {
        let n = self.total() as f64;
        let e = (self.tt as f64 - self.tf as f64 - self.ft as f64 + self.ff as f64) / n;
        (e, ((1.0 - e * e) / n).sqrt())
    }
}

/// Draws `n` pair outcomes at one analyzer setting from the Born
/// probabilities (one uniform per pair against the cumulative weights).
pub fn sample_joint_outcomes(
    state: &TwoPhotonState,
    alpha_deg: f64,
    beta_deg: f64,
    n: u64,
    rng: &mut StreamRng,
) -> JointCounts {
    let p = joint_probabilities(state, alpha_deg, beta_deg).as_array();
    let mut counts = [0u64; 4];
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut slot = 3;
        for (k, &pk) in p.iter().enumerate() {
            acc += pk;
            if u < acc {
                slot = k;
                break;
            }
        }
        counts[slot] += 1;
    }
    JointCounts { tt: counts[0], tf: counts[1], ft: counts[2], ff: counts[3] }
}

/// A sampled CHSH estimate with its propagated uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChshEstimate {
    pub s: f64,
    /// Standard error of `s`, from the four setting uncertainties in
    /// quadrature.
    pub sigma_s: f64,
    /// (E, σ_E) per setting, in the order (a₁b₁, a₁b₂, a₂b₁, a₂b₂).
    pub correlations: [(f64, f64); 4],
    pub pairs_per_setting: u64,
}

impl ChshEstimate {
    /// How many standard errors the estimate sits above the classical
    /// bound S = 2.
    pub fn violation_significance(&self) -> f64 {
        (self.s - 2.0) / self.sigma_s
    }
}

/// Monte-Carlo CHSH: samples `pairs_per_setting` pairs at each of the four
/// settings and assembles S with error propagation.
pub fn chsh_sampled(
    state: &TwoPhotonState,
    angles: &ChshAngles,
    pairs_per_setting: u64,
    rng: &mut StreamRng,
) -> Result<ChshEstimate, SpdcError> {
    chsh_sampled_detailed(state, angles, pairs_per_setting, rng).map(|(estimate, _)| estimate)
}

/// Like [`chsh_sampled`], but also returns the raw joint counts per
/// setting (in `settings()` order) for tabulation.
pub fn chsh_sampled_detailed(
    state: &TwoPhotonState,
    angles: &ChshAngles,
    pairs_per_setting: u64,
    rng: &mut StreamRng,
) -> Result<(ChshEstimate, [JointCounts; 4]), SpdcError> {
    if pairs_per_setting == 0 {
        return Err(SpdcError::InvalidParameter {
            name: "pairs_per_setting",
            reason: "must be positive",
        });
    }
    let counts = angles
        .settings()
        .map(|(a, b)| sample_joint_outcomes(state, a, b, pairs_per_setting, rng));
    let correlations = counts.map(|c| c.correlation());
    let [e11, e12, e21, e22] = correlations.map(|(e, _)| e);
    let s = e11 - e12 + e21 + e22;
    let sigma_s = correlations.iter().map(|(_, sig)| sig * sig).sum::<f64>().sqrt();
    Ok((ChshEstimate { s, sigma_s, correlations, pairs_per_setting }, counts))
}

// ------------------------------------------------------------------
// Photon time tags: source, detectors, coincidences, trigger.
// ------------------------------------------------------------------

/// Pair source emitting at Poisson-distributed times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSource {
    pub rate_hz: f64,
    pub duration_s: f64,
}

impl PairSource {
    /// Emission times in [0, duration), sorted.
    pub fn emission_times(&self, rng: &mut StreamRng) -> Result<Vec<f64>, SpdcError> {
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(SpdcError::InvalidParameter { name: "rate_hz", reason: "must be > 0" });
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(SpdcError::InvalidParameter { name: "duration_s", reason: "must be > 0" });
        }
        let exp = Exp::new(self.rate_hz)
            .map_err(|_| SpdcError::InvalidParameter { name: "rate_hz", reason: "must be > 0" })?;
        let mut times = Vec::new();
        let mut t = exp.sample(rng);
        while t < self.duration_s {
            times.push(t);
            t += exp.sample(rng);
        }
        Ok(times)
    }
}

/// Single-photon detector: efficiency thinning, dark counts, Gaussian
/// timing jitter, and non-paralyzable dead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub timing_jitter_s: f64,
    pub dead_time_s: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { efficiency: 0.35, dark_rate_hz: 200.0, timing_jitter_s: 0.4e-9, dead_time_s: 45e-9 }
    }
}

impl DetectorModel {
    /// A lossless, noiseless, instantaneous detector.
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, dark_rate_hz: 0.0, timing_jitter_s: 0.0, dead_time_s: 0.0 }
    }

    fn validate(&self) -> Result<(), SpdcError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(SpdcError::InvalidParameter { name: "efficiency", reason: "must lie in [0, 1]" });
        }
        for (name, v) in [
            ("dark_rate_hz", self.dark_rate_hz),
            ("timing_jitter_s", self.timing_jitter_s),
            ("dead_time_s", self.dead_time_s),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SpdcError::InvalidParameter { name, reason: "must be ≥ 0" });
            }
        }
        Ok(())
    }

    /// Turns photon arrival times into detector clicks: random thinning at
    /// the quantum efficiency, Poisson dark counts over the duration,
    /// per-click Gaussian jitter, then dead-time suppression. Returns
    /// sorted click times.
    pub fn detect(
        &self,
        arrivals: &[f64],
        duration_s: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>, SpdcError> {
        self.validate()?;
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(SpdcError::InvalidParameter { name: "duration_s", reason: "must be > 0" });
        }
        let mut clicks: Vec<f64> = arrivals
            .iter()
            .filter(|_| rng.random_bool(self.efficiency))
            .copied()
            .collect();
        if self.dark_rate_hz > 0.0 {
            let n_dark = Poisson::new(self.dark_rate_hz * duration_s)
                .map_err(|_| SpdcError::InvalidParameter {
                    name: "dark_rate_hz",
                    reason: "rate·duration overflows the sampler",
                })?
                .sample(rng) as usize;
            clicks.extend((0..n_dark).map(|_| rng.random::<f64>() * duration_s));
        }
        if self.timing_jitter_s > 0.0 {
            let normal = Normal::new(0.0, self.timing_jitter_s).expect("validated std");
            for t in &mut clicks {
                *t += normal.sample(rng);
            }
        }
        clicks.sort_by(|a, b| a.partial_cmp(b).expect("finite click times"));
        if self.dead_time_s > 0.0 {
            let mut alive = Vec::with_capacity(clicks.len());
            let mut last: Option<f64> = None;
            for t in clicks {
                if last.is_none_or(|l| t - l >= self.dead_time_s) {
                    alive.push(t);
                    last = Some(t);
                }
            }
            clicks = alive;
        }
        Ok(clicks)
    }
}

/// Default coincidence window half-width.
pub const COINCIDENCE_WINDOW_S: f64 = 25e-9;

fn check_sorted(times: &[f64]) -> Result<(), SpdcError> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(SpdcError::UnsortedTimes);
    }
    Ok(())
}

/// Greedy two-pointer coincidence search: pairs clicks with
/// |t_A − t_B − skew| ≤ window, consuming each click at most once.
/// Returns the A-side times of the matches.
pub fn coincidence_times(
    a: &[f64],
    b: &[f64],
    window_s: f64,
    skew_s: f64,
) -> Result<Vec<f64>, SpdcError> {
    if !(window_s >= 0.0) || !window_s.is_finite() {
        return Err(SpdcError::InvalidParameter { name: "window_s", reason: "must be ≥ 0" });
    }
    check_sorted(a)?;
    check_sorted(b)?;
    let mut matches = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        let d = a[i] - (b[j] + skew_s);
        if d.abs() <= window_s {
            matches.push(a[i]);
            i += 1;
            j += 1;
        } else if d > 0.0 {
            j += 1;
        } else {
            i += 1;
        }
    }
    Ok(matches)
}

/// Number of coincidences (see [`coincidence_times`]).
pub fn count_coincidences(a: &[f64], b: &[f64], window_s: f64, skew_s: f64) -> Result<usize, SpdcError> {
    Ok(coincidence_times(a, b, window_s, skew_s)?.len())
}

/// Converts a coincidence-rate threshold into a boolean control signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Width of the rate-estimation bins.
    pub bin_width_s: f64,
    /// Coincidence rate at or above which the signal is active.
    pub threshold_hz: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self { bin_width_s: 0.1, threshold_hz: 100.0 }
    }
}

/// Piecewise-constant entanglement-available signal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerSignal {
    intervals: Vec<(f64, f64)>,
    duration_s: f64,
}

impl TriggerSignal {
    /// Builds a signal directly from explicit active intervals (sorted,
    /// disjoint, within the run) — for replaying or scripting a schedule.
    pub fn from_intervals(intervals: Vec<(f64, f64)>, duration_s: f64) -> Result<Self, SpdcError> {
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(SpdcError::InvalidParameter { name: "duration_s", reason: "must be > 0" });
        }
        let mut last_end = 0.0;
        for &(s, e) in &intervals {
            if !(s >= last_end) || !(e > s) || !(e <= duration_s) {
                return Err(SpdcError::InvalidParameter {
                    name: "intervals",
                    reason: "must be sorted, disjoint, and within [0, duration]",
                });
            }
            last_end = e;
        }
        Ok(Self { intervals, duration_s })
    }

    /// Active intervals as half-open [start, end) pairs.
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(s, e)| s <= t && t < e)
    }

    /// The earliest active time at or after `t`, if any: `t` itself inside
    /// an active interval, else the start of the next one.
    pub fn first_active_at_or_after(&self, t: f64) -> Option<f64> {
        self.intervals
            .iter()
            .filter(|&&(_, e)| t < e)
            .map(|&(s, _)| s.max(t))
            .fold(None, |best: Option<f64>, cand| match best {
                Some(b) if b <= cand => Some(b),
                _ => Some(cand),
            })
    }

    /// Fraction of the run during which the signal was active.
    pub fn duty_cycle(&self) -> f64 {
        if self.duration_s <= 0.0 {
            return 0.0;
        }
        self.intervals.iter().map(|(s, e)| e - s).sum::<f64>() / self.duration_s
    }
}

/// Bins coincidence times, thresholds the per-bin rate, and merges
/// adjacent active bins into intervals.
pub fn entanglement_trigger(
    coincidences: &[f64],
    duration_s: f64,
    config: &TriggerConfig,
) -> Result<TriggerSignal, SpdcError> {
    if !(config.bin_width_s > 0.0) || !config.bin_width_s.is_finite() {
        return Err(SpdcError::InvalidParameter { name: "bin_width_s", reason: "must be > 0" });
    }
    if !(config.threshold_hz >= 0.0) || !config.threshold_hz.is_finite() {
        return Err(SpdcError::InvalidParameter { name: "threshold_hz", reason: "must be ≥ 0" });
    }
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(SpdcError::InvalidParameter { name: "duration_s", reason: "must be > 0" });
    }
    check_sorted(coincidences)?;
    let n_bins = (duration_s / config.bin_width_s).ceil() as usize;
    let mut counts = vec![0usize; n_bins.max(1)];
    for &t in coincidences {
        if t < 0.0 || t >= duration_s {
            continue;
        }
        let k = ((t / config.bin_width_s) as usize).min(counts.len() - 1);
        counts[k] += 1;
    }
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for (k, &count) in counts.iter().enumerate() {
        let start = k as f64 * config.bin_width_s;
        let end = ((k + 1) as f64 * config.bin_width_s).min(duration_s);
        let rate = count as f64 / (end - start);
        if rate >= config.threshold_hz {
            match intervals.last_mut() {
                Some(last) if (last.1 - start).abs() < 1e-12 => last.1 = end,
                _ => intervals.push((start, end)),
            }
        }
    }
    Ok(TriggerSignal { intervals, duration_s })
}
