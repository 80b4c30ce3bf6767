//! BB84 quantum key distribution over polarization qubits.
//!
//! Alice encodes random bits in randomly chosen polarization bases, Bob
//! measures in bases of his own choosing, and the two keep only the
//! positions where the bases agree (sifting). An intercept-resend
//! eavesdropper guesses the wrong basis half the time and then causes an
//! error half of *those* times, so intercepting a fraction `f` of the
//! qubits leaves a quantum bit error rate of `f/4` in the sifted key —
//! full interception is far above any plausible channel noise floor,
//! which is what makes the disclosure test a tamper alarm.
//!
//! Bases and bit encoding:
//!
//! | basis            | bit 0 | bit 1 |
//! |------------------|-------|-------|
//! | `Basis::Plus` ✛  | 0°  (H) | 90° (V)  |
//! | `Basis::Cross` ✕ | +45°    | −45°     |
//!
//! The sifted key feeds a [`OneTimePad`], which enforces single use of key
//! material: every encryption consumes a fresh segment, overlapping
//! segments are rejected, and exhaustion is an error rather than a wrap.

use crate::qubit::{measure, MeasurementBasis, Qubit};
use crate::rng::StreamRng;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by protocol steps.
#[derive(Debug, Error, PartialEq)]
pub enum Bb84Error {
    /// A probability-like parameter fell outside [0, 1].
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    /// Record streams that must be index-aligned have different lengths.
    #[error("record length mismatch: alice {alice}, bob {bob}")]
    MismatchedRecords { alice: usize, bob: usize },
    /// No positions survived sifting, so no statistics can be formed.
    #[error("sifted key is empty")]
    EmptySiftedKey,
}

/// Errors from one-time-pad usage.
#[derive(Debug, Error, PartialEq)]
pub enum OtpError {
    /// Key bits must be 0 or 1.
    #[error("key material must be bits (0/1)")]
    InvalidBit,
    /// Not enough unused key bits for the message (8 per byte).
    #[error("key exhausted: need {needed} bits, {available} remain")]
    KeyExhausted { needed: usize, available: usize },
    /// The requested segment overlaps bits that were already consumed.
    #[error("key segment [{offset}, {offset}+{len}) overlaps used material")]
    KeyReuse { offset: usize, len: usize },
    /// A message references key bits beyond the pad.
    #[error("segment [{offset}, {end}) outside pad of {len} bits")]
    OutOfRange { offset: usize, end: usize, len: usize },
}

/// Polarization basis for preparing and measuring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Rectilinear: 0° / 90°.
    Plus,
    /// Diagonal: +45° / −45°.
    Cross,
}

impl Basis {
    /// Uniformly random basis choice.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            Basis::Plus
        } else {
            Basis::Cross
        }
    }

    /// The measurement this basis corresponds to.
    pub fn measurement(self) -> MeasurementBasis {
        match self {
            Basis::Plus => MeasurementBasis::Z,
            Basis::Cross => MeasurementBasis::X,
        }
    }

    /// The encoded states for bits (0, 1).
    pub fn states(self) -> (Qubit, Qubit) {
        match self {
            Basis::Plus => (Qubit::plus_z(), Qubit::minus_z()),
            Basis::Cross => (Qubit::plus_x(), Qubit::minus_x()),
        }
    }
}

/// Encodes one bit in the given basis.
pub fn encode(bit: u8, basis: Basis) -> Qubit {
    let (zero, one) = basis.states();
    if bit == 0 {
        zero
    } else {
        one
    }
}

/// One qubit as Alice prepared it.
#[derive(Debug, Clone)]
pub struct PreparedQubit {
    pub bit: u8,
    pub basis: Basis,
    pub state: Qubit,
}

/// Draws `n` random (bit, basis) pairs and encodes them.
pub fn alice_prepare<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<PreparedQubit> {
    (0..n)
        .map(|_| {
            let bit = u8::from(rng.random_bool(0.5));
            let basis = Basis::random(rng);
            PreparedQubit { bit, basis, state: encode(bit, basis) }
        })
        .collect()
}

/// Intercept-resend eavesdropper: measures a fraction of the passing
/// qubits in a random basis and forwards the collapsed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveModel {
    pub intercept_fraction: f64,
}

/// Optical channel between Alice and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Probability that a qubit survives the channel.
    pub transmittance: f64,
    pub eve: Option<EveModel>,
}

impl ChannelModel {
    /// Lossless channel, no eavesdropper.
    pub fn ideal() -> Self {
        Self { transmittance: 1.0, eve: None }
    }

    fn validate(&self) -> Result<(), Bb84Error> {
        check_probability("transmittance", self.transmittance)?;
        if let Some(eve) = &self.eve {
            check_probability("intercept_fraction", eve.intercept_fraction)?;
        }
        Ok(())
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<(), Bb84Error> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Bb84Error::InvalidProbability { name, value });
    }
    Ok(())
}

/// Sends the prepared qubits through the channel. `None` marks a loss.
pub fn transmit<R: Rng + ?Sized>(
    prepared: &[PreparedQubit],
    channel: &ChannelModel,
    rng: &mut R,
) -> Result<Vec<Option<Qubit>>, Bb84Error> {
    channel.validate()?;
    Ok(prepared
        .iter()
        .map(|p| {
            if !rng.random_bool(channel.transmittance) {
                return None;
            }
            let mut state = p.state.clone();
            if let Some(eve) = &channel.eve {
                if rng.random_bool(eve.intercept_fraction) {
                    let basis = Basis::random(rng);
                    state = measure(&state, basis.measurement(), rng).post_state;
                }
            }
            Some(state)
        })
        .collect())
}

/// Bob's measurement record for one detected qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BobRecord {
    pub basis: Basis,
    pub bit: u8,
}

/// Measures each arriving qubit in a random basis; imperfect detectors
/// drop a further fraction of the arrivals.
pub fn bob_measure<R: Rng + ?Sized>(
    received: &[Option<Qubit>],
    detector_efficiency: f64,
    rng: &mut R,
) -> Result<Vec<Option<BobRecord>>, Bb84Error> {
    check_probability("detector_efficiency", detector_efficiency)?;
    Ok(received
        .iter()
        .map(|slot| {
            let state = slot.as_ref()?;
            if !rng.random_bool(detector_efficiency) {
                return None;
            }
            let basis = Basis::random(rng);
            let outcome = measure(state, basis.measurement(), rng);
            Some(BobRecord { basis, bit: outcome.outcome.bit() })
        })
        .collect())
}

/// The positions where Bob detected and the bases agreed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftedKey {
    pub alice_bits: Vec<u8>,
    pub bob_bits: Vec<u8>,
    /// Original transmission indices of the kept positions.
    pub indices: Vec<usize>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    /// Fraction of Bob's bits that disagree with Alice's.
    pub fn error_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let errors = self
            .alice_bits
            .iter()
            .zip(&self.bob_bits)
            .filter(|(a, b)| a != b)
            .count();
        errors as f64 / self.len() as f64
    }
}

/// Publicly compares basis choices and keeps the agreeing positions.
pub fn sift(alice: &[PreparedQubit], bob: &[Option<BobRecord>]) -> Result<SiftedKey, Bb84Error> {
    if alice.len() != bob.len() {
        return Err(Bb84Error::MismatchedRecords { alice: alice.len(), bob: bob.len() });
    }
    let mut key = SiftedKey { alice_bits: vec![], bob_bits: vec![], indices: vec![] };
    for (i, (a, b)) in alice.iter().zip(bob).enumerate() {
        if let Some(record) = b {
            if record.basis == a.basis {
                key.alice_bits.push(a.bit);
                key.bob_bits.push(record.bit);
                key.indices.push(i);
            }
        }
    }
    Ok(key)
}

/// Result of the public error-estimation round.
#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    /// Mismatch fraction among the disclosed sample.
    pub qber: f64,
    /// Number of sacrificed (publicly compared) positions.
    pub disclosed: usize,
    /// Alice's remaining secret bits after removing the sample.
    pub kept_alice: Vec<u8>,
    /// Bob's remaining secret bits after removing the sample.
    pub kept_bob: Vec<u8>,
}

/// Publicly discloses a random sample of the sifted key — at least one
/// position, `⌊fraction·n⌋` once that exceeds one — estimates the error
/// rate from it, and removes the burned positions from the key.
pub fn estimate_qber<R: Rng + ?Sized>(
    sifted: &SiftedKey,
    sample_fraction: f64,
    rng: &mut R,
) -> Result<QberEstimate, Bb84Error> {
    check_probability("sample_fraction", sample_fraction)?;
    if sifted.is_empty() {
        return Err(Bb84Error::EmptySiftedKey);
    }
    let n = sifted.len();
    let amount = ((sample_fraction * n as f64).floor() as usize).clamp(1, n);
    let mut chosen = sample(rng, n, amount).into_vec();
    chosen.sort_unstable();
    let mut errors = 0usize;
    let mut kept_alice = Vec::with_capacity(n - amount);
    let mut kept_bob = Vec::with_capacity(n - amount);
    let mut next = chosen.iter().peekable();
    for i in 0..n {
        if next.peek() == Some(&&i) {
            next.next();
            if sifted.alice_bits[i] != sifted.bob_bits[i] {
                errors += 1;
            }
        } else {
            kept_alice.push(sifted.alice_bits[i]);
            kept_bob.push(sifted.bob_bits[i]);
        }
    }
    Ok(QberEstimate { qber: errors as f64 / amount as f64, disclosed: amount, kept_alice, kept_bob })
}

/// Default alarm threshold on the estimated error rate. Intercepting every
/// qubit produces 25%; 11% is the classic security bound for BB84 with
/// one-way post-processing.
pub const QBER_THRESHOLD: f64 = 0.11;

/// Verdict of the tamper check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveVerdict {
    Clean,
    Compromised,
}

/// Flags the exchange when the estimated error rate exceeds the threshold.
pub fn detect_eve(qber: f64, threshold: f64) -> EveVerdict {
    if qber > threshold {
        EveVerdict::Compromised
    } else {
        EveVerdict::Clean
    }
}

/// A ciphertext together with the key segment that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtpMessage {
    /// First key bit consumed.
    pub offset: usize,
    pub ciphertext: Vec<u8>,
}

/// One-time pad over a shared bit string. Eight key bits (MSB first) are
/// XORed into each message byte. Used segments are tracked so key material
/// can never encrypt twice.
#[derive(Debug, Clone)]
pub struct OneTimePad {
    bits: Vec<u8>,
    cursor: usize,
    used: Vec<(usize, usize)>,
}

impl OneTimePad {
    pub fn new(bits: Vec<u8>) -> Result<Self, OtpError> {
        if bits.iter().any(|&b| b > 1) {
            return Err(OtpError::InvalidBit);
        }
        Ok(Self { bits, cursor: 0, used: Vec::new() })
    }

    /// Unused bits from the cursor onward.
    pub fn remaining(&self) -> usize {
        self.bits.len().saturating_sub(self.cursor)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    fn segment_pad(&self, offset: usize, len_bytes: usize) -> Result<Vec<u8>, OtpError> {
        let needed = 8 * len_bytes;
        let end = offset + needed;
        if end > self.bits.len() {
            return Err(OtpError::OutOfRange { offset, end, len: self.bits.len() });
        }
        Ok((0..len_bytes)
            .map(|i| {
                self.bits[offset + 8 * i..offset + 8 * (i + 1)]
                    .iter()
                    .fold(0u8, |acc, &bit| (acc << 1) | bit)
            })
            .collect())
    }

    /// Encrypts at the cursor, consuming 8 bits per byte.
    pub fn encrypt(&mut self, plaintext: &[u8]) -> Result<OtpMessage, OtpError> {
        self.encrypt_at(self.cursor, plaintext)
    }

    /// Encrypts with the segment starting at `offset`. Overlap with any
    /// previously consumed segment is a [`OtpError::KeyReuse`] error.
    pub fn encrypt_at(&mut self, offset: usize, plaintext: &[u8]) -> Result<OtpMessage, OtpError> {
        let needed = 8 * plaintext.len();
        if offset + needed > self.bits.len() {
            return Err(OtpError::KeyExhausted {
                needed,
                available: self.bits.len().saturating_sub(offset),
            });
        }
        if self.used.iter().any(|&(s, e)| offset < e && s < offset + needed) {
            return Err(OtpError::KeyReuse { offset, len: needed });
        }
        let pad = self.segment_pad(offset, plaintext.len())?;
        let ciphertext = plaintext.iter().zip(&pad).map(|(p, k)| p ^ k).collect();
        self.used.push((offset, offset + needed));
        self.cursor = self.cursor.max(offset + needed);
        Ok(OtpMessage { offset, ciphertext })
    }

    /// Decrypts a message with the matching segment of this pad. XOR is an
    /// involution, so this does not consume key material — single use is
    /// enforced on the encrypting side.
    pub fn decrypt(&self, message: &OtpMessage) -> Result<Vec<u8>, OtpError> {
        let pad = self.segment_pad(message.offset, message.ciphertext.len())?;
        Ok(message.ciphertext.iter().zip(&pad).map(|(c, k)| c ^ k).collect())
    }
}

/// Parameters for a full protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub n_qubits: usize,
    pub channel: ChannelModel,
    pub detector_efficiency: f64,
    /// Fraction of the sifted key sacrificed to error estimation.
    pub sample_fraction: f64,
    pub qber_threshold: f64,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self {
            n_qubits: 2048,
            channel: ChannelModel::ideal(),
            detector_efficiency: 1.0,
            sample_fraction: 0.2,
            qber_threshold: QBER_THRESHOLD,
        }
    }
}

/// Outcome of a full protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub n_sent: usize,
    pub n_received: usize,
    pub n_sifted: usize,
    /// Estimated error rate from the disclosed sample.
    pub qber: f64,
    pub disclosed: usize,
    pub verdict: EveVerdict,
    /// Alice's final key bits (post-disclosure).
    pub alice_key: Vec<u8>,
    /// Bob's final key bits (post-disclosure).
    pub bob_key: Vec<u8>,
}

/// Runs prepare → transmit → measure → sift → estimate → verdict.
pub fn run_exchange(
    config: &ExchangeConfig,
    rng: &mut StreamRng,
) -> Result<ExchangeOutcome, Bb84Error> {
    let prepared = alice_prepare(config.n_qubits, rng);
    let received = transmit(&prepared, &config.channel, rng)?;
    let records = bob_measure(&received, config.detector_efficiency, rng)?;
    let n_received = records.iter().filter(|r| r.is_some()).count();
    let sifted = sift(&prepared, &records)?;
    let estimate = estimate_qber(&sifted, config.sample_fraction, rng)?;
    Ok(ExchangeOutcome {
        n_sent: config.n_qubits,
        n_received,
        n_sifted: sifted.len(),
        qber: estimate.qber,
        disclosed: estimate.disclosed,
        verdict: detect_eve(estimate.qber, config.qber_threshold),
        alice_key: estimate.kept_alice,
        bob_key: estimate.kept_bob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn basis_states_encode_the_polarizations() {
        let (h, v) = Basis::Plus.states();
        assert!(h.same_ray(&Qubit::plus_z(), 1e-12));
        assert!(v.same_ray(&Qubit::minus_z(), 1e-12));
        let (d_plus, d_minus) = Basis::Cross.states();
        assert!(d_plus.same_ray(&Qubit::linear_polarization(45.0), 1e-12));
        assert!(d_minus.same_ray(&Qubit::linear_polarization(-45.0), 1e-12));
        // Conjugate bases overlap at 1/2.
        assert!((h.probability(&d_plus) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clean_channel_gives_error_free_key_and_half_sift_rate() {
        let mut rng = stream(11, "bb84.test.clean", 0);
        let n = 4096;
        let prepared = alice_prepare(n, &mut rng);
        let received = transmit(&prepared, &ChannelModel::ideal(), &mut rng).unwrap();
        let records = bob_measure(&received, 1.0, &mut rng).unwrap();
        let sifted = sift(&prepared, &records).unwrap();
        // Same basis, no disturbance: bits agree at every kept position.
        assert_eq!(sifted.error_rate(), 0.0);
        // Basis agreement is a fair coin: expect n/2 within 3σ = 3·√(n/4).
        let sigma = (n as f64 / 4.0).sqrt();
        assert!((sifted.len() as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    /// Probability that an intercepted qubit yields a sifted-key error.
    ///
    /// Enumerates Eve's basis (probability 1/2 each) and Bob's outcome
    /// given that Bob shares Alice's basis. Same-basis interception is
    /// invisible; wrong-basis interception collapses the state to a
    /// conjugate-basis eigenstate, which Bob then reads wrongly with
    /// probability 1/2: total 1/2 · 1/2 = 1/4.
    fn enumerated_intercept_error() -> f64 {
        let mut total = 0.0;
        for eve_same_basis in [true, false] {
            let p_branch = 0.5;
            let p_err = if eve_same_basis {
                0.0
            } else {
                // |⟨wrong bit | conjugate eigenstate⟩|² = 1/2 whichever
                // eigenstate Eve projected onto.
                0.5
            };
            total += p_branch * p_err;
        }
        total
    }

    #[test]
    fn intercept_resend_error_rate_is_a_quarter_of_the_fraction() {
        assert_eq!(enumerated_intercept_error(), 0.25);
        for (fraction, label) in [(1.0f64, "full"), (0.5, "half")] {
            let mut rng = stream(12, "bb84.test.eve", fraction.to_bits());
            let n = 40_000;
            let prepared = alice_prepare(n, &mut rng);
            let channel = ChannelModel {
                transmittance: 1.0,
                eve: Some(EveModel { intercept_fraction: fraction }),
            };
            let received = transmit(&prepared, &channel, &mut rng).unwrap();
            let records = bob_measure(&received, 1.0, &mut rng).unwrap();
            let sifted = sift(&prepared, &records).unwrap();
            let expected = fraction * enumerated_intercept_error();
            let sigma = (expected * (1.0 - expected) / sifted.len() as f64).sqrt();
            let got = sifted.error_rate();
            assert!(
                (got - expected).abs() < 3.0 * sigma,
                "{label}: qber {got:.4}, expected {expected} ± {:.4}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn losses_scale_the_sift_rate() {
        let mut rng = stream(13, "bb84.test.loss", 0);
        let n = 40_000;
        let (transmittance, efficiency) = (0.8, 0.9);
        let prepared = alice_prepare(n, &mut rng);
        let channel = ChannelModel { transmittance, eve: None };
        let received = transmit(&prepared, &channel, &mut rng).unwrap();
        let records = bob_measure(&received, efficiency, &mut rng).unwrap();
        let sifted = sift(&prepared, &records).unwrap();
        // Kept fraction = transmittance · efficiency · P(basis match).
        let expected = transmittance * efficiency * 0.5;
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((sifted.len() as f64 / n as f64 - expected).abs() < 3.0 * sigma);
    }

    #[test]
    fn disclosure_burns_sampled_positions() {
        let mut rng = stream(14, "bb84.test.disclose", 0);
        let sifted = SiftedKey {
            alice_bits: vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 0],
            bob_bits: vec![0, 1, 0, 0, 1, 0, 1, 1, 1, 0],
            indices: (0..10).collect(),
        };
        let estimate = estimate_qber(&sifted, 0.2, &mut rng).unwrap();
        assert_eq!(estimate.disclosed, 2);
        assert_eq!(estimate.kept_alice.len(), 8);
        assert_eq!(estimate.kept_bob.len(), 8);
        // The whole key has 2/10 errors; any sample rate is one of {0, ½, 1}.
        assert!([0.0, 0.5, 1.0].contains(&estimate.qber));
        // A fraction too small for one whole position still discloses one.
        let tiny = estimate_qber(&sifted, 0.01, &mut rng).unwrap();
        assert_eq!(tiny.disclosed, 1);
    }

    #[test]
    fn full_interception_trips_the_alarm_and_clean_runs_pass() {
        let mut rng = stream(15, "bb84.test.verdict", 0);
        let eavesdropped = ExchangeConfig {
            n_qubits: 4096,
            channel: ChannelModel {
                transmittance: 1.0,
                eve: Some(EveModel { intercept_fraction: 1.0 }),
            },
            ..ExchangeConfig::default()
        };
        let outcome = run_exchange(&eavesdropped, &mut rng).unwrap();
        assert_eq!(outcome.verdict, EveVerdict::Compromised);
        assert!(outcome.qber > 0.15, "qber {}", outcome.qber);

        let mut rng = stream(15, "bb84.test.verdict", 1);
        let clean = ExchangeConfig::default();
        let outcome = run_exchange(&clean, &mut rng).unwrap();
        assert_eq!(outcome.verdict, EveVerdict::Clean);
        assert_eq!(outcome.qber, 0.0);
        assert_eq!(outcome.alice_key, outcome.bob_key);
    }

    #[test]
    fn exchanges_are_reproducible() {
        let config = ExchangeConfig::default();
        let a = run_exchange(&config, &mut stream(99, "bb84", 0)).unwrap();
        let b = run_exchange(&config, &mut stream(99, "bb84", 0)).unwrap();
        assert_eq!(a, b);
        let c = run_exchange(&config, &mut stream(100, "bb84", 0)).unwrap();
        assert_ne!(a.alice_key, c.alice_key);
    }

    #[test]
    fn one_time_pad_round_trips_and_tracks_usage() {
        let mut rng = stream(16, "bb84.test.otp", 0);
        let bits: Vec<u8> = (0..256).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let mut alice_pad = OneTimePad::new(bits.clone()).unwrap();
        let bob_pad = OneTimePad::new(bits).unwrap();

        let msg = b"formation go";
        let sealed = alice_pad.encrypt(msg).unwrap();
        assert_eq!(sealed.offset, 0);
        assert_ne!(sealed.ciphertext, msg.to_vec());
        assert_eq!(bob_pad.decrypt(&sealed).unwrap(), msg.to_vec());
        assert_eq!(alice_pad.remaining(), 256 - 8 * msg.len());

        // Reusing any part of the consumed segment is rejected.
        assert_eq!(
            alice_pad.encrypt_at(8, b"x").unwrap_err(),
            OtpError::KeyReuse { offset: 8, len: 8 }
        );
        // A fresh disjoint segment is fine.
        alice_pad.encrypt_at(8 * msg.len(), b"ok").unwrap();

        // Exhaustion: the pad has 256 bits = 32 bytes in total.
        let too_long = vec![0u8; 33];
        let mut fresh = OneTimePad::new(vec![1; 256]).unwrap();
        assert_eq!(
            fresh.encrypt(&too_long).unwrap_err(),
            OtpError::KeyExhausted { needed: 264, available: 256 }
        );

        assert_eq!(OneTimePad::new(vec![0, 1, 2]).unwrap_err(), OtpError::InvalidBit);
    }

    proptest! {
        /// Preparing and measuring in the same basis is deterministic.
        #[test]
        fn same_basis_readout_recovers_the_bit(bit in 0u8..2, cross in proptest::bool::ANY, seed in 0u64..1024) {
            let basis = if cross { Basis::Cross } else { Basis::Plus };
            let state = encode(bit, basis);
            let mut rng = stream(seed, "bb84.prop", 0);
            let m = measure(&state, basis.measurement(), &mut rng);
            prop_assert_eq!(m.outcome.bit(), bit);
            prop_assert!((m.probability - 1.0).abs() < 1e-12);
        }

        /// OTP decryption inverts encryption for arbitrary payloads.
        #[test]
        fn otp_is_an_involution(payload in proptest::collection::vec(any::<u8>(), 1..16), seed in 0u64..256) {
            let mut rng = stream(seed, "bb84.prop.otp", 0);
            let bits: Vec<u8> = (0..8 * payload.len()).map(|_| u8::from(rng.random_bool(0.5))).collect();
            let mut pad = OneTimePad::new(bits.clone()).unwrap();
            let sealed = pad.encrypt(&payload).unwrap();
            let receiver = OneTimePad::new(bits).unwrap();
            prop_assert_eq!(receiver.decrypt(&sealed).unwrap(), payload);
        }
    }
}
