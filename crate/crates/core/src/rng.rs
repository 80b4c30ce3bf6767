//! Deterministic random streams.
//!
//! Every stochastic draw in this crate comes from a stream derived from a
//! single master seed. A stream is identified by `(seed, module, index)` and
//! is realized as a ChaCha8 counter-based generator whose 256-bit key is the
//! SHA-256 digest of a fixed domain tag followed by the little-endian
//! encoding of the identifying tuple:
//!
//! ```text
//! key = SHA-256( "qauto.stream.v1" || seed_le_u64
//!                || module_len_le_u64 || module_utf8 || index_le_u64 )
//! ```
//!
//! Both ChaCha8 and SHA-256 are precisely specified, so an implementation in
//! any language can reproduce the byte stream exactly. Because the key is a
//! cryptographic digest of the full tuple, streams are independent: adding a
//! new module or stream index never perturbs draws taken from existing
//! streams, and nearby seeds share no statistical structure.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Domain-separation tag hashed into every stream key.
const DOMAIN_TAG: &[u8] = b"qauto.stream.v1";

/// A deterministic random stream generator.
pub type StreamRng = ChaCha8Rng;

/// Derives the ChaCha8 key for the stream `(seed, module, index)`.
pub fn stream_key(seed: u64, module: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN_TAG);
    hasher.update(seed.to_le_bytes());
    hasher.update((module.len() as u64).to_le_bytes());
    hasher.update(module.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// Returns the generator for the stream `(seed, module, index)`.
pub fn stream(seed: u64, module: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(stream_key(seed, module, index))
}

/// Derives a child seed, used to fan a master seed out into per-trial seeds.
///
/// The child seed is the first eight bytes (little-endian) of the stream key
/// for `(seed, label, index)`.
pub fn child_seed(seed: u64, label: &str, index: u64) -> u64 {
    let key = stream_key(seed, label, index);
    u64::from_le_bytes(key[..8].try_into().expect("key is 32 bytes"))
}
