//! Deterministic random streams.
//!
//! Every randomized step draws from a ChaCha20 stream keyed by
//! `(seed, trial, purpose)`. ChaCha is counter based, so streams for
//! different trials or purposes never overlap and can be consumed from any
//! thread in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a stream is used for. Each variant maps to a distinct key word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Layout,
    Channel,
    PhaseInit,
    /// Extra PGA starts; the payload separates successive optimizer calls.
    Multistart(u32),
    /// Free-form tag for tests and tools.
    Custom(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Layout => 1,
            Purpose::Channel => 2,
            Purpose::PhaseInit => 3,
            Purpose::Multistart(i) => (4 << 32) | i as u64,
            Purpose::Custom(i) => (5 << 32) | i as u64,
        }
    }
}

/// Open the stream for `(seed, trial, purpose)`.
pub fn stream(seed: u64, trial: u64, purpose: Purpose) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..24].copy_from_slice(&purpose.tag().to_le_bytes());
    key[24..32].copy_from_slice(b"simcf\0\0\x01");
    ChaCha20Rng::from_seed(key)
}
