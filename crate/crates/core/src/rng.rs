//! Deterministic RNG stream derivation.
//!
//! Every stochastic stage derives its own ChaCha stream from the master
//! seed, a domain tag, and an item index, so results never depend on
//! evaluation order or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_BATH: u64 = 1;
pub const DOMAIN_BATH_STATES: u64 = 2;

pub fn stream(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&domain.to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
