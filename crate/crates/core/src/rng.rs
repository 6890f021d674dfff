//! Labelled seed derivation.
//!
//! Every consumer of randomness gets its own stream, keyed by the global seed
//! and a purpose label. Monte-Carlo loops are split into fixed-size chunks and
//! chunk `k` draws from ChaCha stream `k` of that key, so results do not depend
//! on how many workers run the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Samples per Monte-Carlo chunk.
pub const CHUNK: usize = 4096;

pub fn derive_key(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&out);
    key
}

/// A child seed for `label`, for APIs that take a plain `u64`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let key = derive_key(seed, label);
    u64::from_le_bytes(key[..8].try_into().unwrap())
}

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(seed, label))
}

pub fn chunk_stream(seed: u64, label: &str, chunk: u64) -> ChaCha8Rng {
    let mut rng = stream(seed, label);
    rng.set_stream(chunk);
    rng
}

/// Splits `m` samples into `(chunk index, chunk length)` pairs.
pub fn chunks(m: usize) -> impl Iterator<Item = (u64, usize)> {
    (0..m.div_ceil(CHUNK)).map(move |k| (k as u64, CHUNK.min(m - k * CHUNK)))
}
