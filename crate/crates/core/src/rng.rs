//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose key
//! is `(seed, domain)` and whose stream id is a record (or step) index. Draws
//! for record `i` are therefore independent of how many records came before
//! it or of which thread produced them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

/// Namespace separating independent uses of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Domain(pub u64);

impl Domain {
    pub const ORACLE: Domain = Domain(0x01);
    pub const PROMPT: Domain = Domain(0x02);
    pub const LOW_STYLE: Domain = Domain(0x03);
    pub const HIGH_STYLE: Domain = Domain(0x04);
    pub const GUMBEL: Domain = Domain(0x05);
    pub const CALIBRATION: Domain = Domain(0x06);
    pub const SPLIT: Domain = Domain(0x07);
    pub const SHUFFLE: Domain = Domain(0x08);
    pub const FILTER: Domain = Domain(0x09);
    pub const EVAL: Domain = Domain(0x0a);
    pub const PROBE: Domain = Domain(0x0b);
    pub const FINITE_DIFF: Domain = Domain(0x0c);
    pub const REWARD_INIT: Domain = Domain(0x0d);
    pub const SELECTION: Domain = Domain(0x0e);
}

/// Stream `index` under key `(seed, domain)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.0.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Like [`stream`] but positioned at a disjoint block of 2^32 words reserved
/// for `slot`, so per-item sub-draws (e.g. one per response) never overlap.
pub fn slot_stream(seed: u64, domain: Domain, index: u64, slot: u32) -> ChaCha8Rng {
    let mut rng = stream(seed, domain, index);
    rng.set_word_pos(u128::from(slot) << 32);
    rng
}

/// Uniform on the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Standard Gumbel draw by inverse CDF, `-ln(-ln u)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(-open01(rng).ln()).ln()
}
