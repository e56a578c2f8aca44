//! Seeded random streams.
//!
//! Every stochastic operation takes a `&mut SeededRng` and documents the
//! order in which it draws from it. The generator is ChaCha8, a counter-based
//! stream cipher with a portable output sequence, so identical seeds give
//! identical draws on every platform. Independent sub-streams are obtained by
//! setting the ChaCha stream id rather than by reseeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

/// Generator for the master seed, stream 0.
pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream `stream` of the master `seed`.
pub fn stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const TRIPLE_BITS: u32 = 21;

/// Sub-stream for one (donor, host, repetition) synthesis attempt.
///
/// Each index must stay below 2^21; the three are packed into the 64-bit
/// stream id with stream 0 reserved for the master generator.
pub fn triple_stream(seed: u64, donor: usize, host: usize, repetition: usize) -> SeededRng {
    let limit = 1usize << TRIPLE_BITS;
    assert!(
        donor < limit && host < limit && repetition < limit,
        "stream index exceeds 2^21"
    );
    let id = (1u64 << 63) | ((donor as u64) << (2 * TRIPLE_BITS)) | ((host as u64) << TRIPLE_BITS) | repetition as u64;
    stream(seed, id)
}

/// One draw, uniform on `[lo, hi)`; consumes exactly one `f64` even when
/// `lo == hi`.
pub fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Uniform index in `0..n`. `n` must be positive.
pub fn index(rng: &mut SeededRng, n: usize) -> usize {
    rng.random_range(0..n)
}

pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}
