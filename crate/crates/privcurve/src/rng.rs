//! Seeded randomness shared by the samplers, the verifier, and the test
//! harnesses.
//!
//! All stochastic code in this crate draws from ChaCha12 streams keyed by a
//! 64-bit seed, with standard-normal variates produced by the ziggurat
//! transform. Batches are reproducible bit-for-bit given the same
//! `(seed, shard_count)`; shard streams are derived with a splitmix64-style
//! mix so neighboring seeds do not produce overlapping streams.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Names the generator stack recorded in sample batches and reports.
pub const RNG_ID: &str = "chacha12/ziggurat";

/// Default number of independent sampling shards. Fixed (rather than derived
/// from the host's core count) so outputs are byte-identical across machines.
pub const DEFAULT_SHARD_COUNT: usize = 8;

fn splitmix64(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for shard `shard` of a run keyed by `seed`.
pub fn shard_seed(seed: u64, shard: u64) -> u64 {
    splitmix64(seed ^ splitmix64(shard.wrapping_add(1)))
}

/// Contiguous row ranges assigning `count` rows to at most `shards` shards;
/// the leading shards take the remainder. Purely a function of its inputs,
/// so sharded accumulations stay deterministic.
pub(crate) fn shard_ranges(count: usize, shards: usize) -> Vec<std::ops::Range<usize>> {
    let shards = shards.min(count).max(1);
    let base = count / shards;
    let extra = count % shards;
    let mut ranges = Vec::with_capacity(shards);
    let mut start = 0;
    for shard in 0..shards {
        let rows = base + usize::from(shard < extra);
        ranges.push(start..start + rows);
        start += rows;
    }
    ranges
}

/// A ChaCha12 stream keyed by `seed`.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Fills `out` with i.i.d. standard-normal draws.
pub fn fill_standard_normal(rng: &mut ChaCha12Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// A `rows x cols` matrix with i.i.d. standard-normal entries.
pub fn random_gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A random `dim x dim` orthonormal matrix (QR of a Gaussian matrix, with the
/// column signs fixed by the R diagonal).
pub fn random_orthonormal(dim: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    if dim == 0 {
        return DMatrix::zeros(0, 0);
    }
    let qr = random_gaussian_matrix(dim, dim, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
