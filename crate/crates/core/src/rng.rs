//! Counter-based random streams.
//!
//! Every path draws from its own ChaCha8 stream selected by
//! `(seed, stream)`, so a path's randomness does not depend on which worker
//! simulates it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index of process `i` in joint sample `sample` with `p` processes.
pub fn joint_stream(sample: u64, p: usize, i: usize) -> u64 {
    sample * p as u64 + i as u64
}

/// Fixed block size used to split sample loops; reductions sum blocks in
/// index order so results never depend on the worker count.
pub(crate) const BLOCK: usize = 256;

pub(crate) fn blocks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(BLOCK)).map(|b| (b * BLOCK, ((b + 1) * BLOCK).min(n))).collect()
}
