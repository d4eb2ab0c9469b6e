//! Counter-based random number streams.
//!
//! Every stochastic quantity in a trial (phase noise, channel noise, data
//! symbols) draws from its own ChaCha stream addressed by
//! `(master_seed, trial, substream)`. Streams are independent of execution
//! order and worker count, so campaigns reproduce bit-exactly for a fixed
//! master seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role of a random stream within one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    PhaseNoise = 0,
    ChannelNoise = 1,
    Data = 2,
    Channel = 3,
}

const SUBSTREAM_BITS: u64 = 3;

/// RNG for one `(trial, substream)` pair under a master seed.
pub fn trial_rng(master_seed: u64, trial: u64, substream: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((trial << SUBSTREAM_BITS) | substream as u64);
    rng
}
