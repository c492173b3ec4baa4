//! Exact stochastic simulation of the finite coalescing system: every
//! unordered pair of particles merges at rate `1/V`.
//!
//! Random streams: every replica owns two ChaCha8 streams keyed by the base
//! seed, `initial_rng(seed, r)` on stream `2r` for the initial masses and
//! `dynamics_rng(seed, r)` on stream `2r + 1` for the jump process. Bootstrap
//! resampling uses a separate key derived from the seed.

mod ensemble;
mod io;
mod sampler;
mod state;

pub use ensemble::{
    bootstrap_batches_sd, bootstrap_number_sd, factorial_moment_of, mean_var_of, run_ensemble, sample_initial,
    sample_sd, BatchStats, EnsembleConfig, EnsembleSummary, TimeSummary, DEFAULT_BATCHES, DEFAULT_HISTOGRAM_BUDGET,
    DEFAULT_PARTICLE_BUDGET, MAX_HISTOGRAM_ORDER,
};
pub use io::{summary_manifest, write_summary_csv, write_summary_manifest};
pub use sampler::{F0Sampler, F0Spec};
pub use state::ParticleState;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for the initial masses of replica `r`.
pub fn initial_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    keyed(seed, 2 * replica)
}

/// Stream for the jump process of replica `r`.
pub fn dynamics_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    keyed(seed, 2 * replica + 1)
}

/// Single-stream generator for code that only needs one replica.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    dynamics_rng(seed, replica)
}

pub(crate) fn bootstrap_rng(seed: u64) -> ChaCha8Rng {
    keyed(seed ^ 0x9E37_79B9_7F4A_7C15, u64::MAX)
}
