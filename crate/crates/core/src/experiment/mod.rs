//! Propagation-of-chaos harness: runs a ladder of volumes at fixed density,
//! estimates the rescaled correlation functions from the ensembles and
//! measures their distance to tensor powers of the Smoluchowski solution.

mod estimate;
mod ladder;
mod plot;

pub use estimate::{correlation_from_counts, estimate_correlation};
pub use ladder::{
    read_chaos_csv, run_ladder, write_chaos_csv, ChaosReport, ChaosRow, InitialChaos, MomentCheck, NumberCheck,
    ReferenceInfo, ReferenceKind, RungFailure, RunManifest, DEFAULT_BOOTSTRAP_RESAMPLES,
};
pub use plot::{chaos_charts, Chart};
