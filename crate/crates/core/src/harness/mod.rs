//! Experiment and verification engine.

pub mod attack;
pub mod bench;
pub mod distortion;
pub mod roc;
pub mod theory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attack::attack_replace;
pub use bench::{end_to_end_bench, BenchReport, CellMetrics, NullFpr, Scenario, Scheme};
pub use distortion::{distortion_sim, DistortionReport};
pub use roc::{roc, RocCurve, DEFAULT_PAUC_FPR};
pub use theory::{
    gamma_rate_curves, idealized_gamma_sim, lambda, simulate_alpha, theorem2_bound, theorem2_limit, winner_entries,
    BoundParams, IdealizedRow, RatePoint, VocabLaw,
};

/// RNG for trial `index` of a run seeded with `seed`: one ChaCha stream per
/// trial, so serial and parallel runs draw identical numbers.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
