//! Round-based low-rank matrix completion.
//!
//! An estimation call samples a Bernoulli mask `Ω`, visits every masked
//! index once per pass of `b = max row count` rounds for `s` passes,
//! averages the repeated observations, splits the longer axis into
//! near-square blocks and solves a nuclear-norm regularized least squares
//! problem on each block. Independent estimates are combined by an
//! entrywise median.

mod estimate;
mod mask;
mod params;
mod partition;
mod rounds;
mod solver;
mod svt;

pub use estimate::{complete, estimate, median_of_estimates, CompletionEstimate, EstimateOutcome};
pub use mask::{sample_mask, sample_mask_per_row, ObservationMask};
pub use params::{
    analytic_round_bound, default_repetitions, median_repetitions, sampling_probability, scaled_regularizer,
    theory_params, TheoryParams,
};
pub use partition::{partition_near_square, single_block, BlockPartition, PartitionAxis};
pub use rounds::{
    collect_rounds, Collected, ExplorationSchedule, ObservationAccumulator, ObservationMode, Recommendation, Slot,
};
pub use solver::{solve_block, BlockObservations, BlockSolution, CompletionConfig, RegularizerScale};
pub use svt::{nuclear_norm, spectral_norm, svt, svt_with_spectrum};
