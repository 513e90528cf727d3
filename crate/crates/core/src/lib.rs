//! Lag-resolved memory profiling for sequential decision policies.
//!
//! Given logged episodes of observations, actions and rewards, this
//! crate estimates how much information each action carries about the
//! past at every lag, beyond what the current observation already
//! provides. The per-lag curve is built from entropy estimates over
//! empirical count tables, with a bias-corrected estimator available
//! alongside the plug-in one, and each lag can be screened for
//! significance with a permutation test.
//!
//! For toy problems specified exactly, the [`capacity`] module
//! complements the estimates with ground truth: an explicit joint
//! model over episodes, a brute-force search for the smallest number
//! of memory states that explains the policy, and exact population
//! information quantities, so the sum of per-lag terms can be checked
//! against the log of the state count. The [`synth`] module supplies
//! environment families with known memory demands for calibration.
//!
//! Entry points:
//! - [`load_dataset`] / [`TrajectoryDataset`] for data handling,
//! - [`memory_profile`] and [`profile_with_significance`] for the
//!   per-lag analysis,
//! - [`capacity::capacity`] and [`capacity::verify_lower_bound`] for
//!   exact oracle checks,
//! - [`synth::generate`] for synthetic data.

pub mod capacity;
mod entropy;
mod error;
mod infotheory;
mod significance;
pub mod synth;
mod trajectory;

pub use entropy::{
    count_table, digamma, entropy, grassberger_g, CountTable, Estimator, Projection,
};
pub use error::{Error, Result};
pub use infotheory::{
    conditional_mi, lag_statistic, memory_profile, mutual_information, EventPredicate,
    LagEstimate, MemoryProfile,
};
pub use significance::{
    permutation_test, profile_with_significance, resample_actions, PermutationResult,
    ProfileOptions,
};
pub use trajectory::{
    discretize_rewards, extract_samples, load_dataset, write_dataset, LagSample, StepRecord,
    Symbol, SymbolTable, Trajectory, TrajectoryDataset,
};
