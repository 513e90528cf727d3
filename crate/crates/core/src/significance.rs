//! Permutation-style significance testing for chain terms.
//!
//! The null hypothesis at lag `i` is that the current action carries no
//! information about the step `i` lags back beyond what the
//! conditioning variables explain. Null replicates are produced by
//! resampling the action column from its own marginal, which preserves
//! the action frequencies and every context table while severing the
//! action-history link.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::entropy::{count_table, entropy, entropy_of_histogram, Estimator, Projection};
use crate::error::{Error, Result};
use crate::infotheory::{
    combine, lag_statistic, profile_samples, profile_terms, EventPredicate, MemoryProfile,
};
use crate::trajectory::{LagSample, Symbol, TrajectoryDataset};

/// Outcome of one resampling test.
#[derive(Debug, Clone)]
pub struct PermutationResult {
    /// Statistic on the original action column.
    pub observed_nats: f64,
    /// Null statistics, in replicate order.
    pub replicates: Vec<f64>,
    /// Empirical null quantile the observation is compared against.
    pub threshold_nats: f64,
    /// True when the observation reaches the threshold and the null
    /// showed any variation at all.
    pub significant: bool,
    /// True when every replicate equals the observation exactly, so
    /// the test cannot discriminate; such results are never
    /// significant.
    pub degenerate_null: bool,
    pub level: f64,
    /// Seed this test actually ran with.
    pub seed: u64,
}

/// Options for [`profile_with_significance`].
#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub max_lag: usize,
    pub estimator: Estimator,
    /// Earliest eligible time step; defaults to `max_lag + 1`.
    pub min_t: Option<usize>,
    pub event: Option<EventPredicate>,
    pub permutations: usize,
    pub level: f64,
    pub seed: u64,
}

impl ProfileOptions {
    pub fn new(max_lag: usize, estimator: Estimator) -> Self {
        Self {
            max_lag,
            estimator,
            min_t: None,
            event: None,
            permutations: 100,
            level: 0.95,
            seed: 0,
        }
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lag_seed(seed: u64, lag: usize) -> u64 {
    seed ^ splitmix64(lag as u64 | (1 << 63))
}

/// Draws a bootstrap sample of the action column: each slot is filled
/// by an action picked uniformly from the observed column.
pub fn resample_actions<R: Rng>(actions: &[Symbol], rng: &mut R) -> Vec<Symbol> {
    (0..actions.len())
        .map(|_| actions[rng.gen_range(0..actions.len())])
        .collect()
}

/// 1-based index into the sorted replicates for the given level.
///
/// This is the ceiling of `level * reps`, nudged down by 1e-9 first so
/// products like `0.95 * 300` that land a hair above an integer do not
/// get bumped a full rank upward.
pub(crate) fn threshold_index(reps: usize, level: f64) -> usize {
    let raw = (level * reps as f64 - 1e-9).ceil() as i64;
    raw.clamp(1, reps as i64) as usize
}

/// Dense per-sample context ids for the suffix projection
/// `(x_now, last history_len steps)`.
fn context_ids(samples: &[LagSample], history_len: usize, lag: usize) -> Vec<u32> {
    let mut ids = HashMap::new();
    let mut out = Vec::with_capacity(samples.len());
    let mut key: Vec<u32> = Vec::with_capacity(1 + 3 * history_len);
    for sample in samples {
        key.clear();
        key.push(sample.x_now.0);
        for step in &sample.history[lag - history_len..] {
            key.push(step.x.0);
            key.push(step.a.0);
            key.push(step.r.0);
        }
        let next = ids.len() as u32;
        let id = *ids.entry(key.clone().into_boxed_slice()).or_insert(next);
        out.push(id);
    }
    out
}

fn table_entropy(
    ctx: &[u32],
    actions: &[u32],
    estimator: Estimator,
    scratch: &mut HashMap<(u32, u32), u64>,
) -> f64 {
    scratch.clear();
    for (&c, &a) in ctx.iter().zip(actions) {
        *scratch.entry((c, a)).or_insert(0) += 1;
    }
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for &c in scratch.values() {
        *hist.entry(c).or_insert(0) += 1;
    }
    entropy_of_histogram(&hist, actions.len() as u64, estimator).expect("nonempty")
}

/// Runs the resampling test for chain term `i` over samples carrying
/// at least `i` history steps.
fn run_test(
    samples: &[LagSample],
    i: usize,
    estimator: Estimator,
    permutations: usize,
    level: f64,
    seed: u64,
) -> Result<PermutationResult> {
    if permutations < 20 {
        return Err(Error::TooFewReplicates {
            replicates: permutations,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel { level });
    }
    let first = samples.first().ok_or(Error::EmptyTable)?;
    let lag = first.lag();
    if let Some(bad) = samples.iter().find(|s| s.lag() != lag) {
        return Err(Error::MixedLags {
            a: lag,
            b: bad.lag(),
        });
    }
    if i > lag {
        return Err(Error::ProjectionTooLong {
            needed: i,
            available: lag,
        });
    }

    let observed = lag_statistic(samples, i, estimator)?;

    let actions: Vec<u32> = samples.iter().map(|s| s.a_now.0).collect();
    // Resampling only moves the action column, so the two x-side
    // entropies are constants of the test; only the two action-bearing
    // tables are recounted per replicate.
    let (small_ctx, big_ctx, const_right, const_cond) = if i == 0 {
        let small = vec![0u32; samples.len()];
        let big = context_ids(samples, 0, lag);
        let h_x = entropy(&count_table(samples, Projection::new(true, false, 0))?, estimator)?;
        (small, big, h_x, 0.0)
    } else {
        let small = context_ids(samples, i - 1, lag);
        let big = context_ids(samples, i, lag);
        let h_x_big = entropy(&count_table(samples, Projection::new(true, false, i))?, estimator)?;
        let h_x_small = entropy(
            &count_table(samples, Projection::new(true, false, i - 1))?,
            estimator,
        )?;
        (small, big, h_x_big, h_x_small)
    };

    let n = actions.len();
    let replicates: Vec<f64> = (1..=permutations as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ splitmix64(j));
            let resampled: Vec<u32> = (0..n).map(|_| actions[rng.gen_range(0..n)]).collect();
            let mut scratch = HashMap::with_capacity(n.min(1 << 16));
            let h_small = table_entropy(&small_ctx, &resampled, estimator, &mut scratch);
            let h_big = table_entropy(&big_ctx, &resampled, estimator, &mut scratch);
            combine(h_small, const_right, h_big, const_cond)
        })
        .collect();

    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[threshold_index(permutations, level) - 1];
    let degenerate = replicates.iter().all(|&v| v == observed);
    Ok(PermutationResult {
        observed_nats: observed,
        replicates,
        threshold_nats: threshold,
        significant: !degenerate && observed >= threshold,
        degenerate_null: degenerate,
        level,
        seed,
    })
}

/// Tests the deepest chain term the samples support: `M_0` for bare
/// samples, `M_lag` for samples carrying history.
pub fn permutation_test(
    samples: &[LagSample],
    estimator: Estimator,
    permutations: usize,
    level: f64,
    seed: u64,
) -> Result<PermutationResult> {
    let lag = samples.first().ok_or(Error::EmptyTable)?.lag();
    run_test(samples, lag, estimator, permutations, level, seed)
}

/// Full memory profile with one resampling test per lag.
///
/// All lags share one sample set, exactly as in
/// [`crate::infotheory::memory_profile`]; each lag's test runs with a
/// seed derived from `options.seed` and the lag, so single-lag reruns
/// reproduce the profile's numbers.
pub fn profile_with_significance(
    dataset: &TrajectoryDataset,
    options: &ProfileOptions,
) -> Result<MemoryProfile> {
    let (samples, min_t) = profile_samples(
        dataset,
        options.max_lag,
        options.min_t,
        options.event.as_ref(),
    )?;
    let mut lags = profile_terms(&samples, options.max_lag, options.estimator)?;
    for est in lags.iter_mut() {
        let test = run_test(
            &samples,
            est.lag,
            options.estimator,
            options.permutations,
            options.level,
            lag_seed(options.seed, est.lag),
        )?;
        debug_assert_eq!(test.observed_nats, est.estimate_nats);
        est.permutation = Some(test);
    }
    Ok(MemoryProfile {
        estimator: options.estimator,
        min_t,
        lags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{extract_samples, TrajectoryDataset};
    use rand::SeedableRng;

    fn copy_policy_dataset(seed: u64, episodes: usize) -> TrajectoryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = (0..episodes)
            .map(|i| {
                let xs: Vec<u8> = (0..4).map(|_| rng.gen_range(0..2)).collect();
                let steps = (0..4)
                    .map(|t| {
                        let a = if t == 0 { rng.gen_range(0..2) } else { xs[t - 1] };
                        (xs[t].to_string(), a.to_string(), "0".to_owned())
                    })
                    .collect();
                (format!("ep{i}"), steps)
            })
            .collect::<Vec<_>>();
        TrajectoryDataset::from_parts(eps).unwrap()
    }

    fn independent_dataset(seed: u64, episodes: usize) -> TrajectoryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = (0..episodes)
            .map(|i| {
                let steps = (0..4)
                    .map(|_| {
                        (
                            rng.gen_range(0..2u8).to_string(),
                            rng.gen_range(0..2u8).to_string(),
                            "0".to_owned(),
                        )
                    })
                    .collect();
                (format!("ep{i}"), steps)
            })
            .collect::<Vec<_>>();
        TrajectoryDataset::from_parts(eps).unwrap()
    }

    #[test]
    fn parameter_validation() {
        let ds = copy_policy_dataset(1, 20);
        let samples = extract_samples(&ds, 1, 2).unwrap();
        assert!(matches!(
            permutation_test(&samples, Estimator::Plugin, 19, 0.95, 0).unwrap_err(),
            Error::TooFewReplicates { replicates: 19 }
        ));
        for level in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(
                permutation_test(&samples, Estimator::Plugin, 100, level, 0).unwrap_err(),
                Error::InvalidLevel { .. }
            ));
        }
        assert!(matches!(
            permutation_test(&[], Estimator::Plugin, 100, 0.95, 0).unwrap_err(),
            Error::EmptyTable
        ));
    }

    #[test]
    fn threshold_index_handles_float_edges() {
        assert_eq!(threshold_index(100, 0.95), 95);
        assert_eq!(threshold_index(20, 0.95), 19);
        // 0.95 * 300 lands a hair above 285.0 in floating point; the
        // nudge keeps the rank at 285.
        assert_eq!(threshold_index(300, 0.95), 285);
        assert_eq!(threshold_index(100, 0.999), 100);
        assert_eq!(threshold_index(100, 0.001), 1);
    }

    #[test]
    fn strong_lag_one_signal_is_significant() {
        let ds = copy_policy_dataset(7, 400);
        let samples = extract_samples(&ds, 1, 2).unwrap();
        let result = permutation_test(&samples, Estimator::Plugin, 100, 0.95, 42).unwrap();
        assert!(result.significant);
        assert!(!result.degenerate_null);
        assert!(result.observed_nats > 0.5, "observed {}", result.observed_nats);
        assert!(result.observed_nats > result.threshold_nats);
        assert_eq!(result.replicates.len(), 100);
    }

    #[test]
    fn independent_actions_are_not_significant() {
        let ds = independent_dataset(11, 400);
        let samples = extract_samples(&ds, 1, 2).unwrap();
        let result = permutation_test(&samples, Estimator::Grassberger, 100, 0.95, 42).unwrap();
        assert!(!result.significant);
        assert!(!result.degenerate_null);
    }

    #[test]
    fn constant_actions_give_a_degenerate_null() {
        let ds = TrajectoryDataset::from_parts(
            (0..30)
                .map(|i| {
                    (
                        format!("ep{i}"),
                        vec![(i.to_string(), "hold".to_owned(), "0".to_owned()); 3],
                    )
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let samples = extract_samples(&ds, 1, 2).unwrap();
        let result = permutation_test(&samples, Estimator::Plugin, 50, 0.95, 5).unwrap();
        assert!(result.degenerate_null);
        assert!(!result.significant);
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let ds = copy_policy_dataset(3, 100);
        let samples = extract_samples(&ds, 2, 3).unwrap();
        let a = permutation_test(&samples, Estimator::Grassberger, 60, 0.9, 123).unwrap();
        let b = permutation_test(&samples, Estimator::Grassberger, 60, 0.9, 123).unwrap();
        assert_eq!(a.replicates, b.replicates);
        assert_eq!(a.threshold_nats, b.threshold_nats);
        assert_eq!(a.observed_nats, b.observed_nats);

        let c = permutation_test(&samples, Estimator::Grassberger, 60, 0.9, 124).unwrap();
        assert_ne!(a.replicates, c.replicates);
    }

    #[test]
    fn resample_draws_from_the_observed_column() {
        let actions: Vec<Symbol> = [0u32, 0, 1, 2].iter().map(|&i| Symbol(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let drawn = resample_actions(&actions, &mut rng);
        assert_eq!(drawn.len(), actions.len());
        assert!(drawn.iter().all(|s| actions.contains(s)));

        let mut rng_again = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(resample_actions(&actions, &mut rng_again), drawn);
    }

    #[test]
    fn profile_tests_match_their_point_estimates() {
        let ds = copy_policy_dataset(21, 150);
        let options = ProfileOptions {
            permutations: 40,
            seed: 7,
            ..ProfileOptions::new(2, Estimator::Plugin)
        };
        let profile = profile_with_significance(&ds, &options).unwrap();
        assert_eq!(profile.lags.len(), 3);
        for est in &profile.lags {
            let test = est.permutation.as_ref().expect("test attached");
            assert_eq!(test.observed_nats, est.estimate_nats);
            assert_eq!(test.replicates.len(), 40);
        }
        assert!(profile.lags[1].permutation.as_ref().unwrap().significant);

        let again = profile_with_significance(&ds, &options).unwrap();
        for (a, b) in profile.lags.iter().zip(&again.lags) {
            assert_eq!(a.estimate_nats, b.estimate_nats);
            assert_eq!(
                a.permutation.as_ref().unwrap().replicates,
                b.permutation.as_ref().unwrap().replicates
            );
        }
    }
}
