//! Lag-resolved information statistics over extracted samples.
//!
//! The central quantity is the chain of terms `M_0, M_1, ..., M_k`:
//! `M_0` is the mutual information between the current action and the
//! current observation, and `M_i` for `i >= 1` is the conditional
//! mutual information between the current action and the step `i` lags
//! back, given the current observation and everything in between. Each
//! term reduces to a signed combination of four table entropies, so any
//! entropy estimator plugs in uniformly.

use std::fmt;
use std::sync::Arc;

use crate::entropy::{count_table, entropy, Estimator, Projection};
use crate::error::{Error, Result};
use crate::significance::PermutationResult;
use crate::trajectory::{collect_samples_with, LagSample, StepRecord, Symbol, TrajectoryDataset};

/// Restriction applied while collecting samples.
///
/// The predicate sees the full episode prefix before time `t` plus the
/// observation at `t`, and is consulted before any lag windowing, so
/// the same time points survive at every lag.
#[derive(Clone)]
pub struct EventPredicate(Arc<dyn Fn(&[StepRecord], Symbol) -> bool + Send + Sync>);

impl EventPredicate {
    pub fn new(f: impl Fn(&[StepRecord], Symbol) -> bool + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn accepts(&self, prefix: &[StepRecord], x_now: Symbol) -> bool {
        (self.0)(prefix, x_now)
    }
}

impl fmt::Debug for EventPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EventPredicate(..)")
    }
}

/// Fixed combination order for the four-entropy chain term, shared by
/// every code path so equal inputs give bit-identical outputs.
#[inline]
pub(crate) fn combine(h_left: f64, h_right: f64, h_joint: f64, h_cond: f64) -> f64 {
    h_left + h_right - h_joint - h_cond
}

/// The `i`-th chain term computed from samples carrying at least `i`
/// history steps.
///
/// For `i = 0` this is the plug-through of `H(A) + H(X) - H(A, X)`;
/// for `i >= 1` it is
/// `H(A,X,W) + H(X,W,Z) - H(A,X,W,Z) - H(X,W)` where `W` is the
/// `i - 1` most recent steps and `Z` the step `i` lags back.
pub fn lag_statistic(samples: &[LagSample], i: usize, estimator: Estimator) -> Result<f64> {
    if i == 0 {
        let h_a = entropy(&count_table(samples, Projection::new(false, true, 0))?, estimator)?;
        let h_x = entropy(&count_table(samples, Projection::new(true, false, 0))?, estimator)?;
        let h_ax = entropy(&count_table(samples, Projection::new(true, true, 0))?, estimator)?;
        return Ok(combine(h_a, h_x, h_ax, 0.0));
    }
    let h_ax_small = entropy(
        &count_table(samples, Projection::new(true, true, i - 1))?,
        estimator,
    )?;
    let h_x_big = entropy(&count_table(samples, Projection::new(true, false, i))?, estimator)?;
    let h_ax_big = entropy(&count_table(samples, Projection::new(true, true, i))?, estimator)?;
    let h_x_small = entropy(
        &count_table(samples, Projection::new(true, false, i - 1))?,
        estimator,
    )?;
    Ok(combine(h_ax_small, h_x_big, h_ax_big, h_x_small))
}

/// Mutual information between the current action and observation.
pub fn mutual_information(samples: &[LagSample], estimator: Estimator) -> Result<f64> {
    lag_statistic(samples, 0, estimator)
}

/// Conditional mutual information between the current action and the
/// oldest history step, given the observation and the newer steps.
///
/// Uses the full history the samples carry, so extract at the lag you
/// want to test. Samples without history are rejected.
pub fn conditional_mi(samples: &[LagSample], estimator: Estimator) -> Result<f64> {
    let first = samples.first().ok_or(Error::EmptyTable)?;
    let lag = first.lag();
    if lag == 0 {
        return Err(Error::NoHistory);
    }
    lag_statistic(samples, lag, estimator)
}

/// One row of a memory profile.
#[derive(Debug, Clone)]
pub struct LagEstimate {
    pub lag: usize,
    pub estimate_nats: f64,
    pub n_samples: usize,
    /// Distinct conditioning contexts: observation plus the `lag - 1`
    /// most recent steps (just the observation at lags 0 and 1).
    pub n_distinct_contexts: usize,
    pub permutation: Option<PermutationResult>,
}

/// Chain estimates for lags `0 ..= max_lag` over one shared sample set.
#[derive(Debug, Clone)]
pub struct MemoryProfile {
    pub estimator: Estimator,
    pub min_t: usize,
    pub lags: Vec<LagEstimate>,
}

impl MemoryProfile {
    /// Sum of the lag `>= 1` terms. On a shared sample set the chain
    /// telescopes, so this equals a two-table difference of entropies
    /// at the endpoints.
    pub fn chain_sum(&self) -> f64 {
        self.lags.iter().skip(1).map(|l| l.estimate_nats).sum()
    }
}

/// Collects the shared sample set all lags of a profile are computed
/// on: one extraction at `max_lag`, `min_t` defaulting to
/// `max_lag + 1`, with the event restriction applied to full prefixes.
pub(crate) fn profile_samples(
    dataset: &TrajectoryDataset,
    max_lag: usize,
    min_t: Option<usize>,
    event: Option<&EventPredicate>,
) -> Result<(Vec<LagSample>, usize)> {
    let min_t = min_t.unwrap_or(max_lag + 1);
    let samples = match event {
        Some(ev) => {
            collect_samples_with(dataset, max_lag, min_t, |prefix, x| ev.accepts(prefix, x))?
        }
        None => collect_samples_with(dataset, max_lag, min_t, |_, _| true)?,
    };
    if samples.is_empty() {
        return Err(Error::NoEligibleSamples { lag: max_lag });
    }
    Ok((samples, min_t))
}

/// Estimates the memory chain `M_0 ..= M_{max_lag}` of a dataset.
///
/// Every lag is evaluated on the same samples (those with
/// `t >= min_t`, default `max_lag + 1`), shorter lags seeing suffix
/// windows of the longer histories. That keeps the lag terms
/// comparable and makes their sum telescope exactly.
pub fn memory_profile(
    dataset: &TrajectoryDataset,
    max_lag: usize,
    estimator: Estimator,
    min_t: Option<usize>,
    event: Option<&EventPredicate>,
) -> Result<MemoryProfile> {
    let (samples, min_t) = profile_samples(dataset, max_lag, min_t, event)?;
    let lags = profile_terms(&samples, max_lag, estimator)?;
    Ok(MemoryProfile {
        estimator,
        min_t,
        lags,
    })
}

/// Computes all chain terms over a shared sample set, reusing each
/// projected table across adjacent terms.
pub(crate) fn profile_terms(
    samples: &[LagSample],
    max_lag: usize,
    estimator: Estimator,
) -> Result<Vec<LagEstimate>> {
    let mut h_x = Vec::with_capacity(max_lag + 1);
    let mut h_ax = Vec::with_capacity(max_lag + 1);
    let mut n_ctx = Vec::with_capacity(max_lag + 1);
    for j in 0..=max_lag {
        let t_x = count_table(samples, Projection::new(true, false, j))?;
        n_ctx.push(t_x.n_distinct());
        h_x.push(entropy(&t_x, estimator)?);
        let t_ax = count_table(samples, Projection::new(true, true, j))?;
        h_ax.push(entropy(&t_ax, estimator)?);
    }
    let h_a = entropy(&count_table(samples, Projection::new(false, true, 0))?, estimator)?;

    let mut lags = Vec::with_capacity(max_lag + 1);
    for i in 0..=max_lag {
        let estimate_nats = if i == 0 {
            combine(h_a, h_x[0], h_ax[0], 0.0)
        } else {
            combine(h_ax[i - 1], h_x[i], h_ax[i], h_x[i - 1])
        };
        lags.push(LagEstimate {
            lag: i,
            estimate_nats,
            n_samples: samples.len(),
            n_distinct_contexts: n_ctx[i.saturating_sub(1)],
            permutation: None,
        });
    }
    Ok(lags)
}
