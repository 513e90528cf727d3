//! Count tables and discrete entropy estimation.
//!
//! Two estimators are provided: the plug-in (maximum likelihood)
//! estimate and a bias-corrected estimate built from the digamma
//! function. Both consume a [`CountTable`] and report entropy in nats.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::trajectory::LagSample;

/// Digamma function for positive real arguments.
///
/// Small arguments are shifted up with the recurrence
/// `psi(x) = psi(x + 1) - 1/x`, then the asymptotic expansion is
/// evaluated. Absolute error stays below 1e-12 over the range used
/// here (half-integers and integers up to 1e7 and beyond).
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::DigammaDomain { x });
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = 1.0 / 12.0
        - inv2
            * (1.0 / 120.0
                - inv2
                    * (1.0 / 252.0
                        - inv2
                            * (1.0 / 240.0
                                - inv2
                                    * (1.0 / 132.0
                                        - inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0))))));
    Ok(acc + x.ln() - 0.5 * inv - inv2 * tail)
}

/// `G(1) = -gamma - ln 2`.
const G_ONE: f64 = -1.2703628454614782;
/// `G(2) = G(1) + 2`.
const G_TWO: f64 = G_ONE + 2.0;
/// Counts at most this large are served from the shared cache.
const G_CACHE_MAX: u64 = 1 << 20;

static G_CACHE: RwLock<Vec<f64>> = RwLock::new(Vec::new());

/// Bias-correction term `G(n)` for a cell observed `n >= 1` times.
///
/// Defined as `psi(n) + ((-1)^n / 2) * (psi((n+1)/2) - psi(n/2))`,
/// which satisfies `G(1) = -gamma - ln 2`, `G(2) = G(1) + 2`, and the
/// two-step recurrences `G(n+2) = G(n) + 2/n` (odd n) and
/// `G(n+2) = G(n) + 2/(n+1)` (even n). Values are cached up to the
/// largest count seen (capped at 2^20); larger counts fall back to the
/// closed form.
pub fn grassberger_g(n: u64) -> f64 {
    assert!(n >= 1, "G(n) is defined for n >= 1");
    if n <= G_CACHE_MAX {
        {
            let cache = G_CACHE.read().unwrap();
            if let Some(&g) = cache.get(n as usize) {
                if !g.is_nan() {
                    return g;
                }
            }
        }
        let mut cache = G_CACHE.write().unwrap();
        if cache.is_empty() {
            cache.extend([f64::NAN, G_ONE, G_TWO]);
        }
        while cache.len() <= n as usize {
            let m = cache.len();
            let step = if m % 2 == 1 {
                2.0 / (m as f64 - 2.0)
            } else {
                2.0 / (m as f64 - 1.0)
            };
            let next = cache[m - 2] + step;
            cache.push(next);
        }
        return cache[n as usize];
    }
    g_closed(n)
}

fn g_closed(n: u64) -> f64 {
    let n_f = n as f64;
    let sign = if n % 2 == 0 { 0.5 } else { -0.5 };
    let psi_n = digamma(n_f).expect("n >= 1");
    let psi_hi = digamma((n_f + 1.0) / 2.0).expect("positive");
    let psi_lo = digamma(n_f / 2.0).expect("positive");
    psi_n + sign * (psi_hi - psi_lo)
}

/// Which estimator to apply to a count table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Maximum-likelihood estimate `-sum p_i ln p_i` with `p_i = n_i/N`.
    Plugin,
    /// Bias-corrected estimate `ln N - (1/N) sum n_i G(n_i)`.
    Grassberger,
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plugin" => Ok(Estimator::Plugin),
            "grassberger" => Ok(Estimator::Grassberger),
            other => Err(format!(
                "unknown estimator {other:?}; expected \"plugin\" or \"grassberger\""
            )),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Plugin => "plugin",
            Estimator::Grassberger => "grassberger",
        })
    }
}

/// Selects which parts of a [`LagSample`] feed a count table.
///
/// `history_len` keeps the most recent steps of the sample history, so
/// a shorter projection of a long-lag sample set matches what a fresh
/// extraction at the shorter lag would have produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub x_now: bool,
    pub a_now: bool,
    pub history_len: usize,
}

impl Projection {
    pub fn new(x_now: bool, a_now: bool, history_len: usize) -> Self {
        Self {
            x_now,
            a_now,
            history_len,
        }
    }
}

/// Multiset of projected tuples, stored as symbol-id keys with counts.
#[derive(Debug, Clone, Default)]
pub struct CountTable {
    counts: HashMap<Box<[u32]>, u64>,
    total: u64,
}

impl CountTable {
    /// Builds a table from bare counts; handy for tests and benchmarks.
    /// Zero counts are ignored.
    pub fn from_counts(counts: impl IntoIterator<Item = u64>) -> Self {
        let mut table = CountTable::default();
        for (i, c) in counts.into_iter().enumerate() {
            if c > 0 {
                table.counts.insert(Box::from([i as u32]), c);
                table.total += c;
            }
        }
        table
    }

    /// Total number of samples counted.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct tuples observed.
    pub fn n_distinct(&self) -> usize {
        self.counts.len()
    }

    /// Multiplicity of each count value, keyed by the count.
    ///
    /// Two tables with the same histogram get identical entropy
    /// estimates, and iterating the histogram (rather than the hash
    /// map) keeps floating-point summation order deterministic.
    pub fn count_histogram(&self) -> BTreeMap<u64, u64> {
        let mut hist = BTreeMap::new();
        for &c in self.counts.values() {
            *hist.entry(c).or_insert(0u64) += 1;
        }
        hist
    }

    fn insert_key(&mut self, key: Box<[u32]>) {
        *self.counts.entry(key).or_insert(0) += 1;
        self.total += 1;
    }
}

/// Counts the projected tuples of a sample set.
///
/// All samples must carry the same history length, which must be at
/// least `projection.history_len`.
pub fn count_table(samples: &[LagSample], projection: Projection) -> Result<CountTable> {
    let first = samples.first().ok_or(Error::EmptyTable)?;
    let lag = first.lag();
    if projection.history_len > lag {
        return Err(Error::ProjectionTooLong {
            needed: projection.history_len,
            available: lag,
        });
    }
    let width =
        usize::from(projection.x_now) + usize::from(projection.a_now) + 3 * projection.history_len;
    let mut table = CountTable::default();
    let mut key = Vec::with_capacity(width);
    for sample in samples {
        if sample.lag() != lag {
            return Err(Error::MixedLags {
                a: lag,
                b: sample.lag(),
            });
        }
        key.clear();
        if projection.x_now {
            key.push(sample.x_now.0);
        }
        if projection.a_now {
            key.push(sample.a_now.0);
        }
        for step in &sample.history[lag - projection.history_len..] {
            key.push(step.x.0);
            key.push(step.a.0);
            key.push(step.r.0);
        }
        table.insert_key(key.as_slice().into());
    }
    Ok(table)
}

/// Entropy of a count table, in nats.
pub fn entropy(table: &CountTable, estimator: Estimator) -> Result<f64> {
    if table.total == 0 {
        return Err(Error::EmptyTable);
    }
    entropy_of_histogram(&table.count_histogram(), table.total, estimator)
}

/// Entropy from a count histogram (count value -> multiplicity).
///
/// Summation runs in ascending count order, so any two tables with the
/// same histogram produce bit-identical estimates regardless of how
/// their keys hashed.
pub(crate) fn entropy_of_histogram(
    hist: &BTreeMap<u64, u64>,
    total: u64,
    estimator: Estimator,
) -> Result<f64> {
    if total == 0 || hist.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = total as f64;
    match estimator {
        Estimator::Plugin => {
            if hist.len() == 1 {
                // One distinct count means the table is uniform over its
                // support, where the plug-in value is exactly the log of
                // the support size.
                let support = *hist.values().next().unwrap();
                return Ok((support as f64).ln());
            }
            let ln_n = n.ln();
            let mut sum = 0.0;
            for (&c, &mult) in hist {
                let c_f = c as f64;
                sum += (mult as f64) * c_f * (ln_n - c_f.ln()) / n;
            }
            Ok(sum)
        }
        Estimator::Grassberger => {
            let mut weighted = 0.0;
            for (&c, &mult) in hist {
                weighted += (mult as f64) * (c as f64) * grassberger_g(c);
            }
            Ok(n.ln() - weighted / n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{extract_samples, TrajectoryDataset};
    use approx::assert_abs_diff_eq;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    /// psi(n) = -gamma + H_{n-1} for positive integers.
    fn digamma_integer_oracle(n: u64) -> f64 {
        let mut h = 0.0;
        for k in 1..n {
            h += 1.0 / k as f64;
        }
        -EULER_GAMMA + h
    }

    /// psi(n + 1/2) = -gamma - 2 ln 2 + 2 * sum_{j=1..n} 1/(2j-1).
    fn digamma_half_integer_oracle(n: u64) -> f64 {
        let mut s = 0.0;
        for j in 1..=n {
            s += 1.0 / (2.0 * j as f64 - 1.0);
        }
        -EULER_GAMMA - 2.0 * std::f64::consts::LN_2 + 2.0 * s
    }

    #[test]
    fn digamma_matches_harmonic_closed_forms() {
        for n in 1..=40u64 {
            assert_abs_diff_eq!(
                digamma(n as f64).unwrap(),
                digamma_integer_oracle(n),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                digamma(n as f64 + 0.5).unwrap(),
                digamma_half_integer_oracle(n),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn digamma_matches_reference_points() {
        assert_abs_diff_eq!(digamma(0.5).unwrap(), -EULER_GAMMA - 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(digamma(1.0).unwrap(), -EULER_GAMMA, epsilon = 1e-13);
        assert_abs_diff_eq!(digamma(1.5).unwrap(), 0.036_489_973_978_576_52, epsilon = 1e-12);
        assert_abs_diff_eq!(digamma(100.0).unwrap(), 4.600_161_852_738_087, epsilon = 1e-12);
        assert_abs_diff_eq!(digamma(10_000.5).unwrap(), 9.210_340_372_392_85, epsilon = 1e-12);
    }

    #[test]
    fn digamma_rejects_nonpositive_arguments() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.0).is_err());
        assert!(digamma(f64::NAN).is_err());
    }

    #[test]
    fn g_anchors_and_parity_pairing() {
        assert_abs_diff_eq!(grassberger_g(1), -1.270_362_845_461_478_2, epsilon = 1e-13);
        assert_abs_diff_eq!(grassberger_g(2), 0.729_637_154_538_521_8, epsilon = 1e-13);
        assert_abs_diff_eq!(grassberger_g(4), 1.396_303_821_205_188_5, epsilon = 1e-12);
        // G(2m) = G(2m + 1): the correction is flat across each even/odd pair.
        for m in 1..=200u64 {
            assert_abs_diff_eq!(grassberger_g(2 * m), grassberger_g(2 * m + 1), epsilon = 1e-11);
        }
    }

    #[test]
    fn g_two_step_recurrence() {
        for n in 1..=500u64 {
            let step = if n % 2 == 1 {
                2.0 / n as f64
            } else {
                2.0 / (n as f64 + 1.0)
            };
            assert_abs_diff_eq!(
                grassberger_g(n + 2) - grassberger_g(n),
                step,
                epsilon = 1e-11
            );
        }
    }

    #[test]
    fn g_cache_agrees_with_closed_form() {
        for n in [1u64, 2, 3, 5, 17, 64, 1000, 4096, 65_536, 1 << 20] {
            assert_abs_diff_eq!(grassberger_g(n), g_closed(n), epsilon = 1e-10);
        }
        // Beyond the cache cap the closed form is used directly.
        assert_abs_diff_eq!(grassberger_g((1 << 20) + 1), g_closed((1 << 20) + 1), epsilon = 1e-12);
    }

    #[test]
    fn g_exceeds_ln_n_at_even_counts() {
        // The correction overshoots ln n on every even count; n = 2 is
        // the largest violation and it decays like 1/n^2.
        assert!(grassberger_g(2) > 2f64.ln());
        assert!(grassberger_g(2) - 2f64.ln() > 0.036);
        assert!(grassberger_g(100) > 100f64.ln());
        assert!(grassberger_g(3) < 3f64.ln());
        assert!(grassberger_g(101) < 101f64.ln());
    }

    #[test]
    fn plugin_uniform_tables_are_exact() {
        let table = CountTable::from_counts([1, 1, 1, 1]);
        assert_eq!(entropy(&table, Estimator::Plugin).unwrap(), 4f64.ln());

        let table = CountTable::from_counts([12_500; 8]);
        assert_eq!(entropy(&table, Estimator::Plugin).unwrap(), 8f64.ln());

        let table = CountTable::from_counts([5]);
        assert_eq!(entropy(&table, Estimator::Plugin).unwrap(), 0.0);
    }

    #[test]
    fn plugin_matches_direct_formula() {
        let table = CountTable::from_counts([2, 1, 1]);
        let expected = 0.5 * 2f64.ln() + 2.0 * 0.25 * 4f64.ln();
        assert_abs_diff_eq!(
            entropy(&table, Estimator::Plugin).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn grassberger_matches_direct_formula() {
        // counts {3, 1}: ln 4 - (3 G(3) + G(1)) / 4
        let table = CountTable::from_counts([3, 1]);
        assert_abs_diff_eq!(
            entropy(&table, Estimator::Grassberger).unwrap(),
            1.156_657_206_581_368_8,
            epsilon = 1e-12
        );
    }

    #[test]
    fn grassberger_converges_on_a_large_uniform_table() {
        let table = CountTable::from_counts([12_500; 8]);
        let h = entropy(&table, Estimator::Grassberger).unwrap();
        assert!((h - 8f64.ln()).abs() < 0.01, "h = {h}");
    }

    #[test]
    fn grassberger_can_undershoot_plugin_on_even_counts() {
        // With every count even the overshoot of G makes the corrected
        // estimate land below the plug-in value.
        let table = CountTable::from_counts([2, 2]);
        let plugin = entropy(&table, Estimator::Plugin).unwrap();
        let grass = entropy(&table, Estimator::Grassberger).unwrap();
        assert_abs_diff_eq!(plugin, 2f64.ln(), epsilon = 1e-15);
        assert!(grass < plugin, "grass = {grass}, plugin = {plugin}");
    }

    #[test]
    fn empty_tables_are_rejected() {
        let table = CountTable::from_counts([]);
        assert!(matches!(
            entropy(&table, Estimator::Plugin).unwrap_err(),
            Error::EmptyTable
        ));
        assert!(matches!(
            count_table(&[], Projection::new(true, true, 0)).unwrap_err(),
            Error::EmptyTable
        ));
    }

    fn two_step_samples() -> Vec<LagSample> {
        let ds = TrajectoryDataset::from_parts(vec![
            ("e0".to_owned(), vec![("l", "u", "0"), ("l", "u", "0")]),
            ("e1".to_owned(), vec![("r", "d", "0"), ("l", "u", "0")]),
            ("e2".to_owned(), vec![("r", "d", "0"), ("r", "d", "0")]),
        ])
        .unwrap();
        extract_samples(&ds, 1, 2).unwrap()
    }

    #[test]
    fn projection_selects_fields_and_recent_history() {
        let samples = two_step_samples();
        assert_eq!(samples.len(), 3);

        let x_only = count_table(&samples, Projection::new(true, false, 0)).unwrap();
        assert_eq!(x_only.total(), 3);
        assert_eq!(x_only.n_distinct(), 2);

        let with_history = count_table(&samples, Projection::new(true, true, 1)).unwrap();
        assert_eq!(with_history.n_distinct(), 3);

        let hist = x_only.count_histogram();
        assert_eq!(hist.get(&1), Some(&1));
        assert_eq!(hist.get(&2), Some(&1));
    }

    #[test]
    fn projection_longer_than_history_is_rejected() {
        let samples = two_step_samples();
        let err = count_table(&samples, Projection::new(true, true, 2)).unwrap_err();
        assert!(matches!(
            err,
            Error::ProjectionTooLong {
                needed: 2,
                available: 1
            }
        ));
    }

    #[test]
    fn mixed_history_lengths_are_rejected() {
        let mut samples = two_step_samples();
        let mut shorter = samples[0].clone();
        shorter.history = Box::from([]);
        samples.push(shorter);
        let err = count_table(&samples, Projection::new(true, true, 0)).unwrap_err();
        assert!(matches!(err, Error::MixedLags { a: 1, b: 0 }));
    }

    #[test]
    fn estimator_names_round_trip() {
        assert_eq!("plugin".parse::<Estimator>().unwrap(), Estimator::Plugin);
        assert_eq!(
            "grassberger".parse::<Estimator>().unwrap(),
            Estimator::Grassberger
        );
        assert!("shrinkage".parse::<Estimator>().is_err());
        assert_eq!(Estimator::Grassberger.to_string(), "grassberger");
    }
}
