//! Synthetic environment/policy pairs with known memory structure.
//!
//! Each environment has an exact generative description, so the same
//! specification can be sampled into a [`TrajectoryDataset`] or
//! enumerated into an exact [`JointPolicyModel`] for oracle checks.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capacity::JointPolicyModel;
use crate::error::{Error, Result};
use crate::significance::splitmix64;
use crate::trajectory::TrajectoryDataset;

/// The built-in environment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    /// Reactive: actions depend only on the current observation.
    Markov,
    /// Binary observations; the action is the running XOR of all
    /// observations so far.
    Parity,
    /// The final action repeats the first step's cue; everything
    /// before it is uniform noise.
    DelayedCue,
    /// Each action copies the previous observation, with noise.
    NoisyCopy,
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" => Ok(Self::Markov),
            "parity" => Ok(Self::Parity),
            "delayed_cue" | "delayed-cue" => Ok(Self::DelayedCue),
            "noisy_copy" | "noisy-copy" => Ok(Self::NoisyCopy),
            other => Err(Error::EnvSpec(format!(
                "unknown environment {other:?}; expected one of markov, parity, delayed_cue, noisy_copy"
            ))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Markov => "markov",
            Self::Parity => "parity",
            Self::DelayedCue => "delayed_cue",
            Self::NoisyCopy => "noisy_copy",
        };
        f.write_str(name)
    }
}

/// Full description of a synthetic environment run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Steps per episode.
    pub horizon: usize,
    /// Observation alphabet size `m`; actions share the alphabet.
    pub alphabet_size: usize,
    /// Mixing weight of the uniform component where the family uses
    /// one (`markov`, `noisy_copy`); ignored otherwise.
    pub noise: f64,
    /// For `delayed_cue`: carry the cue in the first reward instead of
    /// the first observation.
    pub reward_cue: bool,
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, horizon: usize, alphabet_size: usize) -> Self {
        Self {
            kind,
            horizon,
            alphabet_size,
            noise: 0.0,
            reward_cue: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::EnvSpec("horizon must be at least 1".into()));
        }
        if self.alphabet_size < 2 {
            return Err(Error::EnvSpec("alphabet size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::EnvSpec(format!(
                "noise must lie in [0, 1], got {}",
                self.noise
            )));
        }
        if self.kind == EnvKind::Parity && self.alphabet_size != 2 {
            return Err(Error::EnvSpec(
                "parity is defined for alphabet size 2 only".into(),
            ));
        }
        if self.reward_cue && self.kind != EnvKind::DelayedCue {
            return Err(Error::EnvSpec(
                "reward_cue applies to the delayed_cue environment only".into(),
            ));
        }
        if self.reward_cue && self.horizon < 2 {
            return Err(Error::EnvSpec(
                "reward_cue needs a horizon of at least 2".into(),
            ));
        }
        Ok(())
    }

    fn numeric_tokens(n: usize) -> Vec<String> {
        (0..n).map(|v| v.to_string()).collect()
    }

    pub fn x_tokens(&self) -> Vec<String> {
        Self::numeric_tokens(self.alphabet_size)
    }

    pub fn a_tokens(&self) -> Vec<String> {
        Self::numeric_tokens(self.alphabet_size)
    }

    pub fn r_tokens(&self) -> Vec<String> {
        if self.reward_cue {
            Self::numeric_tokens(self.alphabet_size)
        } else {
            vec!["0".to_string()]
        }
    }

    fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.alphabet_size as f64; self.alphabet_size]
    }

    fn delta(&self, at: usize) -> Vec<f64> {
        let mut dist = vec![0.0; self.alphabet_size];
        dist[at] = 1.0;
        dist
    }

    fn noisy_delta(&self, at: usize) -> Vec<f64> {
        let m = self.alphabet_size as f64;
        let mut dist = vec![self.noise / m; self.alphabet_size];
        dist[at] += 1.0 - self.noise;
        dist
    }

    /// Observation distribution at step `t` (1-based), given the
    /// completed steps so far as `(x, a, r)` index triples.
    fn x_dist(&self, _t: usize, _hist: &[(usize, usize, usize)]) -> Vec<f64> {
        self.uniform()
    }

    /// Action distribution at step `t` given the history and the
    /// current observation.
    fn a_dist(&self, t: usize, hist: &[(usize, usize, usize)], x: usize) -> Vec<f64> {
        match self.kind {
            EnvKind::Markov => self.noisy_delta(x),
            EnvKind::Parity => {
                let parity = hist.iter().fold(x, |acc, &(hx, _, _)| acc ^ hx);
                self.delta(parity)
            }
            EnvKind::DelayedCue => {
                if t < self.horizon {
                    self.uniform()
                } else if self.reward_cue {
                    self.delta(hist[0].2)
                } else if let Some(first) = hist.first() {
                    self.delta(first.0)
                } else {
                    // Horizon 1 degenerates to repeating the cue now.
                    self.delta(x)
                }
            }
            EnvKind::NoisyCopy => match hist.last() {
                Some(&(prev_x, _, _)) => self.noisy_delta(prev_x),
                None => self.uniform(),
            },
        }
    }

    /// Reward distribution at step `t` given history, observation and
    /// action.
    fn r_dist(&self, t: usize, _hist: &[(usize, usize, usize)], _x: usize, _a: usize) -> Vec<f64> {
        if self.reward_cue {
            if t == 1 {
                self.uniform()
            } else {
                let mut dist = vec![0.0; self.alphabet_size];
                dist[0] = 1.0;
                dist
            }
        } else {
            vec![1.0]
        }
    }
}

fn sample(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (idx, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        if u < acc {
            return idx;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples a dataset of `episodes` episodes from the environment.
///
/// Each episode is driven by its own generator seeded from the spec
/// seed and the episode index, so a longer run extends a shorter one
/// with the same spec rather than reshuffling it.
pub fn generate(spec: &EnvSpec, episodes: usize) -> Result<TrajectoryDataset> {
    spec.validate()?;
    if episodes == 0 {
        return Err(Error::EnvSpec("episode count must be at least 1".into()));
    }
    let x_tokens = spec.x_tokens();
    let a_tokens = spec.a_tokens();
    let r_tokens = spec.r_tokens();
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ splitmix64(i as u64 + 1));
        let mut hist: Vec<(usize, usize, usize)> = Vec::with_capacity(spec.horizon);
        for t in 1..=spec.horizon {
            let x = sample(&spec.x_dist(t, &hist), &mut rng);
            let a = sample(&spec.a_dist(t, &hist, x), &mut rng);
            let r = sample(&spec.r_dist(t, &hist, x, a), &mut rng);
            hist.push((x, a, r));
        }
        let steps = hist
            .iter()
            .map(|&(x, a, r)| (x_tokens[x].clone(), a_tokens[a].clone(), r_tokens[r].clone()))
            .collect();
        out.push((format!("ep-{i:06}"), steps));
    }
    TrajectoryDataset::from_parts(out)
}

/// Enumerates the environment's exact episode distribution.
///
/// Only feasible at toy scale; refuses once the raw episode space
/// `|Z|^H` passes one million entries.
pub fn to_joint_model(spec: &EnvSpec) -> Result<JointPolicyModel> {
    spec.validate()?;
    let z_size = spec.alphabet_size * spec.alphabet_size * spec.r_tokens().len();
    let mut space = 1u64;
    for _ in 0..spec.horizon {
        space = space.saturating_mul(z_size as u64);
        if space > 1_000_000 {
            return Err(Error::EnvSpec(format!(
                "episode space |Z|^H exceeds 1e6 (|Z| = {z_size}, H = {}); too large to enumerate",
                spec.horizon
            )));
        }
    }
    let mut episodes = Vec::new();
    let mut hist = Vec::with_capacity(spec.horizon);
    enumerate(spec, &mut hist, 1.0, &mut episodes);
    JointPolicyModel::new(
        spec.horizon,
        spec.x_tokens(),
        spec.a_tokens(),
        spec.r_tokens(),
        episodes,
    )
}

fn enumerate(
    spec: &EnvSpec,
    hist: &mut Vec<(usize, usize, usize)>,
    prob: f64,
    out: &mut Vec<(Vec<(usize, usize, usize)>, f64)>,
) {
    let t = hist.len() + 1;
    if t > spec.horizon {
        out.push((hist.clone(), prob));
        return;
    }
    let x_dist = spec.x_dist(t, hist);
    for (x, &px) in x_dist.iter().enumerate().filter(|(_, &p)| p > 0.0) {
        let a_dist = spec.a_dist(t, hist, x);
        for (a, &pa) in a_dist.iter().enumerate().filter(|(_, &p)| p > 0.0) {
            let r_dist = spec.r_dist(t, hist, x, a);
            for (r, &pr) in r_dist.iter().enumerate().filter(|(_, &p)| p > 0.0) {
                hist.push((x, a, r));
                enumerate(spec, hist, prob * px * pa * pr, out);
                hist.pop();
            }
        }
    }
}
