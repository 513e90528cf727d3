//! Episode storage, JSON Lines I/O, and lag-window sample extraction.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Interned token. Symbols are only meaningful relative to the
/// [`SymbolTable`] that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(pub u32);

impl Symbol {
    /// Index into the owning table's token list.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bidirectional map between string tokens and dense symbol ids.
///
/// Ids are assigned in first-encounter order, so two loads of the same
/// file produce identical tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolTable {
    tokens: Vec<String>,
    ids: HashMap<String, Symbol>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the symbol for `token`, inserting it if new.
    pub fn intern(&mut self, token: &str) -> Symbol {
        if let Some(&sym) = self.ids.get(token) {
            return sym;
        }
        let sym = Symbol(self.tokens.len() as u32);
        self.tokens.push(token.to_owned());
        self.ids.insert(token.to_owned(), sym);
        sym
    }

    /// Looks up a token without inserting.
    pub fn resolve(&self, token: &str) -> Option<Symbol> {
        self.ids.get(token).copied()
    }

    /// The token behind a symbol. Panics on symbols from another table.
    pub fn token(&self, sym: Symbol) -> &str {
        &self.tokens[sym.index()]
    }

    /// Number of distinct tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One time step: observation, action, reward, all interned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepRecord {
    pub x: Symbol,
    pub a: Symbol,
    pub r: Symbol,
}

/// A single episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A collection of episodes sharing per-field symbol tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    trajectories: Vec<Trajectory>,
    x_table: SymbolTable,
    a_table: SymbolTable,
    r_table: SymbolTable,
}

impl TrajectoryDataset {
    /// Builds a dataset from `(id, steps)` pairs of string tokens.
    ///
    /// Symbols are interned in encounter order, field by field. Fails on
    /// an empty episode list or an episode without steps.
    pub fn from_parts<I, S>(episodes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<(S, S, S)>)>,
        S: AsRef<str>,
    {
        let mut x_table = SymbolTable::new();
        let mut a_table = SymbolTable::new();
        let mut r_table = SymbolTable::new();
        let mut trajectories = Vec::new();
        for (id, steps) in episodes {
            if steps.is_empty() {
                return Err(Error::EmptyEpisode { id });
            }
            let steps = steps
                .iter()
                .map(|(x, a, r)| StepRecord {
                    x: x_table.intern(x.as_ref()),
                    a: a_table.intern(a.as_ref()),
                    r: r_table.intern(r.as_ref()),
                })
                .collect();
            trajectories.push(Trajectory { id, steps });
        }
        if trajectories.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            trajectories,
            x_table,
            a_table,
            r_table,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn n_episodes(&self) -> usize {
        self.trajectories.len()
    }

    /// Total step count across all episodes.
    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn x_alphabet(&self) -> &SymbolTable {
        &self.x_table
    }

    pub fn a_alphabet(&self) -> &SymbolTable {
        &self.a_table
    }

    pub fn r_alphabet(&self) -> &SymbolTable {
        &self.r_table
    }
}

/// One extracted sample: the `lag` most recent full steps before time
/// `t`, plus the observation and action at `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagSample {
    /// Steps `t-lag .. t-1`, oldest first. Length equals the lag.
    pub history: Box<[StepRecord]>,
    pub x_now: Symbol,
    pub a_now: Symbol,
}

impl LagSample {
    pub fn lag(&self) -> usize {
        self.history.len()
    }
}

/// Extracts every lag-window sample with `t >= min_t`.
///
/// Times are 1-based within each episode. `min_t` must be at least
/// `lag + 1` so the window of past steps exists; episodes shorter than
/// `min_t` contribute nothing. An eligible episode of length `L`
/// contributes `L - min_t + 1` samples.
pub fn extract_samples(
    dataset: &TrajectoryDataset,
    lag: usize,
    min_t: usize,
) -> Result<Vec<LagSample>> {
    collect_samples_with(dataset, lag, min_t, |_, _| true)
}

/// As [`extract_samples`], keeping only samples whose full episode
/// prefix (steps before `t`) and current observation pass `accept`.
pub(crate) fn collect_samples_with(
    dataset: &TrajectoryDataset,
    lag: usize,
    min_t: usize,
    accept: impl Fn(&[StepRecord], Symbol) -> bool,
) -> Result<Vec<LagSample>> {
    if min_t < lag + 1 {
        return Err(Error::MinTTooSmall { min_t, lag });
    }
    let mut samples = Vec::new();
    for traj in &dataset.trajectories {
        for t in min_t..=traj.len() {
            let now = traj.steps[t - 1];
            let prefix = &traj.steps[..t - 1];
            if !accept(prefix, now.x) {
                continue;
            }
            samples.push(LagSample {
                history: prefix[prefix.len() - lag..].into(),
                x_now: now.x,
                a_now: now.a,
            });
        }
    }
    Ok(samples)
}

/// Replaces rewards with quantile-bin tokens `q0 .. q{bins-1}`.
///
/// Bin edges are the type-7 quantiles of the pooled numeric reward
/// values at probabilities `1/bins .. (bins-1)/bins`; a value equal to
/// an edge falls in the lower bin. Every reward token must parse as a
/// number. Observations and actions are untouched.
pub fn discretize_rewards(dataset: &TrajectoryDataset, bins: usize) -> Result<TrajectoryDataset> {
    if bins == 0 {
        return Err(Error::InvalidBins);
    }
    let mut values = Vec::with_capacity(dataset.n_steps());
    for traj in &dataset.trajectories {
        for step in &traj.steps {
            let token = dataset.r_table.token(step.r);
            let value: f64 = token.parse().map_err(|_| Error::NonNumericReward {
                token: token.to_owned(),
            })?;
            values.push(value);
        }
    }
    values.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins)
        .map(|j| quantile_type7(&values, j as f64 / bins as f64))
        .collect();

    let episodes = dataset.trajectories.iter().map(|traj| {
        let steps = traj
            .steps
            .iter()
            .map(|step| {
                let value: f64 = dataset.r_table.token(step.r).parse().unwrap();
                let bin = edges.iter().filter(|&&e| e < value).count();
                (
                    dataset.x_table.token(step.x).to_owned(),
                    dataset.a_table.token(step.a).to_owned(),
                    format!("q{bin}"),
                )
            })
            .collect();
        (traj.id.clone(), steps)
    });
    TrajectoryDataset::from_parts(episodes.collect::<Vec<_>>())
}

/// Type-7 quantile (linear interpolation) of pre-sorted values.
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Loads a dataset from a JSON Lines file.
///
/// Each line is one episode: `{"id": "...", "steps": [{"x": ..,
/// "a": .., "r": ..}, ..]}`. Observations and actions are strings or
/// integers; rewards are strings or numbers with zero fractional part.
/// Integers are stringified in canonical decimal form, so `"r": 2` and
/// `"r": 2.0` and `"r": "2"` all intern the same token. Blank lines are
/// skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut episodes: Vec<(String, Vec<(String, String, String)>)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(line_no, format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse(line_no, "episode must be a JSON object"))?;
        let id = obj
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::parse(line_no, "missing string field \"id\""))?
            .to_owned();
        let raw_steps = obj
            .get("steps")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::parse(line_no, "missing array field \"steps\""))?;
        if raw_steps.is_empty() {
            return Err(Error::EmptyEpisode { id });
        }
        let mut steps = Vec::with_capacity(raw_steps.len());
        for step in raw_steps {
            let step = step
                .as_object()
                .ok_or_else(|| Error::parse(line_no, "each step must be a JSON object"))?;
            let x = symbol_token(step.get("x"), "x", line_no)?;
            let a = symbol_token(step.get("a"), "a", line_no)?;
            let r = reward_token(step.get("r"), line_no)?;
            steps.push((x, a, r));
        }
        episodes.push((id, steps));
    }
    TrajectoryDataset::from_parts(episodes)
}

/// Canonical token for a JSON string or integer: strings pass through,
/// integers become their decimal form. Returns None for anything else.
pub(crate) fn canonical_symbol(value: &serde_json::Value) -> Option<String> {
    if let Some(s) = value.as_str() {
        return Some(s.to_owned());
    }
    if let Some(n) = value.as_i64() {
        return Some(n.to_string());
    }
    value.as_u64().map(|n| n.to_string())
}

/// Decodes an observation or action field: string or integer.
fn symbol_token(value: Option<&serde_json::Value>, field: &str, line: usize) -> Result<String> {
    let value = value.ok_or_else(|| Error::parse(line, format!("missing field {field:?}")))?;
    canonical_symbol(value).ok_or_else(|| {
        Error::parse(line, format!("field {field:?} must be a string or integer"))
    })
}

/// Decodes a reward field: string, integer, or integral float.
fn reward_token(value: Option<&serde_json::Value>, line: usize) -> Result<String> {
    let value = value.ok_or_else(|| Error::parse(line, "missing field \"r\""))?;
    if let Some(s) = value.as_str() {
        return Ok(s.to_owned());
    }
    if let Some(n) = value.as_i64() {
        return Ok(n.to_string());
    }
    if let Some(n) = value.as_u64() {
        return Ok(n.to_string());
    }
    if let Some(f) = value.as_f64() {
        if f.fract() != 0.0 {
            return Err(Error::FractionalReward { line, value: f });
        }
        if f >= i64::MIN as f64 && f <= i64::MAX as f64 {
            return Ok((f as i64).to_string());
        }
        return Ok(format!("{f:.0}"));
    }
    Err(Error::parse(line, "field \"r\" must be a string or number"))
}

#[derive(Serialize)]
struct StepOut<'a> {
    x: &'a str,
    a: &'a str,
    r: &'a str,
}

#[derive(Serialize)]
struct EpisodeOut<'a> {
    id: &'a str,
    steps: Vec<StepOut<'a>>,
}

/// Writes a dataset as JSON Lines, one episode per line.
///
/// All fields are emitted as strings; loading the result reproduces the
/// dataset exactly.
pub fn write_dataset(dataset: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for traj in &dataset.trajectories {
        let episode = EpisodeOut {
            id: &traj.id,
            steps: traj
                .steps
                .iter()
                .map(|s| StepOut {
                    x: dataset.x_table.token(s.x),
                    a: dataset.a_table.token(s.a),
                    r: dataset.r_table.token(s.r),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &episode)
            .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
