//! Exact joint-distribution models, memory functions, and a
//! brute-force memory-capacity search.
//!
//! A [`JointPolicyModel`] is an explicit distribution over full
//! episodes `Z_1 .. Z_H` at toy scale. Against such a model one can
//! check whether a finite-state [`MemoryFunction`] explains the policy
//! (actions depend on history only through the current observation and
//! the memory state), search for the smallest number of states that
//! works, and evaluate population information quantities exactly by
//! exhaustive summation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::trajectory::canonical_symbol;

/// Default cap on search nodes for the capacity enumeration.
pub const DEFAULT_SEARCH_BUDGET: u64 = 10_000_000;

/// Tolerance for comparing conditional action distributions.
const DIST_TOL: f64 = 1e-9;

/// Tolerance on the total probability mass of a model file.
const MASS_TOL: f64 = 1e-9;

/// An explicit distribution over full-length episodes.
///
/// Episodes are stored as sequences of dense `z` indices (one per
/// step, encoding the observation, action, reward triple) with
/// normalized probabilities, sorted lexicographically so iteration
/// order never depends on input order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicyModel {
    horizon: usize,
    x_tokens: Vec<String>,
    a_tokens: Vec<String>,
    r_tokens: Vec<String>,
    episodes: Vec<(Vec<u32>, f64)>,
}

impl JointPolicyModel {
    /// Builds a model from index triples `(x, a, r)` per step.
    ///
    /// Zero-probability entries are dropped, the rest are validated
    /// (shape, range, no duplicates, total mass within 1e-9 of 1) and
    /// renormalized to sum to 1.
    pub fn new(
        horizon: usize,
        x_tokens: Vec<String>,
        a_tokens: Vec<String>,
        r_tokens: Vec<String>,
        episodes: Vec<(Vec<(usize, usize, usize)>, f64)>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Model("horizon must be at least 1".into()));
        }
        for (name, tokens) in [("x", &x_tokens), ("a", &a_tokens), ("r", &r_tokens)] {
            if tokens.is_empty() {
                return Err(Error::Model(format!("alphabet {name:?} is empty")));
            }
            let distinct: HashSet<&String> = tokens.iter().collect();
            if distinct.len() != tokens.len() {
                return Err(Error::Model(format!(
                    "alphabet {name:?} contains duplicate tokens"
                )));
            }
        }
        let (nx, na, nr) = (x_tokens.len(), a_tokens.len(), r_tokens.len());
        let mut indexed: Vec<(Vec<u32>, f64)> = Vec::new();
        let mut mass = 0.0;
        let mut comp = 0.0;
        for (steps, p) in episodes {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Model(format!("invalid episode probability {p}")));
            }
            if steps.len() != horizon {
                return Err(Error::Model(format!(
                    "episode has {} steps, expected horizon {horizon}",
                    steps.len()
                )));
            }
            if p == 0.0 {
                continue;
            }
            let mut zs = Vec::with_capacity(horizon);
            for (x, a, r) in steps {
                if x >= nx || a >= na || r >= nr {
                    return Err(Error::Model(format!(
                        "step index ({x}, {a}, {r}) is outside the alphabets"
                    )));
                }
                zs.push(((x * na + a) * nr + r) as u32);
            }
            indexed.push((zs, p));
            // Kahan step keeps the mass check honest on large supports.
            let y = p - comp;
            let s = mass + y;
            comp = (s - mass) - y;
            mass = s;
        }
        if indexed.is_empty() {
            return Err(Error::Model("model has no positive-probability episodes".into()));
        }
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Model(format!(
                "episode probabilities sum to {mass}, expected 1 within {MASS_TOL}"
            )));
        }
        for (_, p) in indexed.iter_mut() {
            *p /= mass;
        }
        indexed.sort_by(|a, b| a.0.cmp(&b.0));
        for window in indexed.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::Model("duplicate episode in model".into()));
            }
        }
        Ok(Self {
            horizon,
            x_tokens,
            a_tokens,
            r_tokens,
            episodes: indexed,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_x(&self) -> usize {
        self.x_tokens.len()
    }

    pub fn n_a(&self) -> usize {
        self.a_tokens.len()
    }

    pub fn n_r(&self) -> usize {
        self.r_tokens.len()
    }

    /// Size of the per-step alphabet `Z = X x A x R`.
    pub fn z_size(&self) -> usize {
        self.n_x() * self.n_a() * self.n_r()
    }

    pub fn x_tokens(&self) -> &[String] {
        &self.x_tokens
    }

    pub fn a_tokens(&self) -> &[String] {
        &self.a_tokens
    }

    pub fn r_tokens(&self) -> &[String] {
        &self.r_tokens
    }

    /// Positive-probability episodes in lexicographic order.
    pub fn episodes(&self) -> &[(Vec<u32>, f64)] {
        &self.episodes
    }

    pub fn z_index(&self, x: usize, a: usize, r: usize) -> u32 {
        ((x * self.n_a() + a) * self.n_r() + r) as u32
    }

    pub fn x_of(&self, z: u32) -> u16 {
        (z as usize / (self.n_a() * self.n_r())) as u16
    }

    pub fn a_of(&self, z: u32) -> u16 {
        ((z as usize / self.n_r()) % self.n_a()) as u16
    }

    pub fn r_of(&self, z: u32) -> u16 {
        (z as usize % self.n_r()) as u16
    }

    /// Loads a model from its JSON file format.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Model(format!("invalid model JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Model("model file must be a JSON object".into()))?;
        let horizon = obj
            .get("horizon")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Model("missing integer field \"horizon\"".into()))?
            as usize;
        let alphabet = obj
            .get("alphabet")
            .and_then(|v| v.as_object())
            .ok_or_else(|| Error::Model("missing object field \"alphabet\"".into()))?;
        let tokens_of = |field: &str| -> Result<Vec<String>> {
            alphabet
                .get(field)
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Model(format!("missing alphabet array {field:?}")))?
                .iter()
                .map(|v| {
                    canonical_symbol(v).ok_or_else(|| {
                        Error::Model(format!("alphabet {field:?} tokens must be strings or integers"))
                    })
                })
                .collect()
        };
        let x_tokens = tokens_of("x")?;
        let a_tokens = tokens_of("a")?;
        let r_tokens = tokens_of("r")?;
        let index_of = |tokens: &[String], tok: &str, field: &str| -> Result<usize> {
            tokens.iter().position(|t| t == tok).ok_or_else(|| {
                Error::Model(format!("token {tok:?} is not in alphabet {field:?}"))
            })
        };
        let raw_episodes = obj
            .get("episodes")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Model("missing array field \"episodes\"".into()))?;
        let mut episodes = Vec::with_capacity(raw_episodes.len());
        for entry in raw_episodes {
            let entry = entry
                .as_object()
                .ok_or_else(|| Error::Model("each episode must be a JSON object".into()))?;
            let p = entry
                .get("p")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::Model("episode is missing numeric field \"p\"".into()))?;
            let z = entry
                .get("z")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Model("episode is missing array field \"z\"".into()))?;
            let mut steps = Vec::with_capacity(z.len());
            for step in z {
                let triple = step
                    .as_array()
                    .filter(|arr| arr.len() == 3)
                    .ok_or_else(|| Error::Model("each z entry must be a [x, a, r] triple".into()))?;
                let tok = |idx: usize| -> Result<String> {
                    canonical_symbol(&triple[idx]).ok_or_else(|| {
                        Error::Model("z tokens must be strings or integers".into())
                    })
                };
                steps.push((
                    index_of(&x_tokens, &tok(0)?, "x")?,
                    index_of(&a_tokens, &tok(1)?, "a")?,
                    index_of(&r_tokens, &tok(2)?, "r")?,
                ));
            }
            episodes.push((steps, p));
        }
        Self::new(horizon, x_tokens, a_tokens, r_tokens, episodes)
    }

    /// Writes the model in its JSON file format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let episodes: Vec<serde_json::Value> = self
            .episodes
            .iter()
            .map(|(zs, p)| {
                let z: Vec<serde_json::Value> = zs
                    .iter()
                    .map(|&z| {
                        serde_json::json!([
                            self.x_tokens[self.x_of(z) as usize],
                            self.a_tokens[self.a_of(z) as usize],
                            self.r_tokens[self.r_of(z) as usize],
                        ])
                    })
                    .collect();
                serde_json::json!({ "z": z, "p": p })
            })
            .collect();
        let doc = serde_json::json!({
            "horizon": self.horizon,
            "alphabet": {
                "x": self.x_tokens,
                "a": self.a_tokens,
                "r": self.r_tokens,
            },
            "episodes": episodes,
        });
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &doc)
            .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// A finite-state update rule for a memory process.
///
/// The state starts at a fixed initial value before the episode and is
/// updated once per step from the full step triple:
/// `Y_t = g(t, Y_{t-1}, Z_t)`. The decision at time `t` may use
/// `Y_{t-1}`, the state after digesting steps `1 .. t-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryFunction {
    horizon: usize,
    z_size: usize,
    k: usize,
    /// `table[t - 1][y * z_size + z]` is the state after step `t`.
    table: Vec<Vec<u16>>,
}

impl MemoryFunction {
    pub fn new(horizon: usize, z_size: usize, k: usize, table: Vec<Vec<u16>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Model("memory function needs at least one state".into()));
        }
        if table.len() != horizon {
            return Err(Error::Model(format!(
                "memory table has {} time slices, expected {horizon}",
                table.len()
            )));
        }
        for slice in &table {
            if slice.len() != k * z_size {
                return Err(Error::Model("memory table slice has the wrong shape".into()));
            }
            if slice.iter().any(|&y| usize::from(y) >= k) {
                return Err(Error::Model("memory table output is out of range".into()));
            }
        }
        Ok(Self {
            horizon,
            z_size,
            k,
            table,
        })
    }

    /// Builds a table by evaluating `rule(t, y, z)` everywhere.
    /// `t` is 1-based to match the decision-time indexing.
    pub fn from_rule(
        horizon: usize,
        z_size: usize,
        k: usize,
        rule: impl Fn(usize, u16, u32) -> u16,
    ) -> Result<Self> {
        let table = (1..=horizon)
            .map(|t| {
                (0..k)
                    .flat_map(|y| (0..z_size).map(move |z| (y as u16, z as u32)))
                    .map(|(y, z)| rule(t, y, z))
                    .collect()
            })
            .collect();
        Self::new(horizon, z_size, k, table)
    }

    /// The single-state function: every policy it explains is reactive.
    pub fn constant(horizon: usize, z_size: usize) -> Self {
        Self::new(horizon, z_size, 1, vec![vec![0; z_size]; horizon]).expect("valid shape")
    }

    pub fn states(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn z_size(&self) -> usize {
        self.z_size
    }

    /// State after step `t` (1-based), from the state before it.
    pub fn next(&self, t: usize, y: u16, z: u32) -> u16 {
        self.table[t - 1][usize::from(y) * self.z_size + z as usize]
    }

    /// Folds the update over a run of steps, starting at the initial
    /// state; returns the state available to the decision after them.
    pub fn fold(&self, zs: &[u32]) -> u16 {
        let mut y = 0u16;
        for (idx, &z) in zs.iter().enumerate() {
            y = self.next(idx + 1, y, z);
        }
        y
    }
}

/// Conditional behavior of one history prefix: observation index to
/// action distribution, present only for observations with mass.
type Behavior = BTreeMap<u16, Vec<f64>>;

fn dists_equal(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(p, q)| (p - q).abs() <= DIST_TOL)
}

/// Merges `from` into `into`; false means they disagree on a shared
/// observation and no memory state may pool them.
fn merge_behavior(into: &mut Behavior, from: &Behavior) -> bool {
    for (x, dist) in from {
        if let Some(existing) = into.get(x) {
            if !dists_equal(existing, dist) {
                return false;
            }
        }
    }
    for (x, dist) in from {
        into.entry(*x).or_insert_with(|| dist.clone());
    }
    true
}

/// Like [`merge_behavior`] but reversible: returns the observation
/// keys that were newly inserted, or None on conflict.
fn try_merge(into: &mut Behavior, from: &Behavior) -> Option<Vec<u16>> {
    for (x, dist) in from {
        if let Some(existing) = into.get(x) {
            if !dists_equal(existing, dist) {
                return None;
            }
        }
    }
    let mut added = Vec::new();
    for (x, dist) in from {
        if !into.contains_key(x) {
            into.insert(*x, dist.clone());
            added.push(*x);
        }
    }
    Some(added)
}

/// Per-time-step view of a model: one entry per positive-probability
/// history prefix, with its conditional behavior and its extensions.
struct Level {
    behaviors: Vec<Behavior>,
    /// `(z, child prefix index at the next level)`, sorted by `z`.
    edges: Vec<Vec<(u32, u32)>>,
}

fn build_levels(model: &JointPolicyModel) -> Vec<Level> {
    let h = model.horizon();
    let mut index_maps: Vec<HashMap<&[u32], u32>> = (0..h).map(|_| HashMap::new()).collect();
    let mut prefix_counts = vec![0u32; h];
    for (zs, _) in model.episodes() {
        for (t, map) in index_maps.iter_mut().enumerate() {
            let next = prefix_counts[t];
            map.entry(&zs[..t]).or_insert_with(|| {
                prefix_counts[t] += 1;
                next
            });
        }
    }

    let mut action_mass: Vec<Vec<HashMap<(u16, u16), f64>>> = (0..h)
        .map(|t| vec![HashMap::new(); prefix_counts[t] as usize])
        .collect();
    let mut edge_sets: Vec<Vec<BTreeSet<(u32, u32)>>> = (0..h.saturating_sub(1))
        .map(|t| vec![BTreeSet::new(); prefix_counts[t] as usize])
        .collect();
    for (zs, p) in model.episodes() {
        for t in 0..h {
            let pidx = index_maps[t][&zs[..t]] as usize;
            let z = zs[t];
            *action_mass[t][pidx]
                .entry((model.x_of(z), model.a_of(z)))
                .or_insert(0.0) += p;
            if t + 1 < h {
                let child = index_maps[t + 1][&zs[..t + 1]];
                edge_sets[t][pidx].insert((z, child));
            }
        }
    }

    (0..h)
        .map(|t| {
            let behaviors = action_mass[t]
                .iter()
                .map(|masses| {
                    let mut by_x: BTreeMap<u16, Vec<(u16, f64)>> = BTreeMap::new();
                    for (&(x, a), &m) in masses {
                        by_x.entry(x).or_default().push((a, m));
                    }
                    by_x.into_iter()
                        .map(|(x, actions)| {
                            let total: f64 = actions.iter().map(|(_, m)| m).sum();
                            let mut dist = vec![0.0; model.n_a()];
                            for (a, m) in actions {
                                dist[usize::from(a)] = m / total;
                            }
                            (x, dist)
                        })
                        .collect::<Behavior>()
                })
                .collect();
            let edges = if t + 1 < h {
                edge_sets[t]
                    .iter()
                    .map(|set| set.iter().copied().collect())
                    .collect()
            } else {
                vec![Vec::new(); prefix_counts[t] as usize]
            };
            Level { behaviors, edges }
        })
        .collect()
}

/// Checks whether a memory function explains the model: at every time
/// step, histories that share a memory state and a current observation
/// must share their conditional action distribution (within 1e-9).
pub fn is_memory_function_for(g: &MemoryFunction, model: &JointPolicyModel) -> Result<bool> {
    if g.horizon() != model.horizon() || g.z_size() != model.z_size() {
        return Err(Error::Model(format!(
            "memory function shape (H={}, |Z|={}) does not match the model (H={}, |Z|={})",
            g.horizon(),
            g.z_size(),
            model.horizon(),
            model.z_size()
        )));
    }
    let levels = build_levels(model);
    let mut states: Vec<Vec<u16>> = levels
        .iter()
        .map(|level| vec![0u16; level.behaviors.len()])
        .collect();
    for t in 0..levels.len().saturating_sub(1) {
        for (pidx, edges) in levels[t].edges.iter().enumerate() {
            for &(z, child) in edges {
                states[t + 1][child as usize] = g.next(t + 1, states[t][pidx], z);
            }
        }
    }
    for (t, level) in levels.iter().enumerate() {
        let mut seen: HashMap<(u16, u16), &Vec<f64>> = HashMap::new();
        for (pidx, behavior) in level.behaviors.iter().enumerate() {
            let y = states[t][pidx];
            for (&x, dist) in behavior {
                match seen.entry((y, x)) {
                    std::collections::hash_map::Entry::Occupied(e) => {
                        if !dists_equal(e.get(), dist) {
                            return Ok(false);
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(dist);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Result of the capacity search.
#[derive(Debug, Clone)]
pub enum CapacityOutcome {
    /// Smallest working state count, with one witnessing function.
    Found {
        capacity: usize,
        witness: MemoryFunction,
    },
    /// Every `K <= k_max` fails.
    ExceedsKMax { k_max: usize },
}

struct Group {
    behavior: Behavior,
    members: Vec<u32>,
}

struct Search<'a> {
    levels: &'a [Level],
    k: usize,
    budget: u64,
    nodes: u64,
    /// Per transition: `(parent state, z) -> child state`.
    assign: Vec<BTreeMap<(u32, u32), u32>>,
}

impl Search<'_> {
    fn solve(&mut self, level_idx: usize, groups: &[Group]) -> Result<bool> {
        if level_idx + 1 == self.levels.len() {
            return Ok(true);
        }
        // Reachable (state, z) pairs and the prefixes each one forces
        // together at the next level.
        let mut pairs: Vec<(u32, u32, Vec<u32>)> = Vec::new();
        for (color, group) in groups.iter().enumerate() {
            let mut by_z: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for &p in &group.members {
                for &(z, child) in &self.levels[level_idx].edges[p as usize] {
                    by_z.entry(z).or_default().push(child);
                }
            }
            for (z, children) in by_z {
                pairs.push((color as u32, z, children));
            }
        }
        // A pair whose own forced merge already conflicts dooms the
        // parent coloring outright.
        let next_level = &self.levels[level_idx + 1];
        let mut pair_behaviors = Vec::with_capacity(pairs.len());
        for (_, _, children) in &pairs {
            let mut merged = Behavior::new();
            for &c in children {
                if !merge_behavior(&mut merged, &next_level.behaviors[c as usize]) {
                    return Ok(false);
                }
            }
            pair_behaviors.push(merged);
        }
        let mut child_groups = Vec::new();
        self.assign_pairs(level_idx, &pairs, &pair_behaviors, 0, &mut child_groups)
    }

    fn assign_pairs(
        &mut self,
        level_idx: usize,
        pairs: &[(u32, u32, Vec<u32>)],
        behaviors: &[Behavior],
        j: usize,
        child_groups: &mut Vec<Group>,
    ) -> Result<bool> {
        if j == pairs.len() {
            return self.solve(level_idx + 1, child_groups);
        }
        let (parent, z, children) = &pairs[j];
        // States are interchangeable, so only the first unused one may
        // be opened: this enumerates set partitions, not labelings.
        let last = if child_groups.len() < self.k {
            child_groups.len()
        } else {
            self.k - 1
        };
        for color in 0..=last {
            self.nodes += 1;
            if self.nodes > self.budget {
                return Err(Error::BudgetExceeded { nodes: self.nodes });
            }
            if color < child_groups.len() {
                let Some(added) = try_merge(&mut child_groups[color].behavior, &behaviors[j])
                else {
                    continue;
                };
                let member_mark = child_groups[color].members.len();
                child_groups[color].members.extend_from_slice(children);
                self.assign[level_idx].insert((*parent, *z), color as u32);
                if self.assign_pairs(level_idx, pairs, behaviors, j + 1, child_groups)? {
                    return Ok(true);
                }
                self.assign[level_idx].remove(&(*parent, *z));
                child_groups[color].members.truncate(member_mark);
                for x in added {
                    child_groups[color].behavior.remove(&x);
                }
            } else {
                child_groups.push(Group {
                    behavior: behaviors[j].clone(),
                    members: children.clone(),
                });
                self.assign[level_idx].insert((*parent, *z), color as u32);
                if self.assign_pairs(level_idx, pairs, behaviors, j + 1, child_groups)? {
                    return Ok(true);
                }
                self.assign[level_idx].remove(&(*parent, *z));
                child_groups.pop();
            }
        }
        Ok(false)
    }
}

/// Smallest number of memory states that explains the model, searched
/// ascending from 1 up to `k_max`.
///
/// The search walks history prefixes level by level, assigning states
/// to reachable `(state, z)` pairs and pruning as soon as two pooled
/// histories disagree on a conditional action distribution. `budget`
/// caps the total number of assignment nodes across the whole call.
pub fn capacity(model: &JointPolicyModel, k_max: usize, budget: u64) -> Result<CapacityOutcome> {
    if k_max == 0 {
        return Err(Error::Model("k_max must be at least 1".into()));
    }
    let levels = build_levels(model);
    let mut search = Search {
        levels: &levels,
        k: 1,
        budget,
        nodes: 0,
        assign: vec![BTreeMap::new(); levels.len().saturating_sub(1)],
    };
    for k in 1..=k_max {
        search.k = k;
        for slot in &mut search.assign {
            slot.clear();
        }
        let root = vec![Group {
            behavior: levels[0].behaviors[0].clone(),
            members: vec![0],
        }];
        if search.solve(0, &root)? {
            let z_size = model.z_size();
            let mut table = vec![vec![0u16; k * z_size]; model.horizon()];
            for (t, assignments) in search.assign.iter().enumerate() {
                for (&(y, z), &y_next) in assignments {
                    table[t][y as usize * z_size + z as usize] = y_next as u16;
                }
            }
            let witness = MemoryFunction::new(model.horizon(), z_size, k, table)?;
            return Ok(CapacityOutcome::Found {
                capacity: k,
                witness,
            });
        }
    }
    Ok(CapacityOutcome::ExceedsKMax { k_max })
}

/// An event over `(history prefix, current observation)` pairs, used
/// to restrict population information quantities. The prefix arrives
/// as dense `z` indices and the observation as an `x` index, both in
/// the model's encoding.
#[derive(Clone)]
pub struct ModelEvent {
    name: String,
    member: Arc<dyn Fn(&[u32], u16) -> bool + Send + Sync>,
}

impl ModelEvent {
    pub fn new(name: impl Into<String>, member: impl Fn(&[u32], u16) -> bool + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            member: Arc::new(member),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn contains(&self, prefix: &[u32], x_now: u16) -> bool {
        (self.member)(prefix, x_now)
    }
}

impl fmt::Debug for ModelEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelEvent({:?})", self.name)
    }
}

/// Probability mass of the event at decision time `t`.
pub fn event_mass(model: &JointPolicyModel, t: usize, event: &ModelEvent) -> f64 {
    model
        .episodes()
        .iter()
        .filter(|(zs, _)| event.contains(&zs[..t - 1], model.x_of(zs[t - 1])))
        .map(|(_, p)| p)
        .sum()
}

/// Population conditional mutual information at decision time `t` and
/// lag `i`, in nats, by exhaustive summation over the joint.
///
/// This is the information between the action at `t` and the full step
/// `i` lags back, conditioned on the observation at `t` and the steps
/// in between, optionally under an event restriction. Requires
/// `1 <= i < t <= H`.
pub fn exact_cmi(
    model: &JointPolicyModel,
    t: usize,
    i: usize,
    event: Option<&ModelEvent>,
) -> Result<f64> {
    let h = model.horizon();
    if i == 0 || i >= t || t > h {
        return Err(Error::Model(format!(
            "exact_cmi needs 1 <= i < t <= {h}; got t = {t}, i = {i}"
        )));
    }
    let mut total = 0.0;
    let mut m_c: HashMap<Box<[u32]>, f64> = HashMap::new();
    let mut m_co: HashMap<Box<[u32]>, BTreeMap<u32, f64>> = HashMap::new();
    let mut m_ca: HashMap<Box<[u32]>, BTreeMap<u16, f64>> = HashMap::new();
    let mut m_coa: BTreeMap<Box<[u32]>, BTreeMap<(u32, u16), f64>> = BTreeMap::new();
    for (zs, p) in model.episodes() {
        let prefix = &zs[..t - 1];
        let x_now = model.x_of(zs[t - 1]);
        if let Some(ev) = event {
            if !ev.contains(prefix, x_now) {
                continue;
            }
        }
        let mut c_key: Vec<u32> = Vec::with_capacity(t - i);
        c_key.push(u32::from(x_now));
        c_key.extend_from_slice(&zs[t - i..t - 1]);
        let c_key: Box<[u32]> = c_key.into();
        let o = zs[t - 1 - i];
        let a = model.a_of(zs[t - 1]);
        total += p;
        *m_c.entry(c_key.clone()).or_insert(0.0) += p;
        *m_co.entry(c_key.clone()).or_default().entry(o).or_insert(0.0) += p;
        *m_ca.entry(c_key.clone()).or_default().entry(a).or_insert(0.0) += p;
        *m_coa.entry(c_key).or_default().entry((o, a)).or_insert(0.0) += p;
    }
    if total <= 0.0 {
        return match event {
            Some(ev) => Err(Error::EmptyEvent {
                name: ev.name().to_owned(),
            }),
            None => Err(Error::Model("model carries no probability mass".into())),
        };
    }
    let mut sum = 0.0;
    for (c, cells) in &m_coa {
        let mc = m_c[c];
        let co = &m_co[c];
        let ca = &m_ca[c];
        for (&(o, a), &m) in cells {
            sum += m * (m * mc / (co[&o] * ca[&a])).ln();
        }
    }
    Ok((sum / total).max(0.0))
}

/// One bound check: the chain sum at decision time `t`, possibly under
/// an event, against the log-capacity.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub t: usize,
    /// Name of the restricting event, if any.
    pub event: Option<String>,
    /// `sum of exact CMI terms for i = 1 .. t-1`.
    pub chain_sum: f64,
    /// `ln_capacity - chain_sum`; nonnegative when the bound holds.
    pub gap: f64,
    pub holds: bool,
}

/// Full bound verification across all decision times and events.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub capacity: usize,
    pub ln_capacity: f64,
    pub checks: Vec<BoundCheck>,
}

/// Outcome of [`verify_lower_bound`].
#[derive(Debug, Clone)]
pub enum BoundOutcome {
    Verified(BoundReport),
    /// The capacity search gave up at `k_max`, so there is no finite
    /// log-capacity to compare against.
    CapacityExceedsKMax { k_max: usize },
}

/// Bound slack allowed for accumulated floating-point error.
const BOUND_TOL: f64 = 1e-9;

/// Computes the capacity, then checks that the exact chain sum stays
/// below the log-capacity at every decision time, unrestricted and
/// under each supplied event. Event/time combinations with zero mass
/// are skipped.
pub fn verify_lower_bound(
    model: &JointPolicyModel,
    k_max: usize,
    events: &[ModelEvent],
    budget: u64,
) -> Result<BoundOutcome> {
    let cap = match capacity(model, k_max, budget)? {
        CapacityOutcome::Found { capacity, .. } => capacity,
        CapacityOutcome::ExceedsKMax { k_max } => {
            return Ok(BoundOutcome::CapacityExceedsKMax { k_max })
        }
    };
    let ln_capacity = (cap as f64).ln();
    let mut checks = Vec::new();
    let mut push_check = |t: usize, event: Option<&ModelEvent>| -> Result<()> {
        let mut chain_sum = 0.0;
        for i in 1..t {
            chain_sum += exact_cmi(model, t, i, event)?;
        }
        checks.push(BoundCheck {
            t,
            event: event.map(|e| e.name().to_owned()),
            chain_sum,
            gap: ln_capacity - chain_sum,
            holds: chain_sum <= ln_capacity + BOUND_TOL,
        });
        Ok(())
    };
    for t in 1..=model.horizon() {
        push_check(t, None)?;
    }
    for event in events {
        for t in 1..=model.horizon() {
            if event_mass(model, t, event) <= 0.0 {
                continue;
            }
            push_check(t, Some(event))?;
        }
    }
    Ok(BoundOutcome::Verified(BoundReport {
        capacity: cap,
        ln_capacity,
        checks,
    }))
}

/// The memoryless surrogate of a model: the same environment
/// conditionals driven by the pooled per-time reactive policy
/// `P(a | x at time t)`.
///
/// The reactive policy can reach histories the original model never
/// visits; environment conditionals there (next observation, reward)
/// default to uniform. By construction the result always has
/// capacity 1.
pub fn markov_reduction(model: &JointPolicyModel) -> Result<JointPolicyModel> {
    let h = model.horizon();
    let (nx, na, nr) = (model.n_x(), model.n_a(), model.n_r());

    // Pooled policy mass per (t, x, a).
    let mut policy_mass = vec![vec![vec![0.0f64; na]; nx]; h];
    // Environment masses keyed by the exact prefix.
    let mut prefix_mass: HashMap<&[u32], f64> = HashMap::new();
    let mut prefix_x_mass: HashMap<(&[u32], u16), f64> = HashMap::new();
    let mut prefix_xa_mass: HashMap<(&[u32], u16, u16), f64> = HashMap::new();
    let mut prefix_xar_mass: HashMap<(&[u32], u16, u16, u16), f64> = HashMap::new();
    for (zs, p) in model.episodes() {
        for t in 0..h {
            let (x, a, r) = (model.x_of(zs[t]), model.a_of(zs[t]), model.r_of(zs[t]));
            policy_mass[t][usize::from(x)][usize::from(a)] += p;
            let prefix = &zs[..t];
            *prefix_mass.entry(prefix).or_insert(0.0) += p;
            *prefix_x_mass.entry((prefix, x)).or_insert(0.0) += p;
            *prefix_xa_mass.entry((prefix, x, a)).or_insert(0.0) += p;
            *prefix_xar_mass.entry((prefix, x, a, r)).or_insert(0.0) += p;
        }
    }

    const MAX_SUPPORT: usize = 1_000_000;
    let mut out: Vec<(Vec<(usize, usize, usize)>, f64)> = Vec::new();
    let mut stack: Vec<(Vec<u32>, Vec<(usize, usize, usize)>, f64)> =
        vec![(Vec::new(), Vec::new(), 1.0)];
    while let Some((prefix, steps, prob)) = stack.pop() {
        let t = steps.len();
        if t == h {
            out.push((steps, prob));
            if out.len() > MAX_SUPPORT {
                return Err(Error::Model(
                    "Markov reduction support is too large to enumerate".into(),
                ));
            }
            continue;
        }
        let base = prefix_mass.get(prefix.as_slice()).copied().unwrap_or(0.0);
        for x in 0..nx {
            let px = if base > 0.0 {
                prefix_x_mass
                    .get(&(prefix.as_slice(), x as u16))
                    .copied()
                    .unwrap_or(0.0)
                    / base
            } else {
                1.0 / nx as f64
            };
            if px <= 0.0 {
                continue;
            }
            let x_total: f64 = policy_mass[t][x].iter().sum();
            for a in 0..na {
                let pa = if x_total > 0.0 {
                    policy_mass[t][x][a] / x_total
                } else {
                    1.0 / na as f64
                };
                if pa <= 0.0 {
                    continue;
                }
                let xa_mass = prefix_xa_mass
                    .get(&(prefix.as_slice(), x as u16, a as u16))
                    .copied()
                    .unwrap_or(0.0);
                for r in 0..nr {
                    let pr = if xa_mass > 0.0 {
                        prefix_xar_mass
                            .get(&(prefix.as_slice(), x as u16, a as u16, r as u16))
                            .copied()
                            .unwrap_or(0.0)
                            / xa_mass
                    } else {
                        1.0 / nr as f64
                    };
                    if pr <= 0.0 {
                        continue;
                    }
                    let mut next_prefix = prefix.clone();
                    next_prefix.push(model.z_index(x, a, r));
                    let mut next_steps = steps.clone();
                    next_steps.push((x, a, r));
                    stack.push((next_prefix, next_steps, prob * px * pa * pr));
                }
            }
        }
    }
    JointPolicyModel::new(
        h,
        model.x_tokens().to_vec(),
        model.a_tokens().to_vec(),
        model.r_tokens().to_vec(),
        out,
    )
}
