//! Managed agents: their specs, tabular pre-training, and frozen policies.
//!
//! Each agent learns on its own over the shared map with its own arrow ring
//! and its own actuation noise. Training sees none of the manager's state or
//! costs; once trained, a policy is frozen and only its greedy intent (plus
//! the error model) is used during delegation.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{execute_arrow, ActionRing, RingStyle};
use crate::error::{Error, Result};
use crate::error_model::{apply_error, performed_distribution, ErrorLevel};
use crate::gridworld::{Cell, GridMap};
use crate::reward::reward_fn;

/// Static description of one managed agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    /// Short identifier such as `"1H"`.
    pub id: String,
    pub k: usize,
    pub error: ErrorLevel,
    /// Cost charged to the manager per delegation.
    pub cost: f64,
    /// The agent's own discount during pre-training.
    pub gamma: f64,
}

impl AgentSpec {
    pub fn new(k: usize, error: ErrorLevel, cost: f64) -> Result<Self> {
        let spec = Self {
            id: format!("{k}{}", error.label),
            k,
            error,
            cost,
            gamma: 0.95,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidStepSize(0));
        }
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(Error::Config(format!(
                "agent {} has invalid cost {}",
                self.id, self.cost
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "agent {} gamma {} not in (0, 1)",
                self.id, self.gamma
            )));
        }
        Ok(())
    }
}

/// Hyperparameters for agent pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub alpha: f64,
    /// Learning rate reached at the last episode; `alpha` decays linearly
    /// towards it. Equal to `alpha` for a constant rate.
    pub alpha_end: f64,
    /// Default discount given to agent specs built from a config.
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub explore_fraction: f64,
    pub episodes: usize,
    /// Atomic-step budget per episode; every decision consumes `k`.
    pub max_atomic_steps: usize,
    /// Minimum fraction of non-goal cells from which the error-free greedy
    /// rollout must reach the goal. The rollout from the start cell must
    /// succeed regardless.
    pub min_goal_reach: f64,
    /// Training attempts, each with a fresh seed, before a composition is
    /// reported as failed.
    pub attempts: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            alpha_end: 0.01,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            explore_fraction: 0.8,
            episodes: 20_000,
            max_atomic_steps: 200,
            min_goal_reach: 0.0,
            attempts: 3,
        }
    }
}

/// Linear decay from `start` to `end` over the first `fraction` of `total`.
pub(crate) fn linear_epsilon(
    start: f64,
    end: f64,
    fraction: f64,
    episode: usize,
    total: usize,
) -> f64 {
    let horizon = fraction * total as f64;
    if horizon <= 0.0 {
        return end;
    }
    let t = (episode as f64 / horizon).min(1.0);
    start + (end - start) * t
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A frozen, trained agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentPolicy {
    spec: AgentSpec,
    ring: ActionRing,
    map_hash: String,
    /// `state_index * ring_len + ring_index`.
    q: Vec<f64>,
    greedy: Vec<usize>,
}

impl AgentPolicy {
    fn from_table(spec: AgentSpec, ring: ActionRing, map_hash: String, q: Vec<f64>) -> Self {
        let n = ring.len();
        let greedy = q.chunks(n).map(argmax).collect();
        Self {
            spec,
            ring,
            map_hash,
            q,
            greedy,
        }
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn ring(&self) -> &ActionRing {
        &self.ring
    }

    pub fn map_hash(&self) -> &str {
        &self.map_hash
    }

    pub fn q_table(&self) -> &[f64] {
        &self.q
    }

    pub fn q(&self, state: usize, arrow: usize) -> f64 {
        self.q[state * self.ring.len() + arrow]
    }

    /// Greedy intended arrow at a state index.
    pub fn greedy(&self, state: usize) -> usize {
        self.greedy[state]
    }

    /// Effective `π_d(a|s)` under this agent's own error level.
    pub fn stochastic_view(&self) -> Vec<Vec<f64>> {
        effective_policy(self, &self.spec.error)
    }

    /// Replaces the cost charged to the manager; the learned table is unaffected.
    pub fn with_cost(mut self, cost: f64) -> Self {
        self.spec.cost = cost;
        self
    }

    pub fn save_json(&self, map: &GridMap, path: &Path) -> Result<()> {
        let file = PolicyFile::from_policy(self, map);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(map: &GridMap, path: &Path) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.into_policy(map)
    }
}

/// `π_d(a|s)` for every state: greedy intent mixed with the error shifts of
/// `level`.
pub fn effective_policy(policy: &AgentPolicy, level: &ErrorLevel) -> Vec<Vec<f64>> {
    let n = policy.ring.len();
    policy
        .greedy
        .iter()
        .map(|&intent| performed_distribution(n, intent, level))
        .collect()
}

/// Trains an agent with tabular Q-learning from uniformly random start cells.
/// Actuation errors are active throughout.
pub fn train_agent<R: Rng + ?Sized>(
    spec: &AgentSpec,
    map: &GridMap,
    params: &AgentParams,
    style: RingStyle,
    rng: &mut R,
) -> Result<AgentPolicy> {
    spec.validate()?;
    let ring = ActionRing::with_style(spec.k, style)?;
    let n_actions = ring.len();
    let mut q = vec![0.0; map.num_states() * n_actions];
    let starts: Vec<usize> = (0..map.num_states())
        .filter(|&i| i != map.goal_index())
        .collect();
    let budget = params.max_atomic_steps.max(spec.k);

    for episode in 0..params.episodes {
        let epsilon = linear_epsilon(
            params.epsilon_start,
            params.epsilon_end,
            params.explore_fraction,
            episode,
            params.episodes,
        );
        let alpha = linear_epsilon(
            params.alpha,
            params.alpha_end,
            1.0,
            episode,
            params.episodes,
        );
        let mut s_idx = *starts.choose(rng).expect("map has a non-goal cell");
        let mut used = 0;
        loop {
            let row = &q[s_idx * n_actions..(s_idx + 1) * n_actions];
            let intended = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..n_actions)
            } else {
                argmax(row)
            };
            let (performed, _) = apply_error(&ring, intended, &spec.error, rng);
            let state = map.state(map.free_cells()[s_idx]);
            let out = execute_arrow(map, state, ring.get(performed));
            used += spec.k;
            let timed_out = !out.reached_goal && used >= budget;
            let reward = reward_fn(0.0, out.reached_goal, out.collided, timed_out);
            let next = map
                .index_of(out.end.cell)
                .expect("arrow ends on a free cell");
            let bootstrap = if out.reached_goal || timed_out {
                0.0
            } else {
                let next_row = &q[next * n_actions..(next + 1) * n_actions];
                next_row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let slot = &mut q[s_idx * n_actions + intended];
            *slot += alpha * (reward + spec.gamma * bootstrap - *slot);
            if out.reached_goal || timed_out {
                break;
            }
            s_idx = next;
        }
    }

    let policy = AgentPolicy::from_table(spec.clone(), ring, map.content_hash(), q);
    let (rate, from_start) = goal_reach(&policy, map, budget);
    if !from_start || rate < params.min_goal_reach {
        return Err(Error::NonConvergence {
            agent: spec.id.clone(),
            from_start,
            rate,
            threshold: params.min_goal_reach,
        });
    }
    Ok(policy)
}

/// Error-free greedy rollouts from every non-goal cell. Returns the fraction
/// that reach the goal within `budget` atomic steps and whether the start
/// cell is among them.
pub fn goal_reach(policy: &AgentPolicy, map: &GridMap, budget: usize) -> (f64, bool) {
    let decisions = budget / policy.spec.k.max(1);
    let mut reached = 0;
    let mut from_start = false;
    let goal = map.goal_index();
    for (i, &cell) in map.free_cells().iter().enumerate() {
        if i == goal {
            continue;
        }
        let mut s = map.state(cell);
        let mut ok = false;
        for _ in 0..decisions.max(1) {
            let idx = map.index_of(s.cell).expect("free");
            let out = execute_arrow(map, s, policy.ring.get(policy.greedy(idx)));
            if out.reached_goal {
                ok = true;
                break;
            }
            s = out.end;
        }
        if ok {
            reached += 1;
            from_start |= cell == map.start();
        }
    }
    let total = map.num_states() - 1;
    (reached as f64 / total.max(1) as f64, from_start)
}

/// Cells reachable from the start by error-free arrows of `ring`. The goal is
/// included when reachable but never expanded.
pub fn reachable_cells(map: &GridMap, ring: &ActionRing) -> BTreeSet<Cell> {
    let mut seen = BTreeSet::from([map.start()]);
    let mut queue = VecDeque::from([map.start()]);
    while let Some(cell) = queue.pop_front() {
        let s = map.state(cell);
        if s.terminal {
            continue;
        }
        for arrow in ring.arrows() {
            let end = execute_arrow(map, s, arrow).end.cell;
            if seen.insert(end) {
                queue.push_back(end);
            }
        }
    }
    seen
}

/// Checks mutual reachability: every cell one ring can reach is reachable by
/// every other ring, and the goal is reachable at all.
pub fn check_compatibility(map: &GridMap, rings: &[&ActionRing]) -> Result<()> {
    let sets: Vec<BTreeSet<Cell>> = rings.iter().map(|r| reachable_cells(map, r)).collect();
    for (ring, set) in rings.iter().zip(&sets) {
        if !set.contains(&map.goal()) {
            return Err(Error::Incompatible(format!(
                "{}-step agent cannot reach the goal",
                ring.k()
            )));
        }
    }
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate().skip(i + 1) {
            if let Some(cell) = a.symmetric_difference(b).next() {
                return Err(Error::Incompatible(format!(
                    "cell {cell} is reachable by the {}-step agent but not the {}-step agent",
                    if a.contains(cell) {
                        rings[i].k()
                    } else {
                        rings[j].k()
                    },
                    if a.contains(cell) {
                        rings[j].k()
                    } else {
                        rings[i].k()
                    },
                )));
            }
        }
    }
    Ok(())
}

const POLICY_FORMAT: &str = "delegation/agent-policy/v1";

#[derive(Debug, Serialize, Deserialize)]
struct PolicyEntry {
    col: i32,
    row: i32,
    ring_index: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    spec: AgentSpec,
    ring_style: RingStyle,
    ring_len: usize,
    map_hash: String,
    entries: Vec<PolicyEntry>,
}

impl PolicyFile {
    fn from_policy(policy: &AgentPolicy, map: &GridMap) -> Self {
        let n = policy.ring.len();
        let entries = map
            .free_cells()
            .iter()
            .enumerate()
            .flat_map(|(s, cell)| {
                (0..n).map(move |a| PolicyEntry {
                    col: cell.col,
                    row: cell.row,
                    ring_index: a,
                    value: policy.q(s, a),
                })
            })
            .collect();
        Self {
            format: POLICY_FORMAT.into(),
            spec: policy.spec.clone(),
            ring_style: policy.ring.style(),
            ring_len: n,
            map_hash: policy.map_hash.clone(),
            entries,
        }
    }

    fn into_policy(self, map: &GridMap) -> Result<AgentPolicy> {
        if self.format != POLICY_FORMAT {
            return Err(Error::PersistMismatch(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.map_hash != map.content_hash() {
            return Err(Error::PersistMismatch(
                "policy was trained on a different map".into(),
            ));
        }
        let ring = ActionRing::with_style(self.spec.k, self.ring_style)?;
        if ring.len() != self.ring_len {
            return Err(Error::PersistMismatch(format!(
                "ring length {} does not match {}",
                self.ring_len,
                ring.len()
            )));
        }
        let n = ring.len();
        let mut q = vec![f64::NAN; map.num_states() * n];
        for e in &self.entries {
            let s = map.index_of(Cell::new(e.col, e.row)).ok_or_else(|| {
                Error::PersistMismatch(format!("entry for non-free cell ({}, {})", e.col, e.row))
            })?;
            if e.ring_index >= n {
                return Err(Error::PersistMismatch(format!(
                    "ring index {} out of range",
                    e.ring_index
                )));
            }
            q[s * n + e.ring_index] = e.value;
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::PersistMismatch(
                "table is incomplete or non-finite".into(),
            ));
        }
        Ok(AgentPolicy::from_table(self.spec, ring, self.map_hash, q))
    }
}
