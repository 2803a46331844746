//! The delegation manager.
//!
//! At each decision point the manager picks which agent acts from the
//! current cell. The chosen agent runs one arrow (its greedy intent after
//! actuation noise) without intervention. The manager only ever sees the
//! resulting [`DelegationOutcome`]: start and end cells, the reward and a few
//! flags. It never observes the arrow or the intermediate cells.
//!
//! Learning is tabular Q-learning over `(cell, agent)` where the bootstrap is
//! discounted by `γ^k` for the delegated agent's step size `k`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actions::execute_arrow;
use crate::agents::{argmax, check_compatibility, linear_epsilon, AgentPolicy};
use crate::error::{Error, Result};
use crate::error_model::{apply_error, performed_support};
use crate::gridworld::{Cell, GridMap, State};
pub use crate::reward::{reward_fn, RewardCase};

pub type AgentId = usize;

/// Agents available for delegation, all trained on the same map.
#[derive(Clone, Debug)]
pub struct Team {
    label: String,
    agents: Vec<AgentPolicy>,
}

impl Team {
    pub fn new(label: impl Into<String>, agents: Vec<AgentPolicy>, map: &GridMap) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::Config("a team needs at least one agent".into()));
        }
        let hash = map.content_hash();
        if let Some(a) = agents.iter().find(|a| a.map_hash() != hash) {
            return Err(Error::Incompatible(format!(
                "agent {} was trained on a different map",
                a.spec().id
            )));
        }
        let rings: Vec<_> = agents.iter().map(|a| a.ring()).collect();
        check_compatibility(map, &rings)?;
        Ok(Self {
            label: label.into(),
            agents,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn agents(&self) -> &[AgentPolicy] {
        &self.agents
    }

    pub fn agent(&self, d: AgentId) -> &AgentPolicy {
        &self.agents[d]
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// `γ^{k_d}` for agent `d`.
    pub fn discount(&self, d: AgentId, gamma: f64) -> f64 {
        gamma.powi(self.agents[d].spec().k as i32)
    }
}

/// Everything the manager observes about one delegation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelegationOutcome {
    pub s: State,
    pub d: AgentId,
    pub s_prime: State,
    pub reward: f64,
    pub atomic_steps: usize,
    pub collided: bool,
    pub reached_goal: bool,
    pub timed_out: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    #[default]
    Constant,
    /// `α = 1 / n(s, d)`, the number of updates of that entry so far.
    VisitCount,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    /// Every episode starts at the map's start cell.
    #[default]
    MapStart,
    /// Every episode starts at a uniformly random non-goal cell.
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutMode {
    /// The last allowed delegation scores the timeout reward and ends the
    /// episode as terminal.
    #[default]
    Penalize,
    /// Episodes are cut at the cap without penalty and the last update still
    /// bootstraps, matching the infinite-horizon model.
    Truncate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Update after every delegation.
    #[default]
    Online,
    /// Buffer the episode's outcomes and update from the last one backwards.
    /// Exploration within the episode uses the table as of its start.
    EpisodeReverse,
}

/// Manager learning hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagerParams {
    pub gamma: f64,
    pub alpha: f64,
    pub alpha_schedule: AlphaSchedule,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub explore_fraction: f64,
    pub episodes: usize,
    pub max_delegations: usize,
    pub start: StartMode,
    pub timeout: TimeoutMode,
    pub update_order: UpdateOrder,
}

impl Default for ManagerParams {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            alpha: 0.1,
            alpha_schedule: AlphaSchedule::VisitCount,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            explore_fraction: 0.8,
            episodes: 30_000,
            max_delegations: 100,
            start: StartMode::MapStart,
            timeout: TimeoutMode::Penalize,
            update_order: UpdateOrder::EpisodeReverse,
        }
    }
}

impl ManagerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "manager gamma {} not in [0, 1)",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "manager alpha {} not in [0, 1]",
                self.alpha
            )));
        }
        if self.max_delegations == 0 {
            return Err(Error::Config("max_delegations must be positive".into()));
        }
        Ok(())
    }
}

/// Tabular `Q(s, d)` over free cells and team members.
#[derive(Clone, Debug, PartialEq)]
pub struct ManagerQTable {
    cells: Vec<Cell>,
    goal: Cell,
    n_agents: usize,
    gamma: f64,
    alpha: f64,
    schedule: AlphaSchedule,
    q: Vec<f64>,
    visits: Vec<u64>,
}

impl ManagerQTable {
    pub fn new(
        map: &GridMap,
        n_agents: usize,
        gamma: f64,
        alpha: f64,
        schedule: AlphaSchedule,
    ) -> Self {
        let n = map.num_states() * n_agents;
        Self {
            cells: map.free_cells().to_vec(),
            goal: map.goal(),
            n_agents,
            gamma,
            alpha,
            schedule,
            q: vec![0.0; n],
            visits: vec![0; n],
        }
    }

    fn index(&self, cell: Cell) -> usize {
        self.cells
            .binary_search_by(|c| (c.row, c.col).cmp(&(cell.row, cell.col)))
            .unwrap_or_else(|_| panic!("{cell} is not a state of this table"))
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn get(&self, cell: Cell, d: AgentId) -> f64 {
        self.q[self.index(cell) * self.n_agents + d]
    }

    pub fn set(&mut self, cell: Cell, d: AgentId, value: f64) {
        let i = self.index(cell) * self.n_agents + d;
        self.q[i] = value;
    }

    pub fn row(&self, cell: Cell) -> &[f64] {
        let i = self.index(cell) * self.n_agents;
        &self.q[i..i + self.n_agents]
    }

    pub fn visits(&self, cell: Cell, d: AgentId) -> u64 {
        self.visits[self.index(cell) * self.n_agents + d]
    }

    /// `max_d q(s, d)`, zero at the goal.
    pub fn max_value(&self, s: State) -> f64 {
        if s.terminal || s.cell == self.goal {
            return 0.0;
        }
        self.row(s.cell)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy delegation; ties go to the lower agent index.
    pub fn greedy(&self, cell: Cell) -> AgentId {
        argmax(self.row(cell))
    }

    pub fn save_json(&self, team: &Team, map: &GridMap, path: &Path) -> Result<()> {
        let entries = self
            .cells
            .iter()
            .enumerate()
            .flat_map(|(s, c)| {
                (0..self.n_agents).map(move |d| ManagerEntry {
                    col: c.col,
                    row: c.row,
                    agent: d,
                    value: self.q[s * self.n_agents + d],
                    visits: self.visits[s * self.n_agents + d],
                })
            })
            .collect();
        let file = ManagerFile {
            format: MANAGER_FORMAT.into(),
            team: team.label().into(),
            agents: team.agents().iter().map(|a| a.spec().id.clone()).collect(),
            gamma: self.gamma,
            alpha: self.alpha,
            alpha_schedule: self.schedule,
            map_hash: map.content_hash(),
            entries,
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(map: &GridMap, path: &Path) -> Result<Self> {
        let file: ManagerFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format != MANAGER_FORMAT {
            return Err(Error::PersistMismatch(format!(
                "unknown format {:?}",
                file.format
            )));
        }
        if file.map_hash != map.content_hash() {
            return Err(Error::PersistMismatch(
                "manager was trained on a different map".into(),
            ));
        }
        let n_agents = file.agents.len();
        let mut table = Self::new(map, n_agents, file.gamma, file.alpha, file.alpha_schedule);
        table.q.fill(f64::NAN);
        for e in &file.entries {
            if map.index_of(Cell::new(e.col, e.row)).is_none() || e.agent >= n_agents {
                return Err(Error::PersistMismatch(format!(
                    "bad entry ({}, {}) agent {}",
                    e.col, e.row, e.agent
                )));
            }
            let i = table.index(Cell::new(e.col, e.row)) * n_agents + e.agent;
            table.q[i] = e.value;
            table.visits[i] = e.visits;
        }
        if table.q.iter().any(|v| !v.is_finite()) {
            return Err(Error::PersistMismatch(
                "table is incomplete or non-finite".into(),
            ));
        }
        Ok(table)
    }
}

const MANAGER_FORMAT: &str = "delegation/manager-table/v1";

#[derive(Debug, Serialize, Deserialize)]
struct ManagerEntry {
    col: i32,
    row: i32,
    agent: usize,
    value: f64,
    visits: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManagerFile {
    format: String,
    team: String,
    agents: Vec<String>,
    gamma: f64,
    alpha: f64,
    alpha_schedule: AlphaSchedule,
    map_hash: String,
    entries: Vec<ManagerEntry>,
}

/// One Q-learning update from an observed outcome:
/// `q(s,d) += α [r + γ^{k_d} max_d' q(s',d') - q(s,d)]`, with no bootstrap
/// from the goal or after a timeout.
pub fn q_update(table: &mut ManagerQTable, o: &DelegationOutcome, k_d: usize) {
    let bootstrap = if o.timed_out {
        0.0
    } else {
        table.max_value(o.s_prime)
    };
    let i = table.index(o.s.cell) * table.n_agents + o.d;
    table.visits[i] += 1;
    let alpha = match table.schedule {
        AlphaSchedule::Constant => table.alpha,
        AlphaSchedule::VisitCount => 1.0 / table.visits[i] as f64,
    };
    let target = o.reward + table.gamma.powi(k_d as i32) * bootstrap;
    table.q[i] += alpha * (target - table.q[i]);
}

/// Lets agent `d` act once from `s`. `last_allowed` marks the final
/// delegation before the episode cap, which scores as a timeout unless the
/// goal is reached.
pub fn delegate<R: Rng + ?Sized>(
    team: &Team,
    map: &GridMap,
    s: State,
    d: AgentId,
    last_allowed: bool,
    rng: &mut R,
) -> DelegationOutcome {
    debug_assert!(!s.terminal, "delegation from the goal");
    let agent = team.agent(d);
    let idx = map.index_of(s.cell).expect("state is a free cell");
    let (performed, _) = apply_error(agent.ring(), agent.greedy(idx), &agent.spec().error, rng);
    let out = execute_arrow(map, s, agent.ring().get(performed));
    let timed_out = last_allowed && !out.reached_goal;
    DelegationOutcome {
        s,
        d,
        s_prime: out.end,
        reward: reward_fn(agent.spec().cost, out.reached_goal, out.collided, timed_out),
        atomic_steps: out.atomic_steps,
        collided: out.collided,
        reached_goal: out.reached_goal,
        timed_out,
    }
}

/// A rule for choosing whom to delegate to.
pub trait Delegator {
    fn choose<R: Rng + ?Sized>(&mut self, s: State, rng: &mut R) -> AgentId;
}

/// ε-greedy over a Q table. With `epsilon == 0` no randomness is consumed.
pub struct EpsilonGreedy<'a> {
    pub table: &'a ManagerQTable,
    pub epsilon: f64,
}

impl Delegator for EpsilonGreedy<'_> {
    fn choose<R: Rng + ?Sized>(&mut self, s: State, rng: &mut R) -> AgentId {
        if self.epsilon > 0.0 && rng.gen::<f64>() < self.epsilon {
            rng.gen_range(0..self.table.n_agents)
        } else {
            self.table.greedy(s.cell)
        }
    }
}

/// Uniform delegation, ignoring any learned values.
#[derive(Clone, Copy, Debug)]
pub struct RandomManager {
    n_agents: usize,
}

pub fn random_manager(team: &Team) -> RandomManager {
    RandomManager {
        n_agents: team.len(),
    }
}

impl Delegator for RandomManager {
    fn choose<R: Rng + ?Sized>(&mut self, _s: State, rng: &mut R) -> AgentId {
        rng.gen_range(0..self.n_agents)
    }
}

/// ε-greedy selection plus one delegation.
pub fn manager_step<R: Rng + ?Sized>(
    team: &Team,
    map: &GridMap,
    table: &ManagerQTable,
    s: State,
    epsilon: f64,
    last_allowed: bool,
    rng: &mut R,
) -> DelegationOutcome {
    let d = EpsilonGreedy { table, epsilon }.choose(s, rng);
    delegate(team, map, s, d, last_allowed, rng)
}

/// Trains a manager table. `observe` is called after every episode.
pub fn train_manager_with<R: Rng + ?Sized>(
    team: &Team,
    map: &GridMap,
    params: &ManagerParams,
    rng: &mut R,
    mut observe: impl FnMut(usize, &ManagerQTable),
) -> Result<ManagerQTable> {
    params.validate()?;
    let mut table = ManagerQTable::new(
        map,
        team.len(),
        params.gamma,
        params.alpha,
        params.alpha_schedule,
    );
    let starts: Vec<Cell> = map
        .free_cells()
        .iter()
        .copied()
        .filter(|c| *c != map.goal())
        .collect();
    let mut buffer = Vec::new();
    for episode in 0..params.episodes {
        let epsilon = linear_epsilon(
            params.epsilon_start,
            params.epsilon_end,
            params.explore_fraction,
            episode,
            params.episodes,
        );
        let mut s = match params.start {
            StartMode::MapStart => map.start_state(),
            StartMode::Uniform => map.state(*starts.choose(rng).expect("non-goal cell")),
        };
        buffer.clear();
        for t in 0..params.max_delegations {
            let last = t + 1 == params.max_delegations && params.timeout == TimeoutMode::Penalize;
            let o = manager_step(team, map, &table, s, epsilon, last, rng);
            match params.update_order {
                UpdateOrder::Online => q_update(&mut table, &o, team.agent(o.d).spec().k),
                UpdateOrder::EpisodeReverse => buffer.push(o),
            }
            if o.reached_goal || o.timed_out {
                break;
            }
            s = o.s_prime;
        }
        for o in buffer.iter().rev() {
            q_update(&mut table, o, team.agent(o.d).spec().k);
        }
        observe(episode, &table);
    }
    Ok(table)
}

pub fn train_manager<R: Rng + ?Sized>(
    team: &Team,
    map: &GridMap,
    params: &ManagerParams,
    rng: &mut R,
) -> Result<ManagerQTable> {
    train_manager_with(team, map, params, rng, |_, _| {})
}

/// One episode from the map start.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub outcomes: Vec<DelegationOutcome>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.reward).sum()
    }

    pub fn reached_goal(&self) -> bool {
        self.outcomes.last().is_some_and(|o| o.reached_goal)
    }

    pub fn timed_out(&self) -> bool {
        self.outcomes.last().is_some_and(|o| o.timed_out)
    }

    pub fn atomic_steps(&self) -> usize {
        self.outcomes.iter().map(|o| o.atomic_steps).sum()
    }
}

pub fn run_episode<D: Delegator, R: Rng + ?Sized>(
    team: &Team,
    map: &GridMap,
    delegator: &mut D,
    max_delegations: usize,
    rng: &mut R,
) -> EpisodeTrace {
    let mut s = map.start_state();
    let mut outcomes = Vec::new();
    for t in 0..max_delegations {
        let d = delegator.choose(s, rng);
        let o = delegate(team, map, s, d, t + 1 == max_delegations, rng);
        outcomes.push(o);
        if o.reached_goal || o.timed_out {
            break;
        }
        s = o.s_prime;
    }
    EpisodeTrace { outcomes }
}

/// Aggregate statistics over evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean_reward: f64,
    /// Sample standard deviation of per-episode total reward.
    pub std_reward: f64,
    pub goal_rate: f64,
    /// Fraction of delegations that ended in a wall collision.
    pub collision_rate: f64,
    /// Fraction of delegations given to each agent.
    pub utilization: Vec<f64>,
    pub mean_delegations: f64,
    pub mean_atomic_steps: f64,
    pub timeouts: usize,
}

pub fn evaluate<D: Delegator, R: Rng + ?Sized>(
    team: &Team,
    map: &GridMap,
    delegator: &mut D,
    episodes: usize,
    max_delegations: usize,
    rng: &mut R,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::EmptyInput("evaluation needs at least one episode"));
    }
    let mut rewards = Vec::with_capacity(episodes);
    let mut goals = 0;
    let mut timeouts = 0;
    let mut collisions = 0;
    let mut delegations = 0;
    let mut atomic = 0;
    let mut per_agent = vec![0usize; team.len()];
    for _ in 0..episodes {
        let trace = run_episode(team, map, delegator, max_delegations, rng);
        rewards.push(trace.total_reward());
        goals += trace.reached_goal() as usize;
        timeouts += trace.timed_out() as usize;
        atomic += trace.atomic_steps();
        delegations += trace.outcomes.len();
        for o in &trace.outcomes {
            collisions += o.collided as usize;
            per_agent[o.d] += 1;
        }
    }
    let n = episodes as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = if episodes > 1 {
        rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EvalStats {
        episodes,
        mean_reward: mean,
        std_reward: var.sqrt(),
        goal_rate: goals as f64 / n,
        collision_rate: collisions as f64 / delegations as f64,
        utilization: per_agent
            .iter()
            .map(|c| *c as f64 / delegations as f64)
            .collect(),
        mean_delegations: delegations as f64 / n,
        mean_atomic_steps: atomic as f64 / n,
        timeouts,
    })
}

/// Probability mass and expected reward of one end state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionMass {
    pub s_prime: State,
    pub probability: f64,
    /// Reward averaged over the micro-outcomes that end in `s_prime`.
    pub expected_reward: f64,
}

/// Upper bound on arrows enumerated per `(s, d)`.
pub const MAX_ENUMERATED_ARROWS: usize = 4096;

/// Exact `T_M(· | s, d)`: the pushforward of the agent's effective policy
/// through deterministic arrow execution. The episode cap is not modelled.
/// From the goal the distribution is a zero-reward self-loop.
pub fn exact_transition(
    team: &Team,
    map: &GridMap,
    s: State,
    d: AgentId,
) -> Result<Vec<TransitionMass>> {
    if s.terminal {
        return Ok(vec![TransitionMass {
            s_prime: s,
            probability: 1.0,
            expected_reward: 0.0,
        }]);
    }
    let agent = team.agent(d);
    let ring = agent.ring();
    if ring.len() > MAX_ENUMERATED_ARROWS {
        return Err(Error::ModelTooLarge {
            states: ring.len(),
            agents: 1,
            limit: MAX_ENUMERATED_ARROWS,
        });
    }
    let idx = map.index_of(s.cell).expect("state is a free cell");
    let mut by_end: BTreeMap<(i32, i32), (State, f64, f64)> = BTreeMap::new();
    for (arrow, p) in performed_support(ring.len(), agent.greedy(idx), &agent.spec().error) {
        let out = execute_arrow(map, s, ring.get(arrow));
        let r = reward_fn(agent.spec().cost, out.reached_goal, out.collided, false);
        let slot = by_end
            .entry((out.end.cell.row, out.end.cell.col))
            .or_insert((out.end, 0.0, 0.0));
        slot.1 += p;
        slot.2 += p * r;
    }
    Ok(by_end
        .into_values()
        .map(|(s_prime, p, pr)| TransitionMass {
            s_prime,
            probability: p,
            expected_reward: pr / p,
        })
        .collect())
}
