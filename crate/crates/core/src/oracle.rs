//! Exact model of the manager's decision process and reference solvers.
//!
//! [`ExactModel`] enumerates `T_M(s' | s, d)` and the expected reward
//! `R_M(s, d, s')` for a team on a small map. [`value_iteration`] solves it,
//! [`apply_h`] is the Bellman optimality operator the Q-learner approximates
//! from samples, and [`convergence_test`] runs the learner against the exact
//! solution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::argmax;
use crate::error::{Error, Result};
use crate::gridworld::{Cell, GridMap};
use crate::manager::{
    exact_transition, train_manager_with, AlphaSchedule, ManagerParams, ManagerQTable, StartMode,
    Team, TimeoutMode, UpdateOrder,
};

/// Largest `states^2 * agents` accepted by [`ExactModel::build`].
pub const MAX_MODEL_ENTRIES: usize = 4_000_000;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Dense tabular model. Entries are indexed `(s * agents + d) * states + s'`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactModel {
    cells: Vec<Cell>,
    trap: usize,
    discounts: Vec<f64>,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
}

impl ExactModel {
    /// Builds the model with states in the map's row-major order.
    pub fn build(team: &Team, map: &GridMap, gamma: f64) -> Result<Self> {
        Self::build_with_order(team, map, gamma, map.free_cells())
    }

    /// Builds the model with states enumerated in `order`, which must be a
    /// permutation of the map's free cells.
    pub fn build_with_order(
        team: &Team,
        map: &GridMap,
        gamma: f64,
        order: &[Cell],
    ) -> Result<Self> {
        let n = map.num_states();
        let agents = team.len();
        if n.saturating_mul(n).saturating_mul(agents) > MAX_MODEL_ENTRIES {
            return Err(Error::ModelTooLarge {
                states: n,
                agents,
                limit: MAX_MODEL_ENTRIES,
            });
        }
        let mut sorted = order.to_vec();
        sorted.sort_by_key(|c| (c.row, c.col));
        if sorted != map.free_cells() {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: order.len(),
            });
        }
        let position = |cell: Cell| order.iter().position(|c| *c == cell).expect("free cell");
        let mut transitions = vec![0.0; n * agents * n];
        let mut rewards = vec![0.0; n * agents * n];
        for (s, &cell) in order.iter().enumerate() {
            for d in 0..agents {
                for mass in exact_transition(team, map, map.state(cell), d)? {
                    let i = (s * agents + d) * n + position(mass.s_prime.cell);
                    transitions[i] += mass.probability;
                    rewards[i] = mass.expected_reward;
                }
            }
        }
        Ok(Self {
            cells: order.to_vec(),
            trap: position(map.goal()),
            discounts: (0..agents).map(|d| team.discount(d, gamma)).collect(),
            transitions,
            rewards,
        })
    }

    /// A model from raw tables, for synthetic instances. Rows must sum to one.
    pub fn from_parts(
        cells: Vec<Cell>,
        trap: usize,
        discounts: Vec<f64>,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let n = cells.len();
        let expected = n * discounts.len() * n;
        for len in [transitions.len(), rewards.len()] {
            if len != expected {
                return Err(Error::ShapeMismatch {
                    expected,
                    actual: len,
                });
            }
        }
        if trap >= n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: trap,
            });
        }
        let model = Self {
            cells,
            trap,
            discounts,
            transitions,
            rewards,
        };
        for s in 0..n {
            for d in 0..model.agents() {
                let total: f64 = model.row(s, d).0.iter().sum();
                if (total - 1.0).abs() > 1e-10 {
                    return Err(Error::Config(format!(
                        "transition row ({s}, {d}) sums to {total}"
                    )));
                }
            }
        }
        Ok(model)
    }

    pub fn states(&self) -> usize {
        self.cells.len()
    }

    pub fn agents(&self) -> usize {
        self.discounts.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn trap(&self) -> usize {
        self.trap
    }

    /// `γ^{k_d}` per agent.
    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    pub fn state_of(&self, cell: Cell) -> Option<usize> {
        self.cells.iter().position(|c| *c == cell)
    }

    /// `(T_M(· | s, d), R_M(s, d, ·))`.
    pub fn row(&self, s: usize, d: usize) -> (&[f64], &[f64]) {
        let n = self.states();
        let i = (s * self.agents() + d) * n;
        (&self.transitions[i..i + n], &self.rewards[i..i + n])
    }

    /// Expected one-delegation reward `Σ_s' T_M R_M`.
    pub fn expected_reward(&self, s: usize, d: usize) -> f64 {
        let (t, r) = self.row(s, d);
        t.iter().zip(r).map(|(p, r)| p * r).sum()
    }

    pub fn table_len(&self) -> usize {
        self.states() * self.agents()
    }
}

fn greedy_values(model: &ExactModel, q: &[f64]) -> Vec<f64> {
    let a = model.agents();
    (0..model.states())
        .map(|s| {
            if s == model.trap {
                0.0
            } else {
                q[s * a..(s + 1) * a]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// The Bellman optimality operator on a flat `(s * agents + d)` table:
/// `(Hq)(s, d) = Σ_s' T_M(s'|s,d) [R_M(s,d,s') + γ^{k_d} max_d' q(s', d')]`,
/// with the trap contributing zero value and its own row fixed at zero.
pub fn apply_h(model: &ExactModel, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != model.table_len() {
        return Err(Error::ShapeMismatch {
            expected: model.table_len(),
            actual: q.len(),
        });
    }
    let v = greedy_values(model, q);
    let a = model.agents();
    let mut out = vec![0.0; q.len()];
    for s in 0..model.states() {
        if s == model.trap {
            continue;
        }
        for d in 0..a {
            let (t, r) = model.row(s, d);
            let g = model.discounts[d];
            out[s * a + d] = t
                .iter()
                .zip(r)
                .zip(&v)
                .filter(|((p, _), _)| **p > 0.0)
                .map(|((p, r), v)| p * (r + g * v))
                .sum();
        }
    }
    Ok(out)
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖Hq₁ − Hq₂‖∞ / ‖q₁ − q₂‖∞`.
pub fn contraction_ratio(model: &ExactModel, q1: &[f64], q2: &[f64]) -> Result<f64> {
    let num = sup_distance(&apply_h(model, q1)?, &apply_h(model, q2)?);
    let den = sup_distance(q1, q2);
    if den == 0.0 {
        return Err(Error::EmptyInput("contraction ratio of identical tables"));
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// `V*` per model state.
    pub v: Vec<f64>,
    /// `Q*` as a flat `(s * agents + d)` table.
    pub q: Vec<f64>,
    pub sweeps: usize,
    /// `‖HQ* − Q*‖∞` of the returned table.
    pub residual: f64,
}

impl Solution {
    pub fn q(&self, model: &ExactModel, s: usize, d: usize) -> f64 {
        self.q[s * model.agents() + d]
    }
}

/// Iterates `q ← Hq` from zero until the Bellman residual drops below `tol`.
pub fn value_iteration(model: &ExactModel, tol: f64) -> Result<Solution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let mut q = vec![0.0; model.table_len()];
    let mut sweeps = 0;
    loop {
        let next = apply_h(model, &q)?;
        sweeps += 1;
        let delta = sup_distance(&next, &q);
        q = next;
        if delta < tol {
            let residual = sup_distance(&apply_h(model, &q)?, &q);
            if residual < tol {
                return Ok(Solution {
                    v: greedy_values(model, &q),
                    q,
                    sweeps,
                    residual,
                });
            }
        }
    }
}

/// Settings for checking the sample-based learner against the exact model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub runs: usize,
    pub seed: u64,
    pub learner: ManagerParams,
    /// Record the error every this many episodes.
    pub checkpoint_every: usize,
    /// Required median `‖Q_t − Q*‖∞` at the end of training.
    pub max_error: f64,
    /// Required median fraction of states whose learned greedy choice is
    /// optimal under `Q*`.
    pub min_agreement: f64,
    /// Values within this distance of the optimum count as optimal.
    pub tie_tolerance: f64,
    pub tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            runs: 10,
            seed: 0,
            learner: ManagerParams {
                alpha_schedule: AlphaSchedule::VisitCount,
                start: StartMode::Uniform,
                timeout: TimeoutMode::Truncate,
                update_order: UpdateOrder::EpisodeReverse,
                ..ManagerParams::default()
            },
            checkpoint_every: 1000,
            max_error: 1.0,
            min_agreement: 0.95,
            tie_tolerance: 1e-6,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub episode: usize,
    pub median_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub final_errors: Vec<f64>,
    pub agreements: Vec<f64>,
    pub median_error: f64,
    pub median_agreement: f64,
    pub trace: Vec<TracePoint>,
    pub passed: bool,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `‖Q_t − Q*‖∞` over non-trap states.
pub fn table_error(model: &ExactModel, solution: &Solution, table: &ManagerQTable) -> f64 {
    let mut worst: f64 = 0.0;
    for (s, &cell) in model.cells().iter().enumerate() {
        if s == model.trap() {
            continue;
        }
        for d in 0..model.agents() {
            worst = worst.max((table.get(cell, d) - solution.q(model, s, d)).abs());
        }
    }
    worst
}

/// Fraction of non-trap states where the table's greedy choice is optimal.
pub fn argmax_agreement(
    model: &ExactModel,
    solution: &Solution,
    table: &ManagerQTable,
    tie_tolerance: f64,
) -> f64 {
    let mut agree = 0;
    for (s, &cell) in model.cells().iter().enumerate() {
        if s == model.trap() {
            continue;
        }
        let row: Vec<f64> = (0..model.agents())
            .map(|d| solution.q(model, s, d))
            .collect();
        let best = row[argmax(&row)];
        if best - row[table.greedy(cell)] <= tie_tolerance {
            agree += 1;
        }
    }
    agree as f64 / (model.states() - 1).max(1) as f64
}

/// Trains `config.runs` independent learners and compares them with the
/// value-iteration solution.
pub fn convergence_test(
    team: &Team,
    map: &GridMap,
    config: &ConvergenceConfig,
) -> Result<ConvergenceReport> {
    if config.runs == 0 {
        return Err(Error::EmptyInput("convergence test needs at least one run"));
    }
    let model = ExactModel::build(team, map, config.learner.gamma)?;
    let solution = value_iteration(&model, config.tolerance)?;
    let every = config.checkpoint_every.max(1);
    let mut traces: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut final_errors = Vec::new();
    let mut agreements = Vec::new();
    for run in 0..config.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(run as u64));
        let mut trace = Vec::new();
        let table = train_manager_with(team, map, &config.learner, &mut rng, |episode, table| {
            if (episode + 1) % every == 0 {
                trace.push((episode + 1, table_error(&model, &solution, table)));
            }
        })?;
        final_errors.push(table_error(&model, &solution, &table));
        agreements.push(argmax_agreement(
            &model,
            &solution,
            &table,
            config.tie_tolerance,
        ));
        traces.push(trace);
    }
    let trace = (0..traces[0].len())
        .map(|i| TracePoint {
            episode: traces[0][i].0,
            median_error: median(&traces.iter().map(|t| t[i].1).collect::<Vec<_>>()),
        })
        .collect();
    let median_error = median(&final_errors);
    let median_agreement = median(&agreements);
    Ok(ConvergenceReport {
        passed: median_error < config.max_error && median_agreement >= config.min_agreement,
        final_errors,
        agreements,
        median_error,
        median_agreement,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::RingStyle;
    use crate::agents::{train_agent, AgentParams, AgentPolicy, AgentSpec};
    use crate::error_model::{ErrorLabel, ErrorLevel};
    use crate::gridworld::{assets, load_map};
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn agent(map: &GridMap, k: usize, error: ErrorLevel, cost: f64) -> AgentPolicy {
        let spec = AgentSpec::new(k, error, cost).unwrap();
        train_agent(
            &spec,
            map,
            &AgentParams::default(),
            RingStyle::OneTurn,
            &mut ChaCha8Rng::seed_from_u64(k as u64),
        )
        .unwrap()
    }

    fn noisy_team(map: &GridMap) -> Team {
        Team::new(
            "1H-2M",
            vec![
                agent(
                    map,
                    1,
                    ErrorLevel::new(ErrorLabel::H, 0.5, 2.0).unwrap(),
                    1.0,
                ),
                agent(
                    map,
                    2,
                    ErrorLevel::new(ErrorLabel::M, 0.25, 2.0).unwrap(),
                    4.0,
                ),
            ],
            map,
        )
        .unwrap()
    }

    #[test]
    fn trap_only_model_has_zero_value() {
        let model =
            ExactModel::from_parts(vec![Cell::new(0, 0)], 0, vec![0.9], vec![1.0], vec![0.0])
                .unwrap();
        let sol = value_iteration(&model, 1e-8).unwrap();
        assert_eq!(sol.v, vec![0.0]);
        assert_eq!(sol.q, vec![0.0]);
    }

    #[test]
    fn corridor_value_by_hand() {
        let map = load_map(assets::CORRIDOR_3).unwrap();
        let team = Team::new("1N", vec![agent(&map, 1, ErrorLevel::none(), 0.0)], &map).unwrap();
        let model = ExactModel::build(&team, &map, 0.9).unwrap();
        let sol = value_iteration(&model, 1e-10).unwrap();
        let start = model.state_of(map.start()).unwrap();
        assert!((sol.v[start] - 89.0).abs() < 1e-8);
        assert_eq!(sol.v[model.trap()], 0.0);
    }

    #[test]
    fn residual_on_open_map() {
        let map = load_map(assets::OPEN_5).unwrap();
        let model = ExactModel::build(&noisy_team(&map), &map, 0.95).unwrap();
        let sol = value_iteration(&model, 1e-8).unwrap();
        assert!(sol.sweeps <= 2000, "{} sweeps", sol.sweeps);
        assert!(sol.residual < 1e-8);
        let hq = apply_h(&model, &sol.q).unwrap();
        assert!(sup_distance(&hq, &sol.q) < 1e-8);
    }

    #[test]
    fn rows_are_distributions_and_trap_is_absorbing() {
        let map = load_map(assets::ROOMS_5).unwrap();
        let model = ExactModel::build(&noisy_team(&map), &map, 0.95).unwrap();
        for s in 0..model.states() {
            for d in 0..model.agents() {
                let (t, _) = model.row(s, d);
                assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
        for d in 0..model.agents() {
            assert_eq!(model.row(model.trap(), d).0[model.trap()], 1.0);
        }
    }

    #[test]
    fn zero_table_maps_to_expected_reward() {
        let map = load_map(assets::OPEN_5).unwrap();
        let team = noisy_team(&map);
        let model = ExactModel::build(&team, &map, 0.95).unwrap();
        let hq = apply_h(&model, &vec![0.0; model.table_len()]).unwrap();
        // Direct expectation over micro-outcomes, independent of the model tables.
        for (s, &cell) in model.cells().iter().enumerate() {
            for d in 0..2 {
                let expected: f64 = if s == model.trap() {
                    0.0
                } else {
                    exact_transition(&team, &map, map.state(cell), d)
                        .unwrap()
                        .iter()
                        .map(|m| m.probability * m.expected_reward)
                        .sum()
                };
                assert!((hq[s * 2 + d] - expected).abs() < 1e-12);
                assert!(
                    (model.expected_reward(s, d) - expected).abs() < 1e-12 || s == model.trap()
                );
            }
        }
    }

    #[test]
    fn contraction_holds_on_random_pairs() {
        let map = load_map(assets::OPEN_5).unwrap();
        let model = ExactModel::build(&noisy_team(&map), &map, 0.95).unwrap();
        let gamma_max = model.discounts().iter().copied().fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let q1: Vec<f64> = (0..model.table_len())
                .map(|_| rng.gen_range(-200.0..200.0))
                .collect();
            let q2: Vec<f64> = (0..model.table_len())
                .map(|_| rng.gen_range(-200.0..200.0))
                .collect();
            assert!(contraction_ratio(&model, &q1, &q2).unwrap() <= gamma_max + 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let map = load_map(assets::OPEN_3).unwrap();
        let team = Team::new("1N", vec![agent(&map, 1, ErrorLevel::none(), 0.0)], &map).unwrap();
        let model = ExactModel::build(&team, &map, 0.9).unwrap();
        assert!(matches!(
            apply_h(&model, &[0.0; 3]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn solution_is_invariant_to_state_order() {
        let map = load_map(assets::ROOMS_5).unwrap();
        let team = noisy_team(&map);
        let base = ExactModel::build(&team, &map, 0.95).unwrap();
        let base_sol = value_iteration(&base, 1e-10).unwrap();
        let mut order = map.free_cells().to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let perm = ExactModel::build_with_order(&team, &map, 0.95, &order).unwrap();
        let perm_sol = value_iteration(&perm, 1e-10).unwrap();
        for (s, &cell) in perm.cells().iter().enumerate() {
            let b = base.state_of(cell).unwrap();
            assert!((perm_sol.v[s] - base_sol.v[b]).abs() < 1e-8);
        }
    }

    #[test]
    fn myopic_model_and_learner() {
        let map = load_map(assets::OPEN_3).unwrap();
        let team = Team::new(
            "1N-2N",
            vec![
                agent(&map, 1, ErrorLevel::none(), 1.0),
                agent(&map, 2, ErrorLevel::none(), 4.0),
            ],
            &map,
        )
        .unwrap();
        let model = ExactModel::build(&team, &map, 0.0).unwrap();
        let sol = value_iteration(&model, 1e-12).unwrap();
        for s in 0..model.states() {
            for d in 0..2 {
                let expected = if s == model.trap() {
                    0.0
                } else {
                    model.expected_reward(s, d)
                };
                assert_eq!(sol.q(&model, s, d), expected);
            }
        }
        // With deterministic agents one visit per (s, d) fixes the learner.
        let config = ConvergenceConfig {
            runs: 1,
            learner: ManagerParams {
                gamma: 0.0,
                episodes: 2000,
                epsilon_start: 1.0,
                epsilon_end: 1.0,
                ..ConvergenceConfig::default().learner
            },
            max_error: 1e-12,
            min_agreement: 1.0,
            ..ConvergenceConfig::default()
        };
        let report = convergence_test(&team, &map, &config).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn learner_converges_on_corridor() {
        let map = load_map(assets::CORRIDOR_3).unwrap();
        let team = Team::new("1N", vec![agent(&map, 1, ErrorLevel::none(), 0.0)], &map).unwrap();
        let config = ConvergenceConfig {
            runs: 3,
            learner: ManagerParams {
                gamma: 0.9,
                episodes: 5000,
                ..ConvergenceConfig::default().learner
            },
            max_error: 0.5,
            ..ConvergenceConfig::default()
        };
        let report = convergence_test(&team, &map, &config).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.trace.len(), 5);
    }

    #[test]
    fn oversized_models_are_refused() {
        let map = load_map(assets::OPEN_10).unwrap();
        let agents = vec![agent(&map, 1, ErrorLevel::none(), 0.0); 500];
        let team = Team::new("big", agents, &map).unwrap();
        assert!(matches!(
            ExactModel::build(&team, &map, 0.9),
            Err(Error::ModelTooLarge { .. })
        ));
    }
}
