//! Reference checks run by `oracle-check`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CostRegime, ExperimentConfig};
use crate::error::Result;
use crate::manager::{delegate, exact_transition, Team};
use crate::oracle::{
    apply_h, contraction_ratio, convergence_test, sup_distance, value_iteration, ConvergenceReport,
    ExactModel,
};
use crate::sweep::{rng_for, train_team};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub pairs: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCheck {
    pub map: String,
    pub sweeps: usize,
    pub residual: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionCheck {
    pub samples_per_pair: usize,
    pub max_total_variation: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub contraction: ContractionCheck,
    pub fixed_points: Vec<FixedPointCheck>,
    pub transitions: TransitionCheck,
    pub convergence: ConvergenceReport,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.contraction.passed
            && self.fixed_points.iter().all(|f| f.passed)
            && self.transitions.passed
            && self.convergence.passed
    }
}

/// Largest `‖Hq₁ − Hq₂‖∞ / ‖q₁ − q₂‖∞` over random table pairs with entries
/// uniform in `[-scale, scale]`.
pub fn measure_contraction<R: Rng + ?Sized>(
    model: &ExactModel,
    pairs: usize,
    scale: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let q1: Vec<f64> = (0..model.table_len())
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        let q2: Vec<f64> = (0..model.table_len())
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        worst = worst.max(contraction_ratio(model, &q1, &q2)?);
    }
    Ok(worst)
}

/// Largest total-variation distance between sampled and exact next-state
/// distributions over every non-goal `(s, d)`.
pub fn max_transition_tv<R: Rng + ?Sized>(
    team: &Team,
    map: &crate::gridworld::GridMap,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &cell in map.free_cells() {
        let s = map.state(cell);
        if s.terminal {
            continue;
        }
        for d in 0..team.len() {
            let mut counts = vec![0usize; map.num_states()];
            for _ in 0..samples {
                let o = delegate(team, map, s, d, false, rng);
                counts[map.index_of(o.s_prime.cell).expect("free")] += 1;
            }
            let mut exact = vec![0.0; map.num_states()];
            for m in exact_transition(team, map, s, d)? {
                exact[map.index_of(m.s_prime.cell).expect("free")] += m.probability;
            }
            let tv = 0.5
                * counts
                    .iter()
                    .zip(&exact)
                    .map(|(c, p)| (*c as f64 / samples as f64 - p).abs())
                    .sum::<f64>();
            worst = worst.max(tv);
        }
    }
    Ok(worst)
}

/// Runs every check in `config.oracle`.
pub fn run_oracle_checks(config: &ExperimentConfig) -> Result<OracleReport> {
    let oc = &config.oracle;
    let regime: CostRegime = oc.regime.parse()?;
    let gamma = oc.convergence.learner.gamma;
    let seed = oc.convergence.seed;

    let map = config.resolve_map(&oc.contraction_map)?;
    let team = train_team(config, &map, &oc.composition, &regime, seed)?;
    let model = ExactModel::build(&team, &map, gamma)?;
    let bound = model.discounts().iter().copied().fold(0.0, f64::max);
    let max_ratio = measure_contraction(
        &model,
        oc.contraction_pairs,
        200.0,
        &mut rng_for(seed, &["contraction"]),
    )?;
    let contraction = ContractionCheck {
        pairs: oc.contraction_pairs,
        max_ratio,
        bound,
        passed: max_ratio <= bound + 1e-12,
    };

    let mut fixed_points = Vec::new();
    for source in &oc.maps {
        let map = config.resolve_map(source)?;
        let team = train_team(config, &map, &oc.composition, &regime, seed)?;
        let model = ExactModel::build(&team, &map, gamma)?;
        let sol = value_iteration(&model, oc.tolerance)?;
        let residual = sup_distance(&apply_h(&model, &sol.q)?, &sol.q);
        fixed_points.push(FixedPointCheck {
            map: source.clone(),
            sweeps: sol.sweeps,
            residual,
            passed: residual < oc.tolerance,
        });
    }

    let map = config.resolve_map(&oc.transition_map)?;
    let team = train_team(config, &map, &oc.transition_composition, &regime, seed)?;
    let tv = max_transition_tv(
        &team,
        &map,
        oc.transition_samples,
        &mut rng_for(seed, &["transitions"]),
    )?;
    let transitions = TransitionCheck {
        samples_per_pair: oc.transition_samples,
        max_total_variation: tv,
        passed: tv <= oc.max_total_variation,
    };

    let map = config.resolve_map(&oc.convergence_map)?;
    let team = train_team(config, &map, &oc.composition, &regime, seed)?;
    let convergence = convergence_test(&team, &map, &oc.convergence)?;

    Ok(OracleReport {
        contraction,
        fixed_points,
        transitions,
        convergence,
    })
}
