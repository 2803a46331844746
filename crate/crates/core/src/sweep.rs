//! Experiment sweeps over compositions, cost regimes and seeds.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{train_agent, AgentPolicy};
use crate::config::{team_specs, CostRegime, ExperimentConfig};
use crate::error::{Error, Result};
use crate::gridworld::GridMap;
use crate::manager::{
    evaluate, random_manager, train_manager, EpsilonGreedy, EvalStats, ManagerQTable, Team,
};
use crate::stats::{paired_comparison, summarize, PairedComparison, Summary};

/// A 64-bit seed derived from a base seed and a path of labels.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for p in parts {
        hasher.update(b"|");
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(base: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManagerKind {
    Trained,
    Random,
    Failed,
}

impl fmt::Display for ManagerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ManagerKind::Trained => "trained",
            ManagerKind::Random => "random",
            ManagerKind::Failed => "failed",
        })
    }
}

/// One row of sweep output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub composition: String,
    pub regime: String,
    pub seed: u64,
    pub manager_kind: ManagerKind,
    pub stats: Option<EvalStats>,
    pub failure: Option<String>,
}

impl ExperimentResult {
    fn key(&self) -> (&str, &str, u64, ManagerKind) {
        (
            &self.composition,
            &self.regime,
            self.seed,
            self.manager_kind,
        )
    }
}

/// Trains the agents of a composition. Agent training does not depend on
/// costs, so the same seed yields the same policies under every regime. An
/// agent that fails its convergence check is retrained from a new derived
/// seed, up to `config.agent.attempts` times.
pub fn train_team(
    config: &ExperimentConfig,
    map: &GridMap,
    label: &str,
    regime: &CostRegime,
    seed: u64,
) -> Result<Team> {
    let specs = team_specs(label, regime, &config.error_levels, config.agent.gamma)?;
    let agents = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let slot = i.to_string();
            let mut attempt = 0;
            loop {
                let tag = attempt.to_string();
                let mut rng = rng_for(seed, &["agent", label, &slot, &tag]);
                match train_agent(spec, map, &config.agent, config.ring_style, &mut rng) {
                    Err(Error::NonConvergence { .. }) if attempt + 1 < config.agent.attempts => {
                        attempt += 1
                    }
                    other => return other,
                }
            }
        })
        .collect::<Result<Vec<AgentPolicy>>>()?;
    Team::new(label, agents, map)
}

pub fn train_team_manager(
    config: &ExperimentConfig,
    map: &GridMap,
    team: &Team,
    regime: &CostRegime,
    seed: u64,
) -> Result<ManagerQTable> {
    let regime = regime.to_string();
    let mut rng = rng_for(seed, &["manager", team.label(), &regime]);
    train_manager(team, map, &config.manager, &mut rng)
}

/// Evaluates a greedy table, or the random manager when `table` is `None`.
pub fn evaluate_team(
    config: &ExperimentConfig,
    map: &GridMap,
    team: &Team,
    table: Option<&ManagerQTable>,
    regime: &CostRegime,
    seed: u64,
) -> Result<EvalStats> {
    let regime = regime.to_string();
    let cap = config.manager.max_delegations;
    match table {
        Some(table) => {
            let mut rng = rng_for(seed, &["eval", "trained", team.label(), &regime]);
            let mut policy = EpsilonGreedy {
                table,
                epsilon: 0.0,
            };
            evaluate(team, map, &mut policy, config.eval_episodes, cap, &mut rng)
        }
        None => {
            let mut rng = rng_for(seed, &["eval", "random", team.label(), &regime]);
            evaluate(
                team,
                map,
                &mut random_manager(team),
                config.eval_episodes,
                cap,
                &mut rng,
            )
        }
    }
}

fn run_cell(
    config: &ExperimentConfig,
    map: &GridMap,
    label: &str,
    regime: &CostRegime,
    seed: u64,
) -> Vec<ExperimentResult> {
    let row = |kind, stats, failure| ExperimentResult {
        composition: label.to_string(),
        regime: regime.to_string(),
        seed,
        manager_kind: kind,
        stats,
        failure,
    };
    let attempt = || -> Result<(EvalStats, EvalStats)> {
        let team = train_team(config, map, label, regime, seed)?;
        let table = train_team_manager(config, map, &team, regime, seed)?;
        let trained = evaluate_team(config, map, &team, Some(&table), regime, seed)?;
        let random = evaluate_team(config, map, &team, None, regime, seed)?;
        Ok((trained, random))
    };
    match attempt() {
        Ok((trained, random)) => vec![
            row(ManagerKind::Trained, Some(trained), None),
            row(ManagerKind::Random, Some(random), None),
        ],
        Err(e) => vec![row(ManagerKind::Failed, None, Some(e.to_string()))],
    }
}

/// Runs every (composition, regime, seed) cell. Failures become rows rather
/// than aborting the sweep. Output is sorted and independent of scheduling.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    config.validate()?;
    let map = config.load_map()?;
    let regimes = config.regimes()?;
    let mut cells = Vec::new();
    for label in &config.compositions {
        for regime in &regimes {
            for &seed in &config.seeds {
                cells.push((label.as_str(), regime, seed));
            }
        }
    }
    let work = || -> Vec<ExperimentResult> {
        cells
            .par_iter()
            .flat_map_iter(|(label, regime, seed)| run_cell(config, &map, label, regime, *seed))
            .collect()
    };
    let mut results = if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)
    } else {
        work()
    };
    results.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(results)
}

pub const CSV_HEADER: [&str; 12] = [
    "composition",
    "regime",
    "seed",
    "manager_kind",
    "mean_reward",
    "std_reward",
    "goal_rate",
    "collision_rate",
    "util_d1",
    "util_d2",
    "mean_delegations",
    "mean_atomic_steps",
];

/// Writes the results table. Failed cells leave the numeric fields empty.
pub fn write_csv<W: Write>(results: &[ExperimentResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        let mut record = vec![
            r.composition.clone(),
            r.regime.clone(),
            r.seed.to_string(),
            r.manager_kind.to_string(),
        ];
        match &r.stats {
            Some(s) => {
                let util = |i: usize| s.utilization.get(i).copied().unwrap_or(0.0).to_string();
                record.extend([
                    s.mean_reward.to_string(),
                    s.std_reward.to_string(),
                    s.goal_rate.to_string(),
                    s.collision_rate.to_string(),
                    util(0),
                    util(1),
                    s.mean_delegations.to_string(),
                    s.mean_atomic_steps.to_string(),
                ]);
            }
            None => record.extend(std::iter::repeat_n(String::new(), 8)),
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Across-seed summary of one (composition, regime, manager) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub composition: String,
    pub regime: String,
    pub manager_kind: ManagerKind,
    pub mean_reward: Summary,
    pub std_reward: Summary,
    pub goal_rate: Summary,
    pub util_d1: Summary,
    pub util_d2: Summary,
}

/// Trained versus random manager for one (composition, regime).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManagerComparison {
    pub composition: String,
    pub regime: String,
    pub seeds: Vec<u64>,
    pub trained_minus_random: PairedComparison,
}

fn groups(results: &[ExperimentResult]) -> Vec<((&str, &str), Vec<&ExperimentResult>)> {
    let mut out: Vec<((&str, &str), Vec<&ExperimentResult>)> = Vec::new();
    for r in results {
        let key = (r.composition.as_str(), r.regime.as_str());
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(r),
            None => out.push((key, vec![r])),
        }
    }
    out
}

pub fn summarize_results(results: &[ExperimentResult]) -> Result<Vec<GroupSummary>> {
    let mut out = Vec::new();
    for ((composition, regime), rows) in groups(results) {
        for kind in [ManagerKind::Trained, ManagerKind::Random] {
            let stats: Vec<&EvalStats> = rows
                .iter()
                .filter(|r| r.manager_kind == kind)
                .filter_map(|r| r.stats.as_ref())
                .collect();
            if stats.is_empty() {
                continue;
            }
            let field = |f: &dyn Fn(&EvalStats) -> f64| {
                summarize(&stats.iter().map(|s| f(s)).collect::<Vec<_>>())
            };
            out.push(GroupSummary {
                composition: composition.to_string(),
                regime: regime.to_string(),
                manager_kind: kind,
                mean_reward: field(&|s| s.mean_reward)?,
                std_reward: field(&|s| s.std_reward)?,
                goal_rate: field(&|s| s.goal_rate)?,
                util_d1: field(&|s| s.utilization.first().copied().unwrap_or(0.0))?,
                util_d2: field(&|s| s.utilization.get(1).copied().unwrap_or(0.0))?,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("no successful results to summarize"));
    }
    Ok(out)
}

/// Paired per-seed comparison of trained and random mean rewards, for every
/// group where both managers have results for the same seeds.
pub fn compare_managers(results: &[ExperimentResult]) -> Result<Vec<ManagerComparison>> {
    let mut out = Vec::new();
    for ((composition, regime), rows) in groups(results) {
        let reward = |kind: ManagerKind, seed: u64| {
            rows.iter()
                .find(|r| r.manager_kind == kind && r.seed == seed)
                .and_then(|r| r.stats.as_ref())
                .map(|s| s.mean_reward)
        };
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let paired: Vec<(u64, f64, f64)> = seeds
            .iter()
            .filter_map(|&s| {
                Some((
                    s,
                    reward(ManagerKind::Trained, s)?,
                    reward(ManagerKind::Random, s)?,
                ))
            })
            .collect();
        if paired.is_empty() {
            continue;
        }
        let trained: Vec<f64> = paired.iter().map(|p| p.1).collect();
        let random: Vec<f64> = paired.iter().map(|p| p.2).collect();
        out.push(ManagerComparison {
            composition: composition.to_string(),
            regime: regime.to_string(),
            seeds: paired.iter().map(|p| p.0).collect(),
            trained_minus_random: paired_comparison(&trained, &random)?,
        });
    }
    Ok(out)
}

/// Seed-averaged reward mean and variance of the trained manager along a
/// family of compositions ordered from least to most noisy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub regime: String,
    pub family: Vec<String>,
    pub means: Vec<f64>,
    /// Seed average of the per-seed episode reward variance.
    pub variances: Vec<f64>,
    /// Per adjacent pair: mean did not increase and variance did not decrease.
    pub pairs: Vec<bool>,
}

impl OrderingReport {
    pub fn pairs_held(&self) -> usize {
        self.pairs.iter().filter(|p| **p).count()
    }

    /// At most one adjacent pair may break the ordering.
    pub fn passed(&self) -> bool {
        self.pairs_held() + 1 >= self.pairs.len()
    }
}

pub fn error_ordering(
    results: &[ExperimentResult],
    family: &[&str],
    regime: &str,
) -> Result<OrderingReport> {
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for label in family {
        let stats: Vec<&EvalStats> = results
            .iter()
            .filter(|r| {
                r.composition == *label
                    && r.regime == regime
                    && r.manager_kind == ManagerKind::Trained
            })
            .filter_map(|r| r.stats.as_ref())
            .collect();
        if stats.is_empty() {
            return Err(Error::EmptyInput(
                "ordering family member has no trained results",
            ));
        }
        let n = stats.len() as f64;
        means.push(stats.iter().map(|s| s.mean_reward).sum::<f64>() / n);
        variances.push(stats.iter().map(|s| s.std_reward.powi(2)).sum::<f64>() / n);
    }
    let pairs = (1..family.len())
        .map(|i| means[i] <= means[i - 1] && variances[i] >= variances[i - 1])
        .collect();
    Ok(OrderingReport {
        regime: regime.to_string(),
        family: family.iter().map(|s| s.to_string()).collect(),
        means,
        variances,
        pairs,
    })
}

/// Writes `results.csv`, `results.json`, `summary.json`, `comparison.json`
/// and `metadata.json` into `dir`. Only the metadata file carries a
/// timestamp.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    results: &[ExperimentResult],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(results, std::fs::File::create(dir.join("results.csv"))?)?;
    std::fs::write(
        dir.join("results.json"),
        serde_json::to_string_pretty(results)?,
    )?;
    if let Ok(summary) = summarize_results(results) {
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }
    std::fs::write(
        dir.join("comparison.json"),
        serde_json::to_string_pretty(&compare_managers(results)?)?,
    )?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let metadata = serde_json::json!({
        "created_unix": timestamp,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    std::fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(&metadata)?,
    )?;
    Ok(())
}
