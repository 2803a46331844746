use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use delegation::agents::AgentPolicy;
use delegation::checks::run_oracle_checks;
use delegation::config::{parse_label, CostRegime, ExperimentConfig};
use delegation::gridworld::GridMap;
use delegation::manager::{ManagerQTable, Team};
use delegation::sweep::{evaluate_team, run_sweep, train_team, train_team_manager, write_outputs};
use delegation::Error;

/// `println!` that ignores a closed stdout.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "delegation",
    version,
    about = "Train and evaluate delegation managers on gridworld teams"
)]
struct Cli {
    /// TOML config file. Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TeamArgs {
    /// Team label such as 1H-2L.
    #[arg(long)]
    composition: String,
    /// Cost regime such as 1-4-7. Defaults to the first regime in the config.
    #[arg(long)]
    regime: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory of agents written by `train-agents`. Agents are trained when omitted.
    #[arg(long)]
    agents: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the agents of a composition and save them as JSON.
    TrainAgents {
        #[command(flatten)]
        team: TeamArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a manager Q-table and save it as JSON.
    TrainManager {
        #[command(flatten)]
        team: TeamArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved manager (or a freshly trained one) and the random manager.
    Evaluate {
        #[command(flatten)]
        team: TeamArgs,
        /// Manager table written by `train-manager`.
        #[arg(long)]
        manager: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the full sweep and write CSV and JSON results.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Comma-separated labels overriding the configured compositions.
        #[arg(long, value_delimiter = ',')]
        compositions: Option<Vec<String>>,
        /// Comma-separated seeds overriding the configured seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Check the learner against the exact model and write oracle_report.json.
    OracleCheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Error(Error),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Check) => ExitCode::from(2),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn regime_of(config: &ExperimentConfig, args: &TeamArgs) -> Result<CostRegime, Error> {
    match &args.regime {
        Some(r) => r.parse(),
        None => config.regimes[0].parse(),
    }
}

fn agent_path(dir: &Path, slot: usize) -> PathBuf {
    dir.join(format!("agent_{slot}.json"))
}

fn load_team(
    config: &ExperimentConfig,
    map: &GridMap,
    args: &TeamArgs,
    regime: &CostRegime,
) -> Result<Team, Error> {
    let Some(dir) = &args.agents else {
        return train_team(config, map, &args.composition, regime, args.seed);
    };
    let templates = parse_label(&args.composition)?;
    let agents = templates
        .iter()
        .enumerate()
        .map(|(slot, t)| {
            let agent = AgentPolicy::load_json(map, &agent_path(dir, slot))?;
            let id = format!("{}{}", t.k, t.label);
            if agent.spec().id != id {
                return Err(Error::PersistMismatch(format!(
                    "agent {slot} in {} is {}, expected {id}",
                    dir.display(),
                    agent.spec().id
                )));
            }
            Ok(agent.with_cost(regime.cost(t.k)?))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Team::new(args.composition.clone(), agents, map)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::TrainAgents { team: args, out } => {
            let map = config.load_map()?;
            let regime = regime_of(&config, &args)?;
            let team = train_team(&config, &map, &args.composition, &regime, args.seed)?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            for (slot, agent) in team.agents().iter().enumerate() {
                agent.save_json(&map, &agent_path(&out, slot))?;
            }
            outln!("wrote {} agents to {}", team.len(), out.display());
        }
        Command::TrainManager { team: args, out } => {
            let map = config.load_map()?;
            let regime = regime_of(&config, &args)?;
            let team = load_team(&config, &map, &args, &regime)?;
            let table = train_team_manager(&config, &map, &team, &regime, args.seed)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(Error::from)?;
            }
            table.save_json(&team, &map, &out)?;
            outln!("wrote manager table to {}", out.display());
        }
        Command::Evaluate {
            team: args,
            manager,
            episodes,
        } => {
            if let Some(n) = episodes {
                config.eval_episodes = n;
                config.validate()?;
            }
            let map = config.load_map()?;
            let regime = regime_of(&config, &args)?;
            let team = load_team(&config, &map, &args, &regime)?;
            let table = match manager {
                Some(path) => ManagerQTable::load_json(&map, &path)?,
                None => train_team_manager(&config, &map, &team, &regime, args.seed)?,
            };
            if table.n_agents() != team.len() {
                return Err(Error::ShapeMismatch {
                    expected: team.len(),
                    actual: table.n_agents(),
                }
                .into());
            }
            let trained = evaluate_team(&config, &map, &team, Some(&table), &regime, args.seed)?;
            let random = evaluate_team(&config, &map, &team, None, &regime, args.seed)?;
            let report = serde_json::json!({
                "composition": args.composition,
                "regime": regime.to_string(),
                "seed": args.seed,
                "trained": trained,
                "random": random,
            });
            outln!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(Error::from)?
            );
        }
        Command::Sweep {
            out,
            threads,
            compositions,
            seeds,
        } => {
            if let Some(t) = threads {
                config.threads = t;
            }
            if let Some(c) = compositions {
                config.compositions = c;
            }
            if let Some(s) = seeds {
                config.seeds = s;
            }
            config.validate()?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            let results = run_sweep(&config)?;
            write_outputs(&dir, &config, &results)?;
            let failed = results.iter().filter(|r| r.failure.is_some()).count();
            outln!(
                "wrote {} rows ({failed} failed cells) to {}",
                results.len(),
                dir.join("results.csv").display()
            );
        }
        Command::OracleCheck { out } => {
            let report = run_oracle_checks(&config)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            let path = dir.join("oracle_report.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&report).map_err(Error::from)?,
            )
            .map_err(Error::from)?;
            let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
            let c = &report.contraction;
            outln!(
                "{} contraction: max ratio {:.6} <= {:.6} over {} pairs",
                mark(c.passed),
                c.max_ratio,
                c.bound,
                c.pairs
            );
            for f in &report.fixed_points {
                outln!(
                    "{} fixed point {}: residual {:.3e} after {} sweeps",
                    mark(f.passed),
                    f.map,
                    f.residual,
                    f.sweeps
                );
            }
            let t = &report.transitions;
            outln!(
                "{} transitions: max total variation {:.5} ({} samples per pair)",
                mark(t.passed),
                t.max_total_variation,
                t.samples_per_pair
            );
            let v = &report.convergence;
            outln!(
                "{} convergence: median error {:.4}, median agreement {:.3}",
                mark(v.passed),
                v.median_error,
                v.median_agreement
            );
            outln!("report written to {}", path.display());
            if !report.passed() {
                return Err(Failure::Check);
            }
        }
    }
    Ok(())
}
