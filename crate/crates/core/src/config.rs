//! Experiment configuration (TOML), team labels and cost regimes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actions::RingStyle;
use crate::agents::{AgentParams, AgentSpec};
use crate::error::{Error, Result};
use crate::error_model::{ErrorLabel, ErrorLevels};
use crate::gridworld::{load_map, load_map_source, GridMap};
use crate::manager::ManagerParams;
use crate::oracle::ConvergenceConfig;

/// Step size and error label of one team member, before costs are known.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentTemplate {
    pub k: usize,
    pub label: ErrorLabel,
}

/// Parses an `"AB-CD"` team label, e.g. `"1H-2L"`.
pub fn parse_label(label: &str) -> Result<[AgentTemplate; 2]> {
    let bad = || Error::InvalidLabel(label.to_string());
    let b = label.as_bytes();
    if b.len() != 5 || b[2] != b'-' {
        return Err(bad());
    }
    let one = |digit: u8, letter: u8| -> Result<AgentTemplate> {
        if !digit.is_ascii_digit() {
            return Err(bad());
        }
        let label = ErrorLabel::from_char(letter as char).ok_or_else(bad)?;
        let k = (digit - b'0') as usize;
        if k == 0 {
            return Err(Error::InvalidStepSize(0));
        }
        Ok(AgentTemplate { k, label })
    };
    Ok([one(b[0], b[1])?, one(b[3], b[4])?])
}

/// Per-delegation cost by step size, written `"1-4-7"`: the i-th number is
/// the cost of an `i`-step agent.
#[derive(Clone, Debug, PartialEq)]
pub struct CostRegime {
    costs: Vec<f64>,
}

impl CostRegime {
    pub fn cost(&self, k: usize) -> Result<f64> {
        k.checked_sub(1)
            .and_then(|i| self.costs.get(i))
            .copied()
            .ok_or_else(|| {
                Error::Config(format!("cost regime {self} has no cost for step size {k}"))
            })
    }
}

impl FromStr for CostRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let costs = s
            .split('-')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("malformed cost regime {s:?}")))?;
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config(format!(
                "cost regime {s:?} has a negative or non-finite cost"
            )));
        }
        Ok(Self { costs })
    }
}

impl fmt::Display for CostRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.costs.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

/// Agent specs for a label under a regime.
pub fn team_specs(
    label: &str,
    regime: &CostRegime,
    levels: &ErrorLevels,
    gamma: f64,
) -> Result<Vec<AgentSpec>> {
    parse_label(label)?
        .iter()
        .map(|t| {
            let mut spec = AgentSpec::new(t.k, levels.level(t.label)?, regime.cost(t.k)?)?;
            spec.gamma = gamma;
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

/// Every pairing of distinct step sizes from 1..=3 with every error label.
pub fn default_compositions() -> Vec<String> {
    let mut out = Vec::new();
    for (a, b) in [(1, 2), (1, 3), (2, 3)] {
        for la in ErrorLabel::ALL {
            for lb in ErrorLabel::ALL {
                out.push(format!("{a}{la}-{b}{lb}"));
            }
        }
    }
    out
}

/// Settings for the `oracle-check` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheckConfig {
    /// Maps on which the fixed point is checked.
    pub maps: Vec<String>,
    pub composition: String,
    pub regime: String,
    pub tolerance: f64,
    pub contraction_map: String,
    pub contraction_pairs: usize,
    pub transition_map: String,
    pub transition_composition: String,
    pub transition_samples: usize,
    pub max_total_variation: f64,
    pub convergence_map: String,
    pub convergence: ConvergenceConfig,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            maps: ["open3", "corridor3", "open5", "rooms5"]
                .iter()
                .map(|m| format!("builtin:{m}"))
                .collect(),
            composition: "1N-2N".into(),
            regime: "1-4-7".into(),
            tolerance: 1e-8,
            contraction_map: "builtin:open5".into(),
            contraction_pairs: 100,
            transition_map: "builtin:open3".into(),
            transition_composition: "1H-2M".into(),
            transition_samples: 100_000,
            max_total_variation: 0.01,
            convergence_map: "builtin:open5".into(),
            convergence: ConvergenceConfig::default(),
        }
    }
}

/// Top-level experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Map file path (relative to the config file) or `builtin:<name>`.
    pub map: String,
    pub compositions: Vec<String>,
    pub regimes: Vec<String>,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub output_dir: String,
    /// Worker threads for the sweep; 0 uses all cores.
    pub threads: usize,
    pub ring_style: RingStyle,
    pub error_levels: ErrorLevels,
    pub agent: AgentParams,
    pub manager: ManagerParams,
    pub oracle: OracleCheckConfig,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            map: "builtin:corridor10".into(),
            compositions: default_compositions(),
            regimes: vec!["1-4-7".into(), "7-4-1".into()],
            seeds: (0..5).collect(),
            eval_episodes: 1000,
            output_dir: "results".into(),
            threads: 0,
            ring_style: RingStyle::OneTurn,
            error_levels: ErrorLevels::default(),
            agent: AgentParams::default(),
            manager: ManagerParams::default(),
            oracle: OracleCheckConfig::default(),
            base_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative map paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.compositions.is_empty() {
            return Err(Error::Config("no compositions".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("no cost regimes".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        self.error_levels.validate()?;
        self.manager.validate()?;
        for regime in &self.regimes {
            let regime: CostRegime = regime.parse()?;
            for label in &self.compositions {
                team_specs(label, &regime, &self.error_levels, self.agent.gamma)?;
            }
        }
        Ok(())
    }

    pub fn regimes(&self) -> Result<Vec<CostRegime>> {
        self.regimes.iter().map(|r| r.parse()).collect()
    }

    /// Loads a map given as a path or `builtin:<name>`.
    pub fn resolve_map(&self, source: &str) -> Result<GridMap> {
        if source.starts_with("builtin:") {
            return load_map_source(source);
        }
        let path = match &self.base_dir {
            Some(dir) if Path::new(source).is_relative() => dir.join(source),
            _ => PathBuf::from(source),
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read map {}: {e}", path.display())))?;
        load_map(&text)
    }

    pub fn load_map(&self) -> Result<GridMap> {
        self.resolve_map(&self.map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse() {
        let [a, b] = parse_label("1H-2L").unwrap();
        assert_eq!(
            (a.k, a.label, b.k, b.label),
            (1, ErrorLabel::H, 2, ErrorLabel::L)
        );
        let [a, b] = parse_label("2N-3L").unwrap();
        assert_eq!(
            (a.k, a.label, b.k, b.label),
            (2, ErrorLabel::N, 3, ErrorLabel::L)
        );
        for bad in ["9Z-1N", "1H2L", "1H-2", "AH-2L", "1h-2l", "1H-2L ", "12-3N"] {
            assert!(
                matches!(parse_label(bad), Err(Error::InvalidLabel(_))),
                "{bad}"
            );
        }
        assert!(matches!(
            parse_label("0N-1N"),
            Err(Error::InvalidStepSize(0))
        ));
    }

    #[test]
    fn regimes_parse_and_price_step_sizes() {
        let r: CostRegime = "7-4-1".parse().unwrap();
        assert_eq!(
            (r.cost(1).unwrap(), r.cost(2).unwrap(), r.cost(3).unwrap()),
            (7.0, 4.0, 1.0)
        );
        assert!(r.cost(4).is_err());
        assert_eq!(r.to_string(), "7-4-1");
        assert!("1-x-3".parse::<CostRegime>().is_err());
        assert!("1--3".parse::<CostRegime>().is_err());
        assert!("1-4.5-7".parse::<CostRegime>().is_ok());
    }

    #[test]
    fn specs_carry_costs() {
        let specs = team_specs(
            "1H-3N",
            &"1-4-7".parse().unwrap(),
            &ErrorLevels::default(),
            0.9,
        )
        .unwrap();
        assert_eq!(specs[0].id, "1H");
        assert_eq!(specs[0].cost, 1.0);
        assert_eq!(specs[0].error.probability, 0.5);
        assert_eq!(specs[1].cost, 7.0);
        assert_eq!(specs[1].gamma, 0.9);
    }

    #[test]
    fn default_set_has_every_distinct_pairing() {
        let all = default_compositions();
        assert_eq!(all.len(), 48);
        assert!(all.contains(&"2L-3H".to_string()));
        assert!(all.iter().all(|l| parse_label(l).is_ok()));
    }

    #[test]
    fn toml_overrides_and_rejects_unknown_keys() {
        let config = ExperimentConfig::from_toml(
            r#"
            map = "builtin:open5"
            compositions = ["1N-2N"]
            seeds = [3, 4]
            [manager]
            episodes = 500
            [error_levels.H]
            p = 0.6
            "#,
        )
        .unwrap();
        assert_eq!(config.manager.episodes, 500);
        assert_eq!(config.manager.gamma, 0.95);
        assert_eq!(config.error_levels.high.p, 0.6);
        assert_eq!(config.regimes, ["1-4-7", "7-4-1"]);
        assert!(matches!(
            ExperimentConfig::from_toml("mapp = 1"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml("seeds = [1, 1]").is_err());
        assert!(ExperimentConfig::from_toml("compositions = [\"9Z-1N\"]").is_err());
        assert!(ExperimentConfig::from_toml("regimes = [\"1-4\"]").is_err());
    }
}
