//! Suite configuration: one human-readable TOML tree per experiment suite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::sim::scenario::{Scenario, StrategySpec};
use crate::Result;

/// Top-level suite description: shared episode count and base seed, the
/// scenarios to run, and the strategies to cross them with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Episodes per (scenario, strategy) cell.
    pub episodes: usize,
    /// Base seed; episode seeds derive from it and are shared across cells.
    pub seed: u64,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub strategies: Vec<StrategySpec>,
}

impl SuiteConfig {
    /// Parse and validate a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SuiteConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Read, parse, and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Semantic validation beyond the TOML schema, including resolving every
    /// strategy against every scenario so range errors surface before any
    /// episode runs.
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be at least 1".into()));
        }
        let mut names = std::collections::HashSet::new();
        for scenario in &self.scenarios {
            scenario.validate()?;
            if !names.insert(scenario.name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate scenario name {}",
                    scenario.name
                )));
            }
            for spec in &self.strategies {
                spec.resolve(scenario)?;
            }
        }
        Ok(())
    }

    /// Look up a scenario by name.
    pub fn scenario(&self, name: &str) -> Result<&Scenario> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no scenario named {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
episodes = 2
seed = 9

[[scenarios]]
name = "line"
dims = 1
horizon = 3
start = [0.0]
goal = [2.0]
success_radius = 0.2
step_budget = 9
seed = 1

[scenarios.policy]
sigma0 = 0.02
step_size = 1.0
routes = [{ weight = 1.0 }]

[[strategies]]
kind = "fixed"
l = 2

[[strategies]]
kind = "a3"
samples = 4
window = 1
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = SuiteConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(config.episodes, 2);
        assert_eq!(config.scenarios.len(), 1);
        assert_eq!(config.strategies.len(), 2);
        let s = &config.scenarios[0];
        assert_eq!(s.policy.rho, 0.8);
        assert_eq!(s.policy.growth, 1.0);
        assert_eq!(s.observation_noise, 0.0);
        assert!(config.scenario("line").is_ok());
        assert!(config.scenario("nope").is_err());
    }

    #[test]
    fn malformed_toml_reports_line_and_field() {
        let err = SuiteConfig::from_toml_str("episodes = \"two\"").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("episodes") || msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn out_of_range_strategy_is_rejected_at_load() {
        let bad = MINIMAL.replace("l = 2", "l = 99");
        let err = SuiteConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = format!("typo_field = 1\n{MINIMAL}");
        assert!(SuiteConfig::from_toml_str(&bad).is_err());
    }
}
