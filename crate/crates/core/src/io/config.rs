//! Run configuration files.
//!
//! A TOML file with one table per concern. Every field has a default, so an
//! empty file is a valid configuration:
//!
//! ```toml
//! [population]
//! n_agents = 500
//! mean_ln_greed = 1.2
//! mean_ln_fear = 1.04
//! var_ln_greed = 1.7e-4
//! var_ln_fear = 1.7e-4
//! trait_correlation = 0.5
//!
//! [sweep]
//! trait_correlations = [-1.0, 0.5, 1.0]
//!
//! [init]
//! initial_cash = 10.0
//! initial_target_ratio = 1.0
//! noise_amplitude = 0.1
//! initial_price = 1.0
//!
//! [simulation]
//! active_per_session = 20
//! sessions = 1260
//! n_paths = 500
//! master_seed = 2021
//! risk_threshold = 0.5
//! resample_traits_per_path = true
//! wealth_bins = 40
//!
//! [rule]
//! variant = "multiplicative"   # or "proportional"
//! equality_tolerance = 1e-12
//! ```
//!
//! Command-line overrides use dotted keys, e.g. `simulation.n_paths=100`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::ensemble::{EnsembleError, SimulationConfig};
use crate::market::UpdateRule;
use crate::population::{InitSpec, PopulationSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error(transparent)]
    Invalid(#[from] EnsembleError),
    #[error("sweep.trait_correlations: {0}")]
    Sweep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub active_per_session: usize,
    pub sessions: usize,
    pub n_paths: u64,
    pub master_seed: u64,
    pub risk_threshold: f64,
    pub resample_traits_per_path: bool,
    pub wealth_bins: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        Self {
            active_per_session: d.active_per_session,
            sessions: d.sessions,
            n_paths: d.n_paths,
            master_seed: d.master_seed,
            risk_threshold: d.risk_threshold,
            resample_traits_per_path: d.resample_traits_per_path,
            wealth_bins: d.wealth_bins,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    /// Trait correlations to run; when absent, only
    /// `population.trait_correlation` is run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trait_correlations: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub population: PopulationSpec,
    pub sweep: Sweep,
    pub init: InitSpec,
    pub simulation: SimulationSection,
    pub rule: UpdateRule,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Trait correlation levels in run order.
    pub fn levels(&self) -> Vec<f64> {
        match &self.sweep.trait_correlations {
            Some(levels) => levels.clone(),
            None => vec![self.population.trait_correlation],
        }
    }

    pub fn simulation_for(&self, trait_correlation: f64) -> SimulationConfig {
        SimulationConfig {
            population: self.population.with_correlation(trait_correlation),
            init: self.init,
            active_per_session: self.simulation.active_per_session,
            sessions: self.simulation.sessions,
            rule: self.rule,
            n_paths: self.simulation.n_paths,
            master_seed: self.simulation.master_seed,
            risk_threshold: self.simulation.risk_threshold,
            resample_traits_per_path: self.simulation.resample_traits_per_path,
            wealth_bins: self.simulation.wealth_bins,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let levels = self.levels();
        if levels.is_empty() {
            return Err(ConfigError::Sweep("must not be empty".into()));
        }
        for (i, &r) in levels.iter().enumerate() {
            if levels[..i].contains(&r) {
                return Err(ConfigError::Sweep(format!("duplicate level {r}")));
            }
            self.simulation_for(r).validate()?;
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        self.population.warnings()
    }
}

fn apply_override(table: &mut Table, assignment: &str) -> Result<(), ConfigError> {
    let err = |message: &str| ConfigError::Override {
        key: assignment.to_string(),
        message: message.to_string(),
    };
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| err("expected KEY=VALUE"))?;
    let key = key.trim();
    let raw = raw.trim();
    // parse as a TOML value, falling back to a bare string
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| err("empty key"))?;
    let mut node = table;
    for part in parts {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| err("key path crosses a non-table value"))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.levels(), vec![0.5]);
        assert_eq!(c.simulation_for(0.5), SimulationConfig::default());
    }

    #[test]
    fn sweep_and_overrides() {
        let text = "[sweep]\ntrait_correlations = [-1.0, 0.5, 1.0]\n[simulation]\nn_paths = 7\n";
        let c = RunConfig::from_toml_str(
            text,
            &[
                "simulation.n_paths=9".into(),
                "rule.variant=proportional".into(),
                "population.mean_ln_fear = 0.5".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.levels(), vec![-1.0, 0.5, 1.0]);
        assert_eq!(c.simulation.n_paths, 9);
        assert_eq!(c.rule.variant, crate::market::UpdateVariant::Proportional);
        assert_eq!(c.population.mean_ln_fear, 0.5);
        assert_eq!(c.simulation_for(-1.0).population.trait_correlation, -1.0);
    }

    #[test]
    fn zero_paths_is_rejected_with_field_path() {
        let e = RunConfig::from_toml_str("[simulation]\nn_paths = 0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("simulation.n_paths"), "{e}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let e = RunConfig::from_toml_str("[simulation]\nn_path = 3\n", &[]).unwrap_err();
        assert!(matches!(e, ConfigError::Parse(_)));
        assert!(e.to_string().contains("n_path"), "{e}");
    }

    #[test]
    fn bad_override() {
        assert!(matches!(
            RunConfig::from_toml_str("", &["simulation.n_paths".into()]),
            Err(ConfigError::Override { .. })
        ));
        assert!(RunConfig::from_toml_str("", &["sweep.trait_correlations=[0.1, 0.1]".into()]).is_err());
    }

    #[test]
    fn toml_snapshot_round_trips() {
        let c = RunConfig::from_toml_str(
            "[sweep]\ntrait_correlations = [-1.0, 1.0]\n[population]\nvar_ln_greed = 1.7e-4\n",
            &[],
        )
        .unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string(), &[]).unwrap();
        assert_eq!(back, c);
    }
}
