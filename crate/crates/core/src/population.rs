//! Heterogeneous trader populations.
//!
//! `(ln greed, ln fear)` is drawn from a bivariate normal restricted to the
//! quadrant `{ln greed >= 0, ln fear >= 0}`, so every trait is at least 1.
//! The initial market is a slightly perturbed equilibrium: every agent holds
//! the same cash and target ratio, and a stock position equal to its target
//! plus a small uniform perturbation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{AgentState, MarketState};

/// Consecutive rejections after which sampling gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PopulationError {
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("{0} consecutive samples fell outside ln greed >= 0, ln fear >= 0")]
    RejectionStall(u64),
    #[error("expected {expected} trait pairs, got {got}")]
    TraitCountMismatch { expected: usize, got: usize },
}

fn invalid(field: &'static str, message: impl Into<String>) -> PopulationError {
    PopulationError::Invalid {
        field,
        message: message.into(),
    }
}

/// Distribution of behavioural traits across the population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub n_agents: usize,
    pub mean_ln_greed: f64,
    pub mean_ln_fear: f64,
    pub var_ln_greed: f64,
    pub var_ln_fear: f64,
    /// Correlation between `ln greed` and `ln fear` across the population.
    pub trait_correlation: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_agents: 500,
            mean_ln_greed: 1.2,
            mean_ln_fear: 1.04,
            var_ln_greed: 1.7e-4,
            var_ln_fear: 1.7e-4,
            trait_correlation: 0.5,
        }
    }
}

impl PopulationSpec {
    /// Homogeneous population: every agent gets `(e^mean_ln_greed,
    /// e^mean_ln_fear)`.
    pub fn homogeneous(n_agents: usize, mean_ln_greed: f64, mean_ln_fear: f64) -> Self {
        Self {
            n_agents,
            mean_ln_greed,
            mean_ln_fear,
            var_ln_greed: 0.0,
            var_ln_fear: 0.0,
            trait_correlation: 1.0,
        }
    }

    pub fn with_correlation(self, trait_correlation: f64) -> Self {
        Self {
            trait_correlation,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        if self.n_agents == 0 {
            return Err(invalid("population.n_agents", "must be positive"));
        }
        if !self.mean_ln_greed.is_finite() {
            return Err(invalid("population.mean_ln_greed", "must be finite"));
        }
        if !self.mean_ln_fear.is_finite() {
            return Err(invalid("population.mean_ln_fear", "must be finite"));
        }
        if !(self.var_ln_greed >= 0.0 && self.var_ln_greed.is_finite()) {
            return Err(invalid("population.var_ln_greed", "must be a finite value >= 0"));
        }
        if !(self.var_ln_fear >= 0.0 && self.var_ln_fear.is_finite()) {
            return Err(invalid("population.var_ln_fear", "must be a finite value >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.trait_correlation) {
            return Err(invalid("population.trait_correlation", "must lie in [-1, 1]"));
        }
        Ok(())
    }

    /// Configuration warnings that do not prevent a run: the three standard
    /// deviation box around the mean should sit inside the admissible
    /// quadrant, otherwise truncation visibly distorts the distribution.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let lo_greed = self.mean_ln_greed - 3.0 * self.var_ln_greed.sqrt();
        let lo_fear = self.mean_ln_fear - 3.0 * self.var_ln_fear.sqrt();
        // absolute slack for the boundary case mean = 3 sd
        let slack = 1e-3 * self.var_ln_greed.max(self.var_ln_fear).sqrt();
        if lo_greed < -slack {
            out.push(format!(
                "population: mean_ln_greed - 3 sd = {lo_greed} < 0; truncation will bias the greed distribution"
            ));
        }
        if lo_fear < -slack {
            out.push(format!(
                "population: mean_ln_fear - 3 sd = {lo_fear} < 0; truncation will bias the fear distribution"
            ));
        }
        out
    }

    pub fn has_trait_variation(&self) -> bool {
        self.var_ln_greed > 0.0 || self.var_ln_fear > 0.0
    }
}

/// Starting portfolio and price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub initial_cash: f64,
    pub initial_target_ratio: f64,
    /// Half-width of the uniform perturbation added to each stock position,
    /// in dollars.
    pub noise_amplitude: f64,
    pub initial_price: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            initial_cash: 10.0,
            initial_target_ratio: 1.0,
            noise_amplitude: 0.1,
            initial_price: 1.0,
        }
    }
}

impl InitSpec {
    pub fn validate(&self) -> Result<(), PopulationError> {
        if !(self.initial_cash > 0.0 && self.initial_cash.is_finite()) {
            return Err(invalid("init.initial_cash", "must be positive"));
        }
        if !(self.initial_target_ratio > 0.0 && self.initial_target_ratio.is_finite()) {
            return Err(invalid("init.initial_target_ratio", "must be positive"));
        }
        if !(self.initial_price > 0.0 && self.initial_price.is_finite()) {
            return Err(invalid("init.initial_price", "must be positive"));
        }
        if !(self.noise_amplitude >= 0.0
            && self.noise_amplitude < self.initial_cash * self.initial_target_ratio)
        {
            return Err(invalid(
                "init.noise_amplitude",
                "must lie in [0, initial_cash * initial_target_ratio)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traits {
    pub greed: f64,
    pub fear: f64,
}

/// Draws `spec.n_agents` trait pairs.
///
/// For `|trait_correlation| < 1` each pair comes from the bivariate normal by
/// rejection. At `|trait_correlation| = 1` the bivariate density does not
/// exist, so both coordinates are built from one standard normal and the
/// pair is redrawn while it falls outside the quadrant.
pub fn sample_traits<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    rng: &mut R,
) -> Result<Vec<Traits>, PopulationError> {
    spec.validate()?;
    let sd_greed = spec.var_ln_greed.sqrt();
    let sd_fear = spec.var_ln_fear.sqrt();
    let r = spec.trait_correlation;
    let degenerate = r.abs() == 1.0;
    let cross = (1.0 - r * r).sqrt();

    let mut out = Vec::with_capacity(spec.n_agents);
    for _ in 0..spec.n_agents {
        let mut rejections = 0u64;
        loop {
            let z1: f64 = rng.sample(StandardNormal);
            let z2 = if degenerate {
                r * z1
            } else {
                let z: f64 = rng.sample(StandardNormal);
                r * z1 + cross * z
            };
            let ln_greed = spec.mean_ln_greed + sd_greed * z1;
            let ln_fear = spec.mean_ln_fear + sd_fear * z2;
            if ln_greed >= 0.0 && ln_fear >= 0.0 {
                out.push(Traits {
                    greed: ln_greed.exp(),
                    fear: ln_fear.exp(),
                });
                break;
            }
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(PopulationError::RejectionStall(rejections));
            }
        }
    }
    Ok(out)
}

/// Builds the starting market: cash and target ratio shared by everyone,
/// stock value `initial_cash * k + u` with `u ~ U[-noise, noise]`.
pub fn init_market<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    init: &InitSpec,
    traits: &[Traits],
    rng: &mut R,
) -> Result<MarketState, PopulationError> {
    init.validate()?;
    if traits.len() != spec.n_agents {
        return Err(PopulationError::TraitCountMismatch {
            expected: spec.n_agents,
            got: traits.len(),
        });
    }
    let k = init.initial_target_ratio;
    let a = init.noise_amplitude;
    let agents = traits
        .iter()
        .map(|t| {
            let u = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
            AgentState {
                shares: (init.initial_cash * k + u) / init.initial_price,
                cash: init.initial_cash,
                target_ratio: k,
                greed: t.greed,
                fear: t.fear,
                initial_cash: init.initial_cash,
            }
        })
        .collect();
    Ok(MarketState::new(agents, init.initial_price))
}
