//! Monte Carlo ensembles of independent markets.
//!
//! Path `p` draws every random number from the ChaCha8 stream
//! `(master_seed, p)`, so a path's trajectory depends only on the config and
//! its index. Paths run in parallel in fixed-size chunks and are folded into
//! the aggregates in index order, which makes the output bit-identical for
//! any number of workers.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{MarketError, MarketState, UpdateRule};
use crate::population::{init_market, sample_traits, InitSpec, PopulationError, PopulationSpec, Traits};
use crate::stats::{self, RunningMoments};

pub use crate::stats::pearson;

/// Trading sessions per simulated year.
pub const SESSIONS_PER_YEAR: usize = 252;

/// Stream id reserved for the population shared by all paths when traits
/// are not resampled.
const SHARED_TRAITS_STREAM: u64 = u64::MAX;

/// Paths handed to the thread pool at once.
const CHUNK_PATHS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error("path {path}: {source}")]
    PathAborted { path: u64, source: MarketError },
    #[error("trait variance is zero; wealth-trait correlation is undefined")]
    DegenerateTraits,
    #[error("no path completed wealth-trait statistics")]
    NoCorrelationSamples,
    #[error("all {0} paths aborted")]
    AllPathsAborted(u64),
    #[error("worker pool: {0}")]
    WorkerPool(String),
}

fn invalid(field: &'static str, message: impl Into<String>) -> EnsembleError {
    EnsembleError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub population: PopulationSpec,
    pub init: InitSpec,
    /// Agents drawn to trade in each session (`m`).
    pub active_per_session: usize,
    /// Trading days per path (`T`).
    pub sessions: usize,
    pub rule: UpdateRule,
    pub n_paths: u64,
    pub master_seed: u64,
    /// Cash fraction of initial cash below which an agent counts towards the
    /// risk proxy.
    pub risk_threshold: f64,
    pub resample_traits_per_path: bool,
    pub wealth_bins: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            population: PopulationSpec::default(),
            init: InitSpec::default(),
            active_per_session: 20,
            sessions: 5 * SESSIONS_PER_YEAR,
            rule: UpdateRule::default(),
            n_paths: 500,
            master_seed: 2021,
            risk_threshold: 0.5,
            resample_traits_per_path: true,
            wealth_bins: 40,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        self.population.validate()?;
        self.init.validate()?;
        if self.active_per_session == 0 {
            return Err(invalid("simulation.active_per_session", "must be positive"));
        }
        if self.active_per_session > self.population.n_agents {
            return Err(invalid(
                "simulation.active_per_session",
                format!("must not exceed population.n_agents ({})", self.population.n_agents),
            ));
        }
        if self.sessions == 0 {
            return Err(invalid("simulation.sessions", "must be at least 1"));
        }
        if self.n_paths == 0 {
            return Err(invalid("simulation.n_paths", "must be positive"));
        }
        if !(self.risk_threshold > 0.0 && self.risk_threshold < 1.0) {
            return Err(invalid("simulation.risk_threshold", "must lie in (0, 1)"));
        }
        if self.wealth_bins == 0 {
            return Err(invalid("simulation.wealth_bins", "must be positive"));
        }
        if !(self.rule.equality_tolerance >= 0.0) {
            return Err(invalid("rule.equality_tolerance", "must be >= 0"));
        }
        if self.rule.variant == crate::market::UpdateVariant::Multiplicative
            && (self.population.mean_ln_greed < 0.0 || self.population.mean_ln_fear < 0.0)
        {
            return Err(invalid(
                "population",
                "the multiplicative rule needs greed, fear >= 1 (non-negative log means)",
            ));
        }
        Ok(())
    }

    /// `gamma = 2N / m`.
    pub fn gamma(&self) -> f64 {
        2.0 * self.population.n_agents as f64 / self.active_per_session as f64
    }
}

/// The ChaCha8 stream of path `path_index`.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// Trajectory of one market. Every series is indexed by day `0..=T`; day 0
/// is the initial state, so `log_return[0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStats {
    pub log_price: Vec<f64>,
    pub log_return: Vec<f64>,
    pub risk_proxy: Vec<f64>,
    /// Cash of each agent after the last session.
    pub final_wealth: Vec<f64>,
    pub traits: Vec<Traits>,
    pub initial_cash: f64,
}

fn risk_fraction(market: &MarketState, threshold: f64) -> f64 {
    let low = market
        .agents
        .iter()
        .filter(|a| a.cash / a.initial_cash < threshold)
        .count();
    low as f64 / market.n_agents() as f64
}

/// Traits shared by every path when `resample_traits_per_path` is off.
pub fn shared_traits(config: &SimulationConfig) -> Result<Vec<Traits>, EnsembleError> {
    let mut rng = path_rng(config.master_seed, SHARED_TRAITS_STREAM);
    Ok(sample_traits(&config.population, &mut rng)?)
}

/// Runs path `path_index` of the ensemble described by `config`.
pub fn run_path(config: &SimulationConfig, path_index: u64) -> Result<PathStats, EnsembleError> {
    let shared = if config.resample_traits_per_path {
        None
    } else {
        Some(shared_traits(config)?)
    };
    run_path_with(config, path_index, shared.as_deref())
}

fn run_path_with(
    config: &SimulationConfig,
    path_index: u64,
    shared: Option<&[Traits]>,
) -> Result<PathStats, EnsembleError> {
    let mut rng = path_rng(config.master_seed, path_index);
    let traits = match shared {
        Some(t) => t.to_vec(),
        None => sample_traits(&config.population, &mut rng)?,
    };
    let mut market = init_market(&config.population, &config.init, &traits, &mut rng)?;
    let n = market.n_agents();
    let m = config.active_per_session;
    let days = config.sessions;

    let mut log_price = Vec::with_capacity(days + 1);
    let mut log_return = Vec::with_capacity(days + 1);
    let mut risk_proxy = Vec::with_capacity(days + 1);
    let mut lp = market.price.ln();
    log_price.push(lp);
    log_return.push(0.0);
    risk_proxy.push(risk_fraction(&market, config.risk_threshold));

    let mut active = Vec::with_capacity(m);
    for _ in 0..days {
        active.clear();
        active.extend(index::sample(&mut rng, n, m).iter());
        let out = market
            .trading_session(&active, &config.rule)
            .map_err(|source| EnsembleError::PathAborted {
                path: path_index,
                source,
            })?;
        let lr = out.gross_return.ln();
        lp += lr;
        log_return.push(lr);
        log_price.push(lp);
        risk_proxy.push(risk_fraction(&market, config.risk_threshold));
    }

    Ok(PathStats {
        log_price,
        log_return,
        risk_proxy,
        final_wealth: market.agents.iter().map(|a| a.cash).collect(),
        traits,
        initial_cash: config.init.initial_cash,
    })
}

/// Pooled distribution of final cash: `bins` equal bins over
/// `[0, 2 * initial_cash)` and one overflow bin `[2 * initial_cash, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WealthHistogram {
    /// `bins + 2` edges; the last one is `+inf`.
    pub edges: Vec<f64>,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HistogramCounter {
    upper: f64,
    bins: usize,
    counts: Vec<u64>,
}

impl HistogramCounter {
    fn new(initial_cash: f64, bins: usize) -> Self {
        Self {
            upper: 2.0 * initial_cash,
            bins,
            counts: vec![0; bins + 1],
        }
    }

    fn add(&mut self, wealth: f64) {
        let slot = if wealth >= self.upper {
            self.bins
        } else {
            ((wealth / self.upper * self.bins as f64) as usize).min(self.bins - 1)
        };
        self.counts[slot] += 1;
    }

    fn finish(self) -> WealthHistogram {
        let width = self.upper / self.bins as f64;
        let mut edges: Vec<f64> = (0..=self.bins).map(|i| i as f64 * width).collect();
        edges[self.bins] = self.upper;
        edges.push(f64::INFINITY);
        let total: u64 = self.counts.iter().sum();
        let fractions = self
            .counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        WealthHistogram { edges, fractions }
    }
}

/// Cross-path aggregates, indexed by day `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub trait_correlation: f64,
    pub mean_log_price: Vec<f64>,
    /// Cross-path sample standard deviation of `ln R(t)`.
    pub std_log_return: Vec<f64>,
    pub mean_log_return: Vec<f64>,
    pub mean_risk_proxy: Vec<f64>,
    pub predicted_log_price: Vec<f64>,
    pub wealth_histogram: WealthHistogram,
    pub corr_wealth_greed: Option<f64>,
    pub corr_wealth_fear: Option<f64>,
    /// `ln P(T)` of every completed path, in path order.
    pub final_log_price: Vec<f64>,
    /// `ln R(T)` of every completed path, in path order.
    pub final_log_return: Vec<f64>,
    pub completed_paths: u64,
    pub aborted_paths: u64,
}

/// Homogeneous-population price path `ln P(t) = (t / gamma) ln(greed / fear)`
/// with `gamma = 2N / m`, for `t = 0..=horizon`.
pub fn homogeneous_prediction(
    mean_greed: f64,
    mean_fear: f64,
    n_agents: usize,
    active_per_session: usize,
    horizon: usize,
) -> Vec<f64> {
    let gamma = 2.0 * n_agents as f64 / active_per_session as f64;
    let slope = (mean_greed.ln() - mean_fear.ln()) / gamma;
    (0..=horizon).map(|t| t as f64 * slope).collect()
}

/// Pearson correlation across agents of final cash with greed and with
/// fear, for one path.
pub fn path_wealth_trait_correlation(path: &PathStats) -> Result<(f64, f64), EnsembleError> {
    let greed: Vec<f64> = path.traits.iter().map(|t| t.greed).collect();
    let fear: Vec<f64> = path.traits.iter().map(|t| t.fear).collect();
    if stats::is_constant(&greed) && stats::is_constant(&fear) {
        return Err(EnsembleError::DegenerateTraits);
    }
    let corr = |traits: &[f64]| match pearson(&path.final_wealth, traits) {
        Ok(c) => Ok(c),
        Err(_) => Err(EnsembleError::NoCorrelationSamples),
    };
    Ok((corr(&greed)?, corr(&fear)?))
}

/// Wealth-trait correlations computed per path and averaged across paths.
/// Paths whose final wealth is constant are skipped.
pub fn wealth_trait_correlation(paths: &[PathStats]) -> Result<(f64, f64), EnsembleError> {
    let mut acc = CorrelationMean::default();
    for p in paths {
        acc.push(path_wealth_trait_correlation(p))?;
    }
    acc.finish().ok_or(EnsembleError::NoCorrelationSamples)
}

#[derive(Debug, Default)]
struct CorrelationMean {
    greed: RunningMoments,
    fear: RunningMoments,
}

impl CorrelationMean {
    fn push(&mut self, c: Result<(f64, f64), EnsembleError>) -> Result<(), EnsembleError> {
        match c {
            Ok((g, f)) => {
                self.greed.push(g);
                self.fear.push(f);
                Ok(())
            }
            Err(EnsembleError::DegenerateTraits) => Err(EnsembleError::DegenerateTraits),
            Err(_) => Ok(()),
        }
    }

    fn finish(&self) -> Option<(f64, f64)> {
        (self.greed.count() > 0).then(|| (self.greed.mean(), self.fear.mean()))
    }
}

struct Aggregator {
    log_price: Vec<RunningMoments>,
    log_return: Vec<RunningMoments>,
    risk: Vec<RunningMoments>,
    histogram: HistogramCounter,
    correlation: CorrelationMean,
    track_correlation: bool,
    final_log_price: Vec<f64>,
    final_log_return: Vec<f64>,
    completed: u64,
    aborted: u64,
}

impl Aggregator {
    fn new(config: &SimulationConfig) -> Self {
        let days = config.sessions + 1;
        Self {
            log_price: vec![RunningMoments::default(); days],
            log_return: vec![RunningMoments::default(); days],
            risk: vec![RunningMoments::default(); days],
            histogram: HistogramCounter::new(config.init.initial_cash, config.wealth_bins),
            correlation: CorrelationMean::default(),
            track_correlation: config.population.has_trait_variation(),
            final_log_price: Vec::new(),
            final_log_return: Vec::new(),
            completed: 0,
            aborted: 0,
        }
    }

    fn add(&mut self, path: Result<PathStats, EnsembleError>) -> Result<(), EnsembleError> {
        let path = match path {
            Ok(p) => p,
            Err(EnsembleError::PathAborted { path, source }) => {
                log::warn!("path {path} aborted: {source}");
                self.aborted += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        for (acc, &x) in self.log_price.iter_mut().zip(&path.log_price) {
            acc.push(x);
        }
        for (acc, &x) in self.log_return.iter_mut().zip(&path.log_return) {
            acc.push(x);
        }
        for (acc, &x) in self.risk.iter_mut().zip(&path.risk_proxy) {
            acc.push(x);
        }
        for &w in &path.final_wealth {
            self.histogram.add(w);
        }
        if self.track_correlation {
            self.correlation.push(path_wealth_trait_correlation(&path))?;
        }
        self.final_log_price.push(*path.log_price.last().unwrap());
        self.final_log_return.push(*path.log_return.last().unwrap());
        self.completed += 1;
        Ok(())
    }

    fn finish(self, config: &SimulationConfig) -> Result<EnsembleStats, EnsembleError> {
        if self.completed == 0 {
            return Err(EnsembleError::AllPathsAborted(self.aborted));
        }
        let offset = config.init.initial_price.ln();
        let predicted_log_price = homogeneous_prediction(
            config.population.mean_ln_greed.exp(),
            config.population.mean_ln_fear.exp(),
            config.population.n_agents,
            config.active_per_session,
            config.sessions,
        )
        .into_iter()
        .map(|x| x + offset)
        .collect();
        let corr = self.correlation.finish();
        Ok(EnsembleStats {
            trait_correlation: config.population.trait_correlation,
            mean_log_price: self.log_price.iter().map(|a| a.mean()).collect(),
            std_log_return: self.log_return.iter().map(|a| a.sample_std()).collect(),
            mean_log_return: self.log_return.iter().map(|a| a.mean()).collect(),
            mean_risk_proxy: self.risk.iter().map(|a| a.mean()).collect(),
            predicted_log_price,
            wealth_histogram: self.histogram.finish(),
            corr_wealth_greed: corr.map(|c| c.0),
            corr_wealth_fear: corr.map(|c| c.1),
            final_log_price: self.final_log_price,
            final_log_return: self.final_log_return,
            completed_paths: self.completed,
            aborted_paths: self.aborted,
        })
    }
}

/// Runs `config.n_paths` paths on the global rayon pool.
pub fn run_ensemble(config: &SimulationConfig) -> Result<EnsembleStats, EnsembleError> {
    config.validate()?;
    let shared = if config.resample_traits_per_path {
        None
    } else {
        Some(shared_traits(config)?)
    };
    let mut agg = Aggregator::new(config);
    let mut start = 0u64;
    while start < config.n_paths {
        let end = (start + CHUNK_PATHS as u64).min(config.n_paths);
        let chunk: Vec<_> = (start..end)
            .into_par_iter()
            .map(|p| run_path_with(config, p, shared.as_deref()))
            .collect();
        for path in chunk {
            agg.add(path)?;
        }
        start = end;
    }
    agg.finish(config)
}

/// Runs the ensemble on a dedicated pool of `workers` threads.
pub fn run_ensemble_with_workers(
    config: &SimulationConfig,
    workers: usize,
) -> Result<EnsembleStats, EnsembleError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EnsembleError::WorkerPool(e.to_string()))?;
    pool.install(|| run_ensemble(config))
}

/// Runs paths `0..n_paths` and keeps every trajectory. Meant for analyses
/// that need per-path data (bootstraps, pooled return distributions).
pub fn run_paths(config: &SimulationConfig) -> Result<Vec<PathStats>, EnsembleError> {
    config.validate()?;
    let shared = if config.resample_traits_per_path {
        None
    } else {
        Some(shared_traits(config)?)
    };
    (0..config.n_paths)
        .into_par_iter()
        .map(|p| run_path_with(config, p, shared.as_deref()))
        .collect()
}
