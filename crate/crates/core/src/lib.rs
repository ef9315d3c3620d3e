//! Heterogeneous asynchronous stochastic price pump.
//!
//! Agents hold stock and cash, aim for a target stock-to-cash ratio and
//! adapt that target through individual greed and fear factors. Each trading
//! day a random subset of agents clears a new price among themselves. The
//! crate simulates ensembles of such markets and estimates the equivalent
//! homogeneous parameters from any daily price series.
//!
//! - [`market`]: one trading session (clearing, re-balancing, target update)
//! - [`population`]: trait sampling and initial market construction
//! - [`ensemble`]: many independent paths and their cross-path statistics
//! - [`estimator`]: rolling statistics and parameter inversion on price series
//! - [`io`]: configuration, CSV ingestion, exports and the CLI commands

pub mod ensemble;
pub mod estimator;
pub mod io;
pub mod market;
pub mod population;
pub mod stats;

pub use ensemble::{run_ensemble, run_path, EnsembleStats, PathStats, SimulationConfig};
pub use estimator::{C0Policy, EstimatePoint, PriceSeries, RollingStats};
pub use market::{AgentState, ClearingOutcome, MarketState, UpdateRule, UpdateVariant};
pub use population::{InitSpec, PopulationSpec, Traits};
