//! Configuration, price CSV ingestion, exports and the command pipelines.

pub mod commands;
pub mod config;
pub mod export;
pub mod prices;

pub use commands::{estimate, simulate, simulate_estimate, CommandError, EstimateParams};
pub use config::{ConfigError, RunConfig};
pub use export::{OutputSet, RunManifest};
pub use prices::{load_price_csv, CsvColumns, LoadedPrices, PriceCsvError};
