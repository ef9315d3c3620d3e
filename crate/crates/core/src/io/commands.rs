//! The three CLI commands as library functions. Each returns its outputs in
//! memory; the caller decides where to write them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, RunConfig};
use super::export::{
    estimate_cells, fmt_f64, fmt_opt, level_tag, price_series_table, price_stats_table,
    sha256_hex, trait_corr_table, wealth_hist_table, OutputSet, RunManifest, Table,
    ESTIMATE_HEADER,
};
use super::prices::{load_price_csv, CsvColumns, PriceCsvError};
use crate::ensemble::{run_ensemble, run_ensemble_with_workers, run_path, EnsembleError, EnsembleStats};
use crate::estimator::{curve_from_stats, rolling_stats, C0Policy, CurvePoint, EstimatorError, PriceSeries};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prices(#[from] PriceCsvError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl CommandError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Prices(_) | Self::Invalid(_) | Self::Read { .. } => 2,
            Self::Ensemble(EnsembleError::Invalid { .. }) => 2,
            Self::Ensemble(_) | Self::Estimator(_) => 3,
        }
    }
}

/// Grid and calibration settings shared by `estimate` and `simulate-estimate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateParams {
    pub taus: Vec<usize>,
    pub gammas: Vec<f64>,
    pub c0_policy: C0Policy,
}

impl EstimateParams {
    /// Default policy: calibrate at the middle of the grid.
    pub fn new(taus: Vec<usize>, gammas: Vec<f64>, c0_policy: Option<C0Policy>) -> Result<Self, CommandError> {
        if taus.is_empty() {
            return Err(CommandError::Invalid("tau: at least one window required".into()));
        }
        if let Some(&t) = taus.iter().find(|&&t| t < 2) {
            return Err(CommandError::Invalid(format!("tau: window {t} is below 2")));
        }
        if gammas.is_empty() {
            return Err(CommandError::Invalid("gammas: grid is empty".into()));
        }
        if let Some(&g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(CommandError::Invalid(format!("gammas: {g} is not positive")));
        }
        if let Some(C0Policy::Fixed(c0)) = c0_policy {
            if !(c0 > 0.0 && c0.is_finite()) {
                return Err(CommandError::Invalid(format!("c0: {c0} is not positive")));
            }
        }
        let c0_policy = c0_policy.unwrap_or_else(|| C0Policy::grid_midpoint(&gammas));
        Ok(Self {
            taus,
            gammas,
            c0_policy,
        })
    }

    /// Grid points in the middle third of the grid's range.
    pub fn mid_grid(&self) -> Vec<f64> {
        let lo = self.gammas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let third = (hi - lo) / 3.0;
        self.gammas
            .iter()
            .copied()
            .filter(|&g| g >= lo + third - 1e-9 && g <= hi - third + 1e-9)
            .collect()
    }
}

/// Curves of one series for every window; a window the series cannot
/// support flags all of its grid points.
pub fn estimate_series(series: &PriceSeries, params: &EstimateParams) -> Vec<(usize, Vec<CurvePoint>)> {
    params
        .taus
        .iter()
        .map(|&tau| {
            let curve = match rolling_stats(series, tau) {
                Ok(stats) => curve_from_stats(&stats, &params.gammas, params.c0_policy),
                Err(e) => params
                    .gammas
                    .iter()
                    .map(|&gamma| CurvePoint {
                        gamma,
                        estimate: Err(e.clone()),
                    })
                    .collect(),
            };
            (tau, curve)
        })
        .collect()
}

fn estimate_table(curves: &[(usize, Vec<CurvePoint>)]) -> Vec<u8> {
    let mut t = Table::new(&ESTIMATE_HEADER);
    for (tau, curve) in curves {
        for p in curve {
            t.row(estimate_cells(*tau, p));
        }
    }
    t.into_bytes()
}

fn count_ok(curves: &[(usize, Vec<CurvePoint>)]) -> (usize, usize) {
    let total = curves.iter().map(|(_, c)| c.len()).sum();
    let ok = curves
        .iter()
        .flat_map(|(_, c)| c)
        .filter(|p| p.estimate.is_ok())
        .count();
    (ok, total)
}

fn warn_config(config: &RunConfig) {
    for w in config.warnings() {
        log::warn!("{w}");
    }
}

pub struct SimulateRun {
    pub outputs: OutputSet,
    pub stats: Vec<EnsembleStats>,
}

/// Runs an ensemble per trait correlation level. `workers = None` uses the
/// global thread pool; results do not depend on the choice.
pub fn simulate(config: &RunConfig, workers: Option<usize>) -> Result<SimulateRun, CommandError> {
    config.validate()?;
    warn_config(config);
    let mut outputs = OutputSet::default();
    let mut stats = Vec::new();
    let mut aborted = BTreeMap::new();
    for r in config.levels() {
        let sim = config.simulation_for(r);
        let s = match workers {
            Some(w) => run_ensemble_with_workers(&sim, w)?,
            None => run_ensemble(&sim)?,
        };
        let tag = level_tag(r);
        if s.aborted_paths > 0 {
            log::warn!("{tag}: {} of {} paths aborted", s.aborted_paths, sim.n_paths);
        }
        outputs.add(format!("price_stats_{tag}.csv"), price_stats_table(&s));
        outputs.add(format!("wealth_hist_{tag}.csv"), wealth_hist_table(&s));
        aborted.insert(tag, s.aborted_paths);
        stats.push(s);
    }
    outputs.add("trait_corr.csv", trait_corr_table(&stats));

    let mut manifest = RunManifest::new("simulate", config);
    manifest.config_toml = Some(config.to_toml_string());
    manifest.master_seed = Some(config.simulation.master_seed);
    manifest.aborted_paths = aborted;
    manifest.seal(&mut outputs);
    Ok(SimulateRun { outputs, stats })
}

#[derive(Serialize)]
struct EstimateSnapshot<'a> {
    input_sha256: String,
    date_column: &'a str,
    close_column: &'a str,
    #[serde(flatten)]
    params: &'a EstimateParams,
}

pub struct EstimateRun {
    pub outputs: OutputSet,
    pub ok_rows: usize,
    pub total_rows: usize,
    pub skipped_input_rows: usize,
}

pub fn estimate(prices: &Path, columns: &CsvColumns, params: &EstimateParams) -> Result<EstimateRun, CommandError> {
    let raw = std::fs::read(prices).map_err(|source| CommandError::Read {
        path: prices.to_path_buf(),
        source,
    })?;
    let min_tau = params.taus.iter().copied().min().unwrap_or(2);
    let loaded = load_price_csv(prices, columns, min_tau + 2)?;
    if loaded.skipped_rows > 0 {
        log::warn!("skipped {} rows without a close", loaded.skipped_rows);
    }
    let curves = estimate_series(&loaded.series, params);
    for (tau, curve) in &curves {
        for p in curve {
            if let Err(e) = &p.estimate {
                log::warn!("tau {tau}, gamma {}: {e}", p.gamma);
            }
        }
    }
    let (ok_rows, total_rows) = count_ok(&curves);
    let mut outputs = OutputSet::default();
    outputs.add("estimate.csv", estimate_table(&curves));
    let snapshot = EstimateSnapshot {
        input_sha256: sha256_hex(&raw),
        date_column: &columns.date,
        close_column: &columns.close,
        params,
    };
    RunManifest::new("estimate", snapshot).seal(&mut outputs);
    Ok(EstimateRun {
        outputs,
        ok_rows,
        total_rows,
        skipped_input_rows: loaded.skipped_rows,
    })
}

#[derive(Serialize)]
struct SimulateEstimateSnapshot<'a> {
    simulation: &'a RunConfig,
    estimate: &'a EstimateParams,
    representative_path: u64,
}

/// One mid-grid comparison between the lowest and highest trait correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub tau: usize,
    pub gamma: f64,
    pub rho_low_r: Option<f64>,
    pub rho_high_r: Option<f64>,
}

impl OrderingCheck {
    /// `rho` at the lowest level does not exceed `rho` at the highest.
    pub fn ordered(&self) -> Option<bool> {
        Some(self.rho_low_r? <= self.rho_high_r?)
    }
}

pub struct SimulateEstimateRun {
    pub outputs: OutputSet,
    /// `(r, tau, curve)` in level then window order.
    pub curves: Vec<(f64, usize, Vec<CurvePoint>)>,
    pub ordering: Vec<OrderingCheck>,
}

/// Path whose price series stands for each level.
pub const REPRESENTATIVE_PATH: u64 = 0;

/// Simulates one path per level, estimates each series on its own and
/// compares the curves.
pub fn simulate_estimate(config: &RunConfig, params: &EstimateParams) -> Result<SimulateEstimateRun, CommandError> {
    config.validate()?;
    warn_config(config);
    let levels = config.levels();
    let mut outputs = OutputSet::default();
    let mut curves = Vec::new();
    let mut comparison = Table::new(&["r_level", "tau", "gamma", "c0", "rho", "status"]);
    for &r in &levels {
        let sim = config.simulation_for(r);
        let path = run_path(&sim, REPRESENTATIVE_PATH)?;
        let closes: Vec<f64> = path.log_price.iter().map(|l| l.exp()).collect();
        let tag = level_tag(r);
        outputs.add(format!("prices_{tag}.csv"), price_series_table(&closes));
        let series = PriceSeries::from_closes(closes)?;
        let series_curves = estimate_series(&series, params);
        outputs.add(format!("estimate_{tag}.csv"), estimate_table(&series_curves));
        for (tau, curve) in series_curves {
            for p in &curve {
                let cells = estimate_cells(tau, p);
                comparison.row([
                    fmt_f64(r),
                    cells[0].clone(),
                    cells[1].clone(),
                    cells[2].clone(),
                    cells[3].clone(),
                    cells[7].clone(),
                ]);
            }
            curves.push((r, tau, curve));
        }
    }
    outputs.add("comparison.csv", comparison.into_bytes());

    let low = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let high = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rho_at = |r: f64, tau: usize, gamma: f64| {
        curves
            .iter()
            .find(|(cr, ct, _)| *cr == r && *ct == tau)
            .and_then(|(_, _, c)| c.iter().find(|p| p.gamma == gamma))
            .and_then(|p| p.estimate.as_ref().ok())
            .map(|e| e.rho)
    };
    let mut ordering = Vec::new();
    let mut table = Table::new(&["tau", "gamma", "rho_low_r", "rho_high_r", "ordered"]);
    for &tau in &params.taus {
        for gamma in params.mid_grid() {
            let check = OrderingCheck {
                tau,
                gamma,
                rho_low_r: rho_at(low, tau, gamma),
                rho_high_r: rho_at(high, tau, gamma),
            };
            table.row([
                tau.to_string(),
                fmt_f64(gamma),
                fmt_opt(check.rho_low_r),
                fmt_opt(check.rho_high_r),
                check.ordered().map(|b| b.to_string()).unwrap_or_default(),
            ]);
            ordering.push(check);
        }
    }
    outputs.add("ordering.csv", table.into_bytes());

    let snapshot = SimulateEstimateSnapshot {
        simulation: config,
        estimate: params,
        representative_path: REPRESENTATIVE_PATH,
    };
    let mut manifest = RunManifest::new("simulate-estimate", snapshot);
    manifest.config_toml = Some(config.to_toml_string());
    manifest.master_seed = Some(config.simulation.master_seed);
    manifest.seal(&mut outputs);
    Ok(SimulateEstimateRun {
        outputs,
        curves,
        ordering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(EstimateParams::new(vec![], vec![1.0], None).is_err());
        assert!(EstimateParams::new(vec![1], vec![1.0], None).is_err());
        assert!(EstimateParams::new(vec![21], vec![], None).is_err());
        assert!(EstimateParams::new(vec![21], vec![-1.0], None).is_err());
        assert!(EstimateParams::new(vec![21], vec![1.0], Some(C0Policy::Fixed(0.0))).is_err());
        let p = EstimateParams::new(vec![21], vec![20.0, 220.0], None).unwrap();
        assert_eq!(
            p.c0_policy,
            C0Policy::ReferenceGamma {
                gamma: 120.0,
                saturate: true
            }
        );
    }

    #[test]
    fn mid_grid_of_default_grid() {
        let grid = crate::estimator::gamma_grid(20.0, 220.0, 20.0);
        let p = EstimateParams::new(vec![21], grid, None).unwrap();
        assert_eq!(p.mid_grid(), vec![100.0, 120.0, 140.0]);
    }

    #[test]
    fn ordering_needs_both_sides() {
        let mut c = OrderingCheck {
            tau: 21,
            gamma: 100.0,
            rho_low_r: Some(-0.2),
            rho_high_r: Some(0.1),
        };
        assert_eq!(c.ordered(), Some(true));
        c.rho_high_r = None;
        assert_eq!(c.ordered(), None);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CommandError::Invalid("x".into()).exit_code(), 2);
        assert_eq!(
            CommandError::Ensemble(EnsembleError::AllPathsAborted(3)).exit_code(),
            3
        );
    }
}
