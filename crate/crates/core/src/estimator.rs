//! Inverse estimation of speculative parameters from a daily price series.
//!
//! Rolling windows of `tau` daily log returns give a mean `ln r(t)` and a
//! volatility `sigma(t)`. The homogeneous closed forms
//!
//! ```text
//! r = (alpha / beta)^(1 / gamma)      sigma = c0 (alpha beta - 1)
//! ```
//!
//! are inverted for every window,
//!
//! ```text
//! ln alpha~ =  (gamma / 2) ln r + 1/2 ln((sigma + c0) / c0)
//! ln beta~  = -(gamma / 2) ln r + 1/2 ln((sigma + c0) / c0)
//! ```
//!
//! and the correlation between the two series is traced over a grid of
//! `gamma`. `c0` is not identified by the data; [`C0Policy`] controls how it
//! is chosen.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, coefficient_of_variation, pearson, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("series has {len} prices; window {window} needs at least {needed}")]
    SeriesTooShort {
        len: usize,
        window: usize,
        needed: usize,
    },
    #[error("window must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("price at index {index} is not a positive finite number ({value})")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("dates are not strictly increasing at index {0}")]
    UnorderedDates(usize),
    #[error("dates and closes differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("rolling mean log return is constant; no balancing c0 exists")]
    ConstantReturns,
    #[error("rolling volatility is constant; no balancing c0 exists")]
    ConstantVolatility,
    #[error("target spread {target} is not below the supremum {supremum} reachable as c0 -> 0")]
    BracketFailure { target: f64, supremum: f64 },
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("c0 must be positive and finite, got {0}")]
    InvalidC0(f64),
    #[error("correlation undefined: {0}")]
    Correlation(#[from] StatsError),
}

impl EstimatorError {
    /// Short machine-readable tag used to flag rows in exported tables.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::SeriesTooShort { .. } => "SeriesTooShort",
            Self::WindowTooSmall(_) => "WindowTooSmall",
            Self::NonPositivePrice { .. } => "NonPositivePrice",
            Self::UnorderedDates(_) => "UnorderedDates",
            Self::LengthMismatch(..) => "LengthMismatch",
            Self::ConstantReturns => "ConstantReturns",
            Self::ConstantVolatility => "ConstantVolatility",
            Self::BracketFailure { .. } => "BracketFailure",
            Self::InvalidGamma(_) => "InvalidGamma",
            Self::InvalidC0(_) => "InvalidC0",
            Self::Correlation(_) => "ConstantInput",
        }
    }
}

/// Daily closing prices, optionally dated.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Option<Vec<NaiveDate>>,
    closes: Vec<f64>,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<f64>) -> Result<Self, EstimatorError> {
        if dates.len() != closes.len() {
            return Err(EstimatorError::LengthMismatch(dates.len(), closes.len()));
        }
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(EstimatorError::UnorderedDates(i + 1));
        }
        Self::check_closes(&closes)?;
        Ok(Self {
            dates: Some(dates),
            closes,
        })
    }

    /// Undated series, e.g. a simulated price path.
    pub fn from_closes(closes: Vec<f64>) -> Result<Self, EstimatorError> {
        Self::check_closes(&closes)?;
        Ok(Self {
            dates: None,
            closes,
        })
    }

    fn check_closes(closes: &[f64]) -> Result<(), EstimatorError> {
        match closes.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            Some(index) => Err(EstimatorError::NonPositivePrice {
                index,
                value: closes[index],
            }),
            None => Ok(()),
        }
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn dates(&self) -> Option<&[NaiveDate]> {
        self.dates.as_deref()
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
    }
}

/// Moving mean and sample standard deviation of daily log returns.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingStats {
    pub window: usize,
    pub mean_log_return: Vec<f64>,
    pub vol: Vec<f64>,
}

/// Window `t` covers the returns `ln(P(t+k) / P(t+k-1))`, `k = 1..=tau`. The
/// output has `len - tau` entries.
pub fn rolling_stats(series: &PriceSeries, window: usize) -> Result<RollingStats, EstimatorError> {
    if window < 2 {
        return Err(EstimatorError::WindowTooSmall(window));
    }
    let needed = window + 2;
    if series.len() < needed {
        return Err(EstimatorError::SeriesTooShort {
            len: series.len(),
            window,
            needed,
        });
    }
    let returns = series.log_returns();
    let (mean_log_return, vol) = returns
        .windows(window)
        .map(|w| (stats::mean(w), stats::sample_std(w)))
        .unzip();
    Ok(RollingStats {
        window,
        mean_log_return,
        vol,
    })
}

fn check_gamma(gamma: f64) -> Result<(), EstimatorError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(EstimatorError::InvalidGamma(gamma))
    }
}

/// `(ln alpha~, ln beta~)` for one window.
pub fn invert_traits(ln_r: f64, sigma: f64, gamma: f64, c0: f64) -> (f64, f64) {
    let drift = 0.5 * gamma * ln_r;
    let spread = 0.5 * (sigma / c0).ln_1p();
    (drift + spread, spread - drift)
}

/// Forward map of the homogeneous model: `(ln r, sigma)` produced by
/// `(ln alpha, ln beta)`.
pub fn forward_moments(ln_alpha: f64, ln_beta: f64, gamma: f64, c0: f64) -> (f64, f64) {
    let ln_r = (ln_alpha - ln_beta) / gamma;
    let sigma = c0 * (ln_alpha + ln_beta).exp_m1();
    (ln_r, sigma)
}

fn spread_std(vol: &[f64], c0: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(vol.iter().map(|&s| 0.5 * (s / c0).ln_1p()));
    stats::sample_std(buf)
}

/// Finds the `c0` at which the volatility term `1/2 ln((sigma + c0) / c0)`
/// varies over time as much as the drift term `(gamma / 2) ln r`, both
/// measured by their standard deviation. Bisection on `ln c0`.
pub fn calibrate_c0(stats: &RollingStats, gamma: f64) -> Result<f64, EstimatorError> {
    check_gamma(gamma)?;
    let sd_ln_r = stats::sample_std(&stats.mean_log_return);
    if stats::is_constant(&stats.mean_log_return) || !(sd_ln_r > 0.0) {
        return Err(EstimatorError::ConstantReturns);
    }
    if stats::is_constant(&stats.vol) || !(stats::sample_std(&stats.vol) > 0.0) {
        return Err(EstimatorError::ConstantVolatility);
    }
    let target = 0.5 * gamma * sd_ln_r;

    // As c0 -> 0 the spread term tends to 1/2 ln(sigma) - 1/2 ln(c0); its std
    // is bounded by that of 1/2 ln(sigma) unless some window has sigma = 0.
    if stats.vol.iter().all(|&s| s > 0.0) {
        let half_ln: Vec<f64> = stats.vol.iter().map(|s| 0.5 * s.ln()).collect();
        let supremum = stats::sample_std(&half_ln);
        if target >= supremum {
            return Err(EstimatorError::BracketFailure { target, supremum });
        }
    }

    let mut buf = Vec::with_capacity(stats.vol.len());
    let mut f = |ln_c0: f64| spread_std(&stats.vol, ln_c0.exp(), &mut buf) - target;

    let positive: Vec<f64> = stats.vol.iter().copied().filter(|&s| s > 0.0).collect();
    let scale = stats::mean(&positive).ln();
    let (mut lo, mut hi) = (scale - 1.0, scale + 1.0);
    let mut f_lo = f(lo);
    while f_lo <= 0.0 {
        lo -= 2.0 * (hi - lo);
        if lo < -700.0 {
            return Err(EstimatorError::BracketFailure {
                target,
                supremum: f_lo + target,
            });
        }
        f_lo = f(lo);
    }
    let mut f_hi = f(hi);
    while f_hi >= 0.0 {
        hi += 2.0 * (hi - lo);
        if hi > 700.0 {
            return Err(EstimatorError::BracketFailure {
                target,
                supremum: f_hi + target,
            });
        }
        f_hi = f(hi);
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= 1e-12 * target || hi - lo <= 1e-15 * mid.abs().max(1.0) {
            break;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c0 = mid.exp();
    let residual = ((f(mid) + target) / target - 1.0).abs();
    debug_assert!(residual < 1e-6, "calibration residual {residual}");
    Ok(c0)
}

/// How `c0` is chosen for each point of a `gamma` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C0Policy {
    /// One value for every grid point.
    Fixed(f64),
    /// Calibrate once, at `gamma`, and use that `c0` for the whole grid.
    /// With `saturate`, a reference point that no `c0` can balance falls back
    /// to the `c0 -> 0` limit, which gets closest to the target spread.
    ReferenceGamma { gamma: f64, saturate: bool },
    /// Calibrate separately at every grid point. The two inverted series
    /// then have equal spread by construction and their correlation is
    /// always zero, so the resulting curve is flat.
    PerGamma,
}

impl C0Policy {
    /// Saturating calibration at the midpoint of `grid`.
    pub fn grid_midpoint(grid: &[f64]) -> Self {
        let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::ReferenceGamma {
            gamma: 0.5 * (lo + hi),
            saturate: true,
        }
    }
}

/// A resolved `c0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C0Choice {
    pub c0: f64,
    /// The calibration target was out of reach and `c0` is the small-`c0`
    /// limit rather than a balancing value.
    pub saturated: bool,
}

/// Like [`calibrate_c0`], but an unreachable target yields the `c0 -> 0`
/// limit (`1e-9` times the smallest positive volatility) instead of an error.
pub fn calibrate_c0_saturating(stats: &RollingStats, gamma: f64) -> Result<C0Choice, EstimatorError> {
    match calibrate_c0(stats, gamma) {
        Ok(c0) => Ok(C0Choice {
            c0,
            saturated: false,
        }),
        Err(EstimatorError::BracketFailure { .. }) => {
            let min_vol = stats
                .vol
                .iter()
                .copied()
                .filter(|&s| s > 0.0)
                .fold(f64::INFINITY, f64::min);
            Ok(C0Choice {
                c0: 1e-9 * min_vol,
                saturated: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Estimates for one `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatePoint {
    pub gamma: f64,
    pub c0: f64,
    pub c0_saturated: bool,
    pub ln_alpha_tilde: Vec<f64>,
    pub ln_beta_tilde: Vec<f64>,
    pub rho: f64,
    pub cv_ln_alpha: Option<f64>,
    pub cv_ln_beta: Option<f64>,
}

/// Inverts every window at a given `(gamma, c0)` and summarises.
pub fn estimate_point(
    stats: &RollingStats,
    gamma: f64,
    c0: f64,
) -> Result<EstimatePoint, EstimatorError> {
    check_gamma(gamma)?;
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(EstimatorError::InvalidC0(c0));
    }
    let (ln_alpha_tilde, ln_beta_tilde): (Vec<f64>, Vec<f64>) = stats
        .mean_log_return
        .iter()
        .zip(&stats.vol)
        .map(|(&ln_r, &s)| invert_traits(ln_r, s, gamma, c0))
        .unzip();
    let rho = pearson(&ln_alpha_tilde, &ln_beta_tilde)?;
    Ok(EstimatePoint {
        gamma,
        c0,
        c0_saturated: false,
        rho,
        cv_ln_alpha: coefficient_of_variation(&ln_alpha_tilde),
        cv_ln_beta: coefficient_of_variation(&ln_beta_tilde),
        ln_alpha_tilde,
        ln_beta_tilde,
    })
}

/// One grid point of a correlation curve; failures are kept in place so the
/// rest of the curve survives.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub gamma: f64,
    pub estimate: Result<EstimatePoint, EstimatorError>,
}

fn strict(stats: &RollingStats, gamma: f64) -> Result<C0Choice, EstimatorError> {
    calibrate_c0(stats, gamma).map(|c0| C0Choice {
        c0,
        saturated: false,
    })
}

/// `c0` the policy assigns to `gamma` on these statistics.
pub fn resolve_c0(stats: &RollingStats, gamma: f64, policy: C0Policy) -> Result<C0Choice, EstimatorError> {
    match policy {
        C0Policy::Fixed(c0) => Ok(C0Choice {
            c0,
            saturated: false,
        }),
        C0Policy::ReferenceGamma {
            gamma: reference,
            saturate: true,
        } => calibrate_c0_saturating(stats, reference),
        C0Policy::ReferenceGamma {
            gamma: reference,
            saturate: false,
        } => strict(stats, reference),
        C0Policy::PerGamma => strict(stats, gamma),
    }
}

/// Correlation between `ln alpha~` and `ln beta~` (plus coefficients of
/// variation) for each `gamma` in `gamma_grid`, in grid order.
pub fn correlation_curve(
    series: &PriceSeries,
    window: usize,
    gamma_grid: &[f64],
    policy: C0Policy,
) -> Result<Vec<CurvePoint>, EstimatorError> {
    let stats = rolling_stats(series, window)?;
    Ok(curve_from_stats(&stats, gamma_grid, policy))
}

pub fn curve_from_stats(stats: &RollingStats, gamma_grid: &[f64], policy: C0Policy) -> Vec<CurvePoint> {
    let shared = match policy {
        C0Policy::PerGamma => None,
        _ => Some(resolve_c0(stats, f64::NAN, policy)),
    };
    gamma_grid
        .iter()
        .map(|&gamma| {
            let choice = match &shared {
                Some(c) => c.clone(),
                None => resolve_c0(stats, gamma, policy),
            };
            let estimate = choice.and_then(|c| {
                estimate_point(stats, gamma, c.c0).map(|p| EstimatePoint {
                    c0_saturated: c.saturated,
                    ..p
                })
            });
            CurvePoint { gamma, estimate }
        })
        .collect()
}

/// `from, from + step, ..., <= to` (inclusive within rounding).
pub fn gamma_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| from + i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(closes: &[f64]) -> PriceSeries {
        PriceSeries::from_closes(closes.to_vec()).unwrap()
    }

    #[test]
    fn constant_series_has_zero_stats() {
        let s = rolling_stats(&series(&[5.0; 12]), 3).unwrap();
        assert_eq!(s.mean_log_return.len(), 9);
        assert!(s.mean_log_return.iter().all(|&x| x == 0.0));
        assert!(s.vol.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exponential_growth_has_constant_rate() {
        let closes: Vec<f64> = (0..30).map(|t| (0.01 * t as f64).exp()).collect();
        let s = rolling_stats(&series(&closes), 7).unwrap();
        for (m, v) in s.mean_log_return.iter().zip(&s.vol) {
            assert!((m - 0.01).abs() < 1e-12);
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn zigzag_hand_values() {
        let s = rolling_stats(&series(&[1.0, 2.0, 1.0, 2.0, 1.0]), 2).unwrap();
        assert_eq!(s.mean_log_return.len(), 3);
        let ln2 = 2f64.ln();
        for (m, v) in s.mean_log_return.iter().zip(&s.vol) {
            assert!(m.abs() < 1e-15);
            assert!((v - ln2 * 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn short_series_and_bad_input() {
        assert_eq!(
            rolling_stats(&series(&[1.0, 2.0, 3.0]), 2),
            Err(EstimatorError::SeriesTooShort {
                len: 3,
                window: 2,
                needed: 4
            })
        );
        assert_eq!(
            rolling_stats(&series(&[1.0; 10]), 1),
            Err(EstimatorError::WindowTooSmall(1))
        );
        assert_eq!(
            PriceSeries::from_closes(vec![1.0, 0.0]),
            Err(EstimatorError::NonPositivePrice {
                index: 1,
                value: 0.0
            })
        );
        let d = |s: &str| s.parse::<NaiveDate>().unwrap();
        assert_eq!(
            PriceSeries::new(vec![d("2020-01-02"), d("2020-01-02")], vec![1.0, 1.0]),
            Err(EstimatorError::UnorderedDates(1))
        );
    }

    #[test]
    fn inversion_hand_values() {
        assert_eq!(invert_traits(0.0, 0.0, 50.0, 0.3), (0.0, 0.0));
        let (a, b) = invert_traits(0.001, 0.01, 100.0, 0.01);
        let half_ln2 = 0.5 * 2f64.ln();
        assert!((a - (0.05 + half_ln2)).abs() < 1e-15);
        assert!((b - (half_ln2 - 0.05)).abs() < 1e-15);
        assert!((a - 0.39657).abs() < 1e-5);
        assert!((b - 0.29657).abs() < 1e-5);
    }

    #[test]
    fn forward_then_inverse_is_identity() {
        let (ln_r, sigma) = forward_moments(0.3, 0.1, 40.0, 0.02);
        let (a, b) = invert_traits(ln_r, sigma, 40.0, 0.02);
        assert!((a - 0.3).abs() < 1e-14);
        assert!((b - 0.1).abs() < 1e-14);
    }

    fn synthetic_stats(n: usize) -> RollingStats {
        // deterministic, non-degenerate, uncorrelated-looking sequences
        let mean_log_return = (0..n).map(|i| 0.002 * ((i as f64) * 0.7).sin()).collect();
        let vol = (0..n)
            .map(|i| 0.01 * (1.0 + 0.5 * ((i as f64) * 1.3 + 0.4).cos()))
            .collect();
        RollingStats {
            window: 7,
            mean_log_return,
            vol,
        }
    }

    #[test]
    fn calibration_balances_the_two_terms() {
        let s = synthetic_stats(400);
        let gamma = 40.0;
        let c0 = calibrate_c0(&s, gamma).unwrap();
        let target = 0.5 * gamma * stats::sample_std(&s.mean_log_return);
        let mut buf = Vec::new();
        let got = spread_std(&s.vol, c0, &mut buf);
        assert!((got / target - 1.0).abs() < 1e-6);
    }

    #[test]
    fn calibration_errors() {
        let mut s = synthetic_stats(50);
        s.mean_log_return = vec![0.001; 50];
        assert_eq!(calibrate_c0(&s, 10.0), Err(EstimatorError::ConstantReturns));
        let mut s = synthetic_stats(50);
        s.vol = vec![0.02; 50];
        assert_eq!(calibrate_c0(&s, 10.0), Err(EstimatorError::ConstantVolatility));
        let s = synthetic_stats(50);
        assert!(matches!(
            calibrate_c0(&s, 1e6),
            Err(EstimatorError::BracketFailure { .. })
        ));
    }

    #[test]
    fn per_gamma_calibration_flattens_the_curve() {
        let s = synthetic_stats(400);
        for p in curve_from_stats(&s, &[10.0, 40.0, 80.0], C0Policy::PerGamma) {
            let est = p.estimate.unwrap();
            assert!(est.rho.abs() < 1e-6, "{}", est.rho);
        }
    }

    #[test]
    fn reference_gamma_curve_crosses_zero_at_reference() {
        let s = synthetic_stats(400);
        let curve = curve_from_stats(&s, &[10.0, 40.0, 160.0], C0Policy::ReferenceGamma { gamma: 40.0, saturate: false });
        let rho: Vec<f64> = curve.iter().map(|p| p.estimate.as_ref().unwrap().rho).collect();
        assert!(rho[0] > 0.0);
        assert!(rho[1].abs() < 1e-6);
        assert!(rho[2] < 0.0);
        let c0: Vec<f64> = curve.iter().map(|p| p.estimate.as_ref().unwrap().c0).collect();
        assert!(c0.iter().all(|&c| c == c0[0]));
    }

    #[test]
    fn saturation_falls_back_to_small_c0_limit() {
        let s = synthetic_stats(50);
        let c = calibrate_c0_saturating(&s, 1e6).unwrap();
        assert!(c.saturated);
        let min_vol = s.vol.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(c.c0, 1e-9 * min_vol);
        let ok = calibrate_c0_saturating(&s, 10.0).unwrap();
        assert!(!ok.saturated);
        assert_eq!(ok.c0, calibrate_c0(&s, 10.0).unwrap());
        let strict = C0Policy::ReferenceGamma { gamma: 1e6, saturate: false };
        let curve = curve_from_stats(&s, &[10.0], strict);
        assert!(matches!(curve[0].estimate, Err(EstimatorError::BracketFailure { .. })));
        let soft = C0Policy::ReferenceGamma { gamma: 1e6, saturate: true };
        assert!(curve_from_stats(&s, &[10.0], soft)[0].estimate.as_ref().unwrap().c0_saturated);
    }

    #[test]
    fn midpoint_policy() {
        assert_eq!(
            C0Policy::grid_midpoint(&gamma_grid(20.0, 220.0, 20.0)),
            C0Policy::ReferenceGamma { gamma: 120.0, saturate: true }
        );
    }

    #[test]
    fn flagged_points_do_not_stop_the_curve() {
        let curve = curve_from_stats(&synthetic_stats(50), &[5.0, -1.0], C0Policy::Fixed(0.01));
        assert!(curve[0].estimate.is_ok());
        assert_eq!(curve[1].estimate, Err(EstimatorError::InvalidGamma(-1.0)));
    }

    #[test]
    fn default_grid() {
        let g = gamma_grid(20.0, 220.0, 20.0);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 20.0);
        assert_eq!(g[10], 220.0);
    }
}
