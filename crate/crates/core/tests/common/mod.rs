#![allow(dead_code)]

use aspp::market::{AgentState, MarketState};
use rand::Rng;

/// Market of `n` agents with log-uniform holdings, cash and targets.
pub fn random_market<R: Rng>(rng: &mut R, n: usize) -> MarketState {
    let mut log_uniform = |lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let price = log_uniform(0.01, 100.0);
    let agents = (0..n)
        .map(|_| {
            let cash = log_uniform(0.01, 100.0);
            AgentState {
                shares: log_uniform(0.01, 100.0),
                cash,
                target_ratio: log_uniform(0.01, 100.0),
                greed: log_uniform(1.0, 4.0),
                fear: log_uniform(1.0, 4.0),
                initial_cash: cash,
            }
        })
        .collect();
    MarketState::new(agents, price)
}

/// Net demand of the active agents at gross return `r`, in dollars.
fn excess_demand(market: &MarketState, active: &[usize], r: f64) -> f64 {
    active
        .iter()
        .map(|&i| {
            let a = &market.agents[i];
            let k = a.target_ratio;
            (k * a.cash - r * a.shares * market.price) / (1.0 + k)
        })
        .sum()
}

/// Clearing gross return found by bisection on the excess demand, which is
/// strictly decreasing in `r`.
pub fn bisect_clearing_return(market: &MarketState, active: &[usize]) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while excess_demand(market, active, hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess_demand(market, active, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `k` distinct indices out of `0..n`.
pub fn pick<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}
