//! One trading session of the price pump.
//!
//! A session picks a set of active agents, clears a new price from their
//! desired stock-to-cash ratios, moves dollars between their cash and stock
//! accounts so that every active portfolio sits exactly on its target, and
//! finally lets each active agent adapt its target ratio.
//!
//! Stock holdings are stored as share counts. The dollar value of an agent's
//! stock account is always `shares * price`, so total shares are conserved
//! exactly and inactive agents revalue implicitly when the price moves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used for the "portfolio is on target" branch of the
/// target update.
pub const DEFAULT_EQUALITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("active set is empty")]
    EmptyActiveSet,
    #[error("every active agent holds zero shares; the clearing price is undefined")]
    AllStockZero,
    #[error("active agent index {index} out of range for {n_agents} agents")]
    AgentOutOfRange { index: usize, n_agents: usize },
    #[error("clearing produced a non-finite or non-positive gross return {value}")]
    NonFiniteReturn { value: f64 },
}

/// One trader's portfolio and behavioural traits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub shares: f64,
    pub cash: f64,
    /// Desired ratio of stock dollar value to cash (`k`).
    pub target_ratio: f64,
    /// Greed factor, applied after the portfolio outperforms its target.
    pub greed: f64,
    /// Fear factor, applied after the portfolio underperforms its target.
    pub fear: f64,
    /// Cash held at the start of the simulation.
    pub initial_cash: f64,
}

impl AgentState {
    /// Dollar value of the stock account at `price`.
    pub fn stock_value(&self, price: f64) -> f64 {
        self.shares * price
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub agents: Vec<AgentState>,
    pub price: f64,
    pub session_index: u64,
}

/// Result of clearing one session.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearingOutcome {
    /// `P / P0`.
    pub gross_return: f64,
    /// Dollar amount each active agent moves into stock, in active-set
    /// order. Positive means the agent buys.
    pub trades: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateVariant {
    /// `k -> greed * k` or `k -> k / fear`.
    #[default]
    Multiplicative,
    /// `k -> (1 + greed |x|) k` or `k -> k / (1 + fear |x|)`.
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateRule {
    pub variant: UpdateVariant,
    pub equality_tolerance: f64,
}

impl Default for UpdateRule {
    fn default() -> Self {
        Self {
            variant: UpdateVariant::Multiplicative,
            equality_tolerance: DEFAULT_EQUALITY_TOLERANCE,
        }
    }
}

impl UpdateRule {
    pub fn multiplicative() -> Self {
        Self::default()
    }

    pub fn proportional() -> Self {
        Self {
            variant: UpdateVariant::Proportional,
            ..Self::default()
        }
    }
}

impl MarketState {
    pub fn new(agents: Vec<AgentState>, price: f64) -> Self {
        Self {
            agents,
            price,
            session_index: 0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn total_cash(&self) -> f64 {
        self.agents.iter().map(|a| a.cash).sum()
    }

    pub fn total_shares(&self) -> f64 {
        self.agents.iter().map(|a| a.shares).sum()
    }

    fn check_active(&self, active: &[usize]) -> Result<(), MarketError> {
        if active.is_empty() {
            return Err(MarketError::EmptyActiveSet);
        }
        let n_agents = self.agents.len();
        if let Some(&index) = active.iter().find(|&&i| i >= n_agents) {
            return Err(MarketError::AgentOutOfRange { index, n_agents });
        }
        Ok(())
    }

    /// Gross return `P / P0` that makes the active agents' desired trades sum
    /// to zero:
    ///
    /// ```text
    /// R = sum(k b / (1 + k)) / sum(n P0 / (1 + k))
    /// ```
    pub fn clearing_return(&self, active: &[usize]) -> Result<f64, MarketError> {
        self.check_active(active)?;
        let mut bid = 0.0;
        let mut held = 0.0;
        let mut any_shares = false;
        for &i in active {
            let a = &self.agents[i];
            let w = 1.0 / (1.0 + a.target_ratio);
            bid += a.target_ratio * a.cash * w;
            held += a.stock_value(self.price) * w;
            any_shares |= a.shares > 0.0;
        }
        if !any_shares {
            return Err(MarketError::AllStockZero);
        }
        let r = bid / held;
        if !r.is_finite() || r <= 0.0 {
            return Err(MarketError::NonFiniteReturn { value: r });
        }
        Ok(r)
    }

    /// Dollar amount each active agent wants to move into stock once the
    /// price has moved by `gross_return`.
    pub fn trade_amounts(&self, active: &[usize], gross_return: f64) -> Vec<f64> {
        active
            .iter()
            .map(|&i| {
                let a = &self.agents[i];
                let stock = gross_return * a.stock_value(self.price);
                (a.target_ratio * a.cash - stock) / (1.0 + a.target_ratio)
            })
            .collect()
    }

    /// Moves the trades between cash and stock accounts, sets the new price
    /// and advances the session counter.
    pub fn apply_trades(&mut self, active: &[usize], gross_return: f64, trades: &[f64]) {
        debug_assert_eq!(active.len(), trades.len());
        let new_price = gross_return * self.price;
        for (&i, &x) in active.iter().zip(trades) {
            let a = &mut self.agents[i];
            a.cash -= x;
            a.shares += x / new_price;
        }
        self.price = new_price;
        self.session_index += 1;
    }

    /// Full session: clear, decide target updates on the pre-trade
    /// portfolios at the new price, re-balance, then install the updated
    /// targets.
    pub fn trading_session(
        &mut self,
        active: &[usize],
        rule: &UpdateRule,
    ) -> Result<ClearingOutcome, MarketError> {
        let gross_return = self.clearing_return(active)?;
        let trades = self.trade_amounts(active, gross_return);
        let targets: Vec<f64> = active
            .iter()
            .zip(&trades)
            .map(|(&i, &x)| update_target(&self.agents[i], self.price, gross_return, x, rule))
            .collect();
        self.apply_trades(active, gross_return, &trades);
        for (&i, k) in active.iter().zip(targets) {
            self.agents[i].target_ratio = k;
        }
        Ok(ClearingOutcome {
            gross_return,
            trades,
        })
    }
}

/// New target ratio for `agent` after the price moves from `price` by
/// `gross_return`. The comparison uses the pre-trade portfolio at the new
/// price; `trade` is only read by the proportional rule.
pub fn update_target(
    agent: &AgentState,
    price: f64,
    gross_return: f64,
    trade: f64,
    rule: &UpdateRule,
) -> f64 {
    let k = agent.target_ratio;
    let ratio = gross_return * agent.stock_value(price) / agent.cash;
    let tol = rule.equality_tolerance * k;
    if (ratio - k).abs() <= tol {
        return k;
    }
    let outperformed = ratio > k;
    match (rule.variant, outperformed) {
        (UpdateVariant::Multiplicative, true) => agent.greed * k,
        (UpdateVariant::Multiplicative, false) => k / agent.fear,
        (UpdateVariant::Proportional, true) => (1.0 + agent.greed * trade.abs()) * k,
        (UpdateVariant::Proportional, false) => k / (1.0 + agent.fear * trade.abs()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(shares: f64, cash: f64, k: f64) -> AgentState {
        AgentState {
            shares,
            cash,
            target_ratio: k,
            greed: 1.1,
            fear: 1.05,
            initial_cash: cash,
        }
    }

    fn two_agent_market() -> MarketState {
        MarketState::new(vec![agent(12.0, 10.0, 1.0), agent(10.0, 10.0, 1.0)], 1.0)
    }

    #[test]
    fn balanced_portfolios_clear_at_unit_return() {
        let m = MarketState::new(vec![agent(10.0, 10.0, 1.0), agent(10.0, 10.0, 1.0)], 1.0);
        let r = m.clearing_return(&[0, 1]).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(m.trade_amounts(&[0, 1], r), vec![0.0, 0.0]);
    }

    #[test]
    fn two_agent_worked_example() {
        let m = two_agent_market();
        let r = m.clearing_return(&[0, 1]).unwrap();
        assert!((r - 10.0 / 11.0).abs() < 1e-15);
        let x = m.trade_amounts(&[0, 1], r);
        assert!((x[0] + 5.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 5.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn apply_worked_example() {
        let mut m = two_agent_market();
        let r = m.clearing_return(&[0, 1]).unwrap();
        let x = m.trade_amounts(&[0, 1], r);
        m.apply_trades(&[0, 1], r, &x);
        let a = m.agents[0];
        assert!((a.cash - (10.0 + 5.0 / 11.0)).abs() < 1e-13);
        assert!((a.shares - 11.5).abs() < 1e-13);
        assert!((a.stock_value(m.price) / a.cash - 1.0).abs() < 1e-13);
        assert!((m.total_cash() - 20.0).abs() < 1e-13);
        assert!((m.total_shares() - 22.0).abs() < 1e-13);
        assert_eq!(m.session_index, 1);
    }

    #[test]
    fn single_active_agent_return_is_kb_over_s() {
        let m = MarketState::new(vec![agent(3.0, 7.0, 2.5), agent(1.0, 1.0, 1.0)], 1.5);
        let r = m.clearing_return(&[0]).unwrap();
        assert!((r - 2.5 * 7.0 / (3.0 * 1.5)).abs() < 1e-14);
        let x = m.trade_amounts(&[0], r);
        assert!(x[0].abs() < 1e-14);
    }

    #[test]
    fn zero_trades_leave_portfolios_alone() {
        let mut m = two_agent_market();
        let before = m.clone();
        m.apply_trades(&[0, 1], 1.0, &[0.0, 0.0]);
        assert_eq!(m.agents, before.agents);
        assert_eq!(m.price, before.price);
        assert_eq!(m.session_index, 1);
    }

    #[test]
    fn clearing_errors() {
        let m = MarketState::new(vec![agent(0.0, 10.0, 1.0), agent(0.0, 5.0, 2.0)], 1.0);
        assert_eq!(m.clearing_return(&[]), Err(MarketError::EmptyActiveSet));
        assert_eq!(m.clearing_return(&[0, 1]), Err(MarketError::AllStockZero));
        assert_eq!(
            m.clearing_return(&[3]),
            Err(MarketError::AgentOutOfRange {
                index: 3,
                n_agents: 2
            })
        );
    }

    #[test]
    fn zero_share_agent_buys() {
        let m = MarketState::new(vec![agent(0.0, 10.0, 1.0), agent(10.0, 10.0, 1.0)], 1.0);
        let r = m.clearing_return(&[0, 1]).unwrap();
        let x = m.trade_amounts(&[0, 1], r);
        assert!(x[0] > 0.0);
        assert!((x[0] + x[1]).abs() < 1e-12);
    }

    #[test]
    fn multiplicative_update_branches() {
        let rule = UpdateRule::multiplicative();
        // stock value 2.5 against cash 1 at the new price: ratio 2.5 > k = 2
        let a = AgentState {
            shares: 2.5,
            cash: 1.0,
            target_ratio: 2.0,
            greed: 1.1,
            fear: 1.05,
            initial_cash: 1.0,
        };
        assert!((update_target(&a, 1.0, 1.0, 0.0, &rule) - 2.2).abs() < 1e-15);
        let on_target = AgentState { shares: 2.0, ..a };
        assert_eq!(update_target(&on_target, 1.0, 1.0, 0.0, &rule), 2.0);
        let under = AgentState { shares: 1.0, ..a };
        assert!((update_target(&under, 1.0, 1.0, 0.0, &rule) - 2.0 / 1.05).abs() < 1e-15);
    }

    #[test]
    fn equality_branch_uses_relative_tolerance() {
        let rule = UpdateRule {
            variant: UpdateVariant::Multiplicative,
            equality_tolerance: 1e-6,
        };
        let a = AgentState {
            shares: 2.0 * (1.0 + 1e-7),
            cash: 1.0,
            target_ratio: 2.0,
            greed: 1.1,
            fear: 1.05,
            initial_cash: 1.0,
        };
        assert_eq!(update_target(&a, 1.0, 1.0, 0.0, &rule), 2.0);
        let strict = UpdateRule {
            equality_tolerance: 0.0,
            ..rule
        };
        assert!(update_target(&a, 1.0, 1.0, 0.0, &strict) > 2.0);
    }

    #[test]
    fn proportional_update_branches() {
        let rule = UpdateRule::proportional();
        let a = AgentState {
            shares: 2.5,
            cash: 1.0,
            target_ratio: 2.0,
            greed: 1.1,
            fear: 1.05,
            initial_cash: 1.0,
        };
        assert!((update_target(&a, 1.0, 1.0, -0.5, &rule) - 3.1).abs() < 1e-15);
        let under = AgentState { shares: 1.0, ..a };
        assert!((update_target(&under, 1.0, 1.0, 0.4, &rule) - 2.0 / 1.42).abs() < 1e-15);
    }

    #[test]
    fn session_on_worked_example() {
        let mut m = two_agent_market();
        let out = m.trading_session(&[0, 1], &UpdateRule::multiplicative()).unwrap();
        assert!((out.gross_return - 10.0 / 11.0).abs() < 1e-15);
        for a in &m.agents {
            // both portfolios re-balanced onto k = 1 before their targets moved
            assert!((a.stock_value(m.price) / a.cash - 1.0).abs() < 1e-12);
        }
        // agent 0 was over-weight stock (ratio 12/11 > 1): greed
        assert!((m.agents[0].target_ratio - 1.1).abs() < 1e-15);
        // agent 1 was under-weight (10/11 < 1): fear
        assert!((m.agents[1].target_ratio - 1.0 / 1.05).abs() < 1e-15);
    }

    #[test]
    fn balanced_session_is_a_fixed_point() {
        let mut m = MarketState::new(vec![agent(10.0, 10.0, 1.0); 5], 1.0);
        let before = m.agents.clone();
        for _ in 0..10 {
            let out = m.trading_session(&[0, 2, 4], &UpdateRule::default()).unwrap();
            assert_eq!(out.gross_return, 1.0);
        }
        assert_eq!(m.agents, before);
        assert_eq!(m.price, 1.0);
    }
}
