//! Valuation mathematics for two-state term-life contracts.

pub mod cashflow;
pub mod contract;
pub mod markov;
pub mod valuation;

pub use cashflow::{cash_flow, discounted_cash_flows, Amounts, DiscountedCashFlowTensor};
pub use contract::{Contract, DiscountFactor, ExpenseStructure, Gender, PaymentStyle};
pub use markov::{multi_step, TransitionMatrix};
pub use valuation::{
    apv, backtest_premium, equivalence_premium, psi, relative_error, PremiumSplit, TransitionSource,
};
