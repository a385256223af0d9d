//! Calibration of latent, inhomogeneous Markov transition probabilities from
//! portfolios of term-life contracts whose only observed actuarial quantity
//! is the premium.

pub mod actuarial;
pub mod calibrate;
pub mod error;
pub mod io;
pub mod mortality;
pub mod nn;
pub mod portfolio;
pub mod validate;

pub use actuarial::{
    apv, backtest_premium, equivalence_premium, psi, Contract, DiscountFactor,
    DiscountedCashFlowTensor, ExpenseStructure, Gender, PaymentStyle, TransitionMatrix,
    TransitionSource,
};
pub use error::{Error, Result};
