//! Network inputs derived from a contract at an iteration.
//!
//! Neither the premium nor the sum insured is ever an input.

use crate::actuarial::{Contract, Gender, PaymentStyle};
use crate::error::Result;
use crate::nn::MinMaxScaler;

pub const BASELINE_FEATURES: usize = 2;
pub const RESIDUAL_FEATURES: usize = 4;

/// Unscaled residual inputs `(current age, m, gender, smoker)` with
/// male = 0, female = 1 and non-smoker = 0, smoker = 1.
pub fn raw_residual_features(c: &Contract, k: usize) -> [f64; RESIDUAL_FEATURES] {
    [
        c.age_at(k),
        c.per_year() as f64,
        match c.gender {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        },
        if c.smoker { 1.0 } else { 0.0 },
    ]
}

/// Fits the residual scaler on every iteration of every contract. The age
/// feature is monotone in `k`, so the first and last iteration suffice.
pub fn fit_residual_scaler(contracts: &[Contract]) -> Result<MinMaxScaler> {
    let rows: Vec<[f64; RESIDUAL_FEATURES]> = contracts
        .iter()
        .flat_map(|c| {
            let last = c.iterations().saturating_sub(1);
            [raw_residual_features(c, 0), raw_residual_features(c, last)]
        })
        .collect();
    MinMaxScaler::fit(rows.iter().map(|r| r.as_slice()))
}

/// Scaled residual inputs of `c` at iteration `k`.
pub fn encode_step(c: &Contract, k: usize, scaler: &MinMaxScaler) -> [f64; RESIDUAL_FEATURES] {
    let mut x = raw_residual_features(c, k);
    scaler.transform_in_place(&mut x);
    x
}

/// Scaled baseline inputs `(age, m)`.
pub fn encode_baseline(age: f64, m: PaymentStyle, scaler: &MinMaxScaler) -> [f64; BASELINE_FEATURES] {
    [scaler.transform_value(0, age), scaler.transform_value(1, m.per_year() as f64)]
}
