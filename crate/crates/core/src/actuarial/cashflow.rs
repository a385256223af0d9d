//! Term-life cash flows per state transition and their discounted tensor.

use super::contract::{Contract, DiscountFactor, ExpenseStructure};
use crate::error::{Error, Result};

/// Amounts entering the cash-flow formulas.
///
/// Cash flows are linear in `(premium, sum_insured)`, which is what the
/// premium/sum split of the valuation relies on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Amounts {
    pub premium: f64,
    pub sum_insured: f64,
}

impl Amounts {
    pub fn of(c: &Contract) -> Result<Self> {
        Ok(Amounts {
            premium: c.premium_or_err()?,
            sum_insured: c.sum_insured,
        })
    }

    /// Unit premium, no sum insured: the premium-dependent part.
    pub const UNIT_PREMIUM: Amounts = Amounts {
        premium: 1.0,
        sum_insured: 0.0,
    };

    /// Premium dropped: the part driven by the sum insured.
    pub fn sum_only(c: &Contract) -> Self {
        Amounts {
            premium: 0.0,
            sum_insured: c.sum_insured,
        }
    }
}

/// Undiscounted cash flows `CF_ij^(k)` of contract `c` at iteration `k`,
/// from the insurer's perspective (premium income positive).
pub fn cash_flow(c: &Contract, e: &ExpenseStructure, k: usize) -> Result<[[f64; 2]; 2]> {
    cash_flow_with(c, e, k, Amounts::of(c)?)
}

pub fn cash_flow_with(
    c: &Contract,
    e: &ExpenseStructure,
    k: usize,
    amounts: Amounts,
) -> Result<[[f64; 2]; 2]> {
    let horizon = c.iterations();
    if k > horizon {
        return Err(Error::Range(format!(
            "iteration {k} beyond contract end {horizon}"
        )));
    }
    let m = c.per_year() as f64;
    let Amounts {
        premium: p,
        sum_insured: s,
    } = amounts;
    // k/m < t  <=>  k < t*m, and t <= k/m < n  <=>  t*m <= k < n*m.
    let paying = k < c.premium_iterations();
    let after_paying = !paying && k < horizon;

    let mut running = 0.0;
    if paying {
        running += p / m - e.beta * p / m - e.gamma1 * s / m;
    }
    if after_paying {
        running -= e.gamma2 * s / m;
    }

    let mut alive = running;
    if k == 0 {
        alive -= c.t as f64 * e.alpha * p;
    }
    let death = if k > 0 { running - s } else { 0.0 };

    Ok([[alive, death], [0.0, 0.0]])
}

/// Discounted cash flows `y_ij^(k) = CF_ij^(k) v^(k/m)` for `k = 0..=n*m`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountedCashFlowTensor {
    y: Vec<[[f64; 2]; 2]>,
}

impl DiscountedCashFlowTensor {
    pub fn from_cells(y: Vec<[[f64; 2]; 2]>) -> Self {
        DiscountedCashFlowTensor { y }
    }

    /// Number of cash-flow times, `n*m + 1`.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.y.get(k).map_or(0.0, |cell| cell[i][j])
    }

    pub fn cells(&self) -> &[[[f64; 2]; 2]] {
        &self.y
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let y = self
            .y
            .iter()
            .map(|cell| cell.map(|row| row.map(|x| x * factor)))
            .collect();
        DiscountedCashFlowTensor { y }
    }

    /// Elementwise `a*self + b*other`; the shorter tensor is zero-extended.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let len = self.len().max(other.len());
        let y = (0..len)
            .map(|k| {
                let mut cell = [[0.0; 2]; 2];
                for (i, row) in cell.iter_mut().enumerate() {
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = a * self.get(i, j, k) + b * other.get(i, j, k);
                    }
                }
                cell
            })
            .collect();
        DiscountedCashFlowTensor { y }
    }
}

pub fn discounted_cash_flows(
    c: &Contract,
    e: &ExpenseStructure,
    v: DiscountFactor,
) -> Result<DiscountedCashFlowTensor> {
    discounted_cash_flows_with(c, e, v, Amounts::of(c)?)
}

pub fn discounted_cash_flows_with(
    c: &Contract,
    e: &ExpenseStructure,
    v: DiscountFactor,
    amounts: Amounts,
) -> Result<DiscountedCashFlowTensor> {
    c.validate()?;
    let m = c.per_year();
    let y = (0..=c.iterations())
        .map(|k| {
            let cf = cash_flow_with(c, e, k, amounts)?;
            let d = v.at(k, m);
            Ok(cf.map(|row| row.map(|x| x * d)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscountedCashFlowTensor { y })
}
