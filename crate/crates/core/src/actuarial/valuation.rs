//! Actuarial present value, equivalence premiums and the premium backtest.

use super::cashflow::{discounted_cash_flows, discounted_cash_flows_with, Amounts, DiscountedCashFlowTensor};
use super::contract::{Contract, DiscountFactor, ExpenseStructure};
use super::markov::{TransitionMatrix, ALIVE, DEAD};
use crate::error::{Error, Result};

/// Anything that yields one-step transition matrices `pi^(k)(c)` for
/// `k = 0..n*m` of a contract: the ground truth, a calibrated model, a table.
pub trait TransitionSource {
    fn transition_sequence(&self, c: &Contract) -> Result<Vec<TransitionMatrix>>;

    /// Sequences for many contracts; sources that evaluate faster in bulk
    /// override this.
    fn transition_sequences(&self, cs: &[Contract]) -> Result<Vec<Vec<TransitionMatrix>>> {
        cs.iter().map(|c| self.transition_sequence(c)).collect()
    }
}

impl<T: TransitionSource + ?Sized> TransitionSource for &T {
    fn transition_sequence(&self, c: &Contract) -> Result<Vec<TransitionMatrix>> {
        (**self).transition_sequence(c)
    }

    fn transition_sequences(&self, cs: &[Contract]) -> Result<Vec<Vec<TransitionMatrix>>> {
        (**self).transition_sequences(cs)
    }
}

/// Expected discounted cash flow of `y` under `pi_seq`, starting alive.
///
/// The iteration-0 cash flow is taken with weight one; afterwards the
/// alive-state row of the multi-step matrix is carried forward, so the cost
/// is linear in `n*m`.
pub fn psi(pi_seq: &[TransitionMatrix], c: &Contract, y: &DiscountedCashFlowTensor) -> Result<f64> {
    let steps = c.iterations();
    if pi_seq.len() < steps {
        return Err(Error::Length {
            needed: steps,
            got: pi_seq.len(),
        });
    }
    // Row `s0 = alive` of M^(0,k-1).
    let mut row = [1.0, 0.0];
    let mut total = y.get(ALIVE, ALIVE, 0);
    for (k, p) in (1..=steps).zip(pi_seq) {
        for i in [ALIVE, DEAD] {
            if row[i] != 0.0 {
                total += row[i] * (p.get(i, ALIVE) * y.get(i, ALIVE, k) + p.get(i, DEAD) * y.get(i, DEAD, k));
            }
        }
        row = [
            row[ALIVE] * p.get(ALIVE, ALIVE) + row[DEAD] * p.get(DEAD, ALIVE),
            row[ALIVE] * p.get(ALIVE, DEAD) + row[DEAD] * p.get(DEAD, DEAD),
        ];
    }
    Ok(total)
}

/// APV of a priced contract; zero iff the contract is APV-consistent.
pub fn apv(
    c: &Contract,
    pi_seq: &[TransitionMatrix],
    e: &ExpenseStructure,
    v: DiscountFactor,
) -> Result<f64> {
    psi(pi_seq, c, &discounted_cash_flows(c, e, v)?)
}

/// The two linear components of the APV: `apv(P) = premium_coefficient * P + sum_part`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PremiumSplit {
    /// APV per unit of annual premium (premium income net of alpha and beta loadings).
    pub premium_coefficient: f64,
    /// APV with the premium dropped (benefits and sum-insured expenses).
    pub sum_part: f64,
}

impl PremiumSplit {
    pub fn compute(
        c: &Contract,
        pi_seq: &[TransitionMatrix],
        e: &ExpenseStructure,
        v: DiscountFactor,
    ) -> Result<Self> {
        let unit = discounted_cash_flows_with(c, e, v, Amounts::UNIT_PREMIUM)?;
        let sum = discounted_cash_flows_with(c, e, v, Amounts::sum_only(c))?;
        Ok(PremiumSplit {
            premium_coefficient: psi(pi_seq, c, &unit)?,
            sum_part: psi(pi_seq, c, &sum)?,
        })
    }

    pub fn premium(&self) -> Result<f64> {
        if self.premium_coefficient.is_nan() || self.premium_coefficient <= 0.0 {
            return Err(Error::Unpriceable {
                coefficient: self.premium_coefficient,
            });
        }
        Ok(-self.sum_part / self.premium_coefficient)
    }
}

/// Annual premium `P` making the contract APV-consistent under `pi_seq`.
pub fn equivalence_premium(
    c: &Contract,
    pi_seq: &[TransitionMatrix],
    e: &ExpenseStructure,
    v: DiscountFactor,
) -> Result<f64> {
    PremiumSplit::compute(c, pi_seq, e, v)?.premium()
}

/// Premium implied by the transition probabilities of `model`.
pub fn backtest_premium<M: TransitionSource + ?Sized>(
    model: &M,
    c: &Contract,
    e: &ExpenseStructure,
    v: DiscountFactor,
) -> Result<f64> {
    let seq = model.transition_sequence(c)?;
    equivalence_premium(c, &seq, e, v)
}

/// `(P - P_hat) / P`.
pub fn relative_error(premium: f64, estimate: f64) -> f64 {
    (premium - estimate) / premium
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuarial::cashflow::cash_flow;
    use crate::actuarial::contract::{Gender, PaymentStyle};
    use proptest::prelude::*;

    fn contract(n: u32, t: u32, m: PaymentStyle, s: f64) -> Contract {
        Contract {
            year: 2016,
            month: 5,
            a0: 35,
            n,
            t,
            sum_insured: s,
            premium: None,
            m,
            gender: Gender::Male,
            smoker: true,
        }
    }

    fn flat(q: f64, len: usize) -> Vec<TransitionMatrix> {
        vec![TransitionMatrix::from_death_prob(q).unwrap(); len]
    }

    /// Path enumeration: the chain dies at most once, so each death time is a
    /// path. Sums probability-weighted discounted cash flows along every path.
    fn enumerate_apv(c: &Contract, seq: &[TransitionMatrix], e: &ExpenseStructure, v: DiscountFactor) -> f64 {
        let m = c.per_year();
        let steps = c.iterations();
        let mut total = 0.0;
        let mut alive = 1.0;
        let cf0 = cash_flow(c, e, 0).unwrap();
        total += cf0[0][0];
        for k in 1..=steps {
            let p = seq[k - 1];
            let cf = cash_flow(c, e, k).unwrap();
            let d = v.value().powf(k as f64 / m as f64);
            // survive into k
            total += alive * p.p00() * cf[0][0] * d;
            // die in step k
            total += alive * p.p01() * cf[0][1] * d;
            alive *= p.p00();
        }
        total
    }

    #[test]
    fn one_step_unrolled() {
        let c = contract(1, 1, PaymentStyle::Annual, 1000.0).with_premium(50.0);
        let e = ExpenseStructure::default();
        let v = DiscountFactor::default();
        let y = discounted_cash_flows(&c, &e, v).unwrap();
        let seq = flat(0.01, 1);
        let expected = y.get(0, 0, 0) + 0.99 * y.get(0, 0, 1) + 0.01 * y.get(0, 1, 1);
        assert!((psi(&seq, &c, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_cash_flows_give_zero() {
        let c = contract(3, 2, PaymentStyle::Quarterly, 1000.0);
        let y = DiscountedCashFlowTensor::from_cells(vec![[[0.0; 2]; 2]; 13]);
        assert_eq!(psi(&flat(0.3, 12), &c, &y).unwrap(), 0.0);
    }

    #[test]
    fn short_sequence_is_length_error() {
        let c = contract(3, 2, PaymentStyle::Quarterly, 1000.0).with_premium(10.0);
        let y = discounted_cash_flows(&c, &ExpenseStructure::default(), DiscountFactor::default()).unwrap();
        assert!(matches!(
            psi(&flat(0.01, 11), &c, &y),
            Err(Error::Length { needed: 12, got: 11 })
        ));
    }

    #[test]
    fn one_year_premium_closed_form() {
        let c = contract(1, 1, PaymentStyle::Annual, 100_000.0);
        let e = ExpenseStructure::default();
        let v = DiscountFactor::default();
        let p = equivalence_premium(&c, &flat(0.001, 1), &e, v).unwrap();
        let expected = (100.0 + 0.001 * 100_000.0 / 1.0125) / (1.0 - 0.025 - 0.03);
        assert!((p - expected).abs() < 1e-9);
        assert!((p - 210.333_8).abs() < 1e-3);
    }

    #[test]
    fn premium_matches_root_finding() {
        let e = ExpenseStructure::default();
        let v = DiscountFactor::default();
        let c = contract(12, 7, PaymentStyle::SemiAnnual, 250_000.0);
        let seq: Vec<_> = (0..c.iterations())
            .map(|k| TransitionMatrix::from_death_prob(0.001 + 0.0002 * k as f64).unwrap())
            .collect();
        let f = |p: f64| enumerate_apv(&c.with_premium(p), &seq, &e, v);
        let (mut lo, mut hi) = (0.0, 1e6);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        let p = equivalence_premium(&c, &seq, &e, v).unwrap();
        assert!((p - 0.5 * (lo + hi)).abs() < 1e-6 * p);
    }

    #[test]
    fn premium_coefficient_is_annuity() {
        // Premium income is received at every iteration k < t*m at which the
        // policyholder was alive at iteration k - 1 (death-step cash flows include it).
        let e = ExpenseStructure::default();
        let v = DiscountFactor::default();
        let c = contract(6, 4, PaymentStyle::Quarterly, 50_000.0);
        let seq: Vec<_> = (0..c.iterations())
            .map(|k| TransitionMatrix::from_death_prob(0.002 * (1.0 + k as f64 / 10.0)).unwrap())
            .collect();
        let m = 4.0;
        // Survival weight at iteration k is prod_{l < k-1} p00^(l).
        let mut annuity = 1.0;
        let mut survive = 1.0;
        for k in 1..c.premium_iterations() {
            annuity += v.value().powf(k as f64 / m) * survive;
            survive *= seq[k - 1].p00();
        }
        let expected = (1.0 - e.beta) / m * annuity - c.t as f64 * e.alpha;
        let split = PremiumSplit::compute(&c, &seq, &e, v).unwrap();
        assert!((split.premium_coefficient - expected).abs() < 1e-12);
    }

    #[test]
    fn no_liability_no_premium() {
        let c = contract(10, 10, PaymentStyle::Monthly, 10_000.0);
        let p = equivalence_premium(&c, &flat(0.0, 120), &ExpenseStructure::zero(), DiscountFactor::default()).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn apv_increases_with_premium() {
        let e = ExpenseStructure::default();
        let v = DiscountFactor::default();
        let c = contract(10, 5, PaymentStyle::Monthly, 80_000.0);
        let seq = flat(0.0004, c.iterations());
        let p = equivalence_premium(&c, &seq, &e, v).unwrap();
        let base = apv(&c.with_premium(p), &seq, &e, v).unwrap();
        assert!(base.abs() <= 1e-9 * c.sum_insured);
        let bumped = apv(&c.with_premium(p + 1.0), &seq, &e, v).unwrap();
        assert!(bumped > base);
    }

    #[test]
    fn income_only_apv_is_annuity() {
        let e = ExpenseStructure::zero();
        let v = DiscountFactor::default();
        let c = contract(4, 3, PaymentStyle::Annual, 1.0).with_premium(100.0);
        let seq = flat(0.01, 4);
        let y = discounted_cash_flows_with(&c, &e, v, Amounts { premium: 100.0, sum_insured: 0.0 }).unwrap();
        let got = psi(&seq, &c, &y).unwrap();
        let expected = 100.0 * (1.0 + v.value() + v.value().powi(2) * 0.99);
        assert!((got - expected).abs() < 1e-10);
        assert!(got >= 0.0);
    }

    #[test]
    fn unpriceable_contract() {
        // alpha * t larger than the discounted premium income.
        let e = ExpenseStructure::new(0.99, 0.5, 0.0, 0.0).unwrap();
        let c = contract(5, 5, PaymentStyle::Annual, 1000.0);
        let err = equivalence_premium(&c, &flat(0.01, 5), &e, DiscountFactor::default()).unwrap_err();
        assert!(matches!(err, Error::Unpriceable { .. }));
    }

    fn arb_case() -> impl Strategy<Value = (Contract, Vec<TransitionMatrix>)> {
        (
            1u32..=15,
            prop::sample::select(PaymentStyle::ALL.to_vec()),
            1_000.0f64..1e6,
            0.0f64..1.0,
            prop::collection::vec(0.0f64..0.05, 180),
        )
            .prop_map(|(n, m, s, tfrac, qs)| {
                let t = 1 + ((n - 1) as f64 * tfrac) as u32;
                let c = contract(n, t, m, s);
                let seq = qs[..c.iterations().min(180)]
                    .iter()
                    .cycle()
                    .take(c.iterations())
                    .map(|&q| TransitionMatrix::from_death_prob(q).unwrap())
                    .collect();
                (c, seq)
            })
    }

    proptest! {
        #[test]
        fn premium_round_trip((c, seq) in arb_case()) {
            let e = ExpenseStructure::default();
            let v = DiscountFactor::default();
            let p = equivalence_premium(&c, &seq, &e, v).unwrap();
            let value = apv(&c.with_premium(p), &seq, &e, v).unwrap();
            prop_assert!(value.abs() <= 1e-9 * c.sum_insured, "apv {value}");
            let enumerated = enumerate_apv(&c.with_premium(p), &seq, &e, v);
            prop_assert!(enumerated.abs() <= 1e-8 * c.sum_insured);
        }

        #[test]
        fn psi_is_linear((c, seq) in arb_case(), a in -3.0f64..3.0, b in -3.0f64..3.0, p1 in 0.0f64..1e4, p2 in 0.0f64..1e4) {
            let e = ExpenseStructure::default();
            let v = DiscountFactor::default();
            let y1 = discounted_cash_flows(&c.with_premium(p1), &e, v).unwrap();
            let y2 = discounted_cash_flows(&c.with_premium(p2), &e, v).unwrap();
            let lhs = psi(&seq, &c, &y1.combine(a, &y2, b)).unwrap();
            let rhs = a * psi(&seq, &c, &y1).unwrap() + b * psi(&seq, &c, &y2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs() + c.sum_insured));
        }

        #[test]
        fn premium_and_sum_parts_add_up((c, seq) in arb_case(), p in 0.0f64..5e4) {
            let e = ExpenseStructure::default();
            let v = DiscountFactor::default();
            let split = PremiumSplit::compute(&c, &seq, &e, v).unwrap();
            let whole = apv(&c.with_premium(p), &seq, &e, v).unwrap();
            let parts = p * split.premium_coefficient + split.sum_part;
            prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + c.sum_insured));
        }
    }
}
