use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of premium payments (and Markov iterations) per year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum PaymentStyle {
    Annual,
    SemiAnnual,
    Quarterly,
    Monthly,
}

impl PaymentStyle {
    pub const ALL: [PaymentStyle; 4] = [
        PaymentStyle::Annual,
        PaymentStyle::SemiAnnual,
        PaymentStyle::Quarterly,
        PaymentStyle::Monthly,
    ];

    pub fn per_year(self) -> u32 {
        match self {
            PaymentStyle::Annual => 1,
            PaymentStyle::SemiAnnual => 2,
            PaymentStyle::Quarterly => 4,
            PaymentStyle::Monthly => 12,
        }
    }

    pub fn from_per_year(m: u32) -> Result<Self> {
        match m {
            1 => Ok(PaymentStyle::Annual),
            2 => Ok(PaymentStyle::SemiAnnual),
            4 => Ok(PaymentStyle::Quarterly),
            12 => Ok(PaymentStyle::Monthly),
            other => Err(Error::InvalidContract(format!(
                "payment style must be one of 1, 2, 4, 12 (got {other})"
            ))),
        }
    }
}

impl TryFrom<u32> for PaymentStyle {
    type Error = Error;

    fn try_from(m: u32) -> Result<Self> {
        PaymentStyle::from_per_year(m)
    }
}

impl From<PaymentStyle> for u32 {
    fn from(m: PaymentStyle) -> u32 {
        m.per_year()
    }
}

impl fmt::Display for PaymentStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.per_year())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(Error::InvalidParameter(format!(
                "gender must be `male` or `female` (got `{other}`)"
            ))),
        }
    }
}

/// A single term-life policy.
///
/// `premium` is the annual premium and is `None` until the contract has been
/// priced. Iteration `k` of the contract covers the period `[k/m, (k+1)/m)`
/// in years; premiums are due at iterations `0..t*m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Contract {
    pub year: u16,
    pub month: u8,
    /// Age at inception in whole years.
    pub a0: u32,
    /// Contract duration in years.
    pub n: u32,
    /// Premium-payment duration in years.
    pub t: u32,
    pub sum_insured: f64,
    pub premium: Option<f64>,
    pub m: PaymentStyle,
    pub gender: Gender,
    pub smoker: bool,
}

impl Contract {
    pub fn validate(&self) -> Result<()> {
        if !(1..=12).contains(&self.month) {
            return Err(Error::InvalidContract(format!("month {} not in 1..=12", self.month)));
        }
        if self.t < 1 || self.t > self.n {
            return Err(Error::InvalidContract(format!(
                "premium duration t={} must satisfy 1 <= t <= n={}",
                self.t, self.n
            )));
        }
        if !(self.sum_insured.is_finite() && self.sum_insured > 0.0) {
            return Err(Error::InvalidContract(format!(
                "sum insured must be positive (got {})",
                self.sum_insured
            )));
        }
        if let Some(p) = self.premium {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidContract(format!("premium must be >= 0 (got {p})")));
            }
        }
        Ok(())
    }

    pub fn per_year(&self) -> u32 {
        self.m.per_year()
    }

    /// Total number of iterations `K = n*m`.
    pub fn iterations(&self) -> usize {
        (self.n * self.m.per_year()) as usize
    }

    /// Number of premium-paying iterations `t*m`.
    pub fn premium_iterations(&self) -> usize {
        (self.t * self.m.per_year()) as usize
    }

    /// Current age in years at iteration `k`, `a0 + k/m`.
    pub fn age_at(&self, k: usize) -> f64 {
        self.a0 as f64 + k as f64 / self.per_year() as f64
    }

    /// Completed age in whole years at iteration `k`, `a0 + floor(k/m)`.
    pub fn whole_age_at(&self, k: usize) -> u32 {
        self.a0 + (k as u32) / self.per_year()
    }

    pub fn premium_or_err(&self) -> Result<f64> {
        self.premium
            .ok_or_else(|| Error::InvalidContract("contract has no premium".into()))
    }

    pub fn with_premium(&self, premium: f64) -> Contract {
        Contract {
            premium: Some(premium),
            ..self.clone()
        }
    }
}

/// The (alpha, beta, gamma1, gamma2) loading structure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpenseStructure {
    /// Acquisition loading per unit annual premium per premium year.
    pub alpha: f64,
    /// Collection loading per premium payment.
    pub beta: f64,
    /// Administration loading per unit sum insured during premium payment.
    pub gamma1: f64,
    /// Administration loading per unit sum insured after premium payment.
    pub gamma2: f64,
}

impl ExpenseStructure {
    pub fn new(alpha: f64, beta: f64, gamma1: f64, gamma2: f64) -> Result<Self> {
        let e = ExpenseStructure {
            alpha,
            beta,
            gamma1,
            gamma2,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
        ] {
            if !(0.0..1.0).contains(&x) {
                return Err(Error::InvalidParameter(format!("{name}={x} not in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn zero() -> Self {
        ExpenseStructure {
            alpha: 0.0,
            beta: 0.0,
            gamma1: 0.0,
            gamma2: 0.0,
        }
    }
}

impl Default for ExpenseStructure {
    fn default() -> Self {
        ExpenseStructure {
            alpha: 0.025,
            beta: 0.03,
            gamma1: 0.001,
            gamma2: 0.001,
        }
    }
}

/// Annual discount factor `v` in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DiscountFactor(f64);

impl DiscountFactor {
    pub fn new(v: f64) -> Result<Self> {
        if v > 0.0 && v <= 1.0 {
            Ok(DiscountFactor(v))
        } else {
            Err(Error::InvalidParameter(format!("discount factor {v} not in (0, 1]")))
        }
    }

    pub fn from_rate(i: f64) -> Result<Self> {
        DiscountFactor::new(1.0 / (1.0 + i))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `v^(k/m)`.
    pub fn at(self, k: usize, m: u32) -> f64 {
        self.0.powf(k as f64 / m as f64)
    }
}

impl Default for DiscountFactor {
    /// 1.25% maximum technical interest rate.
    fn default() -> Self {
        DiscountFactor(1.0 / 1.0125)
    }
}

impl TryFrom<f64> for DiscountFactor {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        DiscountFactor::new(v)
    }
}

impl From<DiscountFactor> for f64 {
    fn from(v: DiscountFactor) -> f64 {
        v.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> Contract {
        Contract {
            year: 2015,
            month: 3,
            a0: 40,
            n: 20,
            t: 10,
            sum_insured: 100_000.0,
            premium: Some(1200.0),
            m: PaymentStyle::Monthly,
            gender: Gender::Male,
            smoker: false,
        }
    }

    #[test]
    fn iteration_counts() {
        let c = sample();
        assert_eq!(c.iterations(), 240);
        assert_eq!(c.premium_iterations(), 120);
        assert_eq!(c.age_at(18), 41.5);
        assert_eq!(c.whole_age_at(23), 41);
    }

    #[test]
    fn rejects_bad_contracts() {
        let mut c = sample();
        c.t = 21;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.t = 0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.sum_insured = 0.0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.premium = Some(-1.0);
        assert!(c.validate().is_err());
        assert!(PaymentStyle::from_per_year(3).is_err());
        assert!(PaymentStyle::from_per_year(0).is_err());
    }

    #[test]
    fn expense_and_discount_ranges() {
        assert!(ExpenseStructure::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(ExpenseStructure::new(0.025, 0.03, 0.001, 0.001).is_ok());
        assert!(DiscountFactor::new(0.0).is_err());
        assert!(DiscountFactor::new(1.0).is_ok());
        assert!(DiscountFactor::new(1.01).is_err());
        let v = DiscountFactor::default();
        assert!((v.at(12, 12) - 1.0 / 1.0125).abs() < 1e-15);
    }
}
