//! Synthetic term-life portfolios priced under a known ground-truth
//! mortality model.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actuarial::{
    discounted_cash_flows, equivalence_premium, Contract, DiscountFactor, DiscountedCashFlowTensor,
    ExpenseStructure, Gender, PaymentStyle, TransitionMatrix, TransitionSource,
};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::mortality::MortalityTable;

/// Hidden first-order mortality used to price the synthetic portfolio.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthModel {
    pub table: MortalityTable,
    pub params: GroundTruthParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthParams {
    /// Multiplicative safety loading on the table rates.
    pub loading: f64,
    /// Extra multiplier for smokers.
    pub smoker_mult: f64,
    /// Blend male and female rates 50/50 before loading.
    pub unisex: bool,
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        GroundTruthParams {
            loading: 1.34,
            smoker_mult: 1.5,
            unisex: true,
        }
    }
}

impl GroundTruthModel {
    pub fn new(table: MortalityTable, params: GroundTruthParams) -> Result<Self> {
        for (name, x) in [("loading", params.loading), ("smoker_mult", params.smoker_mult)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive (got {x})")));
            }
        }
        Ok(GroundTruthModel { table, params })
    }

    /// Loaded annual death probability at whole age `age`.
    pub fn annual_q(&self, age: u32, g: Gender, smoker: bool) -> f64 {
        let base = if self.params.unisex {
            0.5 * (self.table.q_clamped(age, Gender::Male) + self.table.q_clamped(age, Gender::Female))
        } else {
            self.table.q_clamped(age, g)
        };
        let mult = if smoker { self.params.smoker_mult } else { 1.0 };
        (self.params.loading * mult * base).min(1.0)
    }

    /// One-step matrix of `c` at iteration `k`; depends on `k` only through
    /// the completed age `a0 + floor(k/m)`.
    pub fn pi(&self, c: &Contract, k: usize) -> TransitionMatrix {
        let q = self.annual_q(c.whole_age_at(k), c.gender, c.smoker) / c.per_year() as f64;
        TransitionMatrix::from_death_prob(q).expect("clamped probability")
    }
}

impl TransitionSource for GroundTruthModel {
    fn transition_sequence(&self, c: &Contract) -> Result<Vec<TransitionMatrix>> {
        Ok((0..c.iterations()).map(|k| self.pi(c, k)).collect())
    }
}

/// Discrete law on `1..=len` with weights `ratio^(j-1)`.
fn truncated_geometric(ratio: f64, len: u32) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|j| ratio.powi(j as i32)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn mean_of(probs: &[f64]) -> f64 {
    probs.iter().enumerate().map(|(j, p)| (j + 1) as f64 * p).sum()
}

/// Bisection on `ln ratio` for an increasing function `f`.
fn solve_ratio(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Marginal laws of the contract features.
///
/// Durations follow truncated geometric laws on `1..=n_support` (for `n`)
/// and `1..=n` (for `t` given `n`), with ratios chosen so the means equal
/// `n_mean` and `t_mean` on the full support. `n_cap` truncates the same
/// law further, e.g. to bound sequence lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub a0_min: u32,
    pub a0_max: u32,
    pub years: (u16, u16),
    pub s_min: f64,
    pub s_max: f64,
    pub n_support: u32,
    pub n_cap: u32,
    pub n_mean: f64,
    pub t_mean: f64,
}

impl Default for Marginals {
    fn default() -> Self {
        Marginals {
            a0_min: 18,
            a0_max: 60,
            years: (2015, 2016),
            s_min: 1_000.0,
            s_max: 1_000_000.0,
            n_support: 48,
            n_cap: 48,
            n_mean: 13.92,
            t_mean: 7.57,
        }
    }
}

impl Marginals {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.a0_min > self.a0_max || self.years.0 > self.years.1 {
            return bad("empty age or year range");
        }
        if !(self.s_min > 0.0 && self.s_min <= self.s_max) {
            return bad("sum-insured range must be positive and non-empty");
        }
        if self.n_support == 0 || self.n_cap == 0 || self.n_cap > self.n_support {
            return bad("need 1 <= n_cap <= n_support");
        }
        if !(1.0 < self.n_mean && self.n_mean < self.n_support as f64) || !(1.0 < self.t_mean && self.t_mean < self.n_mean) {
            return bad("duration means must satisfy 1 < t_mean < n_mean < n_support");
        }
        Ok(())
    }
}

/// Pre-computed duration laws.
#[derive(Clone, Debug)]
struct DurationLaw {
    n_probs: Vec<f64>,
    /// `t_probs[n-1]` is the law of `t` given `n`.
    t_probs: Vec<Vec<f64>>,
}

impl DurationLaw {
    fn new(mg: &Marginals) -> Self {
        let n_ratio = solve_ratio(|r| mean_of(&truncated_geometric(r, mg.n_support)), mg.n_mean);
        let full = truncated_geometric(n_ratio, mg.n_support);
        let t_mean_given = |r: f64| -> f64 {
            full.iter()
                .enumerate()
                .map(|(i, p)| p * mean_of(&truncated_geometric(r, i as u32 + 1)))
                .sum()
        };
        let t_ratio = solve_ratio(t_mean_given, mg.t_mean);
        DurationLaw {
            n_probs: truncated_geometric(n_ratio, mg.n_cap),
            t_probs: (1..=mg.n_cap).map(|n| truncated_geometric(t_ratio, n)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioConfig {
    pub size: usize,
    pub seed: u64,
    pub marginals: Marginals,
    pub expenses: ExpenseStructure,
    pub discount: DiscountFactor,
    /// Redraws allowed per contract when pricing fails.
    pub max_retries: u32,
}

impl PortfolioConfig {
    pub fn new(size: usize, seed: u64) -> Self {
        PortfolioConfig {
            size,
            seed,
            marginals: Marginals::default(),
            expenses: ExpenseStructure::default(),
            discount: DiscountFactor::default(),
            max_retries: 100,
        }
    }
}

/// Draws unpriced contracts from fixed marginals.
#[derive(Clone, Debug)]
pub struct ContractSampler {
    marginals: Marginals,
    law: DurationLaw,
}

impl ContractSampler {
    pub fn new(marginals: &Marginals) -> Result<Self> {
        marginals.validate()?;
        Ok(ContractSampler {
            marginals: marginals.clone(),
            law: DurationLaw::new(marginals),
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Contract {
        sample_with_law(rng, &self.marginals, &self.law)
    }
}

/// Draws one unpriced contract. Builds the duration laws on every call; use
/// [`ContractSampler`] for repeated draws.
pub fn sample_contract(rng: &mut impl Rng, mg: &Marginals) -> Contract {
    sample_with_law(rng, mg, &DurationLaw::new(mg))
}

fn sample_with_law(rng: &mut impl Rng, mg: &Marginals, law: &DurationLaw) -> Contract {
    let year = rng.random_range(mg.years.0..=mg.years.1);
    let month = rng.random_range(1..=12u8);
    let a0 = rng.random_range(mg.a0_min..=mg.a0_max);
    let n = sample_index(rng, &law.n_probs) as u32 + 1;
    let t = sample_index(rng, &law.t_probs[n as usize - 1]) as u32 + 1;
    let sum_insured = rng.random_range(mg.s_min..=mg.s_max);
    let m = PaymentStyle::ALL[rng.random_range(0..4)];
    let gender = Gender::ALL[rng.random_range(0..2)];
    let smoker = rng.random_bool(0.5);
    Contract {
        year,
        month,
        a0,
        n,
        t,
        sum_insured,
        premium: None,
        m,
        gender,
        smoker,
    }
}

/// Random stream of contract `index`: independent of all other contracts.
pub fn contract_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Everything needed to reproduce a portfolio, stored next to its CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMeta {
    pub config: PortfolioConfig,
    pub ground_truth: GroundTruthParams,
    /// Number of redraws caused by unpriceable samples.
    pub redraws: u64,
}

/// Priced contracts with the assumptions that define their cash flows.
#[derive(Clone, Debug, PartialEq)]
pub struct Portfolio {
    pub contracts: Vec<Contract>,
    pub meta: PortfolioMeta,
}

impl Portfolio {
    pub fn expenses(&self) -> &ExpenseStructure {
        &self.meta.config.expenses
    }

    pub fn discount(&self) -> DiscountFactor {
        self.meta.config.discount
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    /// Discounted cash flows `y(c)` of contract `i`.
    pub fn cash_flows(&self, i: usize) -> Result<DiscountedCashFlowTensor> {
        discounted_cash_flows(&self.contracts[i], self.expenses(), self.discount())
    }

    pub fn max_iterations(&self) -> usize {
        self.contracts.iter().map(Contract::iterations).max().unwrap_or(0)
    }
}

/// Samples and prices `cfg.size` contracts. Contract `i` only uses its own
/// random stream, so the output does not depend on evaluation order.
pub fn generate_portfolio(cfg: &PortfolioConfig, gt: &GroundTruthModel) -> Result<Portfolio> {
    if cfg.size == 0 {
        return Err(Error::InvalidParameter("portfolio size must be at least 1".into()));
    }
    cfg.expenses.validate()?;
    let sampler = ContractSampler::new(&cfg.marginals)?;
    let mut contracts = Vec::with_capacity(cfg.size);
    let mut redraws = 0u64;
    for i in 0..cfg.size {
        let mut rng = contract_rng(cfg.seed, i);
        let mut attempt = 0;
        let priced = loop {
            let c = sampler.sample(&mut rng);
            let seq = gt.transition_sequence(&c)?;
            match equivalence_premium(&c, &seq, &cfg.expenses, cfg.discount) {
                Ok(p) if p > 0.0 => break c.with_premium(p),
                Ok(_) | Err(Error::Unpriceable { .. }) if attempt < cfg.max_retries => {
                    attempt += 1;
                    redraws += 1;
                }
                Ok(p) => {
                    return Err(Error::Numerical(format!(
                        "contract {i}: non-positive premium {p} after {attempt} redraws"
                    )))
                }
                Err(e) => return Err(e),
            }
        };
        contracts.push(priced);
    }
    Ok(Portfolio {
        contracts,
        meta: PortfolioMeta {
            config: cfg.clone(),
            ground_truth: gt.params,
            redraws,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct Row {
    year: u16,
    month: u8,
    a0: u32,
    n: u32,
    t: u32,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "P")]
    p: f64,
    m: u32,
    gender: Gender,
    smoker: String,
}

/// Path of the metadata sidecar belonging to a portfolio CSV.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn portfolio_to_csv(contracts: &[Contract]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in contracts {
        w.serialize(Row {
            year: c.year,
            month: c.month,
            a0: c.a0,
            n: c.n,
            t: c.t,
            s: c.sum_insured,
            p: c.premium_or_err()?,
            m: c.per_year(),
            gender: c.gender,
            smoker: if c.smoker { "yes" } else { "no" }.into(),
        })
        .map_err(|e| Error::Numerical(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn portfolio_from_csv<R: std::io::Read>(reader: R) -> Result<Vec<Contract>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let expected = ["year", "month", "a0", "n", "t", "S", "P", "m", "gender", "smoker"];
    let header = rdr.headers().map_err(|e| Error::Schema {
        row: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(expected) {
        return Err(Error::Schema {
            row: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let schema = |message: String| Error::Schema { row: line, message };
        let row = row.map_err(|e| schema(e.to_string()))?;
        let smoker = match row.smoker.as_str() {
            "yes" => true,
            "no" => false,
            other => return Err(schema(format!("smoker must be `yes` or `no` (got `{other}`)"))),
        };
        let c = Contract {
            year: row.year,
            month: row.month,
            a0: row.a0,
            n: row.n,
            t: row.t,
            sum_insured: row.s,
            premium: Some(row.p),
            m: PaymentStyle::from_per_year(row.m).map_err(|e| schema(e.to_string()))?,
            gender: row.gender,
            smoker,
        };
        c.validate().map_err(|e| schema(e.to_string()))?;
        out.push(c);
    }
    Ok(out)
}

impl Portfolio {
    /// Writes the CSV and its metadata sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        write_atomic(csv_path, portfolio_to_csv(&self.contracts)?.as_bytes())?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::format(csv_path, e))?;
        write_atomic(&meta_path(csv_path), meta.as_bytes())
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let contracts = portfolio_from_csv(file)?;
        let mp = meta_path(csv_path);
        let meta: PortfolioMeta = serde_json::from_str(&read_to_string(&mp)?).map_err(|e| Error::format(&mp, e))?;
        if contracts.is_empty() {
            return Err(Error::format(csv_path, "portfolio has no contracts"));
        }
        Ok(Portfolio { contracts, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuarial::{backtest_premium, psi};

    fn gt() -> GroundTruthModel {
        GroundTruthModel::new(MortalityTable::synthetic(), GroundTruthParams::default()).unwrap()
    }

    fn contract(a0: u32, m: PaymentStyle, smoker: bool, gender: Gender) -> Contract {
        Contract {
            year: 2015,
            month: 6,
            a0,
            n: 10,
            t: 5,
            sum_insured: 50_000.0,
            premium: None,
            m,
            gender,
            smoker,
        }
    }

    #[test]
    fn neutral_model_reads_table() {
        let params = GroundTruthParams {
            loading: 1.0,
            smoker_mult: 1.5,
            unisex: false,
        };
        let model = GroundTruthModel::new(MortalityTable::synthetic(), params).unwrap();
        let c = contract(40, PaymentStyle::Annual, false, Gender::Male);
        for k in 0..10 {
            let q = model.table.q(40 + k as u32, Gender::Male).unwrap();
            assert_eq!(model.pi(&c, k).p01(), q);
        }
    }

    #[test]
    fn smoker_ratio_and_unisex() {
        let g = gt();
        for m in PaymentStyle::ALL {
            let ns = contract(45, m, false, Gender::Male);
            let s = contract(45, m, true, Gender::Male);
            let f = contract(45, m, false, Gender::Female);
            for k in [0, 3, 7] {
                let ratio = g.pi(&s, k).p01() / g.pi(&ns, k).p01();
                assert!((ratio - 1.5).abs() < 1e-12);
                assert_eq!(g.pi(&ns, k), g.pi(&f, k));
            }
        }
    }

    #[test]
    fn homogeneous_in_current_age() {
        let g = gt();
        let young = contract(30, PaymentStyle::Quarterly, true, Gender::Female);
        let older = contract(32, PaymentStyle::Quarterly, true, Gender::Female);
        assert_eq!(g.pi(&young, 8), g.pi(&older, 0));
        assert_eq!(g.pi(&young, 11), g.pi(&older, 3));
    }

    #[test]
    fn duration_law_hits_means() {
        let mg = Marginals::default();
        let law = DurationLaw::new(&mg);
        assert!((mean_of(&law.n_probs) - 13.92).abs() < 1e-9);
        let t_mean: f64 = law
            .n_probs
            .iter()
            .zip(&law.t_probs)
            .map(|(p, t)| p * mean_of(t))
            .sum();
        assert!((t_mean - 7.57).abs() < 1e-9);
        // Right skew: the mode is at one year.
        assert!(law.n_probs[0] > law.n_probs[20]);
    }

    #[test]
    fn sampled_contracts_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mg = Marginals::default();
        let law = DurationLaw::new(&mg);
        let draws: Vec<Contract> = (0..10_000).map(|_| sample_with_law(&mut rng, &mg, &law)).collect();
        for c in &draws {
            c.validate().unwrap();
            assert!((18..=60).contains(&c.a0) && c.n <= 48);
        }
        let mean_age = draws.iter().map(|c| c.a0 as f64).sum::<f64>() / draws.len() as f64;
        assert!((mean_age - 39.0).abs() <= 1.0, "{mean_age}");
        let mean_n = draws.iter().map(|c| c.n as f64).sum::<f64>() / draws.len() as f64;
        assert!((mean_n - 13.92).abs() < 0.5, "{mean_n}");
    }

    #[test]
    fn capped_durations() {
        let mg = Marginals {
            n_cap: 20,
            ..Marginals::default()
        };
        let sampler = ContractSampler::new(&mg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_contract(&mut rng, &mg).n <= 20);
        for _ in 0..2000 {
            let c = sampler.sample(&mut rng);
            assert!(c.n <= 20 && c.t <= c.n);
        }
    }

    #[test]
    fn priced_portfolio_is_consistent() {
        let g = gt();
        let cfg = PortfolioConfig::new(300, 7);
        let pf = generate_portfolio(&cfg, &g).unwrap();
        for (i, c) in pf.contracts.iter().enumerate() {
            let seq = g.transition_sequence(c).unwrap();
            let y = pf.cash_flows(i).unwrap();
            assert!(psi(&seq, c, &y).unwrap().abs() <= 1e-9 * c.sum_insured);
            let p = c.premium.unwrap();
            let back = backtest_premium(&g, c, pf.expenses(), pf.discount()).unwrap();
            assert!(((back - p) / p).abs() <= 1e-10);
        }
    }

    #[test]
    fn premium_monotonicity() {
        let g = gt();
        let e = ExpenseStructure::default();
        let v = DiscountFactor::default();
        let price = |c: &Contract| equivalence_premium(c, &g.transition_sequence(c).unwrap(), &e, v).unwrap();
        let base = contract(40, PaymentStyle::Monthly, false, Gender::Male);
        let p = price(&base);
        assert!(price(&Contract { smoker: true, ..base.clone() }) > p);
        assert!(price(&Contract { a0: 41, ..base.clone() }) > p);
        assert!(price(&Contract { sum_insured: 60_000.0, ..base.clone() }) > p);
    }

    #[test]
    fn smoker_multiplier_only_moves_smokers() {
        let cfg = PortfolioConfig::new(200, 3);
        let a = generate_portfolio(&cfg, &gt()).unwrap();
        let neutral = GroundTruthModel::new(
            MortalityTable::synthetic(),
            GroundTruthParams {
                smoker_mult: 1.0,
                ..GroundTruthParams::default()
            },
        )
        .unwrap();
        let b = generate_portfolio(&cfg, &neutral).unwrap();
        for (x, y) in a.contracts.iter().zip(&b.contracts) {
            assert_eq!(x.smoker, y.smoker);
            if x.smoker {
                assert!(x.premium.unwrap() > y.premium.unwrap());
            } else {
                assert_eq!(x.premium, y.premium);
            }
        }
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let cfg = PortfolioConfig::new(50, 11);
        let pf = generate_portfolio(&cfg, &gt()).unwrap();
        let again = generate_portfolio(&cfg, &gt()).unwrap();
        let text = portfolio_to_csv(&pf.contracts).unwrap();
        assert_eq!(text, portfolio_to_csv(&again.contracts).unwrap());
        assert!(text.starts_with("year,month,a0,n,t,S,P,m,gender,smoker\n"));
        let back = portfolio_from_csv(text.as_bytes()).unwrap();
        assert_eq!(back, pf.contracts);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("portfolio.csv");
        pf.save(&path).unwrap();
        assert!(dir.path().join("portfolio.meta.json").exists());
        assert_eq!(Portfolio::load(&path).unwrap(), pf);
    }

    #[test]
    fn csv_schema_errors() {
        let bad = "year,month,a0,n,t,S,P,m,gender,smoker\n2015,1,40,10,5,1000,10,3,male,no\n";
        assert!(matches!(portfolio_from_csv(bad.as_bytes()), Err(Error::Schema { row: 2, .. })));
        let bad = "year,month,a0,n,t,S,P,m,gender,smoker\n2015,1,40,10,5,1000,10,12,male,maybe\n";
        assert!(portfolio_from_csv(bad.as_bytes()).is_err());
        let bad = "year,month,a0,n,t,S,P,m,gender,smoker\n2015,1,40,10,11,1000,10,12,male,no\n";
        assert!(portfolio_from_csv(bad.as_bytes()).is_err());
    }
}
