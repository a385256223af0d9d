//! Premium backtest and the diagnostics of a calibrated model: error
//! quantiles, implied mortality curves, homogeneity grids and error
//! decomposition by feature.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuarial::{
    equivalence_premium, relative_error, Contract, DiscountFactor, ExpenseStructure, Gender, PaymentStyle,
    TransitionSource,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Quantile levels reported for relative errors.
pub const QUANTILE_LEVELS: [f64; 9] = [0.0, 0.005, 0.10, 0.25, 0.50, 0.75, 0.90, 0.995, 1.0];

/// Quantile of ascending `sorted` data by linear interpolation between the
/// closest ranks: position `alpha * (n - 1)`.
pub fn quantile(sorted: &[f64], alpha: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of no data");
    let pos = alpha.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestRecord {
    /// Index of the contract in the portfolio.
    pub id: usize,
    pub premium: f64,
    pub estimate: f64,
    /// `(P - P_hat) / P`.
    pub e_rel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestReport {
    pub records: Vec<BacktestRecord>,
    /// Contracts skipped because their premium is zero.
    pub excluded: usize,
    /// `(alpha, q_alpha)` of the signed relative errors.
    pub quantiles: Vec<(f64, f64)>,
}

impl BacktestReport {
    fn from_records(records: Vec<BacktestRecord>, excluded: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidParameter("no contract with a positive premium".into()));
        }
        let mut sorted: Vec<f64> = records.iter().map(|r| r.e_rel).collect();
        sorted.sort_by(f64::total_cmp);
        let quantiles = QUANTILE_LEVELS.iter().map(|&a| (a, quantile(&sorted, a))).collect();
        Ok(BacktestReport {
            records,
            excluded,
            quantiles,
        })
    }

    /// Share of contracts with `|e_rel| <= tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        self.records.iter().filter(|r| r.e_rel.abs() <= tol).count() as f64 / self.records.len() as f64
    }

    pub fn median_abs_error(&self) -> f64 {
        let mut abs: Vec<f64> = self.records.iter().map(|r| r.e_rel.abs()).collect();
        abs.sort_by(f64::total_cmp);
        quantile(&abs, 0.5)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.records.iter().map(|r| r.e_rel.abs()).fold(0.0, f64::max)
    }
}

/// Re-prices every contract with the transition probabilities of `model` and
/// compares against the observed premium.
pub fn backtest_portfolio<M: TransitionSource + ?Sized>(
    model: &M,
    contracts: &[Contract],
    e: &ExpenseStructure,
    v: DiscountFactor,
) -> Result<BacktestReport> {
    let mut records = Vec::with_capacity(contracts.len());
    let mut excluded = 0;
    let priced: Vec<(usize, &Contract)> = contracts
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let keep = c.premium.is_some_and(|p| p > 0.0);
            excluded += usize::from(!keep);
            keep
        })
        .collect();
    for chunk in priced.chunks(256) {
        let cs: Vec<Contract> = chunk.iter().map(|&(_, c)| c.clone()).collect();
        let seqs = model.transition_sequences(&cs)?;
        for ((id, c), seq) in chunk.iter().zip(&seqs) {
            let premium = c.premium_or_err()?;
            let estimate = equivalence_premium(c, seq, e, v)?;
            records.push(BacktestRecord {
                id: *id,
                premium,
                estimate,
                e_rel: relative_error(premium, estimate),
            });
        }
    }
    BacktestReport::from_records(records, excluded)
}

/// Contract used to read off the one-step probabilities of a profile at
/// iteration 0 under annual payments.
fn probe_contract(a0: u32, n: u32, m: PaymentStyle, gender: Gender, smoker: bool) -> Contract {
    Contract {
        year: 2015,
        month: 1,
        a0,
        n,
        t: 1,
        sum_insured: 1.0,
        premium: Some(0.0),
        m,
        gender,
        smoker,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MortalityCurve {
    pub gender: Gender,
    pub smoker: bool,
    pub ages: Vec<u32>,
    /// `pi_hat_01^(0)` at `m = 1`.
    pub model: Vec<f64>,
    pub reference: Option<Vec<f64>>,
}

/// Annual death probabilities implied by `model` for every gender/smoker
/// profile. `reference(age, gender, smoker)` supplies a comparison curve.
pub fn implied_mortality<M: TransitionSource + ?Sized>(
    model: &M,
    ages: &[u32],
    reference: Option<&dyn Fn(u32, Gender, bool) -> f64>,
) -> Result<Vec<MortalityCurve>> {
    let mut curves = Vec::with_capacity(4);
    for gender in Gender::ALL {
        for smoker in [false, true] {
            let cs: Vec<Contract> = ages
                .iter()
                .map(|&a| probe_contract(a, 1, PaymentStyle::Annual, gender, smoker))
                .collect();
            let seqs = model.transition_sequences(&cs)?;
            curves.push(MortalityCurve {
                gender,
                smoker,
                ages: ages.to_vec(),
                model: seqs.iter().map(|s| s[0].p01()).collect(),
                reference: reference.map(|f| ages.iter().map(|&a| f(a, gender, smoker)).collect()),
            });
        }
    }
    Ok(curves)
}

/// Smoker and gender separation of a set of curves at one age.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileGap {
    pub age: u32,
    /// Mean over genders of `pi(smoker) - pi(non-smoker)`.
    pub smoker_gap: f64,
    /// Mean over smoker status of `|pi(male) - pi(female)|`.
    pub gender_gap: f64,
}

pub fn profile_gaps(curves: &[MortalityCurve]) -> Result<Vec<ProfileGap>> {
    let find = |g: Gender, s: bool| {
        curves
            .iter()
            .find(|c| c.gender == g && c.smoker == s)
            .ok_or_else(|| Error::InvalidParameter(format!("missing curve for {g}, smoker={s}")))
    };
    let mm = find(Gender::Male, false)?;
    let ms = find(Gender::Male, true)?;
    let fm = find(Gender::Female, false)?;
    let fs = find(Gender::Female, true)?;
    Ok(mm
        .ages
        .iter()
        .enumerate()
        .map(|(i, &age)| ProfileGap {
            age,
            smoker_gap: 0.5 * ((ms.model[i] - mm.model[i]) + (fs.model[i] - fm.model[i])),
            gender_gap: 0.5 * ((mm.model[i] - fm.model[i]).abs() + (ms.model[i] - fs.model[i]).abs()),
        })
        .collect())
}

/// The qualitative feature varied between the two contracts of a grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeaturePair {
    /// Smoker minus non-smoker at fixed gender.
    Smoker(Gender),
    /// Female minus male at fixed smoker status.
    Gender { smoker: bool },
}

impl FeaturePair {
    fn profiles(self) -> [(Gender, bool); 2] {
        match self {
            FeaturePair::Smoker(g) => [(g, true), (g, false)],
            FeaturePair::Gender { smoker } => [(Gender::Female, smoker), (Gender::Male, smoker)],
        }
    }

    pub fn label(self) -> String {
        match self {
            FeaturePair::Smoker(g) => format!("smoker-{g}"),
            FeaturePair::Gender { smoker } => format!("gender-{}", if smoker { "smoker" } else { "nonsmoker" }),
        }
    }
}

/// `values[i][k] = pi_hat_01^(k)(c) - pi_hat_01^(k)(c')` for initial age
/// `a0s[i]`, where `c` and `c'` differ only in the feature of `pair`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityGrid {
    pub pair: FeaturePair,
    pub m: PaymentStyle,
    pub a0s: Vec<u32>,
    pub steps: usize,
    pub values: Vec<Vec<f64>>,
}

impl HomogeneityGrid {
    /// Largest spread `max - min` along any line of equal current age
    /// `a0 + k/m` (an anti-diagonal when `m = 1`). Zero for a model that
    /// depends on `(a0, k)` only through the current age.
    pub fn score(&self) -> f64 {
        let m = self.m.per_year() as usize;
        let mut lines: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
        for (i, &a0) in self.a0s.iter().enumerate() {
            for (k, &x) in self.values[i].iter().enumerate() {
                let key = a0 as usize * m + k;
                let e = lines.entry(key).or_insert((x, x));
                e.0 = e.0.min(x);
                e.1 = e.1.max(x);
            }
        }
        lines.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max)
    }
}

pub fn homogeneity_grid<M: TransitionSource + ?Sized>(
    model: &M,
    a0s: &[u32],
    steps: usize,
    pair: FeaturePair,
    m: PaymentStyle,
) -> Result<HomogeneityGrid> {
    if steps == 0 {
        return Err(Error::InvalidParameter("grid needs at least one iteration".into()));
    }
    let n = steps.div_ceil(m.per_year() as usize) as u32;
    let [(g1, s1), (g2, s2)] = pair.profiles();
    let first: Vec<Contract> = a0s.iter().map(|&a| probe_contract(a, n, m, g1, s1)).collect();
    let second: Vec<Contract> = a0s.iter().map(|&a| probe_contract(a, n, m, g2, s2)).collect();
    let p = model.transition_sequences(&first)?;
    let q = model.transition_sequences(&second)?;
    let values = p
        .iter()
        .zip(&q)
        .map(|(x, y)| (0..steps).map(|k| x[k].p01() - y[k].p01()).collect())
        .collect();
    Ok(HomogeneityGrid {
        pair,
        m,
        a0s: a0s.to_vec(),
        steps,
        values,
    })
}

/// Contract features along which errors are decomposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feature {
    Age,
    Premium,
    SumInsured,
    PremiumDuration,
    PaymentStyle,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Age,
        Feature::Premium,
        Feature::SumInsured,
        Feature::PremiumDuration,
        Feature::PaymentStyle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Age => "a0",
            Feature::Premium => "P",
            Feature::SumInsured => "S",
            Feature::PremiumDuration => "t",
            Feature::PaymentStyle => "m",
        }
    }

    fn value(self, c: &Contract) -> f64 {
        match self {
            Feature::Age => c.a0 as f64,
            Feature::Premium => c.premium.unwrap_or(0.0),
            Feature::SumInsured => c.sum_insured,
            Feature::PremiumDuration => c.t as f64,
            Feature::PaymentStyle => c.per_year() as f64,
        }
    }

    fn log_scale(self) -> bool {
        matches!(self, Feature::Premium | Feature::SumInsured)
    }
}

/// Summary of the relative errors of the contracts in one bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub feature: Feature,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub mean_abs: f64,
}

/// Bins every contract of the report once per feature: equal-width bins
/// (on a log scale for premium and sum insured), one bin per payment style.
pub fn error_decomposition(report: &BacktestReport, contracts: &[Contract], bins: usize) -> Result<Vec<BinSummary>> {
    let bins = bins.max(1);
    let mut out = Vec::new();
    for feature in Feature::ALL {
        let values: Vec<(f64, f64)> = report
            .records
            .iter()
            .map(|r| {
                let c = contracts
                    .get(r.id)
                    .ok_or_else(|| Error::Range(format!("contract {} not in portfolio", r.id)))?;
                Ok((feature.value(c), r.e_rel))
            })
            .collect::<Result<_>>()?;
        let edges: Vec<f64> = if feature == Feature::PaymentStyle {
            Vec::new()
        } else {
            let t = |x: f64| if feature.log_scale() { x.max(f64::MIN_POSITIVE).ln() } else { x };
            let lo = values.iter().map(|v| t(v.0)).fold(f64::INFINITY, f64::min);
            let hi = values.iter().map(|v| t(v.0)).fold(f64::NEG_INFINITY, f64::max);
            (0..=bins)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / bins as f64;
                    if feature.log_scale() {
                        x.exp()
                    } else {
                        x
                    }
                })
                .collect()
        };
        let groups: Vec<(f64, f64)> = if feature == Feature::PaymentStyle {
            PaymentStyle::ALL.iter().map(|m| (m.per_year() as f64, m.per_year() as f64)).collect()
        } else {
            edges.windows(2).map(|w| (w[0], w[1])).collect()
        };
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); groups.len()];
        for &(x, e) in &values {
            let idx = if feature == Feature::PaymentStyle {
                groups.iter().position(|g| g.0 == x).expect("payment style level")
            } else {
                groups.iter().position(|g| x < g.1).unwrap_or(groups.len() - 1)
            };
            members[idx].push(e);
        }
        for (bin, ((lower, upper), es)) in groups.into_iter().zip(members).enumerate() {
            let count = es.len();
            let (mean, std, mean_abs) = if count == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let n = count as f64;
                let mean = es.iter().sum::<f64>() / n;
                let var = es.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt(), es.iter().map(|e| e.abs()).sum::<f64>() / n)
            };
            out.push(BinSummary {
                feature,
                bin,
                lower,
                upper,
                count,
                mean,
                std,
                mean_abs,
            });
        }
    }
    Ok(out)
}

pub fn backtest_csv(report: &BacktestReport) -> String {
    let mut s = String::from("id,P,P_hat,e_rel\n");
    for r in &report.records {
        let _ = writeln!(s, "{},{},{},{}", r.id, r.premium, r.estimate, r.e_rel);
    }
    s
}

/// Quantile table: one row of levels, one row of `q_alpha` in percent.
pub fn quantiles_csv(report: &BacktestReport) -> String {
    let alphas: Vec<String> = report.quantiles.iter().map(|(a, _)| a.to_string()).collect();
    let values: Vec<String> = report.quantiles.iter().map(|(_, q)| format!("{:.4}", 100.0 * q)).collect();
    format!("alpha,{}\nq_alpha_pct,{}\n", alphas.join(","), values.join(","))
}

pub fn curves_csv(curves: &[MortalityCurve]) -> String {
    let mut s = String::from("age,gender,smoker,model,reference\n");
    for c in curves {
        for (i, age) in c.ages.iter().enumerate() {
            let reference = c.reference.as_ref().map(|r| r[i].to_string()).unwrap_or_default();
            let smoker = if c.smoker { "yes" } else { "no" };
            let _ = writeln!(s, "{age},{},{smoker},{},{reference}", c.gender, c.model[i]);
        }
    }
    s
}

pub fn homogeneity_csv(grids: &[HomogeneityGrid]) -> String {
    let mut s = String::from("pair,m,a0,k,difference\n");
    for g in grids {
        for (i, a0) in g.a0s.iter().enumerate() {
            for (k, x) in g.values[i].iter().enumerate() {
                let _ = writeln!(s, "{},{},{a0},{k},{x}", g.pair.label(), g.m);
            }
        }
    }
    s
}

pub fn decomposition_csv(rows: &[BinSummary]) -> String {
    let mut s = String::from("feature,bin,lower,upper,count,mean,std,mean_abs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.feature.name(),
            r.bin,
            r.lower,
            r.upper,
            r.count,
            r.mean,
            r.std,
            r.mean_abs
        );
    }
    s
}

/// Human-readable summary with a quantile table in percent.
pub fn summary_text(report: &BacktestReport, grids: &[HomogeneityGrid]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "contracts backtested: {}", report.records.len());
    let _ = writeln!(s, "excluded (zero premium): {}", report.excluded);
    let _ = writeln!(s, "share with |e_rel| <= 5%: {:.2}%", 100.0 * report.fraction_within(0.05));
    let _ = writeln!(s, "median |e_rel|: {:.4}%", 100.0 * report.median_abs_error());
    let _ = writeln!(s, "max |e_rel|: {:.4}%", 100.0 * report.max_abs_error());
    let _ = writeln!(s);
    let head: Vec<String> = report.quantiles.iter().map(|(a, _)| format!("{a:>8}")).collect();
    let vals: Vec<String> = report.quantiles.iter().map(|(_, q)| format!("{:>8.2}", 100.0 * q)).collect();
    let _ = writeln!(s, "alpha     {}", head.join(" "));
    let _ = writeln!(s, "q_alpha % {}", vals.join(" "));
    if !grids.is_empty() {
        let _ = writeln!(s);
        for g in grids {
            let _ = writeln!(s, "homogeneity score {}: {:.3e}", g.pair.label(), g.score());
        }
    }
    s
}

/// Everything written by [`write_report`].
pub struct Report<'a> {
    pub backtest: &'a BacktestReport,
    pub curves: &'a [MortalityCurve],
    pub grids: &'a [HomogeneityGrid],
    pub decomposition: &'a [BinSummary],
}

pub fn write_report(dir: &Path, r: &Report<'_>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("backtest.csv", backtest_csv(r.backtest)),
        ("quantiles.csv", quantiles_csv(r.backtest)),
        ("curves.csv", curves_csv(r.curves)),
        ("homogeneity.csv", homogeneity_csv(r.grids)),
        ("decomposition.csv", decomposition_csv(r.decomposition)),
        ("summary.txt", summary_text(r.backtest, r.grids)),
    ];
    for (name, text) in files {
        write_atomic(&dir.join(name), text.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mortality::MortalityTable;
    use crate::portfolio::{generate_portfolio, GroundTruthModel, GroundTruthParams, PortfolioConfig};
    use proptest::prelude::*;

    fn gt() -> GroundTruthModel {
        GroundTruthModel::new(MortalityTable::synthetic(), GroundTruthParams::default()).unwrap()
    }

    #[test]
    fn quantile_interpolation() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 5.0);
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert!((quantile(&xs, 0.1) - 1.4).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.995), 7.0);
    }

    proptest! {
        #[test]
        fn quantiles_monotone(mut xs in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            xs.sort_by(f64::total_cmp);
            let qs: Vec<f64> = QUANTILE_LEVELS.iter().map(|&a| quantile(&xs, a)).collect();
            prop_assert!(qs.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(qs[0], xs[0]);
            prop_assert_eq!(qs[8], *xs.last().unwrap());
        }
    }

    #[test]
    fn ground_truth_backtest_is_exact() {
        let g = gt();
        let mut pf = generate_portfolio(&PortfolioConfig::new(200, 5), &g).unwrap();
        pf.contracts[3].premium = Some(0.0);
        let report = backtest_portfolio(&g, &pf.contracts, pf.expenses(), pf.discount()).unwrap();
        assert_eq!(report.excluded, 1);
        assert_eq!(report.records.len(), 199);
        assert!(report.records.iter().all(|r| r.e_rel.abs() <= 1e-10));
        assert_eq!(report.fraction_within(1e-10), 1.0);
        let qs: Vec<f64> = report.quantiles.iter().map(|q| q.1).collect();
        assert!(qs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn errors_are_scale_free() {
        // Cash flows are linear in (P, S): scaling both leaves e_rel unchanged.
        let g = gt();
        let pf = generate_portfolio(&PortfolioConfig::new(30, 8), &g).unwrap();
        let perturbed = GroundTruthModel::new(
            MortalityTable::synthetic(),
            GroundTruthParams {
                loading: 1.2,
                ..GroundTruthParams::default()
            },
        )
        .unwrap();
        let scaled: Vec<Contract> = pf
            .contracts
            .iter()
            .map(|c| Contract {
                sum_insured: 3.5 * c.sum_insured,
                premium: c.premium.map(|p| 3.5 * p),
                ..c.clone()
            })
            .collect();
        let a = backtest_portfolio(&perturbed, &pf.contracts, pf.expenses(), pf.discount()).unwrap();
        let b = backtest_portfolio(&perturbed, &scaled, pf.expenses(), pf.discount()).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!(x.e_rel.abs() > 1e-3);
            assert!((x.e_rel - y.e_rel).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_truth_curves_and_gaps() {
        let g = gt();
        let ages: Vec<u32> = (18..=66).collect();
        let reference = |a: u32, gender: Gender, s: bool| g.annual_q(a, gender, s);
        let curves = implied_mortality(&g, &ages, Some(&reference)).unwrap();
        assert_eq!(curves.len(), 4);
        for c in &curves {
            assert_eq!(&c.model, c.reference.as_ref().unwrap());
            assert!(c.model.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        for gap in profile_gaps(&curves).unwrap() {
            assert!(gap.smoker_gap > 0.0);
            assert_eq!(gap.gender_gap, 0.0);
        }
    }

    #[test]
    fn homogeneous_model_has_constant_antidiagonals() {
        let g = gt();
        let a0s: Vec<u32> = (20..40).collect();
        for pair in [FeaturePair::Smoker(Gender::Male), FeaturePair::Gender { smoker: true }] {
            let grid = homogeneity_grid(&g, &a0s, 15, pair, PaymentStyle::Annual).unwrap();
            assert_eq!(grid.score(), 0.0);
            for i in 1..a0s.len() {
                for k in 0..14 {
                    assert_eq!(grid.values[i][k], grid.values[i - 1][k + 1]);
                }
            }
        }
        let monthly = homogeneity_grid(&g, &a0s, 30, FeaturePair::Smoker(Gender::Female), PaymentStyle::Monthly).unwrap();
        assert_eq!(monthly.score(), 0.0);
        // Unisex truth: identical contracts up to gender give a zero grid.
        let unisex = homogeneity_grid(&g, &a0s, 10, FeaturePair::Gender { smoker: false }, PaymentStyle::Annual).unwrap();
        assert!(unisex.values.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn decomposition_partitions() {
        let g = gt();
        let pf = generate_portfolio(&PortfolioConfig::new(300, 2), &g).unwrap();
        let perturbed = GroundTruthModel::new(MortalityTable::synthetic(), GroundTruthParams { loading: 1.5, ..Default::default() }).unwrap();
        let report = backtest_portfolio(&perturbed, &pf.contracts, pf.expenses(), pf.discount()).unwrap();
        let rows = error_decomposition(&report, &pf.contracts, 50).unwrap();
        for f in Feature::ALL {
            let total: usize = rows.iter().filter(|r| r.feature == f).map(|r| r.count).sum();
            assert_eq!(total, 300);
        }
        assert_eq!(rows.iter().filter(|r| r.feature == Feature::PaymentStyle).count(), 4);
        // Fifty age bins over 43 ages: some bins are empty but still present.
        let ages: Vec<_> = rows.iter().filter(|r| r.feature == Feature::Age).collect();
        assert_eq!(ages.len(), 50);
        assert!(ages.iter().any(|r| r.count == 0));
    }

    #[test]
    fn report_files() {
        let g = gt();
        let pf = generate_portfolio(&PortfolioConfig::new(20, 4), &g).unwrap();
        let report = backtest_portfolio(&g, &pf.contracts, pf.expenses(), pf.discount()).unwrap();
        let curves = implied_mortality(&g, &[30, 40], None).unwrap();
        let grids = vec![homogeneity_grid(&g, &[30, 31], 3, FeaturePair::Smoker(Gender::Male), PaymentStyle::Annual).unwrap()];
        let dec = error_decomposition(&report, &pf.contracts, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(
            dir.path(),
            &Report {
                backtest: &report,
                curves: &curves,
                grids: &grids,
                decomposition: &dec,
            },
        )
        .unwrap();
        for f in ["backtest.csv", "quantiles.csv", "curves.csv", "homogeneity.csv", "decomposition.csv", "summary.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let q = quantiles_csv(&report);
        assert!(q.starts_with("alpha,0,0.005,0.1,0.25,0.5,0.75,0.9,0.995,1\n"));
        assert!(summary_text(&report, &grids).contains("q_alpha %"));
    }
}
