use premcal::actuarial::TransitionMatrix;
use premcal::calibrate::{
    empirical_risk, fit_baseline, fit_residual, BaselineConfig, BaselineModel, Checkpoint, Model, ResidualConfig,
};
use premcal::mortality::{build_dav_dataset, MortalityTable};
use premcal::portfolio::{generate_portfolio, GroundTruthModel, GroundTruthParams, Portfolio, PortfolioConfig};
use premcal::{psi, Gender, TransitionSource};

fn gt() -> GroundTruthModel {
    GroundTruthModel::new(MortalityTable::synthetic(), GroundTruthParams::default()).unwrap()
}

fn small_portfolio(size: usize, seed: u64) -> Portfolio {
    let mut cfg = PortfolioConfig::new(size, seed);
    cfg.marginals.n_cap = 5;
    generate_portfolio(&cfg, &gt()).unwrap()
}

fn tiny_residual(max_epochs: usize) -> ResidualConfig {
    ResidualConfig {
        widths: vec![4, 6, 6, 6, 6, 6, 2],
        max_epochs,
        ..ResidualConfig::default()
    }
}

fn baseline() -> BaselineModel {
    let table = MortalityTable::synthetic();
    let cfg = BaselineConfig {
        max_epochs: 200,
        ..BaselineConfig::default()
    };
    fit_baseline(&build_dav_dataset(&table, Gender::Male), &table, &cfg, |_| {})
        .unwrap()
        .model
}

#[test]
fn ground_truth_has_zero_risk() {
    let pf = small_portfolio(300, 9);
    let g = gt();
    for (i, c) in pf.contracts.iter().enumerate() {
        let r = psi(&g.transition_sequence(c).unwrap(), c, &pf.cash_flows(i).unwrap()).unwrap();
        assert!(r.abs() <= 1e-9 * c.sum_insured);
    }
}

#[test]
fn zero_residual_reproduces_baseline_risk() {
    let pf = small_portfolio(60, 3);
    let base = baseline();
    let run = fit_residual(&pf, base.clone(), &tiny_residual(0), |_, _| Ok(())).unwrap();
    assert!(run.log.is_empty());

    // Baseline-only risk computed without the residual network.
    let mut total = 0.0;
    for (i, c) in pf.contracts.iter().enumerate() {
        let points: Vec<_> = (0..c.iterations()).map(|k| (c.age_at(k), c.m)).collect();
        let seq: Vec<TransitionMatrix> = base
            .death_probs(&points)
            .unwrap()
            .into_iter()
            .map(|q| TransitionMatrix::from_death_prob(q).unwrap())
            .collect();
        total += psi(&seq, c, &pf.cash_flows(i).unwrap()).unwrap().abs();
    }
    let expected = total / pf.len() as f64;
    assert!((run.final_risk - expected).abs() <= 1e-9 * expected, "{} vs {expected}", run.final_risk);
}

#[test]
fn one_contract_risk_decreases() {
    let mut pf = small_portfolio(1, 5);
    pf.contracts[0].n = 4;
    pf.contracts[0].t = 4;
    let c = pf.contracts[0].clone();
    let seq = gt().transition_sequence(&c).unwrap();
    let p = premcal::equivalence_premium(&c, &seq, pf.expenses(), pf.discount()).unwrap();
    pf.contracts[0].premium = Some(p);

    let cfg = ResidualConfig {
        lr: Some(1e-3),
        zero_init_output: false,
        ..tiny_residual(10)
    };
    let run = fit_residual(&pf, baseline(), &cfg, |_, _| Ok(())).unwrap();
    let losses: Vec<f64> = run.log.iter().map(|e| e.loss).collect();
    assert_eq!(losses.len(), 10);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn stage_two_freezes_baseline_and_round_trips() {
    let pf = small_portfolio(40, 12);
    let base = baseline();
    let mut epochs = 0;
    let run = fit_residual(&pf, base.clone(), &tiny_residual(3), |_, m| {
        epochs += 1;
        assert_eq!(m.base, base);
        Ok(())
    })
    .unwrap();
    assert_eq!(epochs, 3);
    assert_eq!(run.model.base, base);
    let best = run.best_epoch.unwrap();
    assert_eq!(run.log[best].loss, run.log.iter().map(|e| e.loss).fold(f64::INFINITY, f64::min));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    run.model.to_checkpoint().save(&path).unwrap();
    let reloaded = Model::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(reloaded, run.model);
    assert_eq!(empirical_risk(&reloaded, &pf).unwrap().to_bits(), run.final_risk.to_bits());
    for c in &pf.contracts[..5] {
        let a = run.model.predict_sequence(c).unwrap();
        assert_eq!(a, reloaded.predict_sequence(c).unwrap());
        assert_eq!(a.len(), c.iterations());
        assert!(a.iter().all(|m| m.is_stochastic(0.0)));
    }
}

#[test]
fn batched_and_single_predictions_agree() {
    let pf = small_portfolio(70, 21);
    let run = fit_residual(&pf, baseline(), &tiny_residual(1), |_, _| Ok(())).unwrap();
    let batched = run.model.predict_sequences(&pf.contracts).unwrap();
    for (c, seq) in pf.contracts.iter().zip(&batched) {
        let single = run.model.predict_sequence(c).unwrap();
        for (a, b) in seq.iter().zip(&single) {
            assert!((a.p01() - b.p01()).abs() <= 1e-15);
        }
    }
}
