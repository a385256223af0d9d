use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use premcal::calibrate::{
    fit_baseline as train_baseline, fit_residual as train_residual, fit_residual_scaler, log_to_csv, BaselineModel,
    Checkpoint, EpochLog, Model,
};
use premcal::io::write_atomic;
use premcal::mortality::{build_dav_dataset, MortalityTable};
use premcal::portfolio::{generate_portfolio, GroundTruthModel, Portfolio, PortfolioConfig};
use premcal::validate::{
    backtest_csv, backtest_portfolio, error_decomposition, homogeneity_grid, implied_mortality, quantiles_csv,
    summary_text, write_report, FeaturePair, Report,
};
use premcal::{DiscountFactor, Error, Gender, PaymentStyle, TransitionSource};

use crate::config::{default_log, oracle_table, portfolio_csv, require, RunConfig};

fn load_table(path: Option<&Path>) -> anyhow::Result<MortalityTable> {
    match path {
        Some(p) => Ok(MortalityTable::load(p)?),
        None => {
            info!("no table given; using the built-in synthetic table");
            Ok(MortalityTable::synthetic())
        }
    }
}

/// Writes the effective configuration next to an output for provenance.
fn echo_config(cfg: &RunConfig, path: &Path) -> anyhow::Result<()> {
    write_atomic(path, cfg.to_toml()?.as_bytes())?;
    Ok(())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn write_table(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = require(&cfg.out, "out")?;
    MortalityTable::synthetic().save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn gen_portfolio(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = require(&cfg.out, "out")?;
    let size = require(&cfg.size, "n")?;
    let table = load_table(cfg.table.as_deref())?;
    let gt = GroundTruthModel::new(table, cfg.ground_truth)?;
    let mut pc = PortfolioConfig::new(size, cfg.seed.unwrap_or(0));
    if let Some(cap) = cfg.n_cap {
        pc.marginals.n_cap = cap;
    }
    cfg.expenses.validate()?;
    pc.expenses = cfg.expenses;
    if let Some(v) = cfg.discount {
        pc.discount = DiscountFactor::new(v)?;
    }
    let portfolio = generate_portfolio(&pc, &gt)?;
    ensure_dir(&out)?;
    let csv = out.join("portfolio.csv");
    portfolio.save(&csv)?;
    gt.table.save(&oracle_table(&csv))?;
    echo_config(cfg, &out.join("run.toml"))?;
    println!(
        "wrote {} contracts to {} ({} redraws)",
        portfolio.len(),
        csv.display(),
        portfolio.meta.redraws
    );
    Ok(())
}

pub fn fit_baseline(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = require(&cfg.out, "out")?;
    let log_path = cfg.log.clone().unwrap_or_else(|| default_log(&out));
    let table = load_table(cfg.table.as_deref())?;
    let bc = &cfg.train.baseline;
    let ds = build_dav_dataset(&table, bc.gender);
    let run = train_baseline(&ds, &table, bc, |e| {
        if e.epoch % 100 == 0 {
            info!("epoch {} KL {:.3e}", e.epoch, e.loss);
        }
    })?;
    if !run.converged {
        warn!(
            "tolerances not met after {} epochs: max rel error {:.3}, ratio error {:.3}",
            run.log.len(),
            run.fit.max_rel_error,
            run.fit.ratio_error
        );
    }
    Checkpoint {
        baseline: run.model.to_section(),
        residual: None,
    }
    .save(&out)?;
    write_atomic(&log_path, log_to_csv(&run.log).as_bytes())?;
    echo_config(cfg, &sidecar(&out, "run.toml"))?;
    println!(
        "{} baseline: {} epochs, max rel error {:.4}, 1/m ratio error {:.4}; wrote {}",
        bc.gender,
        run.log.len(),
        run.fit.max_rel_error,
        run.fit.ratio_error,
        out.display()
    );
    Ok(())
}

pub fn fit_residual(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = require(&cfg.out, "out")?;
    let log_path = cfg.log.clone().unwrap_or_else(|| default_log(&out));
    let base_path = require(&cfg.baseline, "baseline")?;
    let base = BaselineModel::from_section(&Checkpoint::load(&base_path)?.baseline)?;
    let portfolio = Portfolio::load(&portfolio_csv(&require(&cfg.portfolio, "portfolio")?))?;
    let rc = &cfg.train.residual;
    info!(
        "{} contracts, widths {:?}, lr {}",
        portfolio.len(),
        rc.widths,
        rc.learning_rate(base.gender())
    );
    let mut log: Vec<EpochLog> = Vec::new();
    let run = train_residual(&portfolio, base, rc, |e, model| {
        info!("epoch {} R_emp {:.4} lr {:.2e} |g| {:.2e}", e.epoch, e.loss, e.lr, e.grad_norm);
        log.push(e.clone());
        model.to_checkpoint().save(&out)?;
        write_atomic(&log_path, log_to_csv(&log).as_bytes())
    })?;
    run.model.to_checkpoint().save(&out)?;
    write_atomic(&log_path, log_to_csv(&run.log).as_bytes())?;
    echo_config(cfg, &sidecar(&out, "run.toml"))?;
    println!(
        "{} epochs, best epoch {:?}, final R_emp {:.6}; wrote {}",
        run.log.len(),
        run.best_epoch,
        run.final_risk,
        out.display()
    );
    Ok(())
}

fn load_oracle(csv: &Path, portfolio: &Portfolio) -> anyhow::Result<GroundTruthModel> {
    let table = MortalityTable::load(&oracle_table(csv))?;
    Ok(GroundTruthModel::new(table, portfolio.meta.ground_truth)?)
}

/// The checkpoint's residual scaler must be the one fitted on this portfolio.
fn check_scaler(model: &Model, portfolio: &Portfolio) -> anyhow::Result<()> {
    let fitted = fit_residual_scaler(&portfolio.contracts)?;
    if fitted.fingerprint() != model.res_scaler.fingerprint() {
        return Err(Error::Consistency(format!(
            "checkpoint scaler [{}] does not match portfolio scaler [{}]",
            model.res_scaler.fingerprint(),
            fitted.fingerprint()
        ))
        .into());
    }
    Ok(())
}

pub fn backtest(cfg: &RunConfig, oracle: bool, full: bool) -> anyhow::Result<()> {
    let out = require(&cfg.out, "out")?;
    let csv = portfolio_csv(&require(&cfg.portfolio, "portfolio")?);
    let portfolio = Portfolio::load(&csv)?;
    let reference = load_oracle(&csv, &portfolio).ok();
    if oracle {
        let gt = load_oracle(&csv, &portfolio)?;
        evaluate(&gt, &portfolio, reference.as_ref(), &out, full)?;
    } else {
        let ck = Checkpoint::load(&require(&cfg.checkpoint, "checkpoint")?)?;
        let model = Model::from_checkpoint(&ck)?;
        check_scaler(&model, &portfolio)?;
        evaluate(&model, &portfolio, reference.as_ref(), &out, full)?;
    }
    echo_config(cfg, &out.join("run.toml"))
}

fn evaluate<M: TransitionSource>(
    model: &M,
    portfolio: &Portfolio,
    reference: Option<&GroundTruthModel>,
    out: &Path,
    full: bool,
) -> anyhow::Result<()> {
    let report = backtest_portfolio(model, &portfolio.contracts, portfolio.expenses(), portfolio.discount())?;
    ensure_dir(out)?;
    if full {
        let ages: Vec<u32> = (18..=66).collect();
        let gt_q = reference.map(|gt| move |a: u32, g: Gender, s: bool| gt.annual_q(a, g, s));
        let curves = implied_mortality(
            model,
            &ages,
            gt_q.as_ref().map(|f| f as &dyn Fn(u32, Gender, bool) -> f64),
        )?;
        let a0s: Vec<u32> = (18..=60).collect();
        let grids = [
            FeaturePair::Smoker(Gender::Male),
            FeaturePair::Smoker(Gender::Female),
            FeaturePair::Gender { smoker: false },
            FeaturePair::Gender { smoker: true },
        ]
        .into_iter()
        .map(|pair| homogeneity_grid(model, &a0s, 20, pair, PaymentStyle::Annual))
        .collect::<premcal::Result<Vec<_>>>()?;
        let decomposition = error_decomposition(&report, &portfolio.contracts, 10)?;
        write_report(
            out,
            &Report {
                backtest: &report,
                curves: &curves,
                grids: &grids,
                decomposition: &decomposition,
            },
        )?;
        print!("{}", summary_text(&report, &grids));
    } else {
        write_atomic(&out.join("backtest.csv"), backtest_csv(&report).as_bytes())?;
        write_atomic(&out.join("quantiles.csv"), quantiles_csv(&report).as_bytes())?;
        let summary = summary_text(&report, &[]);
        write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
        print!("{summary}");
    }
    Ok(())
}
