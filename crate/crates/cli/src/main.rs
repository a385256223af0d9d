//! `premcal`: generate synthetic portfolios, calibrate transition
//! probabilities in two stages and backtest the implied premiums.
//!
//! Exit codes: 0 ok, 2 input error, 3 numerical failure, 4 consistency
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use premcal::Gender;

use config::RunConfig;

/// Bad flags, configuration or input files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(pub String);

#[derive(Parser, Debug)]
#[command(name = "premcal", version, about)]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the built-in synthetic mortality table as CSV.
    WriteTable {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample and price a synthetic portfolio under the hidden ground truth.
    GenPortfolio(GenArgs),
    /// Stage one: fit the baseline network to a mortality table.
    FitBaseline(BaselineArgs),
    /// Stage two: fit the residual network to a priced portfolio.
    FitResidual(ResidualArgs),
    /// Re-price a portfolio with a calibrated model.
    Backtest(BacktestArgs),
    /// Backtest plus implied mortality curves, homogeneity grids and error
    /// decomposition.
    Report(BacktestArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Number of contracts.
    #[arg(long = "n")]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mortality table CSV; the built-in synthetic table when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Largest contract duration in years.
    #[arg(long)]
    n_cap: Option<u32>,
    #[arg(long)]
    loading: Option<f64>,
    #[arg(long)]
    smoker_mult: Option<f64>,
    /// Use gender-specific rates instead of a unisex blend.
    #[arg(long)]
    no_unisex: bool,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    gender: Option<Gender>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs_max: Option<usize>,
}

#[derive(Args, Debug)]
struct ResidualArgs {
    /// Stage-one checkpoint.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    portfolio: Option<PathBuf>,
    /// Checkpoint to write; rewritten after every epoch.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs_max: Option<usize>,
    /// Hidden width of every residual layer.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args, Debug)]
struct BacktestArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    portfolio: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the ground truth stored with the portfolio instead of a checkpoint.
    #[arg(long)]
    oracle: bool,
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::WriteTable { out } => {
            set(&mut cfg.out, out);
            commands::write_table(&cfg)
        }
        Command::GenPortfolio(a) => {
            set(&mut cfg.size, a.size);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.table, a.table);
            set(&mut cfg.out, a.out);
            set(&mut cfg.n_cap, a.n_cap);
            if let Some(x) = a.loading {
                cfg.ground_truth.loading = x;
            }
            if let Some(x) = a.smoker_mult {
                cfg.ground_truth.smoker_mult = x;
            }
            if a.no_unisex {
                cfg.ground_truth.unisex = false;
            }
            commands::gen_portfolio(&cfg)
        }
        Command::FitBaseline(a) => {
            set(&mut cfg.table, a.table);
            set(&mut cfg.gender, a.gender);
            set(&mut cfg.out, a.out);
            set(&mut cfg.log, a.log);
            let b = &mut cfg.train.baseline;
            if let Some(g) = cfg.gender {
                b.gender = g;
            }
            if let Some(s) = a.seed {
                b.seed = s;
            }
            if let Some(lr) = a.lr {
                b.lr = lr;
            }
            if let Some(e) = a.epochs_max {
                b.max_epochs = e;
            }
            commands::fit_baseline(&cfg)
        }
        Command::FitResidual(a) => {
            set(&mut cfg.baseline, a.baseline);
            set(&mut cfg.portfolio, a.portfolio);
            set(&mut cfg.out, a.out);
            set(&mut cfg.log, a.log);
            let r = &mut cfg.train.residual;
            if let Some(s) = a.seed {
                r.seed = s;
            }
            set(&mut r.lr, a.lr);
            if let Some(e) = a.epochs_max {
                r.max_epochs = e;
            }
            if let Some(p) = a.patience {
                r.patience = p;
            }
            if let Some(w) = a.width {
                let n = r.widths.len();
                for x in &mut r.widths[1..n - 1] {
                    *x = w;
                }
            }
            commands::fit_residual(&cfg)
        }
        Command::Backtest(a) | Command::Report(a) if a.oracle && a.checkpoint.is_some() => {
            Err(InputError("--oracle and --checkpoint are mutually exclusive".into()).into())
        }
        Command::Backtest(a) => {
            set(&mut cfg.checkpoint, a.checkpoint);
            set(&mut cfg.portfolio, a.portfolio);
            set(&mut cfg.out, a.out);
            commands::backtest(&cfg, a.oracle, false)
        }
        Command::Report(a) => {
            set(&mut cfg.checkpoint, a.checkpoint);
            set(&mut cfg.portfolio, a.portfolio);
            set(&mut cfg.out, a.out);
            commands::backtest(&cfg, a.oracle, true)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use premcal::Error as E;
    for cause in e.chain() {
        if cause.is::<InputError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Numerical(_) | E::Unpriceable { .. } => 3,
                E::Consistency(_) => 4,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
