use std::path::{Path, PathBuf};

use anyhow::Context;
use premcal::calibrate::TrainConfig;
use premcal::portfolio::GroundTruthParams;
use premcal::{ExpenseStructure, Gender};
use serde::{Deserialize, Serialize};

use crate::InputError;

/// Settings shared by all subcommands. Read from a TOML file; command-line
/// flags override individual keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Mortality table CSV (`age,q_male,q_female`).
    pub table: Option<PathBuf>,
    /// Portfolio CSV, or the directory holding `portfolio.csv`.
    pub portfolio: Option<PathBuf>,
    /// Stage-one checkpoint consumed by `fit-residual`.
    pub baseline: Option<PathBuf>,
    /// Checkpoint consumed by `backtest` and `report`.
    pub checkpoint: Option<PathBuf>,
    /// Output file or directory of the subcommand.
    pub out: Option<PathBuf>,
    /// Training log CSV; defaults to `<out>.log.csv`.
    pub log: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Number of contracts to generate.
    pub size: Option<usize>,
    /// Upper bound on the contract duration in years.
    pub n_cap: Option<u32>,
    pub gender: Option<Gender>,
    pub ground_truth: GroundTruthParams,
    pub expenses: ExpenseStructure,
    /// Annual discount factor `v`.
    pub discount: Option<f64>,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| InputError(format!("{}: {e}", path.display())).into())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("cannot serialise run configuration")
    }
}

/// `Some(value)` of a required setting, or an input error naming the flag.
pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value
        .clone()
        .ok_or_else(|| InputError(format!("missing --{flag} (flag or config key)")).into())
}

/// Accepts a portfolio CSV or a directory containing `portfolio.csv`.
pub fn portfolio_csv(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("portfolio.csv")
    } else {
        path.to_path_buf()
    }
}

/// The ground-truth table stored next to a generated portfolio.
pub fn oracle_table(csv: &Path) -> PathBuf {
    csv.with_file_name("ground_truth_table.csv")
}

/// Default training log path for a checkpoint path.
pub fn default_log(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    out.with_file_name(format!("{stem}.log.csv"))
}
